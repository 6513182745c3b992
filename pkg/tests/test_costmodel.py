import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from idxadvisor.catalog import catalog_from_dict
from idxadvisor.costmodel import EMPTY, CostConstants, CostModel, IndexCandidate, IndexConfiguration
from idxadvisor.sqlfront import ColumnRef
from idxadvisor.sqlfront.workload import make_query

ONE = {"tables": [{"name": "t", "row_count": 1_000_000, "columns": [
    {"name": "a", "type": "int", "cardinality": 1000, "width_bytes": 4},
    {"name": "b", "type": "int", "cardinality": 50, "width_bytes": 4}]}]}


@pytest.fixture
def one():
    cat = catalog_from_dict(ONE)
    return cat, CostModel(cat)


def test_scan_cost(one):
    cat, cm = one
    assert cm.query_cost(make_query("q", "SELECT a FROM t", cat)) == 1_000_000


def test_index_probe_cost(one):
    cat, cm = one
    q = make_query("q", "SELECT a FROM t WHERE a = 3", cat)
    cfg = IndexConfiguration((cm.candidate("t", ["a"]),))
    expected = 10 * math.log2(1_000_001) + 1_000_000 * 0.001 * 2
    assert expected == pytest.approx(2199.3, abs=0.05)
    assert cm.query_cost(q, cfg) == pytest.approx(min(1e6, expected), rel=1e-12)


def brute_access(rows, sel_by_col, kinds, config, k=CostConstants()):
    """Enumerate every access path for one table by hand."""
    paths = [rows * k.c_scan]
    for idx in config:
        sel, matched = 1.0, 0
        for c in idx.columns:
            if c not in sel_by_col:
                break
            matched += 1
            sel *= sel_by_col[c]
            if kinds[c] != "eq":
                break
        if matched:
            paths.append(k.c_probe * math.log2(1 + rows) + rows * sel * k.c_fetch)
    return min(paths)


def test_against_brute_force_paths(one):
    cat, cm = one
    q = make_query("q", "SELECT a FROM t WHERE a = 3 AND b < 10", cat)
    sel = {"a": 1 / 1000, "b": 10 / 50}
    kinds = {"a": "eq", "b": "range"}
    for cols in (["a"], ["b"], ["a", "b"], ["b", "a"]):
        cfg = IndexConfiguration((cm.candidate("t", cols),))
        assert cm.query_cost(q, cfg) == pytest.approx(brute_access(1e6, sel, kinds, cfg), rel=1e-12)


def test_prefix_rule(one):
    cat, cm = one
    q = make_query("q", "SELECT a FROM t WHERE a = 3", cat)
    cfg = IndexConfiguration((cm.candidate("t", ["b", "a"]),))
    assert cm.query_cost(q, cfg) == 1_000_000


def test_workload_cost_linear(one):
    cat, cm = one
    assert cm.workload_cost([]) == 0
    q = make_query("q", "SELECT a FROM t WHERE a = 3", cat, frequency=3)
    assert cm.workload_cost([q]) == 3 * cm.query_cost(q)


def test_index_size_examples():
    cat = catalog_from_dict({"tables": [
        {"name": "t", "row_count": 1000, "columns": [{"name": "a", "type": "int", "cardinality": 10, "width_bytes": 4}]},
        {"name": "s", "row_count": 100, "columns": [
            {"name": "a", "type": "int", "cardinality": 10, "width_bytes": 4},
            {"name": "b", "type": "int", "cardinality": 10, "width_bytes": 8}]},
        {"name": "z", "row_count": 0, "columns": [{"name": "a", "type": "int", "cardinality": 1, "width_bytes": 4}]}]})
    cm = CostModel(cat)
    assert cm.candidate("t", ["a"]).size_bytes == 12000
    assert cm.candidate("s", ["a", "b"]).size_bytes == 2000
    assert cm.candidate("z", ["a"]).size_bytes == 0


def test_delta_cost(catalog, cm):
    q = make_query("q", "SELECT a FROM t WHERE a = 4", catalog)
    assert cm.delta_cost(q, ColumnRef("u", "e")) == 0
    idx = cm.candidate("t", ["a"])
    assert cm.delta_cost(q, idx, IndexConfiguration((idx,))) == 0
    expected = cm.query_cost(q) - cm.query_cost(q, IndexConfiguration((idx,)))
    assert expected > 0
    assert cm.delta_cost(q, ColumnRef("t", "a")) == expected


def test_call_counter_and_fork(catalog, cm):
    q = make_query("q", "SELECT a FROM t WHERE a = 4", catalog)
    cm.workload_cost([q, q])
    assert cm.calls == 2
    f = cm.fork()
    f.query_cost(q)
    assert (cm.calls, f.calls) == (2, 1)
    assert cm.reset_calls() == 2 and cm.calls == 0


def test_candidate_width_bound(cm):
    with pytest.raises(ValueError):
        IndexCandidate("t", ("a", "b", "c", "d", "k", "id"))


SQLS = [
    "SELECT a FROM t WHERE a = {v}",
    "SELECT a FROM t WHERE b < {v} AND d = 3",
    "SELECT t.a FROM t, u WHERE t.k = u.k AND u.e = {v}",
    "SELECT c, COUNT(*) FROM t WHERE a BETWEEN {v} AND 900 GROUP BY c",
    "SELECT a FROM t WHERE k IN (SELECT k FROM u WHERE e = {v}) ORDER BY a",
]
COLS = {"t": ["a", "b", "c", "d", "k"], "u": ["k", "e"]}


def test_adding_index_never_increases_cost(catalog, cm):
    rng = random.Random(0)
    for _ in range(200):
        qs = [make_query(f"q{i}", rng.choice(SQLS).format(v=rng.randint(1, 20)), catalog)
              for i in range(rng.randint(1, 4))]

        def rand_idx():
            t = rng.choice(list(COLS))
            return cm.candidate(t, rng.sample(COLS[t], rng.randint(1, min(3, len(COLS[t])))))
        cfg = EMPTY
        for _ in range(rng.randint(0, 3)):
            c = rand_idx()
            if c not in cfg:
                cfg = cfg.add(c)
        extra = rand_idx()
        if extra in cfg:
            continue
        assert cm.workload_cost(qs, cfg.add(extra)) <= cm.workload_cost(qs, cfg)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 999), st.integers(1, 49))
def test_cost_positive_and_bounded(a, b):
    from conftest import DEMO
    catalog = catalog_from_dict(DEMO)
    cm = CostModel(catalog)
    q = make_query("q", f"SELECT a FROM t WHERE a = {a} AND b <= {b}", catalog)
    full = cm.query_cost(q)
    cfg = IndexConfiguration((cm.candidate("t", ["a", "b"]),))
    assert 0 < cm.query_cost(q, cfg) <= full
