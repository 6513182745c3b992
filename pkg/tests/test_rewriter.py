import pytest

from idxadvisor.catalog import MaterializedInstance, catalog_from_dict
from idxadvisor.costmodel import CostModel
from idxadvisor.generator import SchemaSpec, synth_catalog
from idxadvisor.rewriter import (PatternError, apply_rules, check_equivalence, evaluate_bag,
                                 load_rules, match, rank_rules, read, rewrite_ast, rules_from_dict,
                                 to_term, validate_rule)
from idxadvisor.rewriter.probes import random_queries
from idxadvisor.sqlfront import Query, all_tables, indexable_columns, parse, unparse
from idxadvisor.sqlfront.workload import make_query

SMALL = catalog_from_dict({"tables": [
    {"name": "t", "row_count": 100, "columns": [
        {"name": "a", "type": "int", "cardinality": 10, "width_bytes": 4},
        {"name": "b", "type": "int", "cardinality": 10, "width_bytes": 4}]},
    {"name": "s", "row_count": 100, "columns": [
        {"name": "a", "type": "int", "cardinality": 10, "width_bytes": 4},
        {"name": "c", "type": "int", "cardinality": 10, "width_bytes": 4}]}]})


def rules():
    return {r.name: r for r in load_rules()}


def test_projection_multiplicity():
    inst = MaterializedInstance({"t": ((1, 0), (1, 5), (2, 0)), "s": ()}, 0)
    bag = evaluate_bag(parse("SELECT a FROM t", SMALL), inst, SMALL)
    assert dict(bag.counts) == {(1,): 2, (2,): 1}


def test_distinct_caps_at_one():
    inst = MaterializedInstance({"t": ((1, 0), (1, 5), (2, 0)), "s": ()}, 0)
    bag = evaluate_bag(parse("SELECT DISTINCT a FROM t", SMALL), inst, SMALL)
    assert dict(bag.counts) == {(1,): 1, (2,): 1}


def test_join_multiplicities_nested_loop():
    inst = MaterializedInstance({"t": ((1, 0), (1, 1)), "s": ((1, 7), (1, 7))}, 0)
    ast = parse("SELECT t.a FROM t, s WHERE t.a = s.a", SMALL)
    expected: dict = {}
    for tr in inst.table_rows("t"):
        for sr in inst.table_rows("s"):
            if tr[0] == sr[0]:
                expected[(tr[0],)] = expected.get((tr[0],), 0) + 1
    assert dict(evaluate_bag(ast, inst, SMALL).counts) == expected == {(1,): 4}


def test_equivalence_reflexive():
    q = parse("SELECT a FROM t WHERE b < 4", SMALL)
    v = check_equivalence(q, q, SMALL, trials=50)
    assert v.equivalent and v.trials == 50


def test_idempotent_conjunct_equivalent():
    a = parse("SELECT a FROM t WHERE a = 1 AND a = 1", SMALL)
    b = parse("SELECT a FROM t WHERE a = 1", SMALL)
    assert check_equivalence(a, b, SMALL)


def test_distinct_counterexample():
    a = parse("SELECT a FROM t", SMALL)
    b = parse("SELECT DISTINCT a FROM t", SMALL)
    v = check_equivalence(a, b, SMALL)
    assert not v
    assert v.counterexample is not None
    assert evaluate_bag(a, v.counterexample, SMALL) != evaluate_bag(b, v.counterexample, SMALL)


def test_in_subquery_flattened(catalog):
    q = make_query("q", "SELECT a FROM t WHERE k IN (SELECT id FROM u WHERE e = 2)", catalog)
    out = apply_rules(q, list(rules().values()), catalog)
    assert not out.ast.subqueries()
    assert check_equivalence(q.ast, out.ast, catalog, trials=100)


def test_duplicate_conjunct_removed(catalog):
    q = make_query("q", "SELECT a FROM t WHERE a = 1 AND a = 1", catalog)
    out = apply_rules(q, [rules()["duplicate-conjunct-elimination"]], catalog)
    assert len(out.ast.where) == 1


def test_no_match_unchanged(catalog):
    q = make_query("q", "SELECT a FROM t WHERE a = 1", catalog)
    assert apply_rules(q, list(rules().values()), catalog) is q


class StubCost:
    """cost = 10 per predicate + 50 for DISTINCT."""

    def __init__(self, catalog):
        self.catalog = catalog

    def query_cost(self, q):
        ast = getattr(q, "ast", q)
        return 100 + 10 * len(ast.where) + 50 * ast.distinct


def test_rank_orders_by_saving(catalog):
    r = rules()
    w = [make_query("q1", "SELECT a FROM t WHERE a = 1 AND a = 1", catalog),
         make_query("q2", "SELECT DISTINCT id FROM t WHERE a = 1", catalog)]
    ranked = rank_rules([r["duplicate-conjunct-elimination"], r["distinct-over-unique-key-elimination"]],
                        w, StubCost(catalog))
    assert [(x.rule.name, x.saving) for x in ranked] == [
        ("distinct-over-unique-key-elimination", 50), ("duplicate-conjunct-elimination", 10)]


def test_rank_drops_idle_rule(catalog):
    w = [make_query("q1", "SELECT a FROM t WHERE a = 1", catalog)]
    assert rank_rules([rules()["subquery-order-elimination"]], w, StubCost(catalog)) == []


def test_rank_drops_cost_inflating_rule(catalog, cm):
    q = make_query("q", "SELECT a FROM t WHERE k IN (SELECT id FROM u WHERE e = 2)", catalog)
    flat = rules()["in-subquery-flattening-unique"]
    new = apply_rules(q, [flat], catalog)
    assert cm.query_cost(new) > cm.query_cost(q)
    assert rank_rules([flat], [q], cm) == []


def test_ranked_rewrite_never_raises_cost(catalog, cm):
    asts = list(random_queries(catalog, 60, seed=3))
    w = [Query(f"q{i}", unparse(a), a) for i, a in enumerate(asts)]
    ranked = [r.rule for r in rank_rules(load_rules(), w, cm)]
    before = cm.workload_cost(w)
    after = cm.workload_cost([apply_rules(q, ranked, catalog) for q in w])
    assert after <= before + 1e-9


def test_columns_preserved_up_to_flattening(catalog):
    for ast in random_queries(catalog, 80, seed=5):
        new = rewrite_ast(ast, load_rules(), catalog)
        added = indexable_columns(new) - indexable_columns(ast)
        # only join columns introduced by flattening may appear
        assert all(c.table in all_tables(ast) for c in added)
        for c in added:
            assert any(c in (j.left, j.right) for j in new.joins)


def test_pattern_language():
    term = to_term(parse("SELECT a FROM t WHERE a = 1", SMALL))
    assert list(match(read("?q"), term))
    with pytest.raises(PatternError):
        read("(unbalanced")


def test_rule_file_validation():
    with pytest.raises((PatternError, ValueError, KeyError)):
        rules_from_dict({"format": 1, "rules": [{"name": "x", "pattern": "(", "replacement": "?q"}]})


def test_every_rule_fires_and_holds_small():
    cat = synth_catalog(SchemaSpec(tables=3), 11)
    for rule in load_rules():
        fired, failure = validate_rule(rule, cat, probes=120, trials=20, seed=1)
        assert failure is None, rule.name
        assert fired > 0, rule.name
