"""Bag-semantics evaluation and randomized equivalence checking.

A result is a multiset ``tuple -> multiplicity``: selection keeps a row's
multiplicity when its predicate holds, joins multiply, projection merges,
DISTINCT caps at 1 and GROUP BY emits one row per group key.

Equivalence checking runs both queries on seeded random miniature
instances. A pass is evidence, not proof.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from ..catalog import Catalog, MaterializedInstance, materialize
from ..sqlfront.ast import (
    Aggregate,
    Between,
    ColumnRef,
    Comparison,
    ConstPred,
    InList,
    InSubquery,
    QueryAst,
)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class BagResult:
    counts: Mapping[tuple, int]

    def __post_init__(self):
        if any(m < 1 for m in self.counts.values()):
            raise ValueError("bag multiplicities must be >= 1")

    def __eq__(self, other):
        return isinstance(other, BagResult) and dict(self.counts) == dict(other.counts)

    def __hash__(self):
        return hash(frozenset(self.counts.items()))

    def __len__(self):
        return sum(self.counts.values())


_OPS = {
    "=": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _pred_fn(pred, catalog: Catalog, instance: MaterializedInstance):
    if isinstance(pred, Comparison):
        op, v = _OPS[pred.op], pred.value
        return lambda x: op(x, v)
    if isinstance(pred, Between):
        lo, hi = pred.low, pred.high
        return lambda x: lo <= x <= hi
    if isinstance(pred, InList):
        vals = frozenset(pred.values)
        return lambda x: x in vals
    if isinstance(pred, InSubquery):
        sub = evaluate_bag(pred.subquery, instance, catalog)
        vals = frozenset(t[0] for t in sub.counts)
        return lambda x: x in vals
    raise EvaluationError(f"unsupported predicate {pred!r}")


def evaluate_bag(ast: QueryAst, instance: MaterializedInstance, catalog: Catalog) -> BagResult:
    if any(isinstance(p, ConstPred) and not p.value for p in ast.where):
        rows: list[dict] = []
    else:
        # per-table filtered rows as {ColumnRef: value}
        filtered = {}
        for t in ast.tables:
            schema = catalog.table(t)
            refs = [ColumnRef(t, c) for c in schema.column_names]
            preds = [(p.column, _pred_fn(p, catalog, instance)) for p in ast.where
                     if not isinstance(p, ConstPred) and p.column.table == t]
            out = []
            for raw in instance.table_rows(t):
                row = dict(zip(refs, raw))
                if all(fn(row[c]) for c, fn in preds):
                    out.append(row)
            filtered[t] = out
        rows = [{}]
        joined: set[str] = set()
        for t in ast.tables:
            conds = []
            for j in ast.joins:
                if j.left.table == t and j.right.table in joined:
                    conds.append((j.right, j.left))
                elif j.right.table == t and j.left.table in joined:
                    conds.append((j.left, j.right))
            if conds:
                index: dict[tuple, list[dict]] = {}
                for r in filtered[t]:
                    index.setdefault(tuple(r[new] for _, new in conds), []).append(r)
                rows = [{**acc, **r} for acc in rows
                        for r in index.get(tuple(acc[old] for old, _ in conds), ())]
            else:
                rows = [{**acc, **r} for acc in rows for r in filtered[t]]
            joined.add(t)

    counts: Counter = Counter()
    if ast.group_by or ast.has_aggregates():
        groups: dict[tuple, list[dict]] = {}
        for r in rows:
            groups.setdefault(tuple(r[g] for g in ast.group_by), []).append(r)
        if not ast.group_by and not groups:
            groups[()] = []
        for key, members in groups.items():
            keymap = dict(zip(ast.group_by, key))
            out = tuple(_aggregate(s, members) if isinstance(s, Aggregate) else keymap[s]
                        for s in ast.select)
            counts[out] += 1
    else:
        for r in rows:
            counts[tuple(r[s] for s in ast.select)] += 1
    if ast.distinct:
        counts = Counter({k: 1 for k in counts})
    return BagResult(dict(counts))


def _aggregate(agg: Aggregate, rows: list[dict]):
    if agg.func == "COUNT":
        return len(rows)
    vals = [r[agg.arg] for r in rows]
    if not vals:
        return None
    if agg.func == "SUM":
        return sum(vals)
    if agg.func == "MIN":
        return min(vals)
    if agg.func == "MAX":
        return max(vals)
    if agg.func == "AVG":
        return Fraction(sum(vals), len(vals))
    raise EvaluationError(f"unsupported aggregate {agg.func}")


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    trials: int
    counterexample: MaterializedInstance | None = None
    trial: int | None = None
    left: BagResult | None = None
    right: BagResult | None = None

    def __bool__(self) -> bool:
        return self.equivalent


def _literals(ast: QueryAst, out: dict) -> None:
    for p in ast.where:
        if isinstance(p, InSubquery):
            _literals(p.subquery, out)
            continue
        if isinstance(p, Comparison):
            vals = [p.value]
        elif isinstance(p, Between):
            vals = [p.low, p.high]
        elif isinstance(p, InList):
            vals = list(p.values)
        else:
            continue
        bucket = out.setdefault((p.column.table, p.column.column), [])
        for v in vals:
            bucket.extend([v - 1, v, v + 1] if isinstance(v, int) else [v])


def value_pools(catalog: Catalog, asts, rng: random.Random) -> dict:
    """Tiny per-column domains seeded with the queries' literals.

    Small domains make duplicates, join matches and predicate hits common.
    """
    lits: dict = {}
    for a in asts:
        _literals(a, lits)
    pools = {}
    for t in catalog.tables:
        for c in t.columns:
            k = rng.randint(1, 4)
            base = list(range(k)) if c.type == "int" else [f"v{i}" for i in range(1, k + 1)]
            extra = [v for v in lits.get((t.name, c.name), []) if v not in base]
            pools[(t.name, c.name)] = base + list(dict.fromkeys(extra))
    return pools


def check_equivalence(q1: QueryAst, q2: QueryAst, catalog: Catalog, trials: int = 100,
                      seed: int = 0, max_rows: int = 12) -> EquivalenceVerdict:
    for trial in range(trials):
        rng = random.Random(f"equiv:{seed}:{trial}")
        rows = {t.name: rng.randint(0, max_rows) for t in catalog.tables}
        pools = value_pools(catalog, (q1, q2), rng)
        inst = materialize(catalog, rows, seed=rng.randrange(2**31), value_pools=pools)
        left = evaluate_bag(q1, inst, catalog)
        right = evaluate_bag(q2, inst, catalog)
        if left != right:
            return EquivalenceVerdict(False, trial + 1, inst, trial, left, right)
    return EquivalenceVerdict(True, trials)
