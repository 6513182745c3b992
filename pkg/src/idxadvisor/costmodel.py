"""Analytic what-if cost model.

Per referenced table ``t`` the access cost is the cheapest of a sequential
scan (``rows * c_scan``) and every applicable index
(``c_probe * log2(1 + rows) + rows * sel * c_fetch``). An index applies when
a prefix of its columns matches zero or more equality columns of the query
on ``t`` followed by at most one range / ORDER BY / GROUP BY column; ``sel``
is the product of the matched columns' selectivities. Joins add
``n_joins * c_join * min(rows of joined tables)``.

An uncorrelated IN-subquery adds the access costs of its own tables and a
hashed semi-join term ``c_join * max(1, est. subquery output rows)``.
"""
from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .catalog import Catalog, ColumnDef, selectivity
from .sqlfront.ast import (
    Between,
    ColumnRef,
    Comparison,
    InList,
    Query,
    QueryAst,
)

W_MAX = 5


@dataclass(frozen=True)
class CostConstants:
    c_scan: float = 1.0
    c_probe: float = 10.0
    c_fetch: float = 2.0
    c_join: float = 0.1
    entry_overhead: int = 8

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "CostConstants":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cost_model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class IndexCandidate:
    table: str
    columns: tuple[str, ...]
    size_bytes: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not 1 <= len(self.columns) <= W_MAX:
            raise ValueError(f"index width must be in [1, {W_MAX}], got {len(self.columns)}")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError(f"index columns must be distinct: {self.columns}")
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be >= 0")

    @property
    def width(self) -> int:
        return len(self.columns)

    @property
    def refs(self) -> tuple[ColumnRef, ...]:
        return tuple(ColumnRef(self.table, c) for c in self.columns)

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.table, self.columns)

    def __str__(self) -> str:
        return f"{self.table}({', '.join(self.columns)})"

    def to_dict(self) -> dict:
        return {"table": self.table, "columns": list(self.columns), "size_bytes": self.size_bytes}


@dataclass(frozen=True)
class IndexConfiguration:
    indexes: tuple[IndexCandidate, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.indexes, key=lambda i: i.key))
        keys = [i.key for i in ordered]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate index in configuration")
        object.__setattr__(self, "indexes", ordered)
        by_table: dict[str, list[IndexCandidate]] = {}
        for i in ordered:
            by_table.setdefault(i.table, []).append(i)
        object.__setattr__(self, "_by_table", {t: tuple(v) for t, v in by_table.items()})

    @property
    def total_size_bytes(self) -> int:
        return sum(i.size_bytes for i in self.indexes)

    def on_table(self, table: str) -> tuple[IndexCandidate, ...]:
        return self._by_table.get(table, ())

    def __contains__(self, cand: IndexCandidate) -> bool:
        return any(i.key == cand.key for i in self.on_table(cand.table))

    def __len__(self) -> int:
        return len(self.indexes)

    def __iter__(self):
        return iter(self.indexes)

    def add(self, cand: IndexCandidate) -> "IndexConfiguration":
        if cand in self:
            raise ValueError(f"{cand} already in configuration")
        return IndexConfiguration(self.indexes + (cand,))

    def to_dict(self) -> dict:
        return {"indexes": [i.to_dict() for i in self.indexes],
                "total_size_bytes": self.total_size_bytes}


EMPTY = IndexConfiguration()


@dataclass(frozen=True)
class CostEstimate:
    value: float
    what_if_call_count: int


def index_size(cand: IndexCandidate, catalog: Catalog, entry_overhead: int = 8) -> int:
    table = catalog.table(cand.table)
    width = sum(table.column(c).width_bytes for c in cand.columns)
    return table.row_count * (width + entry_overhead)


_CAT_VALUE = re.compile(r"^v(\d+)$")


def _ordinal(col: ColumnDef, value) -> float:
    if col.type == "int":
        return float(value)
    m = _CAT_VALUE.match(str(value))
    return float(int(m.group(1)) - 1) if m else float("nan")


def range_fraction(col: ColumnDef, pred) -> float:
    """Fraction of the uniform value domain a range predicate keeps."""
    card = col.cardinality
    if isinstance(pred, Between):
        lo, hi = _ordinal(col, pred.low), _ordinal(col, pred.high)
        if math.isnan(lo) or math.isnan(hi):
            return 1.0 / 3.0
        return (hi - lo + 1) / card
    v = _ordinal(col, pred.value)
    if math.isnan(v):
        return 1.0 / 3.0
    op = pred.op
    if op == "<":
        return v / card
    if op == "<=":
        return (v + 1) / card
    if op == ">":
        return (card - 1 - v) / card
    return (card - v) / card  # >=


def predicate_selectivity(col: ColumnDef, pred) -> tuple[str, float]:
    """Return (kind, selectivity) with kind ``"eq"`` or ``"range"``."""
    if isinstance(pred, Comparison) and pred.op == "=":
        return "eq", selectivity(col, "equality")
    if isinstance(pred, InList):
        k = len(set(pred.values))
        return "eq", min(1.0, k * selectivity(col, "equality"))
    return "range", selectivity(col, "range", range_fraction(col, pred))


@dataclass(frozen=True)
class _ColInfo:
    kind: str  # "eq" | "range" | "order"
    eq_sel: float
    range_sel: float


@dataclass(frozen=True)
class _TableAccess:
    table: str
    rows: int
    cols: Mapping[str, _ColInfo]


@dataclass(frozen=True)
class _Plan:
    accesses: tuple[_TableAccess, ...]
    fixed: float  # join and semi-join terms


class CostModel:
    """What-if estimator with a call counter.

    ``calls`` counts :meth:`query_cost` evaluations (``workload_cost``
    issues one per query). Forks share compiled plans but own a counter.
    """

    def __init__(self, catalog: Catalog, constants: CostConstants | None = None):
        self.catalog = catalog
        self.constants = constants or CostConstants()
        self._calls = 0
        self._lock = threading.Lock()
        self._plans: dict[int, tuple[QueryAst, _Plan]] = {}

    def fork(self) -> "CostModel":
        other = CostModel(self.catalog, self.constants)
        other._plans = self._plans
        return other

    @property
    def calls(self) -> int:
        return self._calls

    def reset_calls(self) -> int:
        with self._lock:
            n, self._calls = self._calls, 0
        return n

    # sizes
    def index_size(self, cand: IndexCandidate) -> int:
        return index_size(cand, self.catalog, self.constants.entry_overhead)

    def candidate(self, table: str, columns: Iterable[str]) -> IndexCandidate:
        cols = tuple(columns)
        for c in cols:
            self.catalog.column(table, c)
        sized = IndexCandidate(table, cols)
        return IndexCandidate(table, cols, self.index_size(sized))

    def single_column_index(self, col: ColumnRef) -> IndexCandidate:
        return self.candidate(col.table, (col.column,))

    # plans
    def _plan(self, ast: QueryAst) -> _Plan:
        hit = self._plans.get(id(ast))
        if hit is not None and hit[0] is ast:
            return hit[1]
        plan = self._compile(ast)
        self._plans[id(ast)] = (ast, plan)
        return plan

    def _compile(self, ast: QueryAst) -> _Plan:
        k = self.constants
        accesses = []
        fixed = 0.0
        preds_by_table: dict[str, dict[str, list]] = {t: {} for t in ast.tables}
        order_cols: dict[str, set[str]] = {t: set() for t in ast.tables}
        subqueries = []
        for p in ast.where:
            if hasattr(p, "subquery"):
                subqueries.append(p.subquery)
            elif hasattr(p, "column"):
                preds_by_table[p.column.table].setdefault(p.column.column, []).append(p)
        for c in ast.group_by:
            order_cols[c.table].add(c.column)
        for o in ast.order_by:
            order_cols[o.column.table].add(o.column.column)
        for t in ast.tables:
            schema = self.catalog.table(t)
            infos = {}
            for cname in set(preds_by_table[t]) | order_cols[t]:
                col = schema.column(cname)
                eq_sel, range_sel, has_eq, has_range = 1.0, 1.0, False, False
                for pred in dict.fromkeys(preds_by_table[t].get(cname, ())):
                    kind, sel = predicate_selectivity(col, pred)
                    if kind == "eq":
                        eq_sel *= sel
                        has_eq = True
                    else:
                        range_sel *= sel
                        has_range = True
                kind = "eq" if has_eq else ("range" if has_range else "order")
                infos[cname] = _ColInfo(kind, eq_sel, range_sel)
            accesses.append(_TableAccess(t, schema.row_count, infos))
        joins = set(ast.joins)
        if joins:
            joined = {c.table for j in joins for c in (j.left, j.right)}
            fixed += len(joins) * k.c_join * min(self.catalog.table(t).row_count for t in joined)
        for sub in subqueries:
            sub_plan = self._compile(sub)
            accesses.extend(sub_plan.accesses)
            fixed += sub_plan.fixed + k.c_join * max(1.0, self._output_rows(sub))
        return _Plan(tuple(accesses), fixed)

    def _output_rows(self, sub: QueryAst) -> float:
        owner = sub.select[0].table
        rows = float(self.catalog.table(owner).row_count)
        for p in dict.fromkeys(sub.where):
            if hasattr(p, "column") and not hasattr(p, "subquery") and p.column.table == owner:
                rows *= predicate_selectivity(self.catalog.column(owner, p.column.column), p)[1]
        return rows

    def _access_cost(self, acc: _TableAccess, config: IndexConfiguration) -> float:
        k = self.constants
        best = acc.rows * k.c_scan
        indexes = config.on_table(acc.table)
        if not indexes or not acc.cols:
            return best
        probe = k.c_probe * math.log2(1 + acc.rows)
        for idx in indexes:
            sel = 1.0
            matched = 0
            for cname in idx.columns:
                info = acc.cols.get(cname)
                if info is None:
                    break
                matched += 1
                if info.kind == "eq":
                    sel *= info.eq_sel * info.range_sel
                    continue
                sel *= info.range_sel
                break
            if matched:
                cost = probe + acc.rows * sel * k.c_fetch
                if cost < best:
                    best = cost
        return best

    # estimates
    def query_cost(self, q: Query | QueryAst, config: IndexConfiguration = EMPTY) -> float:
        ast = q.ast if isinstance(q, Query) else q
        plan = self._plan(ast)
        with self._lock:
            self._calls += 1
        return sum(self._access_cost(a, config) for a in plan.accesses) + plan.fixed

    def estimate(self, q: Query | QueryAst, config: IndexConfiguration = EMPTY) -> CostEstimate:
        value = self.query_cost(q, config)
        return CostEstimate(value, self._calls)

    def workload_cost(self, workload: Iterable[Query], config: IndexConfiguration = EMPTY) -> float:
        return sum(q.frequency * self.query_cost(q, config) for q in workload)

    def query_costs(self, workload: Iterable[Query], config: IndexConfiguration = EMPTY) -> list[float]:
        return [self.query_cost(q, config) for q in workload]

    def delta_cost(self, q: Query, target: ColumnRef | IndexCandidate,
                   config: IndexConfiguration = EMPTY) -> float:
        """Cost reduction from adding ``target`` (a column means a one-column index)."""
        cand = self.single_column_index(target) if isinstance(target, ColumnRef) else target
        ast = q.ast if isinstance(q, Query) else q
        if cand.table not in _tables_of(ast) or cand in config:
            return 0.0
        before = self.query_cost(ast, config)
        after = self.query_cost(ast, config.add(cand))
        return max(0.0, before - after)


def _tables_of(ast: QueryAst) -> set[str]:
    out = set(ast.tables)
    for sub in ast.subqueries():
        out |= _tables_of(sub)
    return out
