"""Immutable AST for the supported SELECT subset."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

Literal = Union[int, str]

COMPARISON_OPS = ("=", "<", "<=", ">", ">=")
AGGREGATES = ("COUNT", "SUM", "MIN", "MAX", "AVG")


@dataclass(frozen=True, order=True)
class ColumnRef:
    table: str
    column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Aggregate:
    func: str
    arg: ColumnRef | None  # None means COUNT(*)


@dataclass(frozen=True)
class Comparison:
    column: ColumnRef
    op: str
    value: Literal


@dataclass(frozen=True)
class Between:
    column: ColumnRef
    low: Literal
    high: Literal


@dataclass(frozen=True)
class InList:
    column: ColumnRef
    values: tuple[Literal, ...]


@dataclass(frozen=True)
class InSubquery:
    column: ColumnRef
    subquery: "QueryAst"


@dataclass(frozen=True)
class ConstPred:
    value: bool


@dataclass(frozen=True)
class JoinPred:
    left: ColumnRef
    right: ColumnRef

    @staticmethod
    def make(a: ColumnRef, b: ColumnRef) -> "JoinPred":
        return JoinPred(a, b) if a <= b else JoinPred(b, a)


@dataclass(frozen=True)
class OrderItem:
    column: ColumnRef
    desc: bool = False


Predicate = Union[Comparison, Between, InList, InSubquery, ConstPred]
SelectItem = Union[ColumnRef, Aggregate]


@dataclass(frozen=True)
class QueryAst:
    select: tuple[SelectItem, ...]
    tables: tuple[str, ...]
    joins: tuple[JoinPred, ...] = ()
    where: tuple[Predicate, ...] = ()
    group_by: tuple[ColumnRef, ...] = ()
    order_by: tuple[OrderItem, ...] = ()
    distinct: bool = False

    def subqueries(self) -> list["QueryAst"]:
        return [p.subquery for p in self.where if isinstance(p, InSubquery)]

    def has_aggregates(self) -> bool:
        return any(isinstance(s, Aggregate) for s in self.select)


def predicate_columns(pred: Predicate) -> tuple[ColumnRef, ...]:
    if isinstance(pred, ConstPred):
        return ()
    return (pred.column,)


def referenced_columns(ast: QueryAst) -> set[ColumnRef]:
    """Every column the query mentions, subqueries included."""
    cols: set[ColumnRef] = set()
    for item in ast.select:
        if isinstance(item, ColumnRef):
            cols.add(item)
        elif item.arg is not None:
            cols.add(item.arg)
    for j in ast.joins:
        cols.update((j.left, j.right))
    for p in ast.where:
        cols.update(predicate_columns(p))
        if isinstance(p, InSubquery):
            cols |= referenced_columns(p.subquery)
    cols.update(ast.group_by)
    cols.update(o.column for o in ast.order_by)
    return cols


def indexable_columns(ast: QueryAst) -> frozenset[ColumnRef]:
    """Predicate, join, grouping and ordering columns; select-only columns excluded.

    Columns that an uncorrelated IN-subquery filters, groups or orders on
    count as well, since the subquery scans its table too.
    """
    cols: set[ColumnRef] = set()
    for j in ast.joins:
        cols.update((j.left, j.right))
    for p in ast.where:
        cols.update(predicate_columns(p))
        if isinstance(p, InSubquery):
            cols |= indexable_columns(p.subquery)
    cols.update(ast.group_by)
    cols.update(o.column for o in ast.order_by)
    return frozenset(cols)


def all_tables(ast: QueryAst) -> tuple[str, ...]:
    out = list(ast.tables)
    for sub in ast.subqueries():
        for t in all_tables(sub):
            if t not in out:
                out.append(t)
    return tuple(out)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    ast: QueryAst
    frequency: float = 1.0
    columns: frozenset[ColumnRef] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"query {self.id}: frequency must be > 0")
        if self.columns is None:
            object.__setattr__(self, "columns", indexable_columns(self.ast))


def jaccard(a: Query | frozenset, b: Query | frozenset) -> float:
    """Jaccard similarity of indexable-column sets; 1.0 when both are empty."""
    ca = a.columns if isinstance(a, Query) else a
    cb = b.columns if isinstance(b, Query) else b
    union = len(ca | cb)
    if union == 0:
        return 1.0
    return len(ca & cb) / union
