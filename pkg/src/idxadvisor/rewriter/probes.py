"""Random query generator used to exercise rewrite rules.

Queries are built as ASTs, rendered to SQL and re-parsed, so anything the
resolver rejects is silently dropped.
"""
from __future__ import annotations

import random
from typing import Iterator

from ..catalog import Catalog, ColumnDef
from ..sqlfront.ast import (
    Aggregate,
    Between,
    ColumnRef,
    Comparison,
    ConstPred,
    InList,
    InSubquery,
    JoinPred,
    OrderItem,
    QueryAst,
)
from ..sqlfront.parser import SqlError, parse, unparse


def _value(col: ColumnDef, rng: random.Random):
    k = min(col.cardinality, 6)
    if col.type == "int":
        return rng.randrange(k)
    return f"v{rng.randint(1, k)}"


def _predicate(table: str, col: ColumnDef, rng: random.Random):
    ref = ColumnRef(table, col.name)
    kind = rng.random()
    if kind < 0.45:
        return Comparison(ref, "=", _value(col, rng))
    if kind < 0.65:
        return Comparison(ref, rng.choice(["<", "<=", ">", ">="]), _value(col, rng))
    if kind < 0.8:
        a, b = sorted([_value(col, rng), _value(col, rng)])
        return Between(ref, a, b)
    return InList(ref, tuple(sorted({_value(col, rng) for _ in range(rng.randint(1, 3))}, key=str)))


def _subquery(catalog: Catalog, outer: ColumnRef, outer_type: str, exclude: set,
              rng: random.Random) -> InSubquery | None:
    options = [(t, c) for t in catalog.tables if t.name not in exclude
               for c in t.columns if c.type == outer_type]
    if not options:
        return None
    uniques = [o for o in options if o[1].unique]
    t, c = rng.choice(uniques) if uniques and rng.random() < 0.5 else rng.choice(options)
    where = tuple(_predicate(t.name, rng.choice(t.columns), rng) for _ in range(rng.randint(0, 2)))
    order = (OrderItem(ColumnRef(t.name, rng.choice(t.columns).name)),) if rng.random() < 0.4 else ()
    sub = QueryAst(select=(ColumnRef(t.name, c.name),), tables=(t.name,), where=where,
                   order_by=order, distinct=rng.random() < 0.3)
    return InSubquery(outer, sub)


def random_query(catalog: Catalog, rng: random.Random) -> QueryAst | None:
    tables = list(catalog.tables)
    if not tables:
        return None
    first = rng.choice(tables)
    chosen = [first]
    joins = []
    if len(tables) > 1 and rng.random() < 0.4:
        other = rng.choice([t for t in tables if t.name != first.name])
        pairs = [(a, b) for a in first.columns for b in other.columns if a.type == b.type]
        if pairs:
            a, b = rng.choice(pairs)
            chosen.append(other)
            joins.append(JoinPred.make(ColumnRef(first.name, a.name), ColumnRef(other.name, b.name)))
            if rng.random() < 0.2:
                joins.append(joins[0])
    names = [t.name for t in chosen]
    cols = [(t.name, c) for t in chosen for c in t.columns]

    where = [_predicate(tn, c, rng) for tn, c in rng.sample(cols, k=min(len(cols), rng.randint(0, 3)))]
    if where and rng.random() < 0.3:
        where.insert(rng.randrange(len(where) + 1), rng.choice(where))
    if rng.random() < 0.25:
        where.insert(rng.randrange(len(where) + 1), ConstPred(rng.random() < 0.6))
    if rng.random() < 0.4:
        tn, c = rng.choice(cols)
        sub = _subquery(catalog, ColumnRef(tn, c.name), c.type, set(names), rng)
        if sub is not None:
            where.append(sub)

    grouped = rng.random() < 0.3
    select: list = []
    group_by: tuple = ()
    if grouped:
        group_by = tuple(ColumnRef(tn, c.name) for tn, c in rng.sample(cols, k=min(len(cols), rng.randint(1, 2))))
        keep = [g for g in group_by if rng.random() < 0.7]
        select = keep + [Aggregate("COUNT", None)]
        int_cols = [ColumnRef(tn, c.name) for tn, c in cols if c.type == "int"]
        if int_cols and rng.random() < 0.5:
            select.append(Aggregate(rng.choice(["SUM", "MIN", "MAX", "AVG"]), rng.choice(int_cols)))
    else:
        select = [ColumnRef(tn, c.name) for tn, c in rng.sample(cols, k=min(len(cols), rng.randint(1, 2)))]
    order = ()
    if rng.random() < 0.3:
        pool = list(group_by) if grouped else [ColumnRef(tn, c.name) for tn, c in cols]
        order = (OrderItem(rng.choice(pool), rng.random() < 0.5),)
    ast = QueryAst(tuple(select), tuple(names), tuple(joins), tuple(where), group_by, order,
                   distinct=rng.random() < 0.45)
    try:
        return parse(unparse(ast), catalog)
    except SqlError:
        return None


def random_queries(catalog: Catalog, n: int, seed: int = 0) -> Iterator[QueryAst]:
    rng = random.Random(f"probe:{seed}")
    produced = 0
    attempts = 0
    while produced < n and attempts < 20 * n:
        attempts += 1
        q = random_query(catalog, rng)
        if q is not None:
            produced += 1
            yield q
