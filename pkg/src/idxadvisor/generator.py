"""Synthetic star-schema catalogs and template-driven workloads.

Each template fixes a base set of indexable columns (b columns: join keys,
filters, an optional GROUP BY/ORDER BY column) and a pool of m alternate
filter columns. A query drawn from it is the base shape with probability
``redundancy`` and otherwise the base shape plus one alternate chosen
uniformly. Literals are redrawn for every query. Within one template the
expected pairwise Jaccard similarity of indexable-column sets is

    r^2 + 2 r (1 - r) b / (b + 1) + (1 - r)^2 (1/m + (1 - 1/m) b / (b + 2))

(base/base pairs score 1, base/variant b/(b+1), variants 1 or b/(b+2)).
For a 500-query, 20-template workload the measured mean stays within
``JACCARD_BAND`` of the pair-weighted target.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

from .catalog import Catalog, ColumnDef, catalog_from_dict
from .sqlfront.ast import ColumnRef
from .sqlfront.workload import Workload, workload_from_records


@dataclass(frozen=True)
class SchemaSpec:
    tables: int = 4
    fact_rows: int = 1_000_000
    dim_rows: tuple[int, int] = (10_000, 200_000)
    attributes: tuple[int, int] = (6, 8)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "SchemaSpec":
        d = dict(d or {})
        for k in ("dim_rows", "attributes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


JACCARD_BAND = 0.02

_CARDS = (4, 12, 50, 200, 1000, 10_000)


def synth_catalog(spec: SchemaSpec, seed: int) -> Catalog:
    if spec.tables < 1:
        raise ValueError("need at least one table")
    rng = random.Random(f"{seed}:catalog")
    dims = []
    for j in range(1, spec.tables):
        lo, hi = spec.dim_rows
        dims.append((f"d{j}", int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))))

    def attrs(rows: int) -> list[dict]:
        out = []
        for k in range(rng.randint(*spec.attributes)):
            if rng.random() < 0.3:
                out.append({"name": f"a{k}", "type": "cat", "cardinality": rng.choice((3, 5, 12, 40)),
                            "width_bytes": 8})
            else:
                out.append({"name": f"a{k}", "type": "int", "cardinality": rng.choice(_CARDS),
                            "width_bytes": rng.choice((4, 8))})
        for c in out:
            c["distinct_count"] = max(1, min(c["cardinality"], rows))
        return out

    tables = [{
        "name": "fact", "row_count": spec.fact_rows,
        "columns": [{"name": "id", "type": "int", "cardinality": spec.fact_rows, "width_bytes": 8,
                     "unique": True}]
        + [{"name": f"fk_{name}", "type": "int", "cardinality": rows, "width_bytes": 4,
            "distinct_count": max(1, min(rows, spec.fact_rows))} for name, rows in dims]
        + attrs(spec.fact_rows),
    }]
    for name, rows in dims:
        tables.append({
            "name": name, "row_count": rows,
            "columns": [{"name": "id", "type": "int", "cardinality": rows, "width_bytes": 4, "unique": True}]
            + attrs(rows),
        })
    return catalog_from_dict({"format": 1, "seed": seed, "tables": tables})


@dataclass(frozen=True)
class Template:
    id: str
    tables: tuple[str, ...]
    joins: tuple[tuple[ColumnRef, ColumnRef], ...]
    filters: tuple[tuple[ColumnRef, str, float], ...]  # (column, "eq" | "range" | "in", range centre)
    group_by: ColumnRef | None
    order_by: ColumnRef | None
    alternates: tuple[ColumnRef, ...]

    @property
    def base_columns(self) -> frozenset[ColumnRef]:
        cols = {c for j in self.joins for c in j} | {f[0] for f in self.filters}
        cols |= {c for c in (self.group_by, self.order_by) if c is not None}
        return frozenset(cols)


def _attributes(catalog: Catalog, table: str) -> list[ColumnRef]:
    return [ColumnRef(table, c.name) for c in catalog.table(table).columns
            if c.name != "id" and not c.name.startswith("fk_")]


def synth_templates(catalog: Catalog, n: int, seed: int, alternates: int = 3,
                    base_size: tuple[int, int] = (4, 6)) -> list[Template]:
    rng = random.Random(f"{seed}:templates")
    names = list(catalog.table_names)
    dims = [t for t in names if t != "fact"]
    out = []
    for k in range(n):
        main = "fact" if ("fact" in names and (not dims or rng.random() < 0.5)) else rng.choice(dims)
        tables = [main]
        joins = []
        if dims and "fact" in names and rng.random() < 0.6:
            dim = main if main != "fact" else rng.choice(dims)
            tables = ["fact", dim] if main == "fact" else [dim, "fact"]
            joins.append((ColumnRef("fact", f"fk_{dim}"), ColumnRef(dim, "id")))
        pool = [c for t in tables for c in _attributes(catalog, t)]
        rng.shuffle(pool)
        b = rng.randint(*base_size)
        used = {c for j in joins for c in j}
        group = order = None
        if pool and rng.random() < 0.3:
            group = pool.pop()
            used.add(group)
        elif pool and rng.random() < 0.4:
            order = pool.pop()
            used.add(order)
        filters = []
        while len(used) < b and pool:
            c = pool.pop()
            kind = rng.choices(("eq", "range", "in"), weights=(0.5, 0.3, 0.2))[0]
            filters.append((c, kind, rng.uniform(0.05, 0.3)))
            used.add(c)
        alts = tuple(pool[:alternates])
        out.append(Template(f"t{k:02d}", tuple(tables), tuple(joins), tuple(filters), group, order, alts))
    return out


def _literal(col: ColumnDef, rng: random.Random):
    if col.type == "int":
        return rng.randrange(col.cardinality)
    return f"'v{rng.randint(1, col.cardinality)}'"


def _predicate(catalog: Catalog, ref: ColumnRef, kind: str, rng: random.Random,
               centre: float = 0.15, jitter: float = 0.2) -> str:
    col = catalog.column(ref.table, ref.column)
    if kind == "eq":
        return f"{ref} = {_literal(col, rng)}"
    if kind == "in":
        vals = sorted({str(_literal(col, rng)) for _ in range(rng.randint(2, 3))})
        return f"{ref} IN ({', '.join(vals)})"
    if col.type == "int":
        # each template draws around its own range fraction
        v = max(1, int(col.cardinality * centre * rng.uniform(1 - jitter, 1 + jitter)))
        return f"{ref} {rng.choice(['<', '<='])} {v}"
    return f"{ref} <= {_literal(col, rng)}"


def render(t: Template, catalog: Catalog, rng: random.Random, alternate: ColumnRef | None,
           jitter: float = 0.2) -> str:
    preds = [f"{a} = {b}" for a, b in t.joins]
    preds += [_predicate(catalog, c, kind, rng, centre, jitter) for c, kind, centre in t.filters]
    if alternate is not None:
        preds.append(_predicate(catalog, alternate, "eq", rng))
    if t.group_by is not None:
        select = f"{t.group_by}, COUNT(*)"
    else:
        shown = t.order_by or next(iter(sorted(_attributes(catalog, t.tables[0]))), None)
        select = str(shown) if shown is not None else "COUNT(*)"
    sql = f"SELECT {select} FROM {', '.join(t.tables)}"
    if preds:
        sql += " WHERE " + " AND ".join(preds)
    if t.group_by is not None:
        sql += f" GROUP BY {t.group_by}"
    if t.order_by is not None:
        sql += f" ORDER BY {t.order_by}"
    return sql


def target_jaccard(b: int, r: float, m: int) -> float:
    if m == 0:
        return 1.0
    return (r * r + 2 * r * (1 - r) * b / (b + 1)
            + (1 - r) ** 2 * (1.0 / m + (1 - 1.0 / m) * b / (b + 2)))


@dataclass
class GeneratedWorkload:
    catalog: Catalog
    records: list[dict]
    templates: list[Template]
    assignment: dict[str, str]  # query id -> template id
    variants: dict[str, str | None] = field(default_factory=dict)

    def workload(self) -> Workload:
        return workload_from_records(self.records, self.catalog, skip_unsupported=False)

    def expected_jaccard(self, redundancy: float) -> float:
        """Pair-weighted mean of the per-template targets."""
        counts: dict[str, int] = {}
        for tid in self.assignment.values():
            counts[tid] = counts.get(tid, 0) + 1
        num = den = 0.0
        for t in self.templates:
            n = counts.get(t.id, 0)
            pairs = n * (n - 1) / 2
            num += pairs * target_jaccard(len(t.base_columns), redundancy, len(t.alternates))
            den += pairs
        return num / den if den else 1.0


def measured_jaccard(workload: Workload, assignment: Mapping[str, str]) -> float:
    """Mean Jaccard over all same-template query pairs."""
    groups: dict[str, list] = {}
    for q in workload:
        groups.setdefault(assignment[q.id], []).append(q.columns)
    total = n = 0
    for cols in groups.values():
        for a, b in combinations(cols, 2):
            union = len(a | b)
            total += len(a & b) / union if union else 1.0
            n += 1
    return total / n if n else 1.0


def generate(catalog: Catalog, templates: Sequence[Template], count: int, redundancy: float,
             seed: int) -> GeneratedWorkload:
    if not 0 <= redundancy <= 1:
        raise ValueError("redundancy must be in [0, 1]")
    if count > 0 and not templates:
        raise ValueError("need at least one template")
    records = []
    assignment = {}
    variants = {}
    for i in range(count):
        t = templates[i % len(templates)]
        rng = random.Random(f"{seed}:query:{i}")
        alt = None
        if t.alternates and rng.random() >= redundancy:
            alt = rng.choice(t.alternates)
        qid = f"q{i:04d}"
        records.append({"id": qid, "sql": render(t, catalog, rng, alt), "frequency": 1})
        assignment[qid] = t.id
        variants[qid] = None if alt is None else str(alt)
    return GeneratedWorkload(catalog, records, list(templates), assignment, variants)


def synth_workload(seed: int, count: int = 500, n_templates: int = 20, redundancy: float = 0.8,
                   alternates: int = 3, schema: SchemaSpec | None = None,
                   base_size: tuple[int, int] = (4, 6)) -> GeneratedWorkload:
    catalog = synth_catalog(schema or SchemaSpec(), seed)
    templates = synth_templates(catalog, n_templates, seed, alternates, base_size)
    return generate(catalog, templates, count, redundancy, seed)
