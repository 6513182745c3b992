"""Schemas, declared column statistics and miniature instance generation.

The catalog file is JSON::

    {"format": 1,
     "seed": 0,
     "tables": [
        {"name": "orders", "row_count": 150000,
         "columns": [{"name": "o_id", "type": "int", "cardinality": 150000,
                      "width_bytes": 4, "unique": true},
                     {"name": "o_status", "type": "cat", "cardinality": 3,
                      "width_bytes": 1}]}]}

``distinct_count`` may be given per column; it defaults to
``min(cardinality, row_count)`` (at least 1). ``unique`` columns have
``distinct_count == row_count``. Columns never hold NULLs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CATALOG_FORMAT = 1
MAX_MATERIALIZED_ROWS = 1000


class CatalogError(ValueError):
    """Raised for malformed or invalid catalog documents."""


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type: str  # "int" | "cat"
    cardinality: int
    width_bytes: int
    distinct_count: int
    unique: bool = False

    def domain(self) -> list:
        if self.type == "int":
            return list(range(self.cardinality))
        return [f"v{i}" for i in range(1, self.cardinality + 1)]


@dataclass(frozen=True)
class TableSchema:
    name: str
    row_count: int
    columns: tuple[ColumnDef, ...]

    def column(self, name: str) -> ColumnDef:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(f"{self.name}.{name}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


@dataclass(frozen=True)
class Catalog:
    tables: tuple[TableSchema, ...] = ()
    seed: int = 0
    _by_name: Mapping[str, TableSchema] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        by_name = {}
        for t in self.tables:
            if t.name in by_name:
                raise CatalogError(f"duplicate table name {t.name!r}")
            by_name[t.name] = t
        object.__setattr__(self, "_by_name", by_name)

    def table(self, name: str) -> TableSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(name) from None

    def has_table(self, name: str) -> bool:
        return name in self._by_name

    def column(self, table: str, column: str) -> ColumnDef:
        return self.table(table).column(column)

    @property
    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)


def _require(obj: Mapping, key: str, where: str, kind=None):
    if key not in obj:
        raise CatalogError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool) and kind is int):
        raise CatalogError(f"{where}: field {key!r} must be {kind.__name__}, got {value!r}")
    return value


def _column_from_dict(d: Mapping, table: str, row_count: int, idx: int) -> ColumnDef:
    where = f"tables[{table}].columns[{idx}]"
    if not isinstance(d, Mapping):
        raise CatalogError(f"{where}: expected an object")
    name = _require(d, "name", where, str)
    where = f"column {table}.{name}"
    ctype = _require(d, "type", where, str)
    if ctype not in ("int", "cat"):
        raise CatalogError(f"{where}: type must be 'int' or 'cat', got {ctype!r}")
    card = _require(d, "cardinality", where, int)
    width = _require(d, "width_bytes", where, int)
    unique = bool(d.get("unique", False))
    if card < 1:
        raise CatalogError(f"{where}: cardinality must be >= 1")
    if width < 1:
        raise CatalogError(f"{where}: width_bytes must be >= 1")
    if unique:
        default_distinct = max(1, row_count)
        if card < row_count:
            raise CatalogError(f"{where}: unique column needs cardinality >= row_count")
    else:
        default_distinct = max(1, min(card, row_count))
    distinct = d.get("distinct_count", default_distinct)
    if not isinstance(distinct, int) or isinstance(distinct, bool):
        raise CatalogError(f"{where}: distinct_count must be an integer")
    if distinct < 1:
        raise CatalogError(f"{where}: distinct_count must be >= 1")
    if distinct > max(1, row_count):
        raise CatalogError(
            f"{where}: distinct_count {distinct} exceeds row_count {row_count}")
    if distinct > card:
        raise CatalogError(f"{where}: distinct_count {distinct} exceeds cardinality {card}")
    return ColumnDef(name, ctype, card, width, distinct, unique)


def catalog_from_dict(doc: Mapping) -> Catalog:
    if not isinstance(doc, Mapping):
        raise CatalogError("catalog document must be a JSON object")
    fmt = doc.get("format", CATALOG_FORMAT)
    if fmt != CATALOG_FORMAT:
        raise CatalogError(f"unsupported catalog format {fmt!r} (expected {CATALOG_FORMAT})")
    tables_doc = _require(doc, "tables", "catalog", list)
    tables = []
    for i, td in enumerate(tables_doc):
        if not isinstance(td, Mapping):
            raise CatalogError(f"tables[{i}]: expected an object")
        name = _require(td, "name", f"tables[{i}]", str)
        rows = _require(td, "row_count", f"table {name}", int)
        if rows < 0:
            raise CatalogError(f"table {name}: row_count must be >= 0")
        cols_doc = _require(td, "columns", f"table {name}", list)
        cols = tuple(_column_from_dict(c, name, rows, j) for j, c in enumerate(cols_doc))
        seen = set()
        for c in cols:
            if c.name in seen:
                raise CatalogError(f"table {name}: duplicate column {c.name!r}")
            seen.add(c.name)
        tables.append(TableSchema(name, rows, cols))
    seed = doc.get("seed", 0)
    return Catalog(tuple(tables), int(seed))


def catalog_to_dict(catalog: Catalog) -> dict:
    return {
        "format": CATALOG_FORMAT,
        "seed": catalog.seed,
        "tables": [
            {
                "name": t.name,
                "row_count": t.row_count,
                "columns": [
                    {
                        "name": c.name,
                        "type": c.type,
                        "cardinality": c.cardinality,
                        "width_bytes": c.width_bytes,
                        "distinct_count": c.distinct_count,
                        **({"unique": True} if c.unique else {}),
                    }
                    for c in t.columns
                ],
            }
            for t in catalog.tables
        ],
    }


def load_catalog(path: str | Path) -> Catalog:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return catalog_from_dict(doc)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog_to_dict(catalog), indent=2) + "\n")


def selectivity(column: ColumnDef, kind: str = "equality", fraction: float | None = None) -> float:
    """Declared-statistics selectivity in (0, 1].

    ``kind`` is ``"equality"`` (1/distinct_count) or ``"range"`` (the given
    fraction clamped into (0, 1]).
    """
    if kind == "equality":
        return 1.0 / column.distinct_count
    if kind == "range":
        if fraction is None:
            raise ValueError("range selectivity needs a fraction")
        return min(1.0, max(float(fraction), 1e-9))
    raise ValueError(f"unknown predicate kind {kind!r}")


@dataclass(frozen=True)
class MaterializedInstance:
    rows: Mapping[str, tuple[tuple, ...]]
    seed: int

    def table_rows(self, table: str) -> tuple[tuple, ...]:
        return self.rows[table]


def materialize(
    catalog: Catalog,
    rows_per_table: int | Mapping[str, int],
    seed: int,
    value_pools: Mapping[tuple[str, str], Sequence] | None = None,
) -> MaterializedInstance:
    """Draw a small deterministic instance of every table.

    Values are uniform over each column's domain unless ``value_pools``
    overrides the domain for a ``(table, column)`` pair. Unique columns
    are drawn without replacement.
    """
    pools = value_pools or {}
    out = {}
    for ti, table in enumerate(catalog.tables):
        n = rows_per_table[table.name] if isinstance(rows_per_table, Mapping) else rows_per_table
        if n < 0:
            raise ValueError("rows_per_table must be >= 0")
        if n > MAX_MATERIALIZED_ROWS:
            raise ValueError(
                f"rows_per_table {n} exceeds the {MAX_MATERIALIZED_ROWS}-row cap "
                "for equivalence-testing instances")
        rng = np.random.default_rng([seed, ti])
        columns = []
        for col in table.columns:
            domain = list(pools.get((table.name, col.name), ())) or None
            if col.unique:
                if domain is None:
                    domain = list(range(min(col.cardinality, max(n, 1) * 4))) \
                        if col.type == "int" else col.domain()[: max(n, 1) * 4]
                domain = _unique_pool(domain, n, col.type)
                picks = rng.permutation(len(domain))[:n]
                columns.append([domain[int(p)] for p in picks])
            elif domain is None:
                picks = rng.integers(0, col.cardinality, size=n)
                if col.type == "int":
                    columns.append([int(p) for p in picks])
                else:
                    columns.append([f"v{int(p) + 1}" for p in picks])
            else:
                picks = rng.integers(0, len(domain), size=n)
                columns.append([domain[int(p)] for p in picks])
        out[table.name] = tuple(zip(*columns)) if columns and n else tuple(() for _ in range(n))
    return MaterializedInstance(out, seed)


def _unique_pool(values: Iterable, n: int, ctype: str) -> list:
    pool = list(dict.fromkeys(values))
    i = 0
    while len(pool) < n:
        extra = i if ctype == "int" else f"v{i + 1}"
        if extra not in pool:
            pool.append(extra)
        i += 1
    return pool
