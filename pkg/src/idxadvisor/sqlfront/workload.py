"""Workload containers and the JSON-lines workload format.

Each line is either a concrete query ``{"id", "sql", "frequency"}`` or a
template entry ``{"template_sql", "params", "count", "seed"}`` whose
``{name}`` placeholders are filled from ``params``::

    {"id": "t3", "template_sql": "SELECT a FROM t WHERE t.b = {v}",
     "params": [{"name": "v", "values": [1, 2, 3]},
                {"name": "w", "range": [0, 100]}],
     "count": 5, "seed": 11}

Template instances get ids ``<id>_<k>`` and frequency 1 unless the
entry carries ``frequency``.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from ..catalog import Catalog
from .ast import Query
from .parser import SqlError, UnsupportedSqlError, parse, unparse

log = logging.getLogger(__name__)


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    queries: tuple[Query, ...]
    catalog: Catalog

    def __post_init__(self):
        seen = set()
        for q in self.queries:
            if q.id in seen:
                raise WorkloadError(f"duplicate query id {q.id!r}")
            seen.add(q.id)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[Query]:
        return iter(self.queries)

    @property
    def total_frequency(self) -> float:
        return sum(q.frequency for q in self.queries)

    def by_id(self) -> dict[str, Query]:
        return {q.id: q for q in self.queries}

    def replace(self, queries: Iterable[Query]) -> "Workload":
        return Workload(tuple(queries), self.catalog)


def make_query(qid: str, sql: str, catalog: Catalog, frequency: float = 1.0) -> Query:
    return Query(qid, sql, parse(sql, catalog), float(frequency))


def expand_template(entry: Mapping) -> list[dict]:
    """Instantiate a template entry into concrete ``{id, sql, frequency}`` records."""
    tid = str(entry.get("id", "tmpl"))
    sql = entry.get("template_sql")
    if not isinstance(sql, str):
        raise WorkloadError(f"template {tid}: missing template_sql")
    count = int(entry.get("count", 1))
    rng = random.Random(f"{entry.get('seed', 0)}:{tid}")
    out = []
    for k in range(count):
        binding = {}
        for p in entry.get("params", []):
            name = p["name"]
            if "values" in p:
                binding[name] = rng.choice(list(p["values"]))
            elif "range" in p:
                lo, hi = p["range"]
                binding[name] = rng.randint(int(lo), int(hi))
            else:
                raise WorkloadError(f"template {tid}: param {name!r} needs 'values' or 'range'")
        try:
            text = sql.format(**binding)
        except (KeyError, IndexError) as exc:
            raise WorkloadError(f"template {tid}: unbound placeholder {exc}") from exc
        out.append({"id": f"{tid}_{k}", "sql": text, "frequency": entry.get("frequency", 1)})
    return out


def workload_from_records(records: Iterable[Mapping], catalog: Catalog,
                          skip_unsupported: bool = True) -> Workload:
    queries = []
    for rec in records:
        if "template_sql" in rec:
            queries.extend(workload_from_records(expand_template(rec), catalog,
                                                 skip_unsupported).queries)
            continue
        try:
            qid, sql = str(rec["id"]), rec["sql"]
        except KeyError as exc:
            raise WorkloadError(f"workload record missing field {exc}") from exc
        try:
            queries.append(make_query(qid, sql, catalog, rec.get("frequency", 1)))
        except UnsupportedSqlError as exc:
            if not skip_unsupported:
                raise
            log.warning("skipping query %s: %s", qid, exc)
        except SqlError as exc:
            raise WorkloadError(f"query {qid}: {exc}") from exc
    return Workload(tuple(queries), catalog)


def load_workload(path: str | Path, catalog: Catalog, skip_unsupported: bool = True) -> Workload:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise WorkloadError(f"{path}:{lineno}: {exc.msg}") from exc
    return workload_from_records(records, catalog, skip_unsupported)


def workload_records(workload: Workload | Iterable[Query]) -> list[dict]:
    return [{"id": q.id, "sql": unparse(q.ast), "frequency": q.frequency} for q in workload]


def save_workload(workload: Workload | Iterable[Query], path: str | Path) -> None:
    lines = [json.dumps(r) for r in workload_records(workload)]
    Path(path).write_text("".join(line + "\n" for line in lines))
