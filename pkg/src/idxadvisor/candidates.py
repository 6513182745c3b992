"""Index candidate enumeration.

Per table, every combination (size 1..w_max) of the workload's indexable
columns on that table becomes exactly one candidate whose column order is
the relevance order of its members. Three filters follow:

1. relevance: mean member relevance must reach ``relevance_floor``;
2. validity: the columns must all be indexable in one single query
   (no query could use the full key otherwise);
3. pruning: candidates over the storage budget go, as do strict supersets
   of an already kept candidate whose single-index workload cost improves on
   it by less than ``prune_gain_threshold`` (relative).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .costmodel import W_MAX, CostModel, IndexCandidate, IndexConfiguration, predicate_selectivity
from .sqlfront.ast import ColumnRef, Query, QueryAst


@dataclass(frozen=True)
class EnumerationConfig:
    w_max: int = W_MAX
    relevance_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    relevance_floor: float = 0.05
    prune_gain_threshold: float = 0.02
    storage_budget: int | None = None
    max_pool: int | None = None

    def __post_init__(self):
        if not 1 <= self.w_max <= W_MAX:
            raise ValueError(f"w_max must be in 1..{W_MAX}")
        if abs(sum(self.relevance_weights) - 1.0) > 1e-9 or min(self.relevance_weights) < 0:
            raise ValueError("relevance weights must be nonnegative and sum to 1")
        if self.max_pool is not None and self.max_pool < 1:
            raise ValueError("max_pool must be positive")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "EnumerationConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown enumeration keys: {sorted(unknown)}")
        if "relevance_weights" in d:
            d["relevance_weights"] = tuple(d["relevance_weights"])
        return cls(**d)


def _queries(w) -> list[Query]:
    return list(w.queries) if hasattr(w, "queries") else list(w)


def _predicates(ast: QueryAst):
    for p in ast.where:
        if hasattr(p, "subquery"):
            yield from _predicates(p.subquery)
        elif hasattr(p, "column"):
            yield p


def _joins(ast: QueryAst):
    yield from ast.joins
    for sub in ast.subqueries():
        yield from _joins(sub)


def _grouping(ast: QueryAst) -> set[ColumnRef]:
    out = set(ast.group_by) | {o.column for o in ast.order_by}
    for sub in ast.subqueries():
        out |= _grouping(sub)
    return out


def _outer_join_columns(ast: QueryAst) -> set[ColumnRef]:
    # an IN-subquery links the outer column to the subquery's select column
    out = set()
    for p in ast.where:
        if hasattr(p, "subquery"):
            out.add(p.column)
            out.add(p.subquery.select[0])
            out |= _outer_join_columns(p.subquery)
    return out


@dataclass(frozen=True)
class _Usage:
    weight: float = 0.0
    filter_gain: float = 0.0
    joins: float = 0.0
    grouping: float = 0.0


def _usage(queries: Sequence[Query], catalog) -> dict[ColumnRef, _Usage]:
    acc: dict[ColumnRef, list[float]] = {}
    for q in queries:
        sel: dict[ColumnRef, float] = {}
        for p in _predicates(q.ast):
            s = predicate_selectivity(catalog.column(p.column.table, p.column.column), p)[1]
            sel[p.column] = sel.get(p.column, 1.0) * s
        joined = {c for j in _joins(q.ast) for c in (j.left, j.right)} | _outer_join_columns(q.ast)
        grouped = _grouping(q.ast)
        f = q.frequency
        for c in q.columns:
            row = acc.setdefault(c, [0.0, 0.0, 0.0, 0.0])
            row[0] += f
            row[1] += f * (1.0 - sel.get(c, 1.0))
            row[2] += f * (c in joined)
            row[3] += f * (c in grouped)
    return {c: _Usage(*r) for c, r in acc.items()}


def relevance_score(column: ColumnRef, w, catalog=None,
                    weights: tuple[float, float, float] = (0.5, 0.3, 0.2)) -> float:
    """Weighted mix of filter strength (1 - selectivity), join participation
    and GROUP/ORDER BY appearance, each a frequency-weighted fraction over
    the queries where ``column`` is indexable."""
    queries = _queries(w)
    catalog = catalog or getattr(w, "catalog", None)
    if catalog is None:
        raise ValueError("relevance_score needs a catalog")
    u = _usage(queries, catalog).get(column)
    if u is None or u.weight <= 0:
        return 0.0
    return _relevance(u, weights)


def _relevance(u: _Usage, weights) -> float:
    a, b, c = weights
    score = (a * u.filter_gain + b * u.joins + c * u.grouping) / u.weight
    return min(1.0, max(0.0, score))


@dataclass
class CandidatePool:
    candidates: tuple[IndexCandidate, ...]
    scores: tuple[float, ...]
    columns: tuple[ColumnRef, ...]  # bitmap column axis
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [c.key for c in self.candidates]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate candidates in pool")
        if len(self.scores) != len(self.candidates):
            raise ValueError("one score per candidate required")

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i: int) -> IndexCandidate:
        return self.candidates[i]

    @property
    def bitmap(self) -> np.ndarray:
        col_idx = {c: j for j, c in enumerate(self.columns)}
        out = np.zeros((len(self.candidates), len(self.columns)), dtype=np.uint8)
        for i, cand in enumerate(self.candidates):
            for ref in cand.refs:
                if ref in col_idx:
                    out[i, col_idx[ref]] = 1
        return out

    def index_of(self, cand: IndexCandidate) -> int:
        return [c.key for c in self.candidates].index(cand.key)

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "columns": [str(c) for c in self.columns],
            "candidates": [
                {"table": c.table, "columns": list(c.columns), "size_bytes": c.size_bytes, "score": s}
                for c, s in zip(self.candidates, self.scores)
            ],
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CandidatePool":
        cands = tuple(IndexCandidate(c["table"], tuple(c["columns"]), int(c["size_bytes"]))
                      for c in doc["candidates"])
        scores = tuple(float(c["score"]) for c in doc["candidates"])
        cols = tuple(ColumnRef(*s.split(".", 1)) for s in doc.get("columns", []))
        return cls(cands, scores, cols, dict(doc.get("stats", {})))

    def digest(self) -> str:
        """Content hash over the action space (candidates and sizes, in order)."""
        body = [[c.table, list(c.columns), c.size_bytes] for c in self.candidates]
        return hashlib.sha256(json.dumps(body, separators=(",", ":")).encode()).hexdigest()

    def subset(self, indices: Iterable[int]) -> "CandidatePool":
        idx = list(indices)
        return CandidatePool(tuple(self.candidates[i] for i in idx),
                             tuple(self.scores[i] for i in idx), self.columns, dict(self.stats))


def canonical_combinations(columns: Sequence[str], relevance: Mapping[str, float],
                           w_max: int) -> list[tuple[str, ...]]:
    """All combinations of sizes 1..w_max, each ordered by relevance (desc, then name)."""
    ordered = sorted(columns, key=lambda c: (-relevance.get(c, 0.0), c))
    out = []
    for k in range(1, min(w_max, len(ordered)) + 1):
        out.extend(combinations(ordered, k))
    return out


def enumerate_candidates(w, cfg: EnumerationConfig, costmodel: CostModel) -> CandidatePool:
    queries = _queries(w)
    catalog = costmodel.catalog
    usage = _usage(queries, catalog)
    rel = {c: _relevance(u, cfg.relevance_weights) for c, u in usage.items()}
    by_table: dict[str, list[str]] = {}
    for c in sorted(rel):
        by_table.setdefault(c.table, []).append(c.column)
    query_sets = [frozenset(q.columns) for q in queries]

    generated = 0
    after_relevance = 0
    after_validity = 0
    scored: list[tuple[float, IndexCandidate]] = []
    for table in sorted(by_table):
        trel = {c: rel[ColumnRef(table, c)] for c in by_table[table]}
        for combo in canonical_combinations(by_table[table], trel, cfg.w_max):
            generated += 1
            mean_rel = sum(trel[c] for c in combo) / len(combo)
            if mean_rel < cfg.relevance_floor:
                continue
            after_relevance += 1
            refs = {ColumnRef(table, c) for c in combo}
            if not any(refs <= qs for qs in query_sets):
                continue
            after_validity += 1
            scored.append((mean_rel, costmodel.candidate(table, combo)))

    kept, pruned_budget, pruned_superset = _prune(scored, queries, cfg, costmodel)
    kept.sort(key=lambda sc: (-sc[0], sc[1].table, sc[1].columns))
    if cfg.max_pool is not None:
        kept = kept[:cfg.max_pool]
    stats = {
        "indexable_columns": len(rel),
        "generated": generated,
        "after_relevance": after_relevance,
        "after_validity": after_validity,
        "pruned_budget": pruned_budget,
        "pruned_superset": pruned_superset,
        "pool": len(kept),
    }
    return CandidatePool(tuple(c for _, c in kept), tuple(s for s, _ in kept),
                         tuple(sorted(rel)), stats)


def _prune(scored, queries, cfg: EnumerationConfig, costmodel: CostModel):
    budget = cfg.storage_budget
    cost_cache: dict[tuple, float] = {}

    def single_cost(cand: IndexCandidate) -> float:
        if cand.key not in cost_cache:
            cost_cache[cand.key] = costmodel.workload_cost(queries, IndexConfiguration((cand,)))
        return cost_cache[cand.key]

    kept: list[tuple[float, IndexCandidate]] = []
    pruned_budget = pruned_superset = 0
    # narrower candidates first so every superset sees its kept subsets
    for score, cand in sorted(scored, key=lambda sc: (sc[1].width, sc[1].table, sc[1].columns)):
        if budget is not None and cand.size_bytes > budget:
            pruned_budget += 1
            continue
        cols = set(cand.columns)
        drop = False
        for _, k in kept:
            if k.table != cand.table or not set(k.columns) < cols:
                continue
            base = single_cost(k)
            gain = 0.0 if base <= 0 else (base - single_cost(cand)) / base
            if gain < cfg.prune_gain_threshold:
                drop = True
                break
        if drop:
            pruned_superset += 1
            continue
        kept.append((score, cand))
    return kept, pruned_budget, pruned_superset
