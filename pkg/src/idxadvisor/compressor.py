"""Three-phase workload compression.

1. Similarity dedup: greedy single pass; a query joins the first cluster
   whose seed (first member) has Jaccard > threshold with it. The cluster
   representative is the member whose exact column set occurs most often
   in the workload (frequency weighted), then the one whose columns have
   the highest mean workload-wide usage, then the lowest id. It carries the
   cluster's summed frequency.
2. Column scoring: ``Score(c) = D(t) * ColBenefit(c)`` with
   ``D(t) = rows(t) * #queries referencing t``; the top fraction is kept.
3. Query selection on the query/column bipartite graph: maximise collected
   edge weight subject to a lower bound on covered (query, column) pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .costmodel import CostModel, IndexConfiguration
from .sqlfront.ast import ColumnRef, Query, all_tables, jaccard
from .sqlfront.workload import Workload, workload_records


class CompressionError(ValueError):
    pass


@dataclass(frozen=True)
class CompressionConfig:
    similarity_threshold: float = 0.8
    retention_fraction: float = 0.85
    lambda_synergy: float = 0.1
    cover_bound: int | None = None  # default: ceil(cover_fraction * |E|)
    cover_fraction: float = 0.5
    ilp_exact_limit: int = 15

    def __post_init__(self):
        if not 0 < self.retention_fraction <= 1:
            raise ValueError("retention_fraction must be in (0, 1]")
        if not 0 <= self.similarity_threshold <= 1:
            raise ValueError("similarity_threshold must be in [0, 1]")
        if self.lambda_synergy < 0:
            raise ValueError("lambda_synergy must be >= 0")
        if self.cover_bound is not None and self.cover_bound < 1:
            raise ValueError("cover_bound must be positive")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "CompressionConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown compression keys: {sorted(unknown)}")
        return cls(**d)


# Phase 1

@dataclass(frozen=True)
class Phase1Result:
    workload: Workload
    provenance: Mapping[str, str]  # original id -> representative id


def column_usage(queries: Iterable[Query]) -> dict[ColumnRef, float]:
    usage: dict[ColumnRef, float] = {}
    for q in queries:
        for c in q.columns:
            usage[c] = usage.get(c, 0.0) + q.frequency
    return usage


def _mean_usage(q: Query, usage: Mapping[ColumnRef, float]) -> float:
    # a mean, not a sum: summing favours members with extra rare columns
    return sum(usage[c] for c in q.columns) / len(q.columns) if q.columns else 0.0


def phase1_dedupe(w: Workload, cfg: CompressionConfig = CompressionConfig()) -> Phase1Result:
    clusters: list[list[Query]] = []
    for q in w:
        for members in clusters:
            if jaccard(members[0], q) > cfg.similarity_threshold:
                members.append(q)
                break
        else:
            clusters.append([q])
    usage = column_usage(w)
    set_counts: dict[frozenset, float] = {}
    for q in w:
        set_counts[q.columns] = set_counts.get(q.columns, 0.0) + q.frequency
    reps = []
    provenance = {}
    for members in clusters:
        rep = min(members, key=lambda q: (-set_counts[q.columns], -_mean_usage(q, usage), q.id))
        freq = sum(q.frequency for q in members)
        reps.append(Query(rep.id, rep.text, rep.ast, freq))
        for q in members:
            provenance[q.id] = rep.id
    return Phase1Result(w.replace(reps), provenance)


# Phase 2

@dataclass(frozen=True)
class ColumnScore:
    column: ColumnRef
    col_benefit: float
    table_importance: float
    score: float

    def to_dict(self) -> dict:
        return {"column": str(self.column), "col_benefit": self.col_benefit,
                "table_importance": self.table_importance, "score": self.score}


class WhatIfCache:
    """Memoised Cost(q) and Cost(q | single-column index on c)."""

    def __init__(self, costmodel: CostModel):
        self.costmodel = costmodel
        self.base: dict[str, float] = {}
        self.with_col: dict[tuple[str, ColumnRef], float] = {}

    def cost(self, q: Query) -> float:
        if q.id not in self.base:
            self.base[q.id] = self.costmodel.query_cost(q)
        return self.base[q.id]

    def cost_with(self, q: Query, c: ColumnRef) -> float:
        key = (q.id, c)
        if key not in self.with_col:
            cand = self.costmodel.single_column_index(c)
            self.with_col[key] = self.costmodel.query_cost(q, IndexConfiguration((cand,)))
        return self.with_col[key]

    def delta(self, q: Query, c: ColumnRef) -> float:
        # an index on a column the query does not mention never applies
        if c not in q.columns:
            return 0.0
        return max(0.0, self.cost(q) - self.cost_with(q, c))


def score_columns(w: Iterable[Query], costmodel: CostModel,
                  cache: WhatIfCache | None = None) -> list[ColumnScore]:
    queries = list(w)
    cache = cache or WhatIfCache(costmodel)
    refs: dict[str, int] = {}
    for q in queries:
        for t in all_tables(q.ast):
            refs[t] = refs.get(t, 0) + 1
    by_col: dict[ColumnRef, list[Query]] = {}
    for q in queries:
        for c in sorted(q.columns):
            by_col.setdefault(c, []).append(q)
    scores = []
    for c in sorted(by_col):
        ratios = []
        for q in by_col[c]:
            base = cache.cost(q)
            ratios.append(0.0 if base <= 0 else cache.delta(q, c) / base)
        benefit = sum(ratios) / len(ratios)
        importance = float(costmodel.catalog.table(c.table).row_count * refs.get(c.table, 0))
        scores.append(ColumnScore(c, benefit, importance, importance * benefit))
    return scores


def phase2_retain(scores: Sequence[ColumnScore], cfg: CompressionConfig = CompressionConfig()) -> list[ColumnRef]:
    if not scores:
        return []
    ordered = sorted(scores, key=lambda s: (-s.score, s.column.table, s.column.column))
    keep = max(1, math.ceil(cfg.retention_fraction * len(ordered) - 1e-9))
    return [s.column for s in ordered[:keep]]


# Phase 3

@dataclass(frozen=True)
class BipartiteGraph:
    queries: tuple[Query, ...]
    columns: tuple[ColumnRef, ...]
    edges: Mapping[tuple[int, int], float]  # (query idx, column idx) -> weight

    def __post_init__(self):
        for (i, j), wt in self.edges.items():
            if not (math.isfinite(wt) and wt >= 0):
                raise ValueError(f"edge ({i}, {j}) has invalid weight {wt}")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def query_edges(self, i: int) -> list[tuple[int, float]]:
        return [(j, wt) for (qi, j), wt in sorted(self.edges.items()) if qi == i]

    def stats(self) -> dict:
        return {"queries": len(self.queries), "columns": len(self.columns),
                "edges": self.num_edges, "total_weight": math.fsum(self.edges.values())}


def build_graph(w: Iterable[Query], columns: Iterable[ColumnRef], cfg: CompressionConfig,
                costmodel: CostModel, cache: WhatIfCache | None = None) -> BipartiteGraph:
    queries = tuple(w)
    cols = tuple(columns)
    cache = cache or WhatIfCache(costmodel)
    col_idx = {c: j for j, c in enumerate(cols)}
    delta: dict[tuple[int, int], float] = {}
    for i, q in enumerate(queries):
        for c in sorted(q.columns):
            if c in col_idx:
                delta[(i, col_idx[c])] = cache.delta(q, c)
    sim = {}
    for i in range(len(queries)):
        for k in range(i + 1, len(queries)):
            sim[(i, k)] = sim[(k, i)] = jaccard(queries[i], queries[k])
    by_col: dict[int, list[int]] = {}
    for (i, j) in delta:
        by_col.setdefault(j, []).append(i)
    edges = {}
    for (i, j), d in sorted(delta.items()):
        synergy = sum(sim[(i, k)] * delta[(k, j)] for k in by_col[j] if k != i)
        edges[(i, j)] = d + cfg.lambda_synergy * queries[i].frequency * synergy
    return BipartiteGraph(queries, cols, edges)


@dataclass(frozen=True)
class Selection:
    selected: tuple[int, ...]
    covered_columns: tuple[int, ...]
    objective: float
    coverage: int
    method: str


def objective_value(graph: BipartiteGraph, selected: Iterable[int]) -> float:
    chosen = set(selected)
    return math.fsum(wt for (i, _), wt in graph.edges.items() if i in chosen)


def _per_query(graph: BipartiteGraph) -> tuple[list[float], list[int]]:
    m = len(graph.queries)
    weight = [0.0] * m
    degree = [0] * m
    for (i, _), wt in sorted(graph.edges.items()):
        weight[i] += wt
        degree[i] += 1
    return weight, degree


def _finish(graph: BipartiteGraph, selected, method: str) -> Selection:
    sel = tuple(sorted(selected))
    chosen = set(sel)
    # y_j: columns that collect positive weight or add coverage from a chosen query
    covered = tuple(sorted({j for (i, j) in graph.edges if i in chosen}))
    coverage = sum(1 for (i, _) in graph.edges if i in chosen)
    return Selection(sel, covered, objective_value(graph, sel), coverage, method)


def _check_cover(graph: BipartiteGraph, cover: int) -> None:
    if cover > graph.num_edges:
        raise CompressionError(
            f"cover_bound {cover} is infeasible: at most {graph.num_edges} "
            "query-column pairs can be covered")


def solve_exact(graph: BipartiteGraph, cover: int) -> Selection:
    """Branch and bound over query choices.

    Column choices are implied: with non-negative weights, activating every
    column a chosen query touches is optimal. Among optimal objectives the
    smallest then lexicographically first query set wins.
    """
    _check_cover(graph, cover)
    weight, degree = _per_query(graph)
    m = len(weight)
    order = sorted(range(m), key=lambda i: (-weight[i], -degree[i], i))
    rest_w = [0.0] * (m + 1)
    rest_d = [0] * (m + 1)
    for pos in range(m - 1, -1, -1):
        rest_w[pos] = rest_w[pos + 1] + weight[order[pos]]
        rest_d[pos] = rest_d[pos + 1] + degree[order[pos]]
    tol = 1e-9 * (1.0 + rest_w[0])
    best: list = [None]  # (objective, count, sorted tuple)

    def better(obj, chosen) -> bool:
        if best[0] is None:
            return True
        b_obj, b_cnt, b_sel = best[0]
        if obj != b_obj:
            return obj > b_obj
        if len(chosen) != b_cnt:
            return len(chosen) < b_cnt
        return chosen < b_sel

    def visit(pos: int, obj: float, cov: int, chosen: list) -> None:
        if cov + rest_d[pos] < cover:
            return
        if best[0] is not None:
            b_obj, b_cnt, _ = best[0]
            bound = obj + rest_w[pos]
            if bound < b_obj - tol:
                return
            if bound <= b_obj + tol and len(chosen) > b_cnt:
                return
        if pos == m:
            sel = tuple(sorted(chosen))
            exact = objective_value(graph, sel)
            if better(exact, sel):
                best[0] = (exact, len(sel), sel)
            return
        i = order[pos]
        chosen.append(i)
        visit(pos + 1, obj + weight[i], cov + degree[i], chosen)
        chosen.pop()
        visit(pos + 1, obj, cov, chosen)

    visit(0, 0.0, 0, [])
    return _finish(graph, best[0][2], "exact")


def solve_greedy(graph: BipartiteGraph, cover: int) -> Selection:
    _check_cover(graph, cover)
    weight, degree = _per_query(graph)
    remaining = set(range(len(weight)))
    chosen: list[int] = []
    cov = 0
    while remaining:
        i = min(remaining, key=lambda k: (-weight[k], -degree[k], k))
        if cov >= cover and weight[i] <= 0:
            break
        if weight[i] <= 0:
            # only coverage is missing: prefer the query adding the most pairs
            i = min(remaining, key=lambda k: (-degree[k], k))
        chosen.append(i)
        cov += degree[i]
        remaining.discard(i)
    return _finish(graph, chosen, "greedy")


def default_cover(graph: BipartiteGraph, cfg: CompressionConfig) -> int:
    if cfg.cover_bound is not None:
        return cfg.cover_bound
    return max(1, math.ceil(cfg.cover_fraction * graph.num_edges)) if graph.num_edges else 0


def select_queries(graph: BipartiteGraph, cfg: CompressionConfig = CompressionConfig()) -> Selection:
    if not graph.queries:
        raise CompressionError("cannot select from an empty graph")
    cover = default_cover(graph, cfg)
    if len(graph.queries) <= cfg.ilp_exact_limit:
        return solve_exact(graph, cover)
    return solve_greedy(graph, cover)


# whole pipeline

@dataclass
class CompressedWorkload:
    queries: tuple[Query, ...]
    retained_columns: tuple[ColumnRef, ...]
    provenance: dict[str, str]
    scores: list[ColumnScore]
    graph_stats: dict
    metrics: dict
    covered_columns: tuple[ColumnRef, ...] = ()
    rules_applied: list[dict] = field(default_factory=list)

    def workload(self, catalog) -> Workload:
        return Workload(tuple(self.queries), catalog)

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "queries": workload_records(self.queries),
            "retained_columns": [str(c) for c in self.retained_columns],
            "covered_columns": [str(c) for c in self.covered_columns],
            "provenance": dict(self.provenance),
            "column_scores": [s.to_dict() for s in self.scores],
            "graph": self.graph_stats,
            "metrics": self.metrics,
            "rules_applied": self.rules_applied,
        }

    @classmethod
    def from_dict(cls, doc: Mapping, catalog) -> "CompressedWorkload":
        from .sqlfront.workload import workload_from_records

        def ref(s: str) -> ColumnRef:
            t, c = s.split(".", 1)
            return ColumnRef(t, c)

        w = workload_from_records(doc["queries"], catalog, skip_unsupported=False)
        scores = [ColumnScore(ref(s["column"]), s["col_benefit"], s["table_importance"], s["score"])
                  for s in doc.get("column_scores", [])]
        return cls(w.queries, tuple(ref(c) for c in doc.get("retained_columns", [])),
                   dict(doc.get("provenance", {})), scores, dict(doc.get("graph", {})),
                   dict(doc.get("metrics", {})), tuple(ref(c) for c in doc.get("covered_columns", [])),
                   list(doc.get("rules_applied", [])))


def compress(w: Workload, cfg: CompressionConfig, costmodel: CostModel) -> CompressedWorkload:
    calls0 = costmodel.calls
    p1 = phase1_dedupe(w, cfg)
    q1 = p1.workload
    cache = WhatIfCache(costmodel)
    scores = score_columns(q1, costmodel, cache)
    calls_scoring = costmodel.calls - calls0
    retained = phase2_retain(scores, cfg)
    graph = build_graph(q1, retained, cfg, costmodel, cache)
    calls_graph = costmodel.calls - calls0 - calls_scoring
    if len(q1) == 1:
        # a single query is its own compressed workload
        selected_idx: tuple[int, ...] = (0,)
        covered = tuple(sorted({j for (_, j) in graph.edges}))
        method = "trivial"
    else:
        if graph.num_edges == 0:
            raise CompressionError("no query references a retained column")
        sel = select_queries(graph, cfg)
        selected_idx, covered, method = sel.selected, sel.covered_columns, sel.method
    selected = tuple(graph.queries[i] for i in selected_idx)
    metrics = {
        "input_queries": len(w),
        "phase1_queries": len(q1),
        "phase2_columns_in": len(scores),
        "phase2_columns_kept": len(retained),
        "phase3_queries": len(selected),
        "phase3_method": method,
        "cover_bound": default_cover(graph, cfg),
        "input_frequency": w.total_frequency,
        "phase1_frequency": q1.total_frequency,
        "selected_frequency": sum(q.frequency for q in selected),
        "what_if_calls_scoring": calls_scoring,
        "what_if_calls_graph": calls_graph,
        "what_if_calls": costmodel.calls - calls0,
    }
    return CompressedWorkload(
        queries=selected,
        retained_columns=tuple(retained),
        provenance=dict(p1.provenance),
        scores=scores,
        graph_stats=graph.stats(),
        metrics=metrics,
        covered_columns=tuple(graph.columns[j] for j in covered),
    )
