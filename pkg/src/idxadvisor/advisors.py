"""Reference advisors: greedy benefit-per-byte and an exhaustive oracle."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

from .candidates import CandidatePool
from .costmodel import EMPTY, CostModel, IndexCandidate, IndexConfiguration

EXHAUSTIVE_CAP = 20


class AdvisorError(ValueError):
    pass


@dataclass
class AdviceReport:
    method: str
    configuration: IndexConfiguration
    cost_before: float
    cost_after: float
    relative_cost: float
    wall_time_s: float
    what_if_calls: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, method, configuration, before, after, wall, calls, **extra) -> "AdviceReport":
        rel = after / before if before > 0 else 1.0
        return cls(method, configuration, before, after, rel, wall, calls, dict(extra))

    @property
    def size_bytes(self) -> int:
        return self.configuration.total_size_bytes

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "configuration": self.configuration.to_dict(),
            "size_bytes": self.size_bytes,
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "relative_cost": self.relative_cost,
            "wall_time_s": self.wall_time_s,
            "what_if_calls": self.what_if_calls,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, doc) -> "AdviceReport":
        idx = tuple(IndexCandidate(i["table"], tuple(i["columns"]), int(i.get("size_bytes", 0)))
                    for i in doc["configuration"]["indexes"])
        return cls(doc["method"], IndexConfiguration(idx), doc["cost_before"], doc["cost_after"],
                   doc["relative_cost"], doc["wall_time_s"], doc["what_if_calls"], doc.get("extra", {}))


def _candidates(pool) -> list[IndexCandidate]:
    return list(pool.candidates) if isinstance(pool, CandidatePool) else list(pool)


def greedy_advise(workload, pool, budget: int, costmodel: CostModel) -> AdviceReport:
    """Add the feasible candidate with the best marginal cost reduction per
    byte until nothing fits or nothing helps. Ties: smaller, then key order."""
    t0 = time.perf_counter()
    calls0 = costmodel.calls
    queries = list(workload)
    cands = _candidates(pool)
    config = EMPTY
    before = current = costmodel.workload_cost(queries, config)
    while True:
        best = None
        for cand in cands:
            if cand in config or config.total_size_bytes + cand.size_bytes > budget:
                continue
            cost = costmodel.workload_cost(queries, config.add(cand))
            gain = current - cost
            ratio = gain / cand.size_bytes if cand.size_bytes > 0 else (float("inf") if gain > 0 else 0.0)
            key = (-ratio, cand.size_bytes, cand.key)
            if best is None or key < best[0]:
                best = (key, cand, cost, gain)
        if best is None or best[3] <= 0:
            break
        config = config.add(best[1])
        current = best[2]
    return AdviceReport.build("greedy", config, before, current, time.perf_counter() - t0,
                              costmodel.calls - calls0)


def exhaustive_optimal(workload, pool, budget: int, costmodel: CostModel) -> AdviceReport:
    """Minimum-cost budget-feasible subset. Ties: smaller size, then the
    lexicographically smallest sorted key list."""
    cands = sorted(_candidates(pool), key=lambda c: c.key)
    if len(cands) > EXHAUSTIVE_CAP:
        raise AdvisorError(f"exhaustive search is capped at {EXHAUSTIVE_CAP} candidates "
                           f"(got {len(cands)}); use the greedy or rl method")
    t0 = time.perf_counter()
    calls0 = costmodel.calls
    queries = list(workload)
    before = costmodel.workload_cost(queries, EMPTY)
    best = (before, 0, ())
    best_config = EMPTY
    for subset in _feasible_subsets(cands, budget):
        if not subset:
            continue
        config = IndexConfiguration(tuple(cands[i] for i in subset))
        key = (costmodel.workload_cost(queries, config), config.total_size_bytes,
               tuple(cands[i].key for i in subset))
        if key < best:
            best, best_config = key, config
    return AdviceReport.build("optimal", best_config, before, best[0], time.perf_counter() - t0,
                              costmodel.calls - calls0)


def _feasible_subsets(cands: Sequence[IndexCandidate], budget: int):
    """Index subsets within budget, pruned depth-first by cumulative size."""
    n = len(cands)
    sizes = [c.size_bytes for c in cands]

    def rec(i: int, chosen: list[int], used: int):
        if i == n:
            yield tuple(chosen)
            return
        if used + sizes[i] <= budget:
            chosen.append(i)
            yield from rec(i + 1, chosen, used + sizes[i])
            chosen.pop()
        yield from rec(i + 1, chosen, used)

    yield from rec(0, [], 0)

