"""Index-selection environment.

An episode starts from the empty configuration; each action adds one pool
candidate. The reward is the storage-normalised cost reduction

    r = ((C_prev - C_new) / C_empty) / ((M_new - M_prev) / max(M_prev, m_floor))

where ``m_floor`` keeps the first step (M_prev = 0) finite. An episode ends
when no remaining candidate fits the residual budget or after ``max_steps``.

State vector (l2-normalised concatenation):

* plan features, per query in id order: [f * cost / C_empty, tables/10,
  joins/10, predicates/10], zero padded to ``max_queries`` rows;
* a hashed bag of SQL tokens (blake2b, salt from seed 0), unit length;
* the index bitmap over the pool;
* meta: [budget remaining fraction, step fraction, pool size / 256, 0, 0].
  The two zeros stand in for DBMS knob and hardware descriptors.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .candidates import CandidatePool
from .costmodel import EMPTY, CostModel, IndexConfiguration
from .sqlfront.ast import Query, QueryAst, all_tables

MIB = 1 << 20
EMBED_DIM = 64
META_DIM = 5
PLAN_FEATURES = 4


class GymError(RuntimeError):
    """Contract violation: illegal action or step after done."""


@dataclass(frozen=True)
class EpisodeConfig:
    storage_budget: int
    max_steps: int | None = None  # default: 2 * pool size
    m_floor: float = float(MIB)
    gamma: float = 0.99

    def __post_init__(self):
        if not self.storage_budget > 0:
            raise ValueError("storage_budget must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not self.m_floor > 0:
            raise ValueError("m_floor must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")


def reward(c_empty: float, c_prev: float, c_new: float, m_prev: float, m_new: float,
           m_floor: float = float(MIB)) -> float:
    if c_empty <= 0:
        return 0.0
    gain = (c_prev - c_new) / c_empty
    if gain == 0:
        return 0.0
    growth = (m_new - m_prev) / max(m_prev, m_floor)
    if growth <= 0:
        raise GymError("index size must be positive")
    return gain / growth


@dataclass(frozen=True)
class EnvState:
    plan_features: np.ndarray
    query_embedding: np.ndarray
    index_bitmap: np.ndarray
    meta: np.ndarray
    vector: np.ndarray  # normalised concatenation


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    info: dict


_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*|\d+|'[^']*'|[<>=]+|\S")


def hashed_embedding(texts: Iterable[tuple[str, float]], dim: int = EMBED_DIM, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of SQL tokens, weighted by query frequency."""
    salt = seed.to_bytes(8, "little", signed=True)
    vec = np.zeros(dim)
    for text, weight in texts:
        for tok in _TOKEN.findall(text.lower()):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, salt=salt).digest(), "little")
            vec[h % dim] += weight if (h >> 63) & 1 else -weight
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _shape(ast: QueryAst) -> tuple[int, int, int]:
    preds = 0
    joins = len(ast.joins)
    for p in ast.where:
        if hasattr(p, "subquery"):
            _, j, n = _shape(p.subquery)
            preds += n + 1
            joins += j
        else:
            preds += 1
    return len(all_tables(ast)), joins, preds


class IndexEnv:
    def __init__(self, workload: Sequence[Query], pool: CandidatePool, cfg: EpisodeConfig,
                 costmodel: CostModel, seed: int = 0, max_queries: int | None = None,
                 embed_dim: int = EMBED_DIM):
        self.queries = tuple(sorted(workload, key=lambda q: q.id))
        if not self.queries:
            raise ValueError("environment needs at least one query")
        self.pool = pool
        self.cfg = cfg
        self.costmodel = costmodel.fork()
        self.seed = seed
        self.max_queries = max_queries or len(self.queries)
        if self.max_queries < len(self.queries):
            raise ValueError("max_queries is smaller than the workload")
        self.max_steps = cfg.max_steps or max(1, 2 * len(pool))
        self.sizes = np.array([c.size_bytes for c in pool.candidates], dtype=float)
        self._freq = np.array([q.frequency for q in self.queries])
        self._memo: dict[tuple[int, ...], np.ndarray] = {}
        self._static = np.array([_shape(q.ast) for q in self.queries], dtype=float) / 10.0
        self._embedding = hashed_embedding(((q.text, q.frequency) for q in self.queries), embed_dim)
        self.c_empty = self.workload_cost(())
        self.trace: list[dict] = []
        self.reset()

    # cost with memo keyed by held candidate indices
    def _query_costs(self, held: tuple[int, ...]) -> np.ndarray:
        key = tuple(sorted(held))
        hit = self._memo.get(key)
        if hit is None:
            config = IndexConfiguration(tuple(self.pool[i] for i in key)) if key else EMPTY
            hit = np.array(self.costmodel.query_costs(self.queries, config))
            self._memo[key] = hit
        return hit

    def workload_cost(self, held: Iterable[int]) -> float:
        return float(np.dot(self._freq, self._query_costs(tuple(held))))

    @property
    def what_if_calls(self) -> int:
        return self.costmodel.calls

    @property
    def state_dim(self) -> int:
        return self.max_queries * PLAN_FEATURES + len(self._embedding) + len(self.pool) + META_DIM

    @property
    def configuration(self) -> IndexConfiguration:
        return IndexConfiguration(tuple(self.pool[i] for i in sorted(self.held)))

    def reset(self) -> EnvState:
        self.held: list[int] = []
        self.size = 0.0
        self.cost = self.c_empty
        self.steps = 0
        self.done = not self.hard_mask().any()
        self.trace = []
        return self.encode_state()

    def hard_mask(self) -> np.ndarray:
        mask = self.sizes <= self.cfg.storage_budget - self.size
        if self.held:
            mask[self.held] = False
        return mask

    def encode_state(self) -> EnvState:
        costs = self._query_costs(tuple(self.held))
        plan = np.zeros((self.max_queries, PLAN_FEATURES))
        n = len(self.queries)
        plan[:n, 0] = self._freq * costs / self.c_empty if self.c_empty > 0 else 0.0
        plan[:n, 1:] = self._static
        bitmap = np.zeros(len(self.pool))
        if self.held:
            bitmap[self.held] = 1.0
        meta = np.array([
            1.0 - self.size / self.cfg.storage_budget,
            self.steps / self.max_steps,
            len(self.pool) / 256.0,
            0.0,
            0.0,
        ])
        raw = np.concatenate([plan.ravel(), self._embedding, bitmap, meta])
        norm = np.linalg.norm(raw)
        vec = raw / norm if norm > 0 else raw
        return EnvState(plan.ravel(), self._embedding.copy(), bitmap, meta, vec)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise GymError("episode is done; call reset()")
        if not 0 <= action < len(self.pool):
            raise GymError(f"action {action} out of range")
        if action in self.held:
            raise GymError(f"candidate {action} already in the configuration")
        if self.sizes[action] > self.cfg.storage_budget - self.size:
            raise GymError(f"candidate {action} exceeds the residual budget")
        c_prev, m_prev = self.cost, self.size
        self.held.append(action)
        self.size = m_prev + self.sizes[action]
        self.cost = self.workload_cost(self.held)
        self.steps += 1
        r = reward(self.c_empty, c_prev, self.cost, m_prev, self.size, self.cfg.m_floor)
        self.done = self.steps >= self.max_steps or not self.hard_mask().any()
        info = {"action": action, "candidate": str(self.pool[action]), "cost_before": c_prev,
                "cost_after": self.cost, "size_before": m_prev, "size_after": self.size}
        self.trace.append({"step": self.steps, "action": action, "reward": r,
                           "cost": self.cost, "size": self.size})
        return StepResult(self.encode_state(), r, self.done, info)


def vector_step(envs: Sequence[IndexEnv], actions: Sequence[int]) -> list[StepResult | GymError]:
    """Step each env in slot order; a failing slot yields its error, siblings proceed."""
    if len(envs) != len(actions):
        raise ValueError("one action per environment required")
    out: list[StepResult | GymError] = []
    for env, a in zip(envs, actions):
        try:
            out.append(env.step(int(a)))
        except GymError as exc:
            out.append(exc)
    return out


def append_trace(path: str | Path, records: Iterable[dict], episode: int | None = None) -> None:
    with open(path, "a") as fh:
        for rec in records:
            row = dict(rec) if episode is None else {"episode": episode, **rec}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
