"""Masked actor-critic agent.

Four one-hidden-layer tanh networks share the state vector as input:

* actor     -> one logit per candidate;
* critic    -> Q(s, a) per candidate, fit on the masked action set;
* selector  -> keep-probability per candidate (sigmoid);
* baseline  -> V(s), fit on the unmasked feasible set.

Per transition, with A' the retained set and F the feasible set at s':

    y_m = r + gamma * max_{a in A'(s')} Q(s', a)     (0 at terminal)
    y_u = r + gamma * max_{a in F(s')}  Q(s', a)
    critic loss   = 1/2 (Q(s, a) - y_m)^2
    baseline loss = 1/2 (V(s) - y_u)^2
    actor loss    = -(y_m - V(s)) * log pi(a | s, A')
    selector loss = -g * log P(mask | p) + lambda * sum(p),
                    g = (y_u - V(s))^2 - (y_m - Q(s, a))^2

The selector signal rewards a sampled mask when the masked TD error is
smaller than the unmasked one. By default g is standardised over the
batch, which removes its drift and makes lambda scale free. All losses are
averaged over the batch.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .advisors import AdviceReport
from .candidates import CandidatePool
from .costmodel import CostModel
from .gym import EpisodeConfig, GymError, IndexEnv, vector_step

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
NETWORKS = ("actor", "critic", "selector", "baseline")


class AgentError(RuntimeError):
    pass


# networks

def mlp_init(n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
             out_scale: float = 0.0, out_bias: float = 0.0) -> dict[str, np.ndarray]:
    return {
        "W1": rng.normal(0.0, 1.0 / math.sqrt(max(n_in, 1)), (n_hidden, n_in)),
        "b1": np.zeros(n_hidden),
        "W2": rng.normal(0.0, out_scale / math.sqrt(n_hidden), (n_out, n_hidden)),
        "b2": np.full(n_out, float(out_bias)),
    }


def mlp_forward(p: Mapping[str, np.ndarray], X: np.ndarray):
    H = np.tanh(X @ p["W1"].T + p["b1"])
    return H @ p["W2"].T + p["b2"], (X, H)


def mlp_backward(p: Mapping[str, np.ndarray], cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    X, H = cache
    dH = (dout @ p["W2"]) * (1.0 - H * H)
    return {"W1": dH.T @ X, "b1": dH.sum(0), "W2": dout.T @ H, "b2": dout.sum(0)}


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class PolicyParams:
    state_dim: int
    pool_size: int
    hidden: int
    actor: dict
    critic: dict
    selector: dict
    baseline: dict
    pool_hash: str = ""
    config_hash: str = ""

    def nets(self) -> dict[str, dict]:
        return {n: getattr(self, n) for n in NETWORKS}

    def copy(self) -> "PolicyParams":
        nets = {n: {k: v.copy() for k, v in net.items()} for n, net in self.nets().items()}
        return PolicyParams(self.state_dim, self.pool_size, self.hidden, pool_hash=self.pool_hash,
                            config_hash=self.config_hash, **nets)

    def equal(self, other: "PolicyParams") -> bool:
        return all(np.array_equal(a[k], other.nets()[n][k])
                   for n, a in self.nets().items() for k in a)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "state_dim": self.state_dim,
            "pool_size": self.pool_size,
            "hidden": self.hidden,
            "pool_hash": self.pool_hash,
            "config_hash": self.config_hash,
            "networks": {n: {k: v.tolist() for k, v in net.items()} for n, net in self.nets().items()},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PolicyParams":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise AgentError(f"unsupported checkpoint format {doc.get('format')!r}")
        nets = {n: {k: np.asarray(v, dtype=float) for k, v in doc["networks"][n].items()}
                for n in NETWORKS}
        for name, shape_out in (("actor", doc["pool_size"]), ("critic", doc["pool_size"]),
                                ("selector", doc["pool_size"]), ("baseline", 1)):
            W1, W2 = nets[name]["W1"], nets[name]["W2"]
            if W1.shape != (doc["hidden"], doc["state_dim"]) or W2.shape != (shape_out, doc["hidden"]):
                raise AgentError(f"checkpoint network {name} has inconsistent shapes")
        return cls(doc["state_dim"], doc["pool_size"], doc["hidden"], pool_hash=doc.get("pool_hash", ""),
                   config_hash=doc.get("config_hash", ""), **nets)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(state_dim: int, pool_size: int, hidden: int = 64, seed: int = 0,
                selector_bias: float = 2.0) -> PolicyParams:
    rng = np.random.default_rng([seed, 0xA6E])
    return PolicyParams(
        state_dim, pool_size, hidden,
        actor=mlp_init(state_dim, hidden, pool_size, rng, out_scale=0.1),
        critic=mlp_init(state_dim, hidden, pool_size, rng),
        # starts out keeping most actions (p ~ 0.88)
        selector=mlp_init(state_dim, hidden, pool_size, rng, out_scale=0.1, out_bias=selector_bias),
        baseline=mlp_init(state_dim, hidden, 1, rng),
    )


# losses with exact gradients

def critic_loss(p, S, A, Y):
    Q, cache = mlp_forward(p, S)
    n = len(A)
    rows = np.arange(n)
    err = Q[rows, A] - Y
    dQ = np.zeros_like(Q)
    dQ[rows, A] = err / n
    return 0.5 * float(np.dot(err, err)) / n, mlp_backward(p, cache, dQ)


def baseline_loss(p, S, Y):
    V, cache = mlp_forward(p, S)
    err = V[:, 0] - Y
    n = len(Y)
    return 0.5 * float(np.dot(err, err)) / n, mlp_backward(p, cache, (err / n)[:, None])


def masked_log_softmax(logits: np.ndarray, retained: np.ndarray) -> np.ndarray:
    z = np.where(retained, logits, -np.inf)
    top = z.max(axis=1, keepdims=True)
    shifted = z - top
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def actor_loss(p, S, R, A, adv):
    L, cache = mlp_forward(p, S)
    logp = masked_log_softmax(L, R)
    n = len(A)
    rows = np.arange(n)
    loss = -float(np.dot(adv, logp[rows, A])) / n
    pi = np.where(R, np.exp(logp), 0.0)
    dL = pi * adv[:, None]
    dL[rows, A] -= adv
    return loss, mlp_backward(p, cache, dL / n)


def selector_loss(p, S, M, g, lam):
    Z, cache = mlp_forward(p, S)
    P = sigmoid(Z)
    n = len(g)
    # log P(mask) via log-sigmoid for stability
    logp = np.where(M, -np.logaddexp(0.0, -Z), -np.logaddexp(0.0, Z)).sum(axis=1)
    loss = (-float(np.dot(g, logp)) + lam * float(P.sum())) / n
    dZ = -g[:, None] * (M - P) + lam * P * (1.0 - P)
    return loss, mlp_backward(p, cache, dZ / n)


# action selection

def keep_probabilities(params: PolicyParams, state: np.ndarray) -> np.ndarray:
    return sigmoid(mlp_forward(params.selector, state[None, :])[0][0])


def _force_keep(prob: np.ndarray, hard: np.ndarray, k: int) -> np.ndarray:
    feasible = np.flatnonzero(hard)
    order = feasible[np.lexsort((feasible, -prob[feasible]))]
    out = np.zeros_like(hard)
    out[order[:k]] = True
    return out


def select_action(state: np.ndarray, params: PolicyParams, hard_mask: np.ndarray, mode: str = "train",
                  rng: np.random.Generator | None = None, keep_top_guarantee: int = 1):
    """Return (action, sampled mask, retained set).

    The retained set is the sampled selector mask intersected with the hard
    mask; it is never empty while a feasible action exists.
    """
    hard = np.asarray(hard_mask, dtype=bool)
    if not hard.any():
        raise AgentError("no feasible action")
    state = getattr(state, "vector", state)
    prob = keep_probabilities(params, state)
    if mode == "train":
        if rng is None:
            raise AgentError("train mode needs an rng")
        sampled = rng.random(len(prob)) < prob
    elif mode == "deploy":
        sampled = prob >= 0.5
    else:
        raise ValueError(f"unknown mode {mode!r}")
    retained = sampled & hard
    if not retained.any():
        retained = _force_keep(prob, hard, keep_top_guarantee)
    logits = mlp_forward(params.actor, state[None, :])[0][0]
    idx = np.flatnonzero(retained)
    if mode == "deploy":
        action = int(idx[np.argmax(logits[idx])])
    else:
        z = logits[idx] - logits[idx].max()
        w = np.exp(z)
        action = int(idx[rng.choice(len(idx), p=w / w.sum())])
    return action, sampled, retained


# training

@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 1000
    seed: int = 0
    lambda_sparsity: float = 0.01
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    lr_selector: float = 1e-3
    lr_baseline: float = 1e-3
    hidden: int = 64
    keep_top_guarantee: int = 1
    episodes_per_update: int = 4
    optimizer: str = "adam"
    use_selector: bool = True
    standardize_signals: bool = True

    def __post_init__(self):
        if min(self.lr_actor, self.lr_critic, self.lr_selector, self.lr_baseline) <= 0:
            raise ValueError("learning rates must be > 0")
        if self.episodes < 0 or self.episodes_per_update < 1:
            raise ValueError("episodes must be >= 0 and episodes_per_update >= 1")
        if self.keep_top_guarantee < 1:
            raise ValueError("keep_top_guarantee must be >= 1")
        if self.lambda_sparsity < 0:
            raise ValueError("lambda_sparsity must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "TrainingConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    def lr(self, net: str) -> float:
        return getattr(self, f"lr_{net}")


@dataclass
class Transition:
    state: np.ndarray
    hard: np.ndarray
    sampled: np.ndarray
    retained: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_hard: np.ndarray
    done: bool
    next_retained: np.ndarray | None = None


Trajectory = list  # list[Transition]


class Optimizer:
    """Adam (or plain SGD) over the four parameter blocks."""

    def __init__(self, cfg: TrainingConfig, beta1=0.9, beta2=0.999, eps=1e-8):
        self.cfg = cfg
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def apply(self, net_name: str, params: dict, grads: dict) -> dict:
        lr = self.cfg.lr(net_name)
        if self.cfg.optimizer == "sgd":
            return {k: params[k] - lr * grads[k] for k in params}
        t = self.t.get(net_name, 0) + 1
        self.t[net_name] = t
        out = {}
        for k in params:
            key = (net_name, k)
            m = self.m.get(key, np.zeros_like(params[k]))
            v = self.v.get(key, np.zeros_like(params[k]))
            m = self.beta1 * m + (1 - self.beta1) * grads[k]
            v = self.beta2 * v + (1 - self.beta2) * grads[k] ** 2
            self.m[key], self.v[key] = m, v
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            out[k] = params[k] - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


@dataclass
class UpdateStats:
    critic: float = 0.0
    baseline: float = 0.0
    actor: float = 0.0
    selector: float = 0.0
    transitions: int = 0
    skipped: bool = False


def _batch(trajectories: Sequence[Trajectory]):
    steps = [t for traj in trajectories for t in traj]
    S = np.array([t.state for t in steps])
    S2 = np.array([t.next_state for t in steps])
    A = np.array([t.action for t in steps], dtype=int)
    R = np.array([t.reward for t in steps])
    done = np.array([t.done for t in steps])
    hard2 = np.array([t.next_hard for t in steps])
    ret2 = np.array([t.next_hard if t.next_retained is None else t.next_retained for t in steps])
    return steps, S, S2, A, R, done, hard2, ret2


def _masked_max(Q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, Q, -np.inf).max(axis=1)
    return np.where(np.isfinite(z), z, 0.0)


def _standardize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    sd = x.std()
    return x / sd if sd > 1e-12 else x


def compute_targets(params: PolicyParams, trajectories: Sequence[Trajectory], gamma: float):
    steps, S, S2, A, R, done, hard2, ret2 = _batch(trajectories)
    Q2 = mlp_forward(params.critic, S2)[0]
    y_m = R + np.where(done, 0.0, gamma * _masked_max(Q2, ret2))
    y_u = R + np.where(done, 0.0, gamma * _masked_max(Q2, hard2))
    Q = mlp_forward(params.critic, S)[0][np.arange(len(A)), A]
    V = mlp_forward(params.baseline, S)[0][:, 0]
    return steps, S, A, y_m, y_u, Q, V


def update(trajectories: Sequence[Trajectory], params: PolicyParams, cfg: TrainingConfig,
           gamma: float = 0.99, optimizer: Optimizer | None = None) -> tuple[PolicyParams, UpdateStats]:
    """One gradient step on every network from a batch of complete episodes."""
    optimizer = optimizer or Optimizer(cfg)
    if not any(trajectories):
        return params, UpdateStats()
    steps, S, A, y_m, y_u, Q, V = compute_targets(params, trajectories, gamma)
    retained = np.array([t.retained for t in steps])
    sampled = np.array([t.sampled for t in steps], dtype=float)
    adv = y_m - V
    g = (y_u - V) ** 2 - (y_m - Q) ** 2
    if cfg.standardize_signals:
        g = _standardize(g)

    losses = {}
    grads = {}
    losses["critic"], grads["critic"] = critic_loss(params.critic, S, A, y_m)
    losses["baseline"], grads["baseline"] = baseline_loss(params.baseline, S, y_u)
    losses["actor"], grads["actor"] = actor_loss(params.actor, S, retained, A, adv)
    if cfg.use_selector:
        losses["selector"], grads["selector"] = selector_loss(params.selector, S, sampled, g,
                                                              cfg.lambda_sparsity)
    stats = UpdateStats(transitions=len(steps), **{k: float(v) for k, v in losses.items()})
    finite = all(math.isfinite(v) for v in losses.values()) and all(
        np.isfinite(a).all() for gr in grads.values() for a in gr.values())
    if not finite:
        log.warning("non-finite loss or gradient, update skipped: %s", losses)
        stats.skipped = True
        return params, stats
    new = params.copy()
    for name, gr in grads.items():
        setattr(new, name, optimizer.apply(name, getattr(params, name), gr))
    return new, stats


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode])


def rollout(envs: Sequence[IndexEnv], params: PolicyParams, episode_ids: Sequence[int],
            cfg: TrainingConfig) -> list[Trajectory]:
    """Run episodes in waves of len(envs); each episode owns its rng."""
    out: dict[int, Trajectory] = {}
    ids = list(episode_ids)
    for start in range(0, len(ids), len(envs)):
        wave = ids[start:start + len(envs)]
        slots = list(zip(envs, wave))
        rngs = {e: episode_rng(cfg.seed, e) for e in wave}
        states = {e: env.reset().vector for env, e in slots}
        trajs: dict[int, Trajectory] = {e: [] for e in wave}
        active = [(env, e) for env, e in slots if not env.done]
        while active:
            picks = []
            for env, e in active:
                hard = env.hard_mask()
                a, sampled, retained = _choose(states[e], params, hard, rngs[e], cfg)
                if trajs[e]:
                    trajs[e][-1].next_retained = retained
                picks.append((env, e, a, hard, sampled, retained))
            results = vector_step([p[0] for p in picks], [p[2] for p in picks])
            still = []
            for (env, e, a, hard, sampled, retained), res in zip(picks, results):
                if isinstance(res, GymError):
                    raise res
                nxt = res.next_state.vector
                trajs[e].append(Transition(states[e], hard, sampled, retained, a, res.reward, nxt,
                                           env.hard_mask(), res.done))
                states[e] = nxt
                if not res.done:
                    still.append((env, e))
            active = still
        out.update(trajs)
    return [out[e] for e in ids]


def _choose(state, params, hard, rng, cfg: TrainingConfig):
    if cfg.use_selector:
        return select_action(state, params, hard, "train", rng, cfg.keep_top_guarantee)
    logits = mlp_forward(params.actor, state[None, :])[0][0]
    idx = np.flatnonzero(hard)
    z = logits[idx] - logits[idx].max()
    w = np.exp(z)
    a = int(idx[rng.choice(len(idx), p=w / w.sum())])
    return a, np.ones_like(hard), hard.copy()


@dataclass
class TrainingLog:
    returns: list[float] = field(default_factory=list)
    final_costs: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    retained: list[float] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)
    what_if_calls: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def make_envs(workload, pool: CandidatePool, episode_cfg: EpisodeConfig, costmodel: CostModel,
              k: int, seed: int = 0) -> list[IndexEnv]:
    return [IndexEnv(workload, pool, episode_cfg, costmodel, seed=seed + i) for i in range(k)]


def train(workload, pool: CandidatePool, episode_cfg: EpisodeConfig, cfg: TrainingConfig,
          costmodel: CostModel, k: int = 1, params: PolicyParams | None = None,
          on_episode: Callable[[int, Trajectory, IndexEnv], None] | None = None,
          ) -> tuple[PolicyParams, TrainingLog]:
    """Train for ``cfg.episodes`` episodes over ``k`` environments.

    Episodes are grouped into fixed batches of ``episodes_per_update``; all
    episodes in a batch act with the same parameters and their gradients
    are reduced in episode order, so the result does not depend on ``k``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    envs = make_envs(workload, pool, episode_cfg, costmodel, k, cfg.seed)
    if params is None:
        params = init_params(envs[0].state_dim, len(pool), cfg.hidden, cfg.seed)
    if params.state_dim != envs[0].state_dim or params.pool_size != len(pool):
        raise AgentError("parameters do not match the environment shape")
    params = params.copy()
    params.pool_hash = pool.digest()
    params.config_hash = cfg.digest()
    opt = Optimizer(cfg)
    logbook = TrainingLog()
    for start in range(0, cfg.episodes, cfg.episodes_per_update):
        ids = range(start, min(cfg.episodes, start + cfg.episodes_per_update))
        trajs = rollout(envs, params, ids, cfg)
        for e, traj in zip(ids, trajs):
            logbook.returns.append(float(sum(t.reward for t in traj)))
            logbook.final_costs.append(envs[0].workload_cost(_held(traj)))
            logbook.lengths.append(len(traj))
            logbook.retained.append(float(np.mean([t.retained.sum() for t in traj])) if traj else 0.0)
            if on_episode is not None:
                on_episode(e, traj, envs[0])
        params, stats = update(trajs, params, cfg, episode_cfg.gamma, opt)
        logbook.updates.append(asdict(stats))
    logbook.what_if_calls = sum(env.what_if_calls for env in envs)
    return params, logbook


def _held(traj: Trajectory) -> list[int]:
    return [t.action for t in traj]


def deploy_rollout(env: IndexEnv, params: PolicyParams, keep_top_guarantee: int = 1) -> list[int]:
    state = env.reset()
    actions = []
    while not env.done:
        a, _, _ = select_action(state.vector, params, env.hard_mask(), "deploy",
                                keep_top_guarantee=keep_top_guarantee)
        actions.append(a)
        state = env.step(a).next_state
    return actions


def advise(workload, pool: CandidatePool, params: PolicyParams, budget: int, costmodel: CostModel,
           episode_cfg: EpisodeConfig | None = None, keep_top_guarantee: int = 1):
    """Deterministic deploy-mode rollout; returns an AdviceReport (method "rl")."""
    if params.pool_hash and params.pool_hash != pool.digest():
        raise AgentError("checkpoint was trained on a different candidate pool")
    if params.pool_size != len(pool):
        raise AgentError("checkpoint pool size does not match the pool")
    cfg = episode_cfg or EpisodeConfig(storage_budget=budget)
    if cfg.storage_budget != budget:
        cfg = EpisodeConfig(budget, cfg.max_steps, cfg.m_floor, cfg.gamma)
    t0 = time.perf_counter()
    env = IndexEnv(workload, pool, cfg, costmodel)
    if env.state_dim != params.state_dim:
        raise AgentError("checkpoint state dimension does not match the workload")
    actions = deploy_rollout(env, params, keep_top_guarantee)
    elapsed = time.perf_counter() - t0
    return AdviceReport.build("rl", env.configuration, env.c_empty, env.cost, elapsed,
                              env.what_if_calls, actions=actions)


def episodes_to_threshold(returns: Sequence[float], threshold: float, window: int = 50) -> int | None:
    """First episode at which the trailing moving average reaches ``threshold``."""
    r = np.asarray(returns, dtype=float)
    if len(r) < window:
        return None
    avg = np.convolve(r, np.ones(window) / window, mode="valid")
    hit = np.flatnonzero(avg >= threshold)
    return int(hit[0]) + window - 1 if len(hit) else None


def selector_speedup(workload, pool: CandidatePool, episode_cfg: EpisodeConfig, cfg: TrainingConfig,
                     costmodel: CostModel, fraction: float = 0.9, window: int = 50,
                     with_log: TrainingLog | None = None) -> dict:
    """Episodes-to-threshold without the selector divided by episodes with it.

    The threshold is ``fraction`` of the smaller of the two runs' final
    moving-average returns, so both runs can reach it. Reported, not asserted.
    """
    if with_log is None:
        _, with_log = train(workload, pool, episode_cfg, cfg, costmodel)
    _, without = train(workload, pool, episode_cfg, replace(cfg, use_selector=False), costmodel)
    finals = [float(np.mean(l.returns[-window:])) for l in (with_log, without) if l.returns]
    if len(finals) < 2:
        return {"threshold": None, "with_selector": None, "without_selector": None, "ratio": None}
    threshold = fraction * min(finals)
    a = episodes_to_threshold(with_log.returns, threshold, window)
    b = episodes_to_threshold(without.returns, threshold, window)
    ratio = b / a if a and b is not None else None
    return {"threshold": threshold, "with_selector": a, "without_selector": b, "ratio": ratio}
