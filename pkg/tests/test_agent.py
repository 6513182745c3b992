import numpy as np
import pytest

from idxadvisor.agent import (AgentError, PolicyParams, TrainingConfig, Transition, advise,
                              baseline_loss, compute_targets, critic_loss, deploy_rollout,
                              episodes_to_threshold, init_params, keep_probabilities, mlp_forward,
                              select_action, selector_loss, selector_speedup, sigmoid, train, update)
from idxadvisor.candidates import CandidatePool, EnumerationConfig, enumerate_candidates
from idxadvisor.catalog import catalog_from_dict
from idxadvisor.costmodel import CostModel
from idxadvisor.generator import synth_workload
from idxadvisor.gym import EpisodeConfig, IndexEnv
from idxadvisor.sqlfront import ColumnRef
from idxadvisor.sqlfront.workload import workload_from_records

DOM = catalog_from_dict({"tables": [{"name": "t", "row_count": 1_000_000, "columns": [
    {"name": "a", "type": "int", "cardinality": 100_000, "width_bytes": 4},
    {"name": "b", "type": "int", "cardinality": 10, "width_bytes": 8}]}]})


def dominance():
    """A on t.a beats B on t.b: larger cost drop and smaller index."""
    cm = CostModel(DOM)
    w = workload_from_records([{"id": "q", "sql": "SELECT a FROM t WHERE a = 5 AND b = 3"}], DOM)
    A, B = cm.candidate("t", ["a"]), cm.candidate("t", ["b"])
    pool = CandidatePool((B, A), (0.5, 0.5), (ColumnRef("t", "a"), ColumnRef("t", "b")))
    # the budget admits one index, so the first pick is the whole decision
    return w, pool, cm, EpisodeConfig(B.size_bytes), A, B


@pytest.fixture(scope="module")
def small():
    g = synth_workload(2, count=30, n_templates=5)
    w = g.workload()
    cm = CostModel(g.catalog)
    pool = enumerate_candidates(w, EnumerationConfig(max_pool=6), cm)
    return w, pool, cm, EpisodeConfig(int(0.4 * sum(c.size_bytes for c in pool)))


def test_single_feasible_action_both_modes():
    p = init_params(6, 4, hidden=8, seed=0)
    hard = np.array([False, False, True, False])
    s = np.ones(6) / np.sqrt(6)
    rng = np.random.default_rng(0)
    assert select_action(s, p, hard, "train", rng)[0] == 2
    assert select_action(s, p, hard, "deploy")[0] == 2


def test_force_keep_when_selector_drops_everything():
    p = init_params(6, 4, hidden=8, seed=0)
    p.selector["b2"][:] = -12.0
    p.selector["b2"][3] = -8.0  # highest keep-probability
    hard = np.array([True, False, True, True])
    s = np.ones(6) / np.sqrt(6)
    for mode in ("train", "deploy"):
        a, sampled, retained = select_action(s, p, hard, mode, np.random.default_rng(1))
        assert a == 3 and retained.sum() == 1


def test_no_feasible_action_raises():
    p = init_params(3, 2, hidden=4)
    with pytest.raises(AgentError):
        select_action(np.ones(3), p, np.zeros(2, bool), "deploy")


def test_deploy_deterministic():
    p = init_params(6, 5, hidden=8, seed=3)
    s = np.random.default_rng(0).normal(size=6)
    hard = np.ones(5, bool)
    assert select_action(s, p, hard, "deploy")[0] == select_action(s, p, hard, "deploy")[0]


def test_zero_reward_targets_and_bounded_step():
    p = init_params(4, 3, hidden=5, seed=0)
    s = np.array([0.5, 0.5, 0.5, 0.5])
    tr = Transition(s, np.ones(3, bool), np.ones(3), np.ones(3, bool), 1, 0.0, s, np.ones(3, bool),
                    True)
    _, _, _, y_m, y_u, Q, V = compute_targets(p, [[tr]], 0.99)
    assert (y_m == 0).all() and (y_u == 0).all() and (Q == 0).all() and (V == 0).all()
    cfg = TrainingConfig(optimizer="sgd", lr_actor=0.01, lr_critic=0.01, lr_selector=0.01,
                         lr_baseline=0.01)
    new, _ = update([[tr]], p, cfg)
    for net in ("actor", "critic", "selector", "baseline"):
        before, after = p.nets()[net], new.nets()[net]
        change = np.sqrt(sum(((after[k] - before[k]) ** 2).sum() for k in before))
        assert change <= 0.01 * 1e3 + 1e-12
    # zero-initialised critic and baseline see zero error and stay put
    assert all(np.array_equal(new.critic[k], p.critic[k]) for k in p.critic)
    assert all(np.array_equal(new.baseline[k], p.baseline[k]) for k in p.baseline)


def test_selector_loss_lambda_zero_is_td_term():
    rng = np.random.default_rng(0)
    p = init_params(5, 4, hidden=6, seed=1).selector
    S = rng.normal(size=(7, 5))
    M = rng.random((7, 4)) < 0.5
    g = rng.normal(size=7)
    l0, _ = selector_loss(p, S, M, g, 0.0)
    Z = mlp_forward(p, S)[0]
    P = sigmoid(Z)
    logp = np.where(M, np.log(P), np.log1p(-P)).sum(axis=1)
    assert l0 == pytest.approx(-np.mean(g * logp), rel=1e-10)
    l1, _ = selector_loss(p, S, M, g, 0.3)
    assert l1 - l0 == pytest.approx(0.3 * P.sum() / 7, rel=1e-10)


def test_dominant_candidate_learned():
    w, pool, cm, ep, A, B = dominance()
    first_a = 0
    for seed in range(100):
        params, _ = train(w, pool, ep, TrainingConfig(episodes=200, seed=seed), cm)
        first_a += deploy_rollout(IndexEnv(w, pool, ep, cm), params)[0] == pool.index_of(A)
    assert first_a >= 95


def test_zero_episodes_returns_initial(small):
    w, pool, cm, ep = small
    env = IndexEnv(w, pool, ep, cm)
    p0 = init_params(env.state_dim, len(pool), seed=5)
    p1, log = train(w, pool, ep, TrainingConfig(episodes=0, seed=5), cm, params=p0)
    assert p1.equal(p0) and log.returns == []


def test_k_invariance(small):
    w, pool, cm, ep = small
    cfg = TrainingConfig(episodes=24, seed=9)
    p1, _ = train(w, pool, ep, cfg, cm, k=1)
    p2, _ = train(w, pool, ep, cfg, cm, k=2)
    assert p1.equal(p2)


def test_checkpoint_round_trip(small, tmp_path):
    w, pool, cm, ep = small
    p, _ = train(w, pool, ep, TrainingConfig(episodes=8, seed=1), cm)
    p.save(tmp_path / "ck.json")
    q = PolicyParams.load(tmp_path / "ck.json")
    assert q.equal(p) and q.pool_hash == pool.digest() == p.pool_hash


def test_checkpoint_shape_check(small):
    w, pool, cm, ep = small
    doc = init_params(10, 3, hidden=4).to_dict()
    doc["pool_size"] = 4
    with pytest.raises(AgentError):
        PolicyParams.from_dict(doc)


def test_advise_rejects_other_pool(small):
    w, pool, cm, ep = small
    p, _ = train(w, pool, ep, TrainingConfig(episodes=4), cm)
    other = pool.subset(reversed(range(len(pool))))
    with pytest.raises(AgentError, match="pool"):
        advise(w, other, p, ep.storage_budget, cm)


def test_advise_tiny_budget_empty(small):
    w, pool, cm, ep = small
    p, _ = train(w, pool, ep, TrainingConfig(episodes=4), cm)
    rep = advise(w, pool, p, min(c.size_bytes for c in pool) - 1, cm)
    assert len(rep.configuration) == 0 and rep.relative_cost == 1.0


def test_advise_dominant_and_budget():
    w, pool, cm, ep, A, B = dominance()
    p, _ = train(w, pool, ep, TrainingConfig(episodes=200, seed=0), cm)
    rep = advise(w, pool, p, ep.storage_budget, cm)
    assert list(rep.configuration) == [A]
    assert rep.size_bytes <= ep.storage_budget


def test_returns_trend_one_seed(small):
    w, pool, cm, ep = small
    _, log = train(w, pool, ep, TrainingConfig(episodes=600, seed=0), cm)
    n = len(log.returns) // 10
    assert np.mean(log.returns[-n:]) >= np.mean(log.returns[:n])


def test_keep_probabilities_initially_high():
    p = init_params(8, 5, seed=0)
    assert (keep_probabilities(p, np.ones(8) / np.sqrt(8)) > 0.8).all()


def test_losses_average_over_batch():
    rng = np.random.default_rng(2)
    p = init_params(4, 3, hidden=5, seed=2)
    p.critic["W2"] = rng.normal(size=p.critic["W2"].shape)
    S = rng.normal(size=(6, 4))
    A = rng.integers(0, 3, 6)
    Y = rng.normal(size=6)
    l6, _ = critic_loss(p.critic, S, A, Y)
    l12, _ = critic_loss(p.critic, np.vstack([S, S]), np.concatenate([A, A]), np.concatenate([Y, Y]))
    assert l6 == pytest.approx(l12, rel=1e-12)
    b6, _ = baseline_loss(p.baseline, S, Y)
    assert b6 == pytest.approx(0.5 * np.mean(Y ** 2), rel=1e-12)


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(lr_actor=0)
    with pytest.raises(ValueError):
        TrainingConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainingConfig.from_dict({"bogus": 1})


def test_episodes_to_threshold():
    r = [0.0] * 10 + [1.0] * 10
    assert episodes_to_threshold(r, 0.5, window=4) == 11
    assert episodes_to_threshold(r, 2.0, window=4) is None
    assert episodes_to_threshold(r[:3], 0.0, window=4) is None


def test_selector_speedup_reports_both_runs(small):
    w, pool, cm, ep = small
    out = selector_speedup(w, pool, ep, TrainingConfig(episodes=120, seed=0), cm, window=20)
    assert set(out) == {"threshold", "with_selector", "without_selector", "ratio"}
    assert out["with_selector"] is not None and out["without_selector"] is not None
