import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdeception.env import DeceptionEnv, EnvConfig
from otdeception.errors import ConfigError, TrainingError
from otdeception.learners import (
    Hyper,
    PolicyParams,
    Trajectory,
    act,
    discounted_returns,
    evaluate,
    gradient,
    head_probs,
    init_agents,
    load_checkpoint,
    log_prob,
    make_batch,
    numeric_gradient,
    save_checkpoint,
    softmax,
    standardize,
    train,
    update_a2c,
    update_ppo,
)


def toy_trajectories(params, rng, n_traj=3, length=6):
    """Rollouts of a small contextual MDP: reward 1 when head 0 picks obs argmax."""
    out = []
    for _ in range(n_traj):
        obs = rng.random((length, params.obs_dim))
        acts, logps, vals, rews = [], [], [], []
        for o in obs:
            a = act(params, o, "sample", int(rng.integers(2**32)))
            acts.append(a)
            logps.append(float(log_prob(params, o, [a])[0]))
            vals.append(float(np.append(o, 1.0) @ params.value))
            rews.append(1.0 if a[0] == int(np.argmax(o[: params.head_sizes[0]])) else -0.5)
        out.append(Trajectory(obs, np.asarray(acts), np.asarray(rews), np.asarray(vals), np.asarray(logps)))
    return out


def random_params(rng, obs_dim=3, heads=(3, 2), **kw):
    p = PolicyParams.zeros(obs_dim, heads, **kw)
    return p.with_arrays([rng.normal(0, 0.5, a.shape) for a in p.arrays()])


def max_rel_error(a, b, floor=1e-8):
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# --- act ---------------------------------------------------------------------------


def test_uniform_policy_passes_chi_square():
    p = PolicyParams.zeros(4, (3,))
    counts = np.zeros(3)
    n = 6000
    for seed in range(n):
        counts[act(p, np.zeros(4), "sample", seed)[0]] += 1
    chi2 = float(((counts - n / 3) ** 2 / (n / 3)).sum())
    assert chi2 < 13.82  # df=2, alpha=0.001


def test_greedy_is_deterministic_and_dominant_column_wins():
    p = PolicyParams.zeros(2, (3, 4))
    p.heads[0][-1, 2] = math.log(1000)
    obs = np.array([0.3, 0.7])
    assert len({act(p, obs, "greedy", s) for s in range(20)}) == 1
    assert act(p, obs, "greedy")[0] == 2
    hits = sum(act(p, obs, "sample", s)[0] == 2 for s in range(1000))
    assert hits > 950
    with pytest.raises(ValueError):
        act(p, obs, "boltzmann")
    with pytest.raises(ValueError):
        act(p, np.zeros(3))


@given(z=st.lists(st.floats(-500, 500), min_size=1, max_size=8))
def test_softmax_sums_to_one(z):
    p = softmax(np.asarray(z))
    assert abs(p.sum() - 1) < 1e-12 and (p >= 0).all()


def test_discounted_returns_by_hand():
    assert np.allclose(discounted_returns(np.array([1.0, 0.0, 2.0]), 0.5), [1.5, 1.0, 2.0])


@given(x=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_standardize_moments(x):
    x = np.asarray(x)
    if x.std() < 1e-3:
        return
    y = standardize(x)
    assert abs(y.mean()) < 1e-9 and abs(y.std() - 1) < 1e-6


# --- updates -------------------------------------------------------------------------


def test_positive_advantage_raises_log_prob():
    p = PolicyParams.zeros(2, (3,), lr_policy=0.1, entropy_coef=0.0)
    obs = np.array([[0.2, 0.9]])
    traj = Trajectory(obs, np.array([[1]]), np.array([1.0]), np.array([0.0]), log_prob(p, obs, [[1]]))
    before = log_prob(p, obs, [[1]])[0]
    assert log_prob(update_a2c(p, [traj]), obs, [[1]])[0] > before
    neg = replace(traj, rewards=np.array([-1.0]))
    assert log_prob(update_a2c(p, [neg]), obs, [[1]])[0] < before


@pytest.mark.parametrize("kind", ["a2c", "ppo"])
@pytest.mark.parametrize("seed", range(5))
def test_analytic_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, normalize_advantage=seed % 2 == 0)
    trajs = toy_trajectories(p, rng)
    if kind == "ppo":
        # stale behaviour policy so that some ratios sit outside the clip band
        trajs = [replace(t, log_probs=t.log_probs + rng.normal(0, 0.3, len(t))) for t in trajs]
    batch = make_batch(trajs, 0.9, p.normalize_advantage)
    assert max_rel_error(gradient(p, batch, kind), numeric_gradient(p, batch, kind)) < 1e-4


def test_ppo_without_clipping_matches_a2c_for_one_epoch():
    rng = np.random.default_rng(7)
    p = random_params(rng)
    trajs = toy_trajectories(p, rng)
    a = update_a2c(p, trajs, 0.9)
    b = update_ppo(replace(p, clip=math.inf), trajs, epochs=1, gamma=0.9)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.allclose(x, y, atol=1e-6, rtol=0)


def test_clip_saturation_zeroes_policy_gradient():
    rng = np.random.default_rng(3)
    p = random_params(rng, entropy_coef=0.0)
    trajs = toy_trajectories(p, rng)
    batch = make_batch(trajs, 0.9, False)
    # ratio = e above 1 + eps where A > 0, below 1 - eps where A < 0
    shift = np.where(batch.advantages > 0, -1.0, 1.0)
    stale = replace(batch, old_log_probs=batch.old_log_probs + shift)
    grads = gradient(p, stale, "ppo")
    for g in grads[:-1]:
        assert np.allclose(g, 0.0)
    assert np.any(grads[-1] != 0)


def test_non_finite_inputs_are_rejected():
    rng = np.random.default_rng(0)
    p = random_params(rng)
    trajs = toy_trajectories(p, rng, 1)
    bad = [replace(trajs[0], rewards=np.full(len(trajs[0]), np.nan))]
    with pytest.raises(TrainingError, match="non-finite"):
        update_a2c(p, bad)
    with pytest.raises(TrainingError):
        update_a2c(p, [])
    broken = p.with_arrays([np.full_like(a, np.inf) for a in p.arrays()])
    with pytest.raises(TrainingError):
        broken.check_finite()


def test_hyper_validation():
    with pytest.raises(ConfigError):
        Hyper(lr_policy=0)
    with pytest.raises(ConfigError):
        Hyper(ppo_epochs=0)


# --- training ----------------------------------------------------------------------


def test_init_agents_shapes():
    env = DeceptionEnv()
    (single,) = init_agents(env, "ppo", "single")
    assert single.head_sizes == (4, 3) and single.obs_dim == 16
    multi = init_agents(env, "a2c", "multi")
    assert len(multi) == 4 and all(m.head_sizes == (3,) and m.obs_dim == 4 for m in multi)
    assert init_agents(env, "a2c_norm", "single")[0].normalize_advantage
    assert not init_agents(env, "a2c", "single")[0].normalize_advantage


def test_training_is_deterministic():
    a = train(EnvConfig(), "ppo", "single", 16, seed=5)
    b = train(EnvConfig(), "ppo", "single", 16, seed=5)
    assert a.curve == b.curve
    for x, y in zip(a.agents[0].arrays(), b.agents[0].arrays()):
        assert np.array_equal(x, y)
    c = train(EnvConfig(), "ppo", "single", 16, seed=6)
    assert c.curve != a.curve


def _mann_kendall_z(x):
    n = len(x)
    s = sum(np.sign(x[j] - x[i]) for i in range(n - 1) for j in range(i + 1, n))
    _, counts = np.unique(x, return_counts=True)
    var = (n * (n - 1) * (2 * n + 5) - sum(t * (t - 1) * (2 * t + 5) for t in counts)) / 18
    if s > 0:
        return (s - 1) / math.sqrt(var)
    if s < 0:
        return (s + 1) / math.sqrt(var)
    return 0.0


def test_random_learner_curve_has_no_trend():
    res = train(EnvConfig(), "random", "single", 200, seed=0)
    lengths = np.array([r["length"] for r in res.curve], dtype=float)
    assert abs(_mann_kendall_z(lengths)) < 2.576
    assert all(not a.any() for a in res.agents[0].arrays())


def test_trained_policy_shortens_episodes():
    res = train(EnvConfig(), "ppo", "single", 120, seed=1)
    early = np.mean([r["length"] for r in res.curve[:20]])
    late = np.mean([r["length"] for r in res.curve[-20:]])
    assert late < early


def test_checkpoint_roundtrip(tmp_path):
    res = train(EnvConfig(), "a2c", "multi", 8, seed=2)
    save_checkpoint(tmp_path / "ck.json", res.agents, {"learner": "a2c"})
    agents, meta = load_checkpoint(tmp_path / "ck.json")
    assert meta["learner"] == "a2c"
    for a, b in zip(res.agents, agents):
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)
        assert a.opt.t == b.opt.t
    rows_a = evaluate(res.env, res.agents, "a2c", "multi", 3, seed=0)
    rows_b = evaluate(res.env, agents, "a2c", "multi", 3, seed=0)
    assert rows_a == rows_b


def test_evaluate_greedy_repeats():
    res = train(EnvConfig(), "ppo", "single", 8, seed=0)
    assert evaluate(res.env, res.agents, "ppo", "single", 4, 3) == evaluate(res.env, res.agents, "ppo", "single", 4, 3)


def test_head_probs_batch_shape():
    p = PolicyParams.zeros(3, (4, 2))
    probs = head_probs(p, np.zeros((5, 3)))
    assert [x.shape for x in probs] == [(5, 4), (5, 2)]
