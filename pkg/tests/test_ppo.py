import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bipedlab.env import BipedEnv, ConstraintConfig, EnvConfig, RandomizationConfig, StepResult
from bipedlab.errors import CheckpointError, CheckpointMismatch, DynamicsInputError, TrainingError
from bipedlab.ppo import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Minibatch,
    TrainConfig,
    Trainer,
    checkpoint_bytes,
    compute_gae,
    compute_gae_vanilla,
    gaussian_log_prob,
    init_policy,
    load_checkpoint,
    parse_checkpoint,
    policy_forward,
    ppo_loss,
    save_checkpoint,
    zero_policy,
)


# ---------------------------------------------------------------- network
def test_zero_policy_outputs_zero():
    p = zero_policy(17, 4)
    mean, std, value = policy_forward(p, np.ones(17))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_array_equal(std, 1.0)
    assert value == 0.0


def test_forward_is_deterministic_and_finite():
    p = init_policy(17, 4, seed=3)
    rng = np.random.default_rng(0)
    x = rng.uniform(-10, 10, (10_000, 17))
    m1, s1, v1 = policy_forward(p, x)
    m2, s2, v2 = policy_forward(p, x)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(v1, v2)
    assert np.all(np.isfinite(m1)) and np.all(np.isfinite(v1))
    # batch and single evaluation agree
    m0, _, v0 = policy_forward(p, x[0])
    np.testing.assert_allclose(m0, m1[0], rtol=1e-14)


def test_forward_rejects_wrong_obs_size():
    with pytest.raises(DynamicsInputError):
        policy_forward(init_policy(17, 4), np.zeros(16))


# ---------------------------------------------------------------- gradients
def _toy(seed=0, n=24, clip=0.2):
    rng = np.random.default_rng(seed)
    p = init_policy(3, 2, hidden=(4,), seed=seed, init_log_std=-0.3, action_scale=0.7)
    # perturb so that no layer is degenerate
    p.set_flat(p.flat() + rng.normal(0, 0.3, p.flat().shape))
    obs = rng.normal(size=(n, 3))
    mean, _, _ = policy_forward(p, obs)
    actions = mean + np.exp(p.log_std) * rng.normal(size=mean.shape)
    # old log-probs spread the ratio across both sides of the clip band
    old = gaussian_log_prob(actions, mean, p.log_std) + rng.uniform(-0.5, 0.5, n)
    mb = Minibatch(obs, actions, old, rng.normal(size=n), rng.normal(size=n))
    return p, mb


def _fd_check(p, mb, clip=0.2, vc=0.7, ec=0.01, normalize=True):
    _, grads = ppo_loss(p, mb, clip, vc, ec, normalize)
    g = np.concatenate([x.ravel() for x in grads])
    theta = p.flat()
    h = 1e-5
    fd = np.zeros_like(theta)
    for k in range(theta.size):
        for sgn in (1, -1):
            q = p.copy()
            t = theta.copy()
            t[k] += sgn * h
            q.set_flat(t)
            fd[k] += sgn * ppo_loss(q, mb, clip, vc, ec, normalize, with_grad=False)[0].loss
        fd[k] /= 2 * h
    return g, fd


def _rel(g, fd):
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_gradient_matches_finite_differences(seed):
    p, mb = _toy(seed)
    g, fd = _fd_check(p, mb)
    assert np.max(_rel(g, fd)) <= 1e-4


def test_ratio_one_surrogates_coincide():
    p, mb = _toy(4)
    mean, _, _ = policy_forward(p, mb.obs)
    mb = dataclasses.replace(mb, old_log_prob=gaussian_log_prob(mb.actions, mean, p.log_std))
    info, _ = ppo_loss(p, mb, 0.2, 0.0, 0.0, normalize=False)
    assert info.clip_fraction == 0.0
    assert info.approx_kl == pytest.approx(0.0, abs=1e-15)
    assert info.policy_loss == pytest.approx(-float(np.mean(mb.advantages)), rel=1e-12)
    # gradient equals the plain policy-gradient estimate
    g, fd = _fd_check(p, mb, vc=0.0, ec=0.0, normalize=False)
    assert np.max(_rel(g, fd)) <= 1e-4


def test_zero_advantage_leaves_only_value_and_entropy():
    p, mb = _toy(5)
    mb = dataclasses.replace(mb, advantages=np.zeros_like(mb.advantages))
    ec = 0.01
    info, grads = ppo_loss(p, mb, 0.2, 1.0, ec)
    assert info.policy_loss == 0.0
    n_actor = 2 * len(p.actor.weights)
    for gr in grads[:n_actor]:
        np.testing.assert_array_equal(gr, 0.0)
    np.testing.assert_allclose(grads[-1], -ec)
    assert any(np.any(gr != 0) for gr in grads[n_actor:-1])


def test_non_finite_loss_raises():
    p, mb = _toy(6)
    mb = dataclasses.replace(mb, returns=np.full_like(mb.returns, np.nan))
    with pytest.raises(TrainingError):
        ppo_loss(p, mb, 0.2, 1.0, 0.0)


def test_advantage_normalization_floor():
    p, mb = _toy(7)
    mb = dataclasses.replace(mb, advantages=np.full_like(mb.advantages, 3.0))
    info, grads = ppo_loss(p, mb, 0.2, 1.0, 0.0)
    assert np.isfinite(info.loss) and all(np.all(np.isfinite(g)) for g in grads)


# ---------------------------------------------------------------- GAE
def brute_force_gae(r, v, nv, delta, done, gamma, lam):
    T = len(r)
    adv = np.zeros(T)
    for t in range(T):
        total = 0.0
        for k in range(t, T):
            d = r[k] + gamma * (1 - delta[k]) * nv[k] - v[k]
            total += (gamma * lam) ** (k - t) * d
            if done[k]:
                break
        adv[t] = total
    return adv


def test_gae_single_step_cases():
    r, v, nv = np.array([[1.5]]), np.array([[0.4]]), np.array([[2.0]])
    a, ret = compute_gae(r, v, nv, np.array([[0.0]]), np.array([[0.0]]), 0.9, 0.95)
    assert a[0, 0] == pytest.approx(1.5 + 0.9 * 2.0 - 0.4)
    a, ret = compute_gae(r, v, nv, np.array([[1.0]]), np.array([[1.0]]), 0.9, 0.95)
    assert a[0, 0] == pytest.approx(1.5 - 0.4)
    assert ret[0, 0] == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**31 - 1), st.floats(0.0, 0.999), st.floats(0.0, 1.0))
def test_gae_matches_brute_force(T, seed, gamma, lam):
    rng = np.random.default_rng(seed)
    r, v, nv = rng.normal(size=(3, T, 2))
    delta = rng.uniform(0, 1, (T, 2))
    done = (rng.uniform(size=(T, 2)) < 0.2).astype(float)
    adv, ret = compute_gae(r, v, nv, delta, done, gamma, lam)
    for j in range(2):
        ref = brute_force_gae(r[:, j], v[:, j], nv[:, j], delta[:, j], done[:, j], gamma, lam)
        np.testing.assert_allclose(adv[:, j], ref, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(ret, adv + v)


def test_gae_ten_step_random_delta():
    rng = np.random.default_rng(10)
    r, v, nv = rng.normal(size=(3, 10, 1))
    delta = rng.uniform(0, 1, (10, 1))
    adv, _ = compute_gae(r, v, nv, delta, np.zeros((10, 1)), 0.99, 0.95)
    ref = brute_force_gae(r[:, 0], v[:, 0], nv[:, 0], delta[:, 0], np.zeros(10), 0.99, 0.95)
    np.testing.assert_allclose(adv[:, 0], ref, atol=1e-10)


# ---------------------------------------------------------------- CaT reduction
def test_no_constraints_targets_equal_vanilla_ppo():
    cons = ConstraintConfig(enabled=())
    cfg = EnvConfig(constraints=cons, episode_length=0.3)
    env = BipedEnv(cfg, num_envs=8, seed=0)
    tc = TrainConfig(num_envs=8, horizon=32, hidden=(16,), seed=1)
    tr = Trainer(env, tc)
    buf, _ = tr.collect()
    assert buf.dones.any()  # time limits inside the rollout
    np.testing.assert_array_equal(buf.deltas, buf.terminated)
    cat = compute_gae(buf.rewards, buf.values, buf.next_values, buf.deltas, buf.dones, tc.gamma, tc.lam)
    ref = compute_gae_vanilla(buf.rewards, buf.values, buf.next_values, buf.terminated, buf.dones,
                              tc.gamma, tc.lam)
    np.testing.assert_array_equal(cat[0], ref[0])
    np.testing.assert_array_equal(cat[1], ref[1])


def test_constraints_change_targets():
    env = BipedEnv(EnvConfig(), num_envs=8, seed=0)
    tc = TrainConfig(num_envs=8, horizon=16, hidden=(16,))
    buf, _ = Trainer(env, tc).collect()
    assert np.any((buf.deltas > 0) & (buf.terminated == 0))
    cat = compute_gae(buf.rewards, buf.values, buf.next_values, buf.deltas, buf.dones, tc.gamma, tc.lam)[1]
    ref = compute_gae_vanilla(buf.rewards, buf.values, buf.next_values, buf.terminated, buf.dones,
                              tc.gamma, tc.lam)[1]
    assert not np.array_equal(cat, ref)


# ---------------------------------------------------------------- training loop
class Bandit:
    """One-step continuous bandit: reward -(a - target)^2, constant observation."""

    def __init__(self, n, target):
        self.num_envs = n
        self.obs_dim = 2
        self.act_dim = 2
        self.target = np.asarray(target, dtype=float)
        self.obs = np.ones((n, 2))
        self.cost_names = []

    def step(self, actions):
        r = -np.sum((actions - self.target) ** 2, axis=1)
        z = np.zeros(self.num_envs)
        return StepResult(self.obs.copy(), r, z, z.astype(bool), z.astype(bool), {"report": None})


def test_bandit_converges_to_optimum():
    env = Bandit(64, [0.6, -0.4])
    tc = TrainConfig(gamma=0.0, num_envs=64, horizon=8, hidden=(8,), learning_rate=3e-3, seed=0,
                     entropy_coef=0.0, adaptive_lr=False, init_log_std=-0.5)
    tr = Trainer(env, tc)
    tr.run(150)
    mean, _, _ = policy_forward(tr.params, np.ones(2))
    np.testing.assert_allclose(mean, [0.6, -0.4], atol=0.05)


def test_log_std_clamped_after_updates():
    env = Bandit(16, [0.0, 0.0])
    tc = TrainConfig(gamma=0.0, num_envs=16, horizon=4, hidden=(4,), entropy_coef=50.0, learning_rate=0.5,
                     adaptive_lr=False, init_log_std=0.9)
    tr = Trainer(env, tc)
    for _ in range(5):
        tr.run(1)
        assert np.all(tr.params.log_std <= LOG_STD_MAX) and np.all(tr.params.log_std >= LOG_STD_MIN)
    assert np.all(tr.params.log_std == LOG_STD_MAX)


def test_training_stats_deterministic(tmp_path):
    def run(tag):
        env = BipedEnv(EnvConfig(), num_envs=8, seed=100)
        tc = TrainConfig(num_envs=8, horizon=16, hidden=(16,), seed=3)
        Trainer(env, tc, stats_path=tmp_path / f"{tag}.csv").run(3)
        return (tmp_path / f"{tag}.csv").read_bytes()

    a = run("a")
    assert a == run("b")
    header = a.decode().splitlines()[0].split(",")
    assert header[:6] == ["iteration", "steps", "mean_reward", "mean_ep_len", "delta_mean", "terminated_rate"]
    assert "viol_gait" in header


def test_trainer_dumps_diagnostics_on_divergence(tmp_path):
    env = Bandit(8, [0.0, 0.0])
    env.step_orig = env.step

    def bad(actions):
        res = env.step_orig(actions)
        res.reward[:] = np.nan
        return res

    env.step = bad
    tc = TrainConfig(num_envs=8, horizon=4, hidden=(4,))
    ck = tmp_path / "c.bplc"
    tr = Trainer(env, tc, checkpoint_path=ck)
    with pytest.raises(TrainingError):
        tr.run(1)
    assert (tmp_path / "c.diverged.json").exists()
    assert not ck.exists()


# ---------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = init_policy(17, 4, seed=9, action_scale=0.5)
    meta = {"constraint_hash": "abc", "iteration": 3, "revision": "deadbeef"}
    path = save_checkpoint(tmp_path / "a.bplc", p, meta)
    q, m = load_checkpoint(path)
    assert m == meta
    for x, y in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(x, y)
    assert checkpoint_bytes(q, m) == path.read_bytes()


def test_checkpoint_dimension_guard(tmp_path):
    path = save_checkpoint(tmp_path / "a.bplc", init_policy(17, 4), {})
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, obs_dim=16)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, act_dim=6)


def test_checkpoint_constraint_guard(tmp_path):
    walk = EnvConfig()
    jump = dataclasses.replace(walk, constraints=dataclasses.replace(walk.constraints, gait="jumping"))
    path = save_checkpoint(tmp_path / "w.bplc", init_policy(17, 4),
                           {"constraint_hash": walk.constraint_hash(), "gait": "walking"})
    load_checkpoint(path, constraint_hash=walk.constraint_hash())
    with pytest.raises(CheckpointMismatch, match="--force"):
        load_checkpoint(path, constraint_hash=jump.constraint_hash())
    load_checkpoint(path, constraint_hash=jump.constraint_hash(), force=True)


def test_corrupt_checkpoints_rejected(tmp_path):
    data = checkpoint_bytes(init_policy(5, 2, hidden=(3,)), {})
    with pytest.raises(CheckpointError):
        parse_checkpoint(b"nope" + data)
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:-8])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data + b"\x00" * 8)
    bumped = data.replace(b'"version":1', b'"version":9')
    with pytest.raises(CheckpointError, match="version"):
        parse_checkpoint(bumped)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bplc")


def test_train_config_validation():
    from bipedlab.errors import ConfigError

    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(clip=0.0)


def test_iteration_count_stays_within_step_budget():
    assert TrainConfig(num_envs=512, horizon=32, total_steps=10_000_000).iterations == 610
    assert TrainConfig(num_envs=8, horizon=8, total_steps=128).iterations == 2
    assert TrainConfig(num_envs=8, horizon=8, total_steps=10).iterations == 1
