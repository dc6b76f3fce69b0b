import numpy as np
import pytest
from conftest import bandit_learner, central_diff, grid_batch, grid_setup, rel_err

from metagrad._validation import BucketMismatch, ConfigError
from metagrad.learners import (
    BanditBatch,
    EntropyScheduleNet,
    LearningRateBuckets,
    MetaParams,
    ScalarEntropyCoef,
    baseline_apply,
)

N_INSTANCES = 50


def log_softmax_ref(z):
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def random_bandit_batch(rng, B=1, N=4, A=3, step=0):
    return BanditBatch(rng.integers(0, A, (B, N)), rng.normal(size=(B, N)), step)


# ---------------------------------------------------------------------------
# bandit REINFORCE


def test_bandit_grad_hand_value():
    learner = bandit_learner(2, (0,), 3)
    batch = BanditBatch(np.array([[0]]), np.array([[1.0]]), 0)
    np.testing.assert_allclose(learner.grad(np.zeros((1, 2)), batch), [[0.5, -0.5]], atol=1e-15)


def test_bandit_grad_zero_rewards(rng):
    learner = bandit_learner()
    batch = BanditBatch(rng.integers(0, 3, (2, 5)), np.zeros((2, 5)), 0)
    assert np.all(learner.grad(rng.normal(size=(2, 3)), batch) == 0.0)


def test_bandit_policy_normalized(rng):
    learner = bandit_learner(30, (0,), 3)
    pi = learner.policy(rng.normal(size=(7, 30)) * 20)
    np.testing.assert_allclose(pi.sum(axis=-1), 1.0, atol=1e-12)


def test_bandit_grad_matches_surrogate_fd(rng):
    learner = bandit_learner()
    for _ in range(N_INSTANCES):
        theta = rng.normal(size=3)
        batch = random_bandit_batch(rng)

        def surrogate(t):
            return np.mean(log_softmax_ref(t)[batch.actions[0]] * batch.rewards[0])

        assert rel_err(learner.grad(theta[None], batch)[0], central_diff(surrogate, theta)) < 1e-6


def test_bandit_hvp_matches_fd_of_grad(rng):
    learner = bandit_learner()
    for _ in range(N_INSTANCES):
        theta, v = rng.normal(size=3), rng.normal(size=3)
        batch = random_bandit_batch(rng)
        fd = central_diff(lambda t: learner.grad(t[None], batch)[0], theta) @ v
        assert rel_err(learner.hvp(theta[None], batch, v[None]), fd[None]) < 1e-5


def test_bandit_hvp_zero_and_symmetry(rng):
    learner = bandit_learner()
    theta = rng.normal(size=(1, 3))
    batch = random_bandit_batch(rng)
    assert np.all(learner.hvp(theta, batch, np.zeros((1, 3))) == 0)
    for _ in range(20):
        v, w = rng.normal(size=(2, 1, 3))
        a = learner.hvp(theta, batch, v)[0] @ w[0]
        b = learner.hvp(theta, batch, w)[0] @ v[0]
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_softmax_hessian_rows_sum_to_zero(rng):
    learner = bandit_learner(5, (0,), 3)
    theta = rng.normal(size=(1, 5))
    batch = BanditBatch(np.zeros((1, 1), dtype=int), np.ones((1, 1)), 0)
    np.testing.assert_allclose(learner.hvp(theta, batch, np.ones((1, 5))), 0.0, atol=1e-12)


def test_bandit_scores_match_fd(rng):
    learner = bandit_learner()
    for _ in range(N_INSTANCES):
        theta = rng.normal(size=3)
        batch = random_bandit_batch(rng)
        a = batch.actions[0]
        fd_batch = central_diff(lambda t: log_softmax_ref(t)[a].sum(), theta)
        assert rel_err(learner.batch_score(theta[None], batch)[0], fd_batch) < 1e-6
        fd_traj = central_diff(lambda t: log_softmax_ref(t)[a], theta)
        assert rel_err(learner.traj_score(theta[None], batch)[0], fd_traj) < 1e-6


def test_batch_score_is_sum_of_traj_scores(rng):
    learner = bandit_learner()
    theta = rng.normal(size=(4, 3))
    batch = random_bandit_batch(rng, B=4, N=6)
    np.testing.assert_allclose(learner.batch_score(theta, batch),
                               learner.traj_score(theta, batch).sum(axis=1), atol=1e-12)


def test_score_vanishes_for_greedy_action():
    learner = bandit_learner(3, (0,), 3)
    theta = np.array([[60.0, 0.0, 0.0]])
    batch = BanditBatch(np.array([[0]]), np.array([[1.0]]), 0)
    assert np.abs(learner.traj_score(theta, batch)).max() < 1e-20


def test_bucket_mixed_jvp(rng):
    learner = bandit_learner(3, (0, 2), 4)
    eta = np.array([[0.3, 0.8]])
    theta = rng.normal(size=(1, 3))
    batch = random_bandit_batch(rng, step=1)
    assert np.all(learner.mixed_jvp(eta, theta, batch, row=1) == 0)
    np.testing.assert_array_equal(learner.mixed_jvp(eta, theta, batch, row=0),
                                  learner.grad(theta, batch))
    for _ in range(N_INSTANCES):
        theta = rng.normal(size=(1, 3))
        batch = random_bandit_batch(rng, step=int(rng.integers(0, 4)))
        eta0 = rng.uniform(0.1, 2.0, 2)
        fd = central_diff(lambda e: learner.update(e[None], theta, batch)[0], eta0)
        assert rel_err(learner.mixed_jvp(eta0[None], theta, batch)[0], fd.T) < 1e-6


def test_bucket_validation():
    with pytest.raises(ConfigError):
        LearningRateBuckets((0, 0), 5)
    with pytest.raises(ConfigError):
        LearningRateBuckets((0, 5), 5)
    with pytest.raises(BucketMismatch):
        LearningRateBuckets((0, 2), 5).bucket(5)
    with pytest.raises(BucketMismatch):
        LearningRateBuckets((1,), 5).bucket(0)
    assert LearningRateBuckets((0, 8), 29).bucket(7) == 0
    assert LearningRateBuckets((0, 8), 29).bucket(8) == 1


def test_meta_params_dimension():
    MetaParams([0.5], ScalarEntropyCoef())
    assert EntropyScheduleNet(10, 32).dim == 10 * 32 + 32 + 32 + 1
    with pytest.raises(ConfigError):
        MetaParams([0.5, 1.0], ScalarEntropyCoef())


def test_inner_learning_improves_return():
    # stationary 30-arm bandit: 29 REINFORCE steps beat the uniform policy
    from metagrad.problems import BanditProblem
    from metagrad.rng import stream

    problem = BanditProblem(lifetime=30, batch_size=10)
    draws = problem.draws(stream(5, "sanity"), 2000)
    from metagrad.rollout import run_bandit_lifetimes

    run = run_bandit_lifetimes(problem.learner, np.full((2000, 2), 3.0), draws)
    final = run.batch_means[:, -1]
    uniform = draws.arm_means.mean(axis=1)
    diff = final - uniform
    assert diff.mean() > 3 * diff.std(ddof=1) / np.sqrt(len(diff))


# ---------------------------------------------------------------------------
# gridworld actor-critic


def grid_surrogate(learner, batch, coef, W_theta, w_fixed):
    """Policy part with V frozen at ``w_fixed``; independent of the learner code."""
    A, F = learner.n_actions, learner.n_features
    W = W_theta[: A * F].reshape(A, F)
    phi = batch.phi[0]
    z = phi @ W.T
    logp = log_softmax_ref(z)
    pi = np.exp(logp)
    ent = -(pi * logp).sum(axis=-1)
    adv = batch.rtg[0] - phi @ w_fixed if learner.baseline else batch.rtg[0]
    lp = logp[np.arange(len(z)), batch.actions[0]]
    return (lp * adv + coef * ent).sum() / batch.n_traj


def value_surrogate(learner, batch, w):
    td = batch.rtg[0] - batch.phi[0] @ w
    return -learner.value_coef * 0.5 * (td**2).sum() / batch.n_traj


@pytest.mark.parametrize("baseline", [True, False])
def test_grid_grad_matches_fd(rng, baseline):
    rollout = grid_setup(baseline=baseline)
    learner = rollout.learner
    af = learner.n_actions * learner.n_features
    for _ in range(N_INSTANCES):
        theta, batch = grid_batch(rollout, rng, B=1)
        coef = rng.uniform(0, 0.5)
        g = learner.grad(theta, batch, coef)[0]
        w = theta[0, af:]
        fdW = central_diff(lambda t: grid_surrogate(learner, batch, coef, t, w), theta[0, :af])
        assert rel_err(g[:af], fdW) < 1e-6
        if baseline:
            fdw = central_diff(lambda v: value_surrogate(learner, batch, v), w)
            assert rel_err(g[af:], fdw) < 1e-6
        else:
            assert np.all(g[af:] == 0)


@pytest.mark.parametrize("baseline", [True, False])
def test_grid_hvp_matches_fd_of_grad(rng, baseline):
    rollout = grid_setup(baseline=baseline)
    learner = rollout.learner
    for _ in range(N_INSTANCES):
        theta, batch = grid_batch(rollout, rng, B=1)
        coef = rng.uniform(0, 0.5)
        v = rng.normal(size=learner.d_theta)
        fd = central_diff(lambda t: learner.grad(t[None], batch, coef)[0], theta[0], h=1e-5) @ v
        assert rel_err(learner.hvp(theta, batch, v[None], coef)[0], fd) < 1e-5


def test_grid_hvp_symmetric_without_baseline(rng):
    rollout = grid_setup(baseline=False)
    learner = rollout.learner
    theta, batch = grid_batch(rollout, rng, B=1)
    for _ in range(20):
        v, w = rng.normal(size=(2, 1, learner.d_theta))
        a = learner.hvp(theta, batch, v, 0.2)[0] @ w[0]
        b = learner.hvp(theta, batch, w, 0.2)[0] @ v[0]
        assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_grid_scores_match_fd(rng):
    rollout = grid_setup()
    learner = rollout.learner
    af = learner.n_actions * learner.n_features
    for _ in range(N_INSTANCES):
        theta, batch = grid_batch(rollout, rng, B=1)

        def logp_traj(t):
            W = t[:af].reshape(learner.n_actions, learner.n_features)
            lp = log_softmax_ref(batch.phi[0] @ W.T)[np.arange(batch.phi.shape[1]),
                                                     batch.actions[0]]
            return lp.reshape(batch.n_traj, batch.horizon).sum(axis=1)

        fd = central_diff(logp_traj, theta[0])
        assert rel_err(learner.traj_score(theta, batch)[0], fd) < 1e-6
        np.testing.assert_allclose(learner.batch_score(theta, batch)[0], fd.sum(axis=0),
                                   atol=1e-6)


@pytest.mark.parametrize("coef", ["scalar", "net"])
def test_grid_mixed_jvp_matches_fd(rng, coef):
    rollout = grid_setup(coef=coef)
    learner = rollout.learner
    d = learner.coef_source.dim
    for _ in range(N_INSTANCES):
        theta, batch = grid_batch(rollout, rng, B=1)
        eta = rng.normal(size=d) * (1.0 if coef == "scalar" else 0.5)
        fd = central_diff(lambda e: learner.update(e[None], theta, batch)[0], eta)
        assert rel_err(learner.mixed_jvp(eta[None], theta, batch)[0], fd.T) < 1e-5


def test_scalar_mixed_jvp_closed_form(rng):
    rollout = grid_setup()
    learner = rollout.learner
    theta, batch = grid_batch(rollout, rng, B=1)
    c = 1 / (1 + np.exp(-0.4))
    expect = learner.lr * c * (1 - c) * learner.entropy_grad(theta, batch)
    np.testing.assert_allclose(learner.mixed_jvp(np.array([[0.4]]), theta, batch)[:, 0],
                               expect, rtol=1e-12)


def test_entropy_net_dead_units(rng):
    net = EntropyScheduleNet(10, 4)
    eta = np.zeros((1, net.dim))
    eta[0, -1] = 0.3
    c, dc = net.coefficient(eta, rng.normal(size=(1, 10)))
    W1, b1, w2, b2 = net.unpack(dc)
    assert np.all(W1 == 0) and np.all(b1 == 0) and np.all(w2 == 0)
    assert b2[0] == pytest.approx(c[0] * (1 - c[0]))
    assert 0 < c[0] < 1


def test_entropy_max_at_zero_weights(rng):
    rollout = grid_setup()
    learner = rollout.learner
    theta0 = np.zeros((1, learner.d_theta))
    _, batch = grid_batch(rollout, rng, B=1)
    np.testing.assert_allclose(learner.entropy(theta0, batch.phi), np.log(4), atol=1e-14)
    assert np.abs(learner.entropy_grad(theta0, batch)).max() < 1e-14


def test_baseline_apply():
    r = np.arange(6.0).reshape(2, 3)
    assert baseline_apply(r, "none") is r
    np.testing.assert_array_equal(baseline_apply(r, "shared_inner", np.ones((2, 3))), r - 1)
    with pytest.raises(ConfigError):
        baseline_apply(r, "critic")
