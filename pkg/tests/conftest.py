import numpy as np
import pytest

from metagrad.environments import BanditDraws, GridWorld
from metagrad.learners import (
    EntropyScheduleNet,
    LearningRateBuckets,
    LinearSoftmaxActorCritic,
    ScalarEntropyCoef,
    SoftmaxBanditLearner,
)
from metagrad.rollout import GridRollout


def central_diff(f, x, h=1e-6):
    """Central-difference Jacobian of ``f`` at ``x`` (flat), shape f(x).shape + (x.size,)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bandit_learner(n_arms=3, boundaries=(0, 2), n_updates=4):
    return SoftmaxBanditLearner(n_arms, LearningRateBuckets(boundaries, n_updates))


def grid_setup(coef="scalar", baseline=True, size=3, horizon=4, batch_size=3):
    env = GridWorld(size=size, horizon=horizon, flip_interval=8)
    source = ScalarEntropyCoef() if coef == "scalar" else EntropyScheduleNet(10, 4)
    learner = LinearSoftmaxActorCritic(env.n_actions, env.n_features, source, lr=0.7,
                                       value_coef=0.1, gamma=0.9, baseline=baseline)
    return GridRollout(env, learner, batch_size, n_history=10)


def grid_batch(rollout, rng, B=2, scale=0.3):
    theta = scale * rng.standard_normal((B, rollout.learner.d_theta))
    history = rng.standard_normal((B, rollout.n_history)) * 0.1
    batch = rollout.collect(theta, history, 0, rollout.draws(rng, B))
    return theta, batch


def bandit_draws(rng, n, lifetime, batch_size, n_arms=3):
    return BanditDraws.sample(rng, n, lifetime, batch_size, n_arms, low=-2.0, high=1.0,
                              noise_sd=0.5, init_scale=0.3)
