"""Experiment settings assembled from a resolved config.

A problem knows how to draw randomness for a block of lifetimes, run them
under per-row meta-parameters, and produce meta-gradient samples for any
estimator spec. Measurement and training only talk to this interface.
"""

import numpy as np

from ._validation import ConfigError, check_positive
from .environments import BanditDraws, GridWorld
from .estimators import assemble_meta_gradient
from .learners import (
    EntropyScheduleNet,
    LearningRateBuckets,
    LinearSoftmaxActorCritic,
    ScalarEntropyCoef,
    SoftmaxBanditLearner,
)
from .rollout import GridRollout, run_bandit_lifetimes


class BanditProblem:
    """Episodic bandit lifetimes: L batches, L - 1 inner updates, agent reset each lifetime."""

    def __init__(self, n_arms=30, lifetime=30, batch_size=10, buckets=(0, 8),
                 arm_low=-100.0, arm_high=1.0, noise_sd=2.0, init_scale=0.01):
        check_positive(lifetime - 1, "lifetime - 1", integer=True)
        self.lifetime = int(lifetime)
        self.batch_size = int(batch_size)
        self.arm_low, self.arm_high = arm_low, arm_high
        self.noise_sd = noise_sd
        self.init_scale = init_scale
        self.schedule = LearningRateBuckets(buckets, self.lifetime - 1)
        self.learner = SoftmaxBanditLearner(n_arms, self.schedule)

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["n_arms"], cfg["lifetime"], cfg["inner_batch"], cfg["buckets"],
                   cfg["arm_low"], cfg["arm_high"], cfg["noise_sd"], cfg["init_scale"])

    @property
    def n_updates(self):
        return self.lifetime - 1

    @property
    def d_eta(self):
        return self.schedule.dim

    def draws(self, rng, n):
        return BanditDraws.sample(rng, n, self.lifetime, self.batch_size,
                                  self.learner.n_arms, self.arm_low, self.arm_high,
                                  self.noise_sd, self.init_scale)

    def window_starts(self, rng, n, T):
        """Uniform window starts; a window of T updates covers T + 1 batches."""
        return rng.integers(0, self.n_updates - T + 1, size=n)

    def objective(self, etas, n, rng):
        """Mean lifetime return for each row of ``etas``, all rows on shared draws."""
        etas = np.atleast_2d(etas)
        draws = self.draws(rng, n)
        P = len(etas)
        run = run_bandit_lifetimes(self.learner, np.repeat(etas, n, axis=0), draws.tile(P))
        return run.batch_means.mean(axis=1).reshape(P, n).mean(axis=1)

    def tape_samples(self, eta, specs, n, rng, truncation=None, hessian_mode="sampled"):
        """Meta-gradient samples of every tape spec sharing one block of lifetimes.

        All ``specs`` must share ``truncation``. Returns ``({label: (n, d_eta)}, ok,
        window_return)`` where ``window_return`` is each lifetime's mean return in its window.
        """
        T = self.n_updates if truncation is None else int(truncation)
        draws = self.draws(rng, n)
        start = self.window_starts(rng, n, T) if T < self.n_updates else np.zeros(n, dtype=int)
        run = run_bandit_lifetimes(self.learner, np.broadcast_to(eta, (n, self.d_eta)), draws,
                                   window=(start, T), hessian_mode=hessian_mode)
        est = {s.label(): assemble_meta_gradient(run.tape, s) / (T + 1) for s in specs}
        return est, run.ok, run.window_objective(start, T + 1)

    def es_objective(self, rng, n, truncation=None):
        """Fitness function for ES over ``n`` lifetimes shared by every population row.

        Row i of a population of size P runs on lifetime ``i % n``; the
        perturbation applies inside a random window of ``truncation`` updates.
        """
        T = self.n_updates if truncation is None else int(truncation)
        draws = self.draws(rng, n)
        start = self.window_starts(rng, n, T) if T < self.n_updates else np.zeros(n, dtype=int)

        def objective(pop, base):
            reps = len(pop) // n
            run = run_bandit_lifetimes(self.learner, np.broadcast_to(base, pop.shape),
                                       draws.tile(reps), perturb=(np.tile(start, reps), T, pop))
            return run.window_objective(np.tile(start, reps), T + 1)

        return objective

    def es_samples(self, eta, n, rng, sigma, truncation=None):
        """Raw antithetic ES samples, one perturbation pair per lifetime (shared draws)."""
        T = self.n_updates if truncation is None else int(truncation)
        draws = self.draws(rng, n)
        start = self.window_starts(rng, n, T) if T < self.n_updates else np.zeros(n, dtype=int)
        eps = rng.standard_normal((n, self.d_eta))
        eta = np.broadcast_to(eta, (n, self.d_eta))
        values = []
        for sign in (1.0, -1.0):
            run = run_bandit_lifetimes(self.learner, eta, draws,
                                       perturb=(start, T, eta + sign * sigma * eps))
            values.append(run.window_objective(start, T + 1))
        diff = values[0] - values[1]
        ok = np.isfinite(diff)
        return np.where(ok, diff, 0.0)[:, None] * eps / (2 * sigma), ok


class GridProblem:
    """Gridworld actor-critic with a meta-learned entropy coefficient."""

    def __init__(self, size=5, horizon=16, flip_interval=6400, step_reward=-0.04,
                 batch_size=5, inner_lr=1.0, value_coef=0.1, gamma=0.99, n_history=10,
                 coef_source="net", net_hidden=32, baseline=True):
        self.env = GridWorld(size, horizon, flip_interval, step_reward)
        if coef_source == "net":
            source = EntropyScheduleNet(n_history, net_hidden)
        elif coef_source == "scalar":
            source = ScalarEntropyCoef()
        else:
            raise ConfigError(f"coef_source must be 'net' or 'scalar', got {coef_source!r}")
        self.learner = LinearSoftmaxActorCritic(self.env.n_actions, self.env.n_features, source,
                                                inner_lr, value_coef, gamma, baseline)
        self.rollout = GridRollout(self.env, self.learner, batch_size, n_history)

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["grid_size"], cfg["horizon"], cfg["flip_interval"], cfg["step_reward"],
                   cfg["inner_batch"], cfg["inner_lr"], cfg["value_coef"], cfg["gamma"],
                   cfg["n_history"], cfg["coef_source"], cfg["net_hidden"])

    @property
    def d_eta(self):
        return self.learner.coef_source.dim

    @property
    def batches_per_flip(self):
        return max(1, self.env.flip_interval // self.env.horizon)

    def lifetime_samples(self, eta, specs, n, rng, n_batches, baseline="none",
                         hessian_mode="sampled"):
        """Meta-gradient samples over fresh lifetimes of ``n_batches`` updates from theta = 0."""
        state = self.rollout.initial_state(n)
        win = self.rollout.run_window(eta, state, n_batches, rng, hessian_mode=hessian_mode,
                                      baseline=baseline)
        est = {s.label(): assemble_meta_gradient(win.tape, s) / n_batches for s in specs}
        return est, win.ok, win.mean_returns.mean(axis=1)

    def baseline_samples(self, eta, spec, n, rng, n_batches, modes=("none", "shared_inner")):
        """Samples of ``spec`` under each baseline mode, all from one set of rollouts."""
        state = self.rollout.initial_state(n)
        win = self.rollout.run_window(eta, state, n_batches, rng,
                                      hessian_mode=spec.effective_hessian_mode, baseline=modes)
        return {m: assemble_meta_gradient(win.tapes[m], spec) / n_batches for m in modes}, win.ok

    def objective(self, etas, n, rng, n_batches):
        """Mean return over fresh lifetimes for each row of ``etas`` on shared draws."""
        etas = np.atleast_2d(etas)
        P = len(etas)
        state = self.rollout.initial_state(n * P)
        win = self.rollout.run_window(np.repeat(etas, n, axis=0), state, n_batches, rng,
                                      tape=False, reps=P)
        return win.mean_returns.mean(axis=1).reshape(P, n).mean(axis=1)


def build_problem(cfg):
    if cfg["setting"] == "bandit":
        return BanditProblem.from_config(cfg)
    if cfg["setting"] == "grid":
        return GridProblem.from_config(cfg)
    raise ConfigError(f"unknown setting {cfg['setting']!r}")
