"""Bandit and gridworld environments, plus an enumerable Bernoulli bandit.

All environments are vectorized over leading batch axes and consume
pre-drawn uniforms/normals, so a lifetime is a deterministic function of its
draws. Replaying the same draws under different meta-parameters gives common
random numbers for free.
"""

import itertools
from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# Multi-armed bandit


@dataclass
class BanditTask:
    arm_means: np.ndarray
    noise_sd: float = 2.0

    @property
    def n_arms(self):
        return self.arm_means.shape[-1]


def sample_arm_means(rng, size, low=-100.0, high=1.0):
    """Arm means distributed as exp(Uniform(low, high))."""
    return np.exp(rng.uniform(low, high, size=size))


def sample_bandit_task(rng, n_arms=30, low=-100.0, high=1.0, noise_sd=2.0):
    return BanditTask(sample_arm_means(rng, n_arms, low, high), noise_sd)


def bandit_pull(task, arm, rng):
    arm = np.asarray(arm)
    noise = rng.standard_normal(arm.shape) if task.noise_sd else 0.0
    return task.arm_means[arm] + task.noise_sd * noise


def sample_categorical(probs, uniforms):
    """Inverse-CDF sampling. probs: (..., A); uniforms: (..., N) -> (..., N)."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (uniforms[..., :, None] >= cdf[..., None, :-1]).sum(axis=-1)
    return idx


@dataclass
class BanditDraws:
    """All randomness for a block of bandit lifetimes.

    arm_means: (B, A); theta0: (B, A) initial logits;
    uniforms, noise: (B, L, N) action-selection uniforms and reward noise.
    """

    arm_means: np.ndarray
    theta0: np.ndarray
    uniforms: np.ndarray
    noise: np.ndarray
    noise_sd: float = 2.0

    @classmethod
    def sample(cls, rng, n, lifetime, batch_size, n_arms=30, low=-100.0, high=1.0,
               noise_sd=2.0, init_scale=0.01):
        return cls(
            arm_means=sample_arm_means(rng, (n, n_arms), low, high),
            theta0=init_scale * rng.standard_normal((n, n_arms)),
            uniforms=rng.random((n, lifetime, batch_size)),
            noise=rng.standard_normal((n, lifetime, batch_size)),
            noise_sd=noise_sd,
        )

    @property
    def n(self):
        return self.theta0.shape[0]

    def tile(self, reps):
        """Repeat every lifetime ``reps`` times (block-major) for CRN replicas."""
        return BanditDraws(*(np.tile(a, (reps,) + (1,) * (a.ndim - 1))
                             for a in (self.arm_means, self.theta0, self.uniforms, self.noise)),
                           noise_sd=self.noise_sd)

    def rewards(self, actions, step):
        means = np.take_along_axis(self.arm_means, actions, axis=1)
        return means + self.noise_sd * self.noise[:, step, :]


# ---------------------------------------------------------------------------
# Enumerable Bernoulli bandit


@dataclass
class EnumerableBandit:
    reward_probs: np.ndarray

    def __post_init__(self):
        self.reward_probs = np.asarray(self.reward_probs, dtype=float)
        if not 2 <= self.reward_probs.size <= 3:
            raise ValueError("enumerable bandit supports 2 or 3 arms")

    @property
    def n_arms(self):
        return self.reward_probs.size


def all_outcome_sequences(bandit, n_steps, batch_size=1):
    """Every (actions, rewards) sequence: arrays of shape (S, n_steps, batch_size)."""
    per_pull = [(a, r) for a in range(bandit.n_arms) for r in (0, 1)]
    pulls = n_steps * batch_size
    seqs = np.array(list(itertools.product(range(len(per_pull)), repeat=pulls)), dtype=int)
    seqs = seqs.reshape(-1, n_steps, batch_size)
    table = np.array(per_pull)
    return table[seqs, 0], table[seqs, 1].astype(float)


def enumerate_outcomes(bandit, policy_fn, n_steps, batch_size=1):
    """Exact outcome distribution of an adaptive policy on ``bandit``.

    ``policy_fn(actions, rewards)`` maps forced outcome sequences of shape
    (S, n_steps, batch_size) to the action probabilities (S, n_steps, A) the
    learner would have used at each step. Returns ``(probs, actions, rewards)``.
    Complex-valued policies are propagated, which lets callers take
    complex-step derivatives of expectations.
    """
    actions, rewards = all_outcome_sequences(bandit, n_steps, batch_size)
    policies = policy_fn(actions, rewards)
    p_act = np.take_along_axis(policies, actions, axis=-1)
    q = bandit.reward_probs[actions]
    p_rew = np.where(rewards > 0, q, 1.0 - q)
    probs = np.prod((p_act * p_rew).reshape(len(actions), -1), axis=1)
    return probs, actions, rewards


# ---------------------------------------------------------------------------
# Two-object gridworld

MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])  # up, down, left, right


@dataclass
class GridState:
    agent: np.ndarray
    obj_a: np.ndarray
    obj_b: np.ndarray
    t: np.ndarray

    def copy(self):
        return GridState(self.agent.copy(), self.obj_a.copy(), self.obj_b.copy(), self.t.copy())


class GridWorld:
    """Square room with two objects whose rewards swap every ``flip_interval`` steps.

    Moving onto an object pays +1 or -1 depending on the phase and relocates
    both objects; any other step pays ``step_reward``. Episodes last
    ``horizon`` steps. ``global_step`` counts per-environment timesteps.
    """

    n_actions = 4

    def __init__(self, size=5, horizon=16, flip_interval=6400, step_reward=-0.04):
        self.size = size
        self.horizon = horizon
        self.flip_interval = flip_interval
        self.step_reward = step_reward

    @property
    def n_cells(self):
        return self.size * self.size

    @property
    def n_features(self):
        return 3 * self.n_cells + self.horizon

    def phase(self, global_step):
        """+1 while object A is the rewarding one, -1 after each flip."""
        return np.where((np.asarray(global_step) // self.flip_interval) % 2 == 0, 1.0, -1.0)

    def _object_pair(self, u1, u2, exclude=None):
        c = self.n_cells
        if exclude is None:
            a = np.minimum((u1 * c).astype(int), c - 1)
            b = np.minimum((u2 * (c - 1)).astype(int), c - 2)
            b = b + (b >= a)
            return a, b
        # uniform over distinct pairs of cells other than ``exclude``
        a = np.minimum((u1 * (c - 1)).astype(int), c - 2)
        a = a + (a >= exclude)
        lo, hi = np.minimum(a, exclude), np.maximum(a, exclude)
        b = np.minimum((u2 * (c - 2)).astype(int), c - 3)
        b = b + (b >= lo)
        b = b + (b >= hi)
        return a, b

    def reset(self, draws):
        """draws: (..., 3) uniforms -> fresh episode state."""
        agent = np.minimum((draws[..., 0] * self.n_cells).astype(int), self.n_cells - 1)
        obj_a, obj_b = self._object_pair(draws[..., 1], draws[..., 2], exclude=agent)
        return GridState(agent, obj_a, obj_b, np.zeros_like(agent))

    def move(self, cell, action):
        row, col = np.divmod(cell, self.size)
        row = np.clip(row + MOVES[action, 0], 0, self.size - 1)
        col = np.clip(col + MOVES[action, 1], 0, self.size - 1)
        return row * self.size + col

    def step(self, state, action, draws, global_step):
        """Advance one timestep; draws: (..., 2) relocation uniforms.

        Returns ``(next_state, reward, done)``.
        """
        agent = self.move(state.agent, action)
        hit_a = agent == state.obj_a
        hit_b = agent == state.obj_b
        sign = self.phase(global_step)
        reward = np.where(hit_a, sign, np.where(hit_b, -sign, self.step_reward))
        hit = hit_a | hit_b
        new_a, new_b = self._object_pair(draws[..., 0], draws[..., 1])
        nxt = GridState(agent, np.where(hit, new_a, state.obj_a),
                        np.where(hit, new_b, state.obj_b), state.t + 1)
        return nxt, reward, nxt.t >= self.horizon

    def feature_index(self, state):
        """Active one-hot feature indices (..., 4): agent, object A, object B, timestep."""
        c = self.n_cells
        return np.stack([state.agent, c + state.obj_a, 2 * c + state.obj_b,
                         3 * c + state.t], axis=-1)


def grid_step(env, state, action, rng, global_step):
    """Single-call convenience wrapper drawing relocation uniforms from ``rng``."""
    draws = rng.random(np.shape(state.agent) + (2,))
    return env.step(state, np.asarray(action), draws, global_step)
