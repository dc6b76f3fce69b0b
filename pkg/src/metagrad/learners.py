"""Closed-form policy-gradient inner learners.

Each learner exposes the operations the meta-gradient machinery needs, all
vectorized over a leading axis of independent lifetimes ``B``:

``grad(theta, batch)``
    sampled ascent direction of the inner objective, shape (B, d_theta)
``hvp(theta, batch, v)``
    directional derivative of ``grad`` along ``v`` (B, ..., d_theta)
``mixed_jvp(eta, theta, batch, row=None)``
    rows of d(update)/d(eta), shape (B, d_eta, d_theta)
``traj_score`` / ``batch_score``
    grad of log p(tau) per trajectory (B, N, d_theta) and summed over the batch
``learning_rate``, ``update``, ``update_jvp``
    the update Psi = lr * grad and its forward derivative along J rows
"""

from dataclasses import dataclass

import numpy as np

from ._validation import BucketMismatch, ConfigError


def softmax(z):
    z = z - z.real.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Meta-parameter mappings


class LearningRateBuckets:
    """Piecewise-constant learning-rate schedule, one meta-parameter per bucket.

    Bucket ``i`` covers update steps ``[boundaries[i], boundaries[i + 1])``;
    the last bucket runs to ``n_updates``.
    """

    def __init__(self, boundaries=(0, 8), n_updates=29):
        b = np.asarray(boundaries, dtype=int)
        if b.ndim != 1 or b.size < 1:
            raise ConfigError("bucket boundaries must be a non-empty sequence")
        if np.any(np.diff(b) <= 0):
            raise ConfigError("bucket boundaries must be strictly increasing")
        if b[0] < 0 or b[-1] >= n_updates:
            raise ConfigError(f"bucket boundaries must lie in [0, {n_updates})")
        self.boundaries = b
        self.n_updates = int(n_updates)

    @property
    def dim(self):
        return self.boundaries.size

    def bucket(self, step):
        if not self.boundaries[0] <= step < self.n_updates:
            raise BucketMismatch(f"update step {step} falls outside every bucket")
        return int(np.searchsorted(self.boundaries, step, side="right") - 1)


class ScalarEntropyCoef:
    """Entropy coefficient sigmoid(eta) from a single meta-parameter."""

    dim = 1

    def coefficient(self, eta, history=None):
        c = sigmoid(eta[:, 0])
        return c, (c * (1.0 - c))[:, None]


class EntropyScheduleNet:
    """One-hidden-layer ReLU net from recent mean rewards to a sigmoid coefficient.

    Meta-parameter layout: W1 (hidden x inputs, row-major), b1, w2, b2.
    """

    def __init__(self, n_inputs=10, n_hidden=32):
        self.n_inputs = n_inputs
        self.n_hidden = n_hidden

    @property
    def dim(self):
        return self.n_inputs * self.n_hidden + 2 * self.n_hidden + 1

    def unpack(self, eta):
        h, i = self.n_hidden, self.n_inputs
        W1 = eta[:, : h * i].reshape(-1, h, i)
        b1 = eta[:, h * i: h * i + h]
        w2 = eta[:, h * i + h: h * i + 2 * h]
        b2 = eta[:, -1]
        return W1, b1, w2, b2

    def init(self, rng, bias=-4.0, scale=0.1):
        W1 = rng.standard_normal((self.n_hidden, self.n_inputs)) * scale
        w2 = rng.standard_normal(self.n_hidden) * scale
        return np.concatenate([W1.ravel(), np.zeros(self.n_hidden), w2, [bias]])

    def coefficient(self, eta, history):
        """Return (c, dc/deta) for inputs ``history`` of shape (B, n_inputs)."""
        W1, b1, w2, b2 = self.unpack(eta)
        pre = np.einsum("bhi,bi->bh", W1, history) + b1
        hidden = np.maximum(pre, 0.0)
        c = sigmoid((w2 * hidden).sum(axis=1) + b2)
        dout = c * (1.0 - c)
        dpre = (dout[:, None] * w2) * (pre > 0)
        dW1 = dpre[:, :, None] * history[:, None, :]
        dc = np.concatenate([dW1.reshape(len(c), -1), dpre,
                             dout[:, None] * hidden, dout[:, None]], axis=1)
        return c, dc


@dataclass
class MetaParams:
    values: np.ndarray
    mapping: object

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size != self.mapping.dim:
            raise ConfigError(f"expected {self.mapping.dim} meta-parameters, "
                              f"got shape {self.values.shape}")


# ---------------------------------------------------------------------------
# Bandit REINFORCE


@dataclass
class BanditBatch:
    actions: np.ndarray  # (B, N) int
    rewards: np.ndarray  # (B, N)
    step: int

    @property
    def returns(self):
        return self.rewards


class SoftmaxBanditLearner:
    """REINFORCE on softmax logits, learning rate from a bucketed schedule.

    The update is ``theta += eta[bucket(step)] * grad``. Bandit trajectories
    are single pulls, so R(tau) is the pull's reward.
    """

    def __init__(self, n_arms, schedule):
        self.n_arms = n_arms
        self.schedule = schedule
        self._cache = (None, None, None)

    @property
    def d_theta(self):
        return self.n_arms

    def policy(self, theta):
        key, batch, pi = self._cache
        if key is theta:
            return pi
        pi = softmax(theta)
        self._cache = (theta, None, pi)
        return pi

    def _counts(self, actions, weights=None):
        B = actions.shape[0]
        flat = (actions + self.n_arms * np.arange(B)[:, None]).ravel()
        w = None if weights is None else weights.ravel()
        return np.bincount(flat, w, minlength=B * self.n_arms).reshape(B, self.n_arms)

    def traj_score(self, theta, batch):
        return np.eye(self.n_arms)[batch.actions] - self.policy(theta)[:, None, :]

    def batch_score(self, theta, batch):
        n = batch.actions.shape[1]
        return self._counts(batch.actions) - n * self.policy(theta)

    def _grad(self, theta, actions, r):
        pi = self.policy(theta)
        hit = self._counts(actions, r)
        return (hit - pi * r.sum(axis=1, keepdims=True)) / r.shape[1]

    def grad(self, theta, batch):
        return self._grad(theta, batch.actions, batch.rewards)

    def project_scores(self, J, theta, batch, returns):
        """(J . batch_score, mean_tau J . traj_score R) without per-pull scores."""
        c = (J @ self.batch_score(theta, batch)[..., None])[..., 0]
        direct = (J @ self._grad(theta, batch.actions, returns)[..., None])[..., 0]
        return c, direct

    def hvp(self, theta, batch, v):
        # d^2 log pi(a) = pi pi^T - diag(pi), the same for every action
        pi = self.policy(theta)
        shape = (pi.shape[0],) + (1,) * (v.ndim - 2) + (pi.shape[1],)
        pi = pi.reshape(shape)
        rbar = batch.rewards.mean(axis=1).reshape(shape[:-1] + (1,))
        return rbar * (pi * (pi * v).sum(axis=-1, keepdims=True) - pi * v)

    def learning_rate(self, eta, batch):
        return eta[:, self.schedule.bucket(batch.step)]

    def update(self, eta, theta, batch):
        return self.learning_rate(eta, batch)[:, None] * self.grad(theta, batch)

    def mixed_jvp(self, eta, theta, batch, row=None):
        k = self.schedule.bucket(batch.step)
        g = self.grad(theta, batch)
        if row is not None:
            return g if row == k else np.zeros_like(g)
        out = np.zeros((g.shape[0], eta.shape[1], g.shape[1]), dtype=g.dtype)
        out[:, k, :] = g
        return out

    def update_jvp(self, eta, theta, batch, v):
        lr = self.learning_rate(eta, batch)
        return lr.reshape((-1,) + (1,) * (v.ndim - 1)) * self.hvp(theta, batch, v)


# ---------------------------------------------------------------------------
# Gridworld actor-critic


@dataclass
class GridBatch:
    phi: np.ndarray       # (B, M, F) one-hot features of visited states, M = N * H
    actions: np.ndarray   # (B, M)
    rtg: np.ndarray       # (B, M) discounted reward-to-go
    rewards: np.ndarray   # (B, N, H)
    history: np.ndarray   # (B, n_history) mean rewards of previous batches
    horizon: int
    step: int = 0

    @property
    def n_traj(self):
        return self.rewards.shape[1]

    @property
    def returns(self):
        """Discounted return R(tau) of each trajectory from its first state."""
        return self.rtg[:, :: self.horizon]


class LinearSoftmaxActorCritic:
    """Linear-softmax policy with entropy bonus and a linear value baseline.

    theta = [W (A x F, row-major), w (F)]. One SGD step per batch ascends

        mean_tau sum_t [log pi(a_t|s_t) (G_t - V(s_t)) + c H(pi(.|s_t))
                        - value_coef * (G_t - V(s_t))^2 / 2]

    with V treated as a constant in the policy term. The entropy
    coefficient ``c`` comes from ``coef_source`` (scalar sigmoid or the
    schedule net fed by recent mean rewards).
    """

    def __init__(self, n_actions, n_features, coef_source, lr=1.0, value_coef=0.1,
                 gamma=0.99, baseline=True):
        self.n_actions = n_actions
        self.n_features = n_features
        self.coef_source = coef_source
        self.lr = lr
        self.value_coef = value_coef
        self.gamma = gamma
        self.baseline = baseline

    @property
    def d_theta(self):
        return self.n_actions * self.n_features + self.n_features

    def init_params(self, n):
        return np.zeros((n, self.d_theta))

    def split(self, theta):
        af = self.n_actions * self.n_features
        W = theta[..., :af].reshape(theta.shape[:-1] + (self.n_actions, self.n_features))
        return W, theta[..., af:]

    def _join(self, gW, gw):
        return np.concatenate([gW.reshape(gW.shape[:-2] + (-1,)), gw], axis=-1)

    def logits(self, theta, phi):
        W, _ = self.split(theta)
        return phi @ W.transpose(0, 2, 1)

    def policy(self, theta, phi):
        return softmax(self.logits(theta, phi))

    def value(self, theta, phi):
        _, w = self.split(theta)
        return np.einsum("bmf,bf->bm", phi, w)

    def entropy(self, theta, phi):
        logp = log_softmax(self.logits(theta, phi))
        return -(np.exp(logp) * logp).sum(axis=-1)

    def coefficient(self, eta, batch):
        eta = np.broadcast_to(eta, (batch.phi.shape[0], eta.shape[-1]))
        return self.coef_source.coefficient(eta, batch.history)

    def _advantage(self, theta, batch):
        if self.baseline:
            return batch.rtg - self.value(theta, batch.phi)
        return batch.rtg

    def _entropy_grad_logits(self, z):
        logp = log_softmax(z)
        pi = np.exp(logp)
        H = -(pi * logp).sum(axis=-1, keepdims=True)
        return pi, logp, H, -pi * (logp + H)

    def _to_theta(self, x, phi, n_traj):
        # x: (B, ..., M, A) per-sample logit-space vectors -> (B, ..., A, F)
        phi_b = phi.reshape((phi.shape[0],) + (1,) * (x.ndim - 3) + phi.shape[1:])
        return np.swapaxes(x, -1, -2) @ phi_b / n_traj

    def traj_score(self, theta, batch):
        pi = self.policy(theta, batch.phi)
        e = np.eye(self.n_actions)[batch.actions] - pi
        B, M, A = e.shape
        N, H = batch.n_traj, batch.horizon
        e = e.reshape(B, N, H, A)
        phi = batch.phi.reshape(B, N, H, -1)
        sW = np.swapaxes(e, -1, -2) @ phi
        return self._join(sW, np.zeros((B, N, self.n_features)))

    def batch_score(self, theta, batch):
        return self.traj_score(theta, batch).sum(axis=1)

    def entropy_grad(self, theta, batch):
        """d mean_tau sum_t H(pi(.|s_t)) / d theta (zero on the value weights)."""
        _, _, _, gH = self._entropy_grad_logits(self.logits(theta, batch.phi))
        gW = self._to_theta(gH, batch.phi, batch.n_traj)
        return self._join(gW, np.zeros((gW.shape[0], self.n_features)))

    def grad(self, theta, batch, coef=0.0):
        phi = batch.phi
        z = self.logits(theta, phi)
        pi, _, _, gH = self._entropy_grad_logits(z)
        adv = self._advantage(theta, batch)
        x = (np.eye(self.n_actions)[batch.actions] - pi) * adv[..., None]
        x = x + np.reshape(coef, (-1, 1, 1)) * gH
        gW = self._to_theta(x, phi, batch.n_traj)
        if self.baseline:
            td = batch.rtg - self.value(theta, phi)
            gw = self.value_coef * np.einsum("bm,bmf->bf", td, phi) / batch.n_traj
        else:
            gw = np.zeros((phi.shape[0], self.n_features))
        return self._join(gW, gw)

    def hvp(self, theta, batch, v, coef=0.0):
        """Directional derivative of ``grad`` along ``v`` of shape (B, R, d_theta).

        With the value baseline the policy step depends on the value weights
        but not vice versa, so this Jacobian is not symmetric.
        """
        squeeze = v.ndim == 2
        if squeeze:
            v = v[:, None, :]
        phi = batch.phi
        vW, vw = self.split(v)
        z = self.logits(theta, phi)
        pi, logp, H, gH = self._entropy_grad_logits(z)
        pi, logp, H, gH = (a[:, None] for a in (pi, logp, H, gH))
        dz = phi[:, None] @ np.swapaxes(vW, -1, -2)                     # (B, R, M, A)
        pdz = (pi * dz).sum(axis=-1, keepdims=True)
        dpi = pi * (dz - pdz)
        adv = self._advantage(theta, batch)[:, None, :, None]
        x = -dpi * adv
        if self.baseline:
            dV = phi[:, None] @ vw[..., None]                           # (B, R, M, 1)
            score = (np.eye(self.n_actions)[batch.actions] - pi[:, 0])[:, None]
            x = x - score * dV
        dH = (gH * dz).sum(axis=-1, keepdims=True)
        dgH = -dpi * (logp + H) - pi * (dz - pdz + dH)
        x = x + np.reshape(coef, (-1, 1, 1, 1)) * dgH
        oW = self._to_theta(x, phi, batch.n_traj)
        if self.baseline:
            ow = -self.value_coef * (np.swapaxes(dV, -1, -2) @ phi[:, None])[..., 0, :] / batch.n_traj
        else:
            ow = np.zeros(vw.shape)
        out = self._join(oW, ow)
        return out[:, 0] if squeeze else out

    def learning_rate(self, eta, batch):
        return np.full(batch.phi.shape[0], self.lr)

    def update(self, eta, theta, batch):
        c, _ = self.coefficient(eta, batch)
        return self.lr * self.grad(theta, batch, c)

    def update_jvp(self, eta, theta, batch, v):
        c, _ = self.coefficient(eta, batch)
        return self.lr * self.hvp(theta, batch, v, c)

    def mixed_jvp(self, eta, theta, batch, row=None):
        _, dc = self.coefficient(eta, batch)
        g = self.entropy_grad(theta, batch)
        if row is not None:
            return self.lr * dc[:, row, None] * g
        return self.lr * dc[:, :, None] * g[:, None, :]

    def baseline_values(self, theta, batch):
        """V(s_0) of every trajectory in the batch, shape (B, N)."""
        return self.value(theta, batch.phi)[:, :: batch.horizon]


BASELINE_MODES = ("none", "shared_inner")


def baseline_apply(returns, mode, values=None):
    """Returns used by the meta-gradient estimator under a baseline mode."""
    if mode == "none":
        return returns
    if mode == "shared_inner":
        return returns - values
    raise ConfigError(f"unknown baseline mode {mode!r}")
