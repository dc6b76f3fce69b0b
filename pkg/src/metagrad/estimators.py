"""Meta-gradient estimators and meta-Jacobian propagation.

The meta-Jacobian J = d theta / d eta (shape (B, d_eta, d_theta)) is carried
forward one inner update at a time. At every step the tape records the
projected batch score ``c_k = J_k . grad log p(D_k)`` and the direct term
``mean_tau J_k . grad log p(tau) R(tau)``; any estimator in the family is then
a cheap reduction over the tape, so one simulated lifetime serves every
sampling-correction weight.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    ConfigError,
    NonFiniteError,
    WindowOutOfRange,
    check_choice,
    check_finite,
    check_positive,
    check_unit_interval,
)

KINDS = ("sampling_corrected", "naive", "dice", "exp_discounted", "es", "finite_differences")
HESSIAN_MODES = ("sampled", "expected")
BASELINE_MODES = ("none", "shared_inner")


class MetaGradientEstimator(BaseEstimator):
    """One point in the bias/variance space of meta-gradient estimators.

    Parameters
    ----------
    kind : {"sampling_corrected", "naive", "dice", "exp_discounted", "es", "finite_differences"}
    lam : float in [0, 1]
        Uniform weight on the sampling-correction terms.
    alpha : float in [0, 1]
        Meta-discount for ``exp_discounted``; correction j is weighted alpha**(k - j).
    truncation : int or None
        Number of inner updates backpropagated through; None means the whole lifetime.
    hessian_mode : {"sampled", "expected"}
        "expected" adds the score outer-product term of the expected policy
        Hessian (DiCE-style). ``kind="dice"`` forces it.
    baseline : {"none", "shared_inner"}
        Replace R(tau) by R(tau) - V(s_0) using the inner loop's value function.
    sigma, pairs, standardize : ES perturbation scale, antithetic pairs, fitness z-scoring.
    epsilon, crn : finite-difference step and common random numbers switch.
    """

    def __init__(self, kind="sampling_corrected", lam=1.0, alpha=1.0, truncation=None,
                 hessian_mode="sampled", baseline="none", sigma=0.1, pairs=1,
                 standardize=True, epsilon=1e-2, crn=True):
        self.kind = kind
        self.lam = lam
        self.alpha = alpha
        self.truncation = truncation
        self.hessian_mode = hessian_mode
        self.baseline = baseline
        self.sigma = sigma
        self.pairs = pairs
        self.standardize = standardize
        self.epsilon = epsilon
        self.crn = crn

    def validate(self, n_updates=None):
        check_choice(self.kind, "kind", KINDS)
        check_unit_interval(self.lam, "lam")
        check_unit_interval(self.alpha, "alpha")
        check_choice(self.hessian_mode, "hessian_mode", HESSIAN_MODES)
        check_choice(self.baseline, "baseline", BASELINE_MODES)
        check_positive(self.sigma, "sigma")
        check_positive(self.pairs, "pairs", integer=True)
        check_positive(self.epsilon, "epsilon")
        if self.truncation is not None:
            check_positive(self.truncation, "truncation", integer=True)
            if n_updates is not None and self.truncation > n_updates:
                raise ConfigError(f"truncation {self.truncation} exceeds the "
                                  f"{n_updates} inner updates of a lifetime")
        return self

    @property
    def effective_hessian_mode(self):
        return "expected" if self.kind == "dice" else self.hessian_mode

    @property
    def uses_tape(self):
        return self.kind in ("sampling_corrected", "naive", "dice", "exp_discounted")

    def window(self, n_updates):
        return n_updates if self.truncation is None else min(self.truncation, n_updates)

    def assemble(self, tape):
        return assemble_meta_gradient(tape, self)

    def label(self):
        trunc = "full" if self.truncation is None else str(self.truncation)
        if self.kind in ("sampling_corrected", "dice"):
            return f"{self.kind}(lam={self.lam:g},T={trunc})"
        if self.kind == "exp_discounted":
            return f"exp_discounted(alpha={self.alpha:g},T={trunc})"
        return f"{self.kind}(T={trunc})"


# ---------------------------------------------------------------------------
# Jacobian propagation and the tape


def score_outer_product(J, theta, batch, ops, returns=None):
    """mean_tau (J . s_tau) s_tau R(tau): the spurious term of the expected Hessian."""
    s = ops.traj_score(theta, batch)                      # (B, N, d)
    r = batch.returns if returns is None else returns
    js = J @ np.swapaxes(s, -1, -2)                       # (B, d_eta, N)
    return (js * r[:, None, :]) @ s / s.shape[1]


def propagate_meta_jacobian(J, eta, theta, batch, ops, hessian_mode="sampled", check=True):
    """One step of J <- J + d Psi/d eta + J . d Psi/d theta.

    ``J . dPsi/dtheta`` is computed row by row as forward derivatives of the
    update along each row of J. In "expected" mode the score outer-product
    term of the expected policy Hessian is added, scaled by the step size.
    """
    out = J + ops.mixed_jvp(eta, theta, batch) + ops.update_jvp(eta, theta, batch, J)
    if hessian_mode == "expected" and np.any(batch.returns):
        lr = ops.learning_rate(eta, batch)
        out = out + lr[:, None, None] * score_outer_product(J, theta, batch, ops)
    if check:
        check_finite(out, "meta-Jacobian")
    return out


@dataclass
class LifetimeTape:
    """Per-step record of projected scores and returns for a block of lifetimes.

    ``start`` (B,) and ``length`` give the truncation window in batches. Steps
    outside the window are ignored by assembly.
    """

    start: np.ndarray
    length: int
    corrections: list = field(default_factory=list)    # each (B, d_eta)
    directs: list = field(default_factory=list)        # each (B, d_eta)
    mean_returns: list = field(default_factory=list)   # each (B,)
    batch_returns: list = field(default_factory=list)  # each (B, N)
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def arrays(self):
        return (np.stack(self.corrections, axis=1), np.stack(self.directs, axis=1),
                np.stack(self.mean_returns, axis=1))

    def subset(self, mask):
        """Tape restricted to the lifetimes selected by boolean ``mask``."""
        return LifetimeTape(self.start[mask], self.length,
                            [c[mask] for c in self.corrections], [d[mask] for d in self.directs],
                            [m[mask] for m in self.mean_returns],
                            [r[mask] for r in self.batch_returns], list(self.steps))


def record_step(tape, J, theta, batch, ops, returns=None, check=True):
    """Append step k: c = J . batch_score and the batch-averaged direct term."""
    r = batch.returns if returns is None else returns
    if hasattr(ops, "project_scores"):
        c, direct = ops.project_scores(J, theta, batch, r)
    else:
        s = ops.traj_score(theta, batch)
        c = (J @ ops.batch_score(theta, batch)[..., None])[..., 0]
        direct = ((J @ np.swapaxes(s, -1, -2)) * r[:, None, :]).sum(axis=-1) / r.shape[1]
    if check:
        check_finite(c, "correction score")
        check_finite(direct, "direct term")
    tape.corrections.append(c)
    tape.directs.append(direct)
    tape.mean_returns.append(r.mean(axis=1))
    tape.batch_returns.append(r)
    tape.steps.append(batch.step)
    return tape


def assemble_meta_gradient(tape, spec):
    """Reduce a tape to meta-gradient estimates, shape (B, d_eta).

    Returns sum_k [w * P_k * Rbar_k + direct_k] over the window, with the
    correction prefix P_k = sum_{start <= j < k} weight(k - j) c_j. The
    weight is ``lam`` (uniform) or ``alpha**(k - j)`` (exp_discounted).
    ``naive`` keeps only the direct terms.
    """
    if spec.kind not in ("sampling_corrected", "naive", "dice", "exp_discounted"):
        raise ConfigError(f"estimator kind {spec.kind!r} is not assembled from a tape")
    n = len(tape)
    start = np.asarray(tape.start)
    if np.any(start < 0) or np.any(start + tape.length > n):
        raise WindowOutOfRange(f"window [start, start + {tape.length}) exceeds tape of length {n}")
    C, D, M = tape.arrays()
    k = np.arange(n)
    inside = (k[None, :] >= start[:, None]) & (k[None, :] < start[:, None] + tape.length)
    C = np.where(inside[..., None], C, 0.0)
    D = np.where(inside[..., None], D, 0.0)
    M = np.where(inside, M, 0.0)

    exp = spec.kind == "exp_discounted"
    weight = 1.0 if exp else spec.lam
    decay = spec.alpha if exp else 1.0
    if spec.kind == "naive" or weight == 0.0 or decay == 0.0:
        terms = D
    else:
        P = np.zeros_like(C[:, 0])
        prefix = np.empty_like(C)
        for j in range(n):
            prefix[:, j] = P
            P = decay * (P + C[:, j])
        terms = weight * prefix * M[..., None] + D
    return terms.sum(axis=1)


# ---------------------------------------------------------------------------
# Black-box estimators


def es_meta_gradient(eta, objective, sigma, pairs, rng, standardize=True):
    """Antithetic ES: (1 / (2 pairs sigma)) sum_i [f(eta + s e_i) - f(eta - s e_i)] e_i.

    ``objective`` maps a population (P, d_eta) to fitness (P,).
    With ``standardize`` the fitness values are z-scored across the population
    first (the result is then a direction, not a gradient-scale estimate).
    """
    eta = np.asarray(eta, dtype=float)
    check_positive(sigma, "sigma")
    check_positive(pairs, "pairs", integer=True)
    eps = rng.standard_normal((pairs, eta.size))
    pop = np.concatenate([eta + sigma * eps, eta - sigma * eps])
    f = np.asarray(objective(pop), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("ES fitness evaluation returned a non-finite value")
    if standardize:
        sd = f.std()
        f = (f - f.mean()) / sd if sd > 0 else np.zeros_like(f)
    diff = f[:pairs] - f[pairs:]
    return diff @ eps / (2 * pairs * sigma)


def finite_difference_meta_gradient(eta, objective, epsilon, samples, rng, crn=True):
    """Per-coordinate central differences of a Monte-Carlo objective.

    ``objective(etas, samples, rng)`` returns the mean return of ``samples``
    lifetimes for each row of ``etas``, with all rows sharing the draws of
    ``rng``. With ``crn`` the +/- evaluations of each coordinate share one
    stream; otherwise every evaluation gets an independent stream.
    """
    eta = np.asarray(eta, dtype=float)
    check_positive(epsilon, "epsilon")
    check_positive(samples, "samples", integer=True)
    d = eta.size
    offsets = epsilon * np.eye(d)
    etas = np.concatenate([eta + offsets, eta - offsets])
    if crn:
        f = np.asarray(objective(etas, samples, rng), dtype=float)
    else:
        seeds = rng.integers(0, 2**63 - 1, size=2 * d)
        f = np.array([objective(e[None, :], samples, np.random.default_rng(s))[0]
                      for e, s in zip(etas, seeds)])
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("finite-difference objective returned a non-finite value")
    return (f[:d] - f[d:]) / (2 * epsilon)
