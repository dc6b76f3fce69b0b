"""Bias and variance measurement for meta-gradient estimators.

Bias at an evaluation point is a distance between the mean of many estimator
samples and a ground-truth gradient; its spread across the landscape is
summarized by bootstrapping over points. Variance is the trace of the sample
covariance of the estimator samples.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import DegenerateCosine, NonFiniteError, check_positive
from .estimators import MetaGradientEstimator
from .rng import chunk_sizes, stream

CHUNK = 500


@dataclass
class EvaluationPoint:
    eta: np.ndarray
    true_gradient: np.ndarray
    samples: np.ndarray        # (n, d_eta)

    def __post_init__(self):
        self.samples = np.atleast_2d(self.samples)
        if len(self.samples) < 2:
            raise ValueError("an evaluation point needs at least 2 estimator samples")
        if not np.all(np.isfinite(self.true_gradient)):
            raise NonFiniteError("true gradient is not finite")

    @property
    def mean(self):
        return self.samples.mean(axis=0)


@dataclass
class BiasVarianceRecord:
    label: str
    bias_mean: float = np.nan
    bias_bootstrap_sd: float = np.nan
    neg_cosine_bias: float = np.nan
    neg_cosine_bootstrap_sd: float = np.nan
    total_variance: float = np.nan
    aborted: int = 0
    excluded_points: int = 0
    per_point_variance: list = field(default_factory=list)

    def metrics(self):
        return {"bias_mean": self.bias_mean, "bias_bootstrap_sd": self.bias_bootstrap_sd,
                "neg_cosine_bias": self.neg_cosine_bias,
                "neg_cosine_bootstrap_sd": self.neg_cosine_bootstrap_sd,
                "total_variance": self.total_variance}


def point_bias(estimate, truth, metric="euclidean"):
    estimate, truth = np.asarray(estimate, float), np.asarray(truth, float)
    if metric == "euclidean":
        return float(np.linalg.norm(estimate - truth))
    if metric == "negcosine":
        a, b = np.linalg.norm(estimate), np.linalg.norm(truth)
        if a < 1e-12 or b < 1e-12:
            raise DegenerateCosine("cosine similarity undefined for a near-zero vector")
        return float(-(estimate @ truth) / (a * b))
    raise ValueError(f"unknown bias metric {metric!r}")


def estimate_bias(points, metric="euclidean", n_boot=10000, rng=None):
    """Average bias over points and its bootstrap sd over resampled point sets.

    Returns ``(mean, sd, excluded)``; points whose cosine is undefined are
    dropped and counted in ``excluded``.
    """
    values, excluded = [], 0
    for p in points:
        try:
            values.append(point_bias(p.mean, p.true_gradient, metric))
        except DegenerateCosine:
            excluded += 1
    if not values:
        return np.nan, np.nan, excluded
    values = np.array(values)
    if len(values) == 1:
        return float(values[0]), 0.0, excluded
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(values.mean()), float(values[idx].mean(axis=1).std()), excluded


def estimate_variance(samples):
    """Sum over coordinates of the unbiased sample variance."""
    samples = np.atleast_2d(samples)
    if len(samples) < 2:
        return 0.0
    return float(samples.var(axis=0, ddof=1).sum())


def grid_points(center, spacing, n):
    """n points per axis on a square grid centered at ``center``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    offsets = (np.arange(n) - (n - 1) / 2) * spacing
    axes = [c + offsets for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# Sampling estimators on a problem


def _chunked(fn, n, seed, keys, pool=None):
    """Run ``fn(size, rng) -> (samples, ok)`` over fixed-size chunks in order."""
    jobs = [(size, stream(seed, *keys, i)) for i, size in enumerate(chunk_sizes(n, CHUNK))]
    results = list(pool.map(lambda a: fn(*a), jobs)) if pool else [fn(*a) for a in jobs]
    return results


def bandit_samples(problem, eta, specs, n, seed, keys=(), pool=None):
    """Estimator samples for ``specs`` at ``eta``; returns ``{label: (samples, aborted)}``.

    Tape specs sharing a truncation and Hessian mode reuse one set of lifetimes.
    """
    groups = {}
    for s in specs:
        s.validate(problem.n_updates)
        if s.uses_tape:
            groups.setdefault(("tape", s.truncation, s.effective_hessian_mode), []).append(s)
        elif s.kind == "es":
            groups.setdefault(("es", s.truncation, s.sigma), []).append(s)
        else:
            raise ValueError(f"{s.kind} is a ground-truth method, not a sampled estimator")
    out = {}
    for g, members in groups.items():
        gkeys = tuple(keys) + (f"{g[0]}-{g[1]}-{g[2]}",)
        if g[0] == "tape":
            def fn(size, rng, members=members, g=g):
                return problem.tape_samples(eta, members, size, rng, g[1], g[2])
            res = _chunked(fn, n, seed, gkeys, pool)
            for s in members:
                lab = s.label()
                x = np.concatenate([r[0][lab] for r in res])
                ok = np.concatenate([r[1] for r in res])
                out[lab] = (x[ok], int((~ok).sum()))
        else:
            def fn(size, rng, g=g):
                return problem.es_samples(eta, size, rng, g[2], g[1])
            res = _chunked(fn, n, seed, gkeys, pool)
            x = np.concatenate([r[0] for r in res])
            ok = np.concatenate([r[1] for r in res])
            for s in members:
                out[s.label()] = (x[ok], int((~ok).sum()))
    return out


def fd_truth(objective, eta, epsilon, n, seed, keys=(), pool=None):
    """CRN central differences of ``objective(etas, size, rng)`` pooled over chunks.

    Returns ``(gradient, standard_error)``; each chunk evaluates all 2 d rows
    on one shared block of draws.
    """
    check_positive(epsilon, "epsilon")
    check_positive(n, "samples", integer=True)
    eta = np.asarray(eta, dtype=float)
    d = eta.size
    etas = np.concatenate([eta + epsilon * np.eye(d), eta - epsilon * np.eye(d)])

    def fn(size, rng):
        f = objective(etas, size, rng)
        return (f[:d] - f[d:]) / (2 * epsilon), size

    res = _chunked(fn, n, seed, tuple(keys) + ("fd",), pool)
    g = np.array([r[0] for r in res])
    w = np.array([r[1] for r in res], dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("finite-difference objective returned a non-finite value")
    mean = (w[:, None] * g).sum(axis=0) / w.sum()
    if len(g) > 1:
        se = np.sqrt((w[:, None] * (g - mean) ** 2).sum(axis=0) / w.sum() / (len(g) - 1))
    else:
        se = np.full(d, np.nan)
    return mean, se


def default_specs(lambdas, truncations, n_updates, include_es=True, include_dice=True,
                  sigma=0.1):
    """Frontier grid: lambda x truncation for the corrected family, plus ES and DiCE."""
    specs = []
    for T in truncations:
        t = None if T >= n_updates else int(T)
        for lam in lambdas:
            specs.append(MetaGradientEstimator(kind="sampling_corrected", lam=lam, truncation=t))
        if include_dice:
            specs.append(MetaGradientEstimator(kind="dice", truncation=t))
        if include_es:
            specs.append(MetaGradientEstimator(kind="es", truncation=t, sigma=sigma,
                                               standardize=False))
    return specs


def sweep_frontier(problem, specs, points, n_samples, seed, truths=None, n_boot=10000,
                   pool=None):
    """One BiasVarianceRecord per spec, in spec order.

    ``truths`` (one gradient per point) enables the bias columns; variance is
    averaged over points.
    """
    if not specs:
        raise ValueError("empty estimator grid")
    per_spec = {s.label(): [] for s in specs}
    aborted = {s.label(): 0 for s in specs}
    for i, eta in enumerate(points):
        res = bandit_samples(problem, eta, specs, n_samples, seed, keys=("point", i), pool=pool)
        for lab, (x, bad) in res.items():
            per_spec[lab].append(x)
            aborted[lab] += bad
    records = []
    for s in specs:
        lab = s.label()
        rec = BiasVarianceRecord(lab, aborted=aborted[lab])
        rec.per_point_variance = [estimate_variance(x) for x in per_spec[lab]]
        rec.total_variance = float(np.mean(rec.per_point_variance))
        if truths is not None:
            pts = [EvaluationPoint(eta, t, x) for eta, t, x in zip(points, truths, per_spec[lab])]
            boot = stream(seed, "bootstrap")
            rec.bias_mean, rec.bias_bootstrap_sd, _ = estimate_bias(pts, "euclidean", n_boot, boot)
            boot = stream(seed, "bootstrap")
            rec.neg_cosine_bias, rec.neg_cosine_bootstrap_sd, rec.excluded_points = \
                estimate_bias(pts, "negcosine", n_boot, boot)
        records.append(rec)
    return records


def heatmap_returns(problem, axes, n, seed, pool=None):
    """Mean lifetime return at every grid cell center, all cells on shared draws.

    ``axes`` is one array of cell-center values per meta-parameter; returns an
    array of shape ``tuple(len(a) for a in axes)``.
    """
    mesh = np.meshgrid(*[np.asarray(a, float) for a in axes], indexing="ij")
    etas = np.stack([m.ravel() for m in mesh], axis=1)

    def fn(size, rng):
        return problem.objective(etas, size, rng), size

    res = _chunked(fn, n, seed, ("heatmap",), pool)
    w = np.array([r[1] for r in res], dtype=float)
    vals = (np.array([r[0] for r in res]) * w[:, None]).sum(axis=0) / w.sum()
    return vals.reshape(mesh[0].shape)


def bootstrap_mean_sd(samples, n_boot, rng, block=500):
    """Bootstrap sd of the sample mean (per coordinate), resampling in blocks."""
    samples = np.atleast_2d(samples)
    n = len(samples)
    means = []
    for size in chunk_sizes(n_boot, block):
        idx = rng.integers(0, n, size=(size, n))
        means.append(samples[idx].mean(axis=1))
    return np.concatenate(means).std(axis=0)


@dataclass
class BaselineComparison:
    eta: np.ndarray
    truth: np.ndarray
    truth_se: np.ndarray
    means: dict          # baseline mode -> mean estimate
    bootstrap_sd: dict   # baseline mode -> bootstrap sd of the mean
    variances: dict      # baseline mode -> total variance
    aborted: int = 0

    def deviation(self, mode):
        """|mean - truth| in units of the combined estimator and oracle uncertainty."""
        sd = np.sqrt(self.bootstrap_sd[mode] ** 2 + self.truth_se ** 2)
        return np.abs(self.means[mode] - self.truth) / sd


def compare_baselines(problem, spec, etas, n_samples, truth_samples, truth_epsilon, n_batches,
                      seed, n_boot=10000, pool=None, modes=("none", "shared_inner")):
    """Bias and variance of ``spec`` with and without the shared inner-loop baseline."""
    out = []
    for i, eta in enumerate(etas):
        eta = np.atleast_1d(np.asarray(eta, dtype=float))

        def fn(size, rng, eta=eta):
            return problem.baseline_samples(eta, spec, size, rng, n_batches, modes)

        res = _chunked(fn, n_samples, seed, ("baseline", i), pool)
        ok = np.concatenate([r[1] for r in res])
        samples = {m: np.concatenate([r[0][m] for r in res])[ok] for m in modes}

        def objective(etas_, size, rng):
            return problem.objective(etas_, size, rng, n_batches)

        truth, truth_se = fd_truth(objective, eta, truth_epsilon, truth_samples, seed,
                                   keys=("truth", i), pool=pool)
        boot = stream(seed, "bootstrap", i)
        sds = {m: bootstrap_mean_sd(samples[m], n_boot, boot) for m in modes}
        out.append(BaselineComparison(eta, truth, truth_se,
                                      {m: samples[m].mean(axis=0) for m in modes}, sds,
                                      {m: estimate_variance(samples[m]) for m in modes},
                                      int((~ok).sum())))
    return out
