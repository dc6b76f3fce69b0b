from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagrad._validation import DegenerateCosine, NonFiniteError
from metagrad.estimators import MetaGradientEstimator as M
from metagrad.measurement import (
    EvaluationPoint,
    default_specs,
    estimate_bias,
    estimate_variance,
    grid_points,
    heatmap_returns,
    point_bias,
    sweep_frontier,
)
from metagrad.problems import BanditProblem


def small_problem():
    return BanditProblem(n_arms=5, lifetime=6, batch_size=3, buckets=(0, 2), arm_low=-2.0,
                         arm_high=1.0, noise_sd=0.5)


def test_bias_zero_when_samples_equal_truth(rng):
    truth = [np.array([1.0, 2.0]), np.array([-1.0, 0.5]), np.array([0.3, 0.3])]
    pts = [EvaluationPoint(np.zeros(2), t, np.tile(t, (5, 1))) for t in truth]
    for metric in ("euclidean",):
        mean, sd, excluded = estimate_bias(pts, metric, 1000, rng)
        assert mean == 0 and sd == 0 and excluded == 0
    mean, sd, _ = estimate_bias(pts, "negcosine", 1000, rng)
    assert mean == pytest.approx(-1.0) and sd == pytest.approx(0.0, abs=1e-15)


def test_single_point_bootstrap_sd_zero(rng):
    pt = EvaluationPoint(np.zeros(2), np.ones(2), rng.normal(size=(10, 2)))
    assert estimate_bias([pt], "euclidean", 100, rng)[1] == 0.0


def test_bootstrap_single_resample_is_resample_mean():
    rng_pts = np.random.default_rng(0)
    pts = [EvaluationPoint(np.zeros(1), np.zeros(1), rng_pts.normal(size=(4, 1)))
           for _ in range(6)]
    values = np.array([point_bias(p.mean, p.true_gradient) for p in pts])
    mean, sd, _ = estimate_bias(pts, "euclidean", 1, np.random.default_rng(9))
    idx = np.random.default_rng(9).integers(0, 6, size=(1, 6))
    assert mean == pytest.approx(values.mean())
    assert sd == 0.0
    assert values[idx].mean() == pytest.approx(values[idx].mean(axis=1)[0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_bias_invariant_to_ordering(seed):
    r = np.random.default_rng(seed)
    pts = [EvaluationPoint(np.zeros(2), r.normal(size=2), r.normal(size=(5, 2)))
           for _ in range(4)]
    a = estimate_bias(pts, "euclidean", 200, np.random.default_rng(1))[0]
    perm = [EvaluationPoint(p.eta, p.true_gradient, p.samples[::-1]) for p in pts[::-1]]
    b = estimate_bias(perm, "euclidean", 200, np.random.default_rng(1))[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_degenerate_cosine_excluded(rng):
    with pytest.raises(DegenerateCosine):
        point_bias(np.zeros(2), np.ones(2), "negcosine")
    pts = [EvaluationPoint(np.zeros(2), np.ones(2), np.zeros((3, 2))),
           EvaluationPoint(np.zeros(2), np.ones(2), np.ones((3, 2)))]
    mean, sd, excluded = estimate_bias(pts, "negcosine", 10, rng)
    assert excluded == 1 and mean == pytest.approx(-1.0)


def test_evaluation_point_validation():
    with pytest.raises(ValueError):
        EvaluationPoint(np.zeros(1), np.zeros(1), np.zeros((1, 1)))
    with pytest.raises(NonFiniteError):
        EvaluationPoint(np.zeros(1), np.array([np.nan]), np.zeros((3, 1)))


def test_variance_examples(rng):
    assert estimate_variance(np.ones((50, 3))) == 0.0
    v = estimate_variance(rng.standard_normal((10**4, 2)))
    assert abs(v - 2) < 0.1


def test_grid_points():
    pts = grid_points([1.0, 2.0], 0.5, 3)
    assert pts.shape == (9, 2)
    np.testing.assert_allclose(pts[0], [0.5, 1.5])
    np.testing.assert_allclose(pts.mean(axis=0), [1.0, 2.0])
    np.testing.assert_allclose(grid_points([0.0], 1.0, 5)[:, 0], [-2, -1, 0, 1, 2])


def test_default_specs():
    specs = default_specs([0.0, 1.0], [1, 5], 5, include_es=True, include_dice=True)
    labels = [s.label() for s in specs]
    assert "sampling_corrected(lam=1,T=full)" in labels
    assert "es(T=full)" in labels and "dice(lam=1,T=full)" in labels
    assert len(labels) == len(set(labels))


def test_sweep_single_cell_matches_direct_computation():
    p = small_problem()
    spec = M(truncation=2)
    pts = grid_points([0.5, 0.8], 0.2, 2)
    truths = [np.array([0.1, -0.1])] * len(pts)
    rec = sweep_frontier(p, [spec], pts, 40, seed=3, truths=truths, n_boot=200)[0]
    from metagrad.measurement import bandit_samples
    from metagrad.rng import stream

    samples = [bandit_samples(p, eta, [spec], 40, 3, keys=("point", i))[spec.label()][0]
               for i, eta in enumerate(pts)]
    assert rec.total_variance == pytest.approx(np.mean([estimate_variance(s) for s in samples]))
    ep = [EvaluationPoint(e, t, s) for e, t, s in zip(pts, truths, samples)]
    mean, sd, _ = estimate_bias(ep, "euclidean", 200, stream(3, "bootstrap"))
    assert rec.bias_mean == mean and rec.bias_bootstrap_sd == sd


def test_sweep_deterministic_across_threads():
    p = small_problem()
    specs = [M(), M(kind="naive", truncation=2), M(kind="es", standardize=False)]
    pts = grid_points([0.5, 0.8], 0.2, 2)
    a = sweep_frontier(p, specs, pts, 1200, seed=4)
    with ThreadPoolExecutor(4) as pool:
        b = sweep_frontier(p, specs, pts, 1200, seed=4, pool=pool)
    for x, y in zip(a, b):
        assert x.per_point_variance == y.per_point_variance


def test_sweep_empty_specs_rejected():
    with pytest.raises(ValueError):
        sweep_frontier(small_problem(), [], grid_points([0.5, 0.5], 0.1, 1), 10, 0)


def test_heatmap_flat_for_symmetric_bandit():
    p = BanditProblem(n_arms=4, lifetime=5, batch_size=2, buckets=(0, 2), arm_low=0.0,
                      arm_high=0.0, noise_sd=0.0)
    axes = [np.array([0.5, 2.0]), np.array([0.5, 2.0])]
    h = heatmap_returns(p, axes, 50, seed=0)
    np.testing.assert_allclose(h, 1.0, atol=1e-12)


def test_heatmap_cells_equal_independent_evaluations():
    from metagrad.rng import stream

    p = small_problem()
    axes = [np.array([0.5, 2.0]), np.array([0.3, 1.0])]
    h = heatmap_returns(p, axes, 30, seed=2)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    direct = p.objective(mesh, 30, stream(2, "heatmap", 0))
    np.testing.assert_allclose(h.ravel(), direct, rtol=1e-12)


def test_untruncated_bias_vanishes_on_bandit():
    from metagrad.measurement import bandit_samples, fd_truth

    p = small_problem()
    eta = np.array([0.8, 0.5])
    est = bandit_samples(p, eta, [M()], 20000, seed=1)[M().label()][0]
    truth, truth_se = fd_truth(p.objective, eta, 0.05, 40000, seed=1)
    se = np.sqrt(est.var(axis=0, ddof=1) / len(est) + truth_se**2)
    assert np.all(np.abs(est.mean(axis=0) - truth) < 3 * se)
