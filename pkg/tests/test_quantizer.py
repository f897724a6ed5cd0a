import math

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from quantlab.distributions import Gaussian, NormSpec, UniformBox, qmc_sample
from quantlab.quantizer import (
    Codebook,
    Init,
    OptimizeConfig,
    distortion,
    lloyd_step,
    optimize,
    pointwise_error,
    r_centroid,
    stationarity_residual,
)

U01 = UniformBox([0.0], [1.0])
FAST = OptimizeConfig(training_samples=2**16, restarts=2, max_lloyd_iters=2000, eval_samples=200_000)


def grid_centroid(x, r, step=1e-4):
    # oracle: minimize the 1-D objective on a fine grid
    grid = np.arange(x.min(), x.max() + step, step)
    cost = (np.abs(x[None, :] - grid[:, None]) ** r).sum(axis=1)
    return grid[np.argmin(cost)], cost.min()


# ---------------------------------------------------------------------------
# r_centroid
# ---------------------------------------------------------------------------


def test_r_centroid_examples():
    assert r_centroid([0.0, 1.0], 2.0)[0] == 0.5
    assert r_centroid([0.0, 0.0, 1.0], 1.0)[0] == pytest.approx(0.0, abs=1e-9)
    for r in (0.5, 1.0, 2.0, 3.7):
        np.testing.assert_array_equal(r_centroid([[0.3, -1.2]], r), [0.3, -1.2])
    with pytest.raises(ValueError):
        r_centroid(np.empty((0, 1)), 2.0)
    with pytest.raises(ValueError):
        r_centroid([0.0, 1.0], 0.0)


@pytest.mark.parametrize("r", [1.0, 1.5, 3.0])
@pytest.mark.parametrize("seed", range(4))
def test_r_centroid_matches_grid_search(r, seed):
    x = np.random.default_rng(seed).uniform(size=25) ** 2
    a = r_centroid(x, r)[0]
    g, gcost = grid_centroid(x, r)
    cost = float((np.abs(x - a) ** r).sum())
    assert cost <= gcost + 1e-9
    if r > 1:
        # strictly convex: the minimizer itself is pinned to grid resolution
        assert abs(a - g) <= 1e-4


@pytest.mark.parametrize("norm", list(NormSpec))
@pytest.mark.parametrize("r", [1.0, 2.0, 3.0])
def test_r_centroid_not_worse_than_mean_in_2d(norm, r):
    X = np.random.default_rng(7).normal(size=(200, 2))
    a = r_centroid(X, r, norm)
    obj = lambda p: float((norm(X - p) ** r).sum())  # noqa: E731
    assert obj(a) <= obj(X.mean(axis=0)) + 1e-12
    rng = np.random.default_rng(8)
    for _ in range(50):
        assert obj(a) <= obj(a + rng.normal(scale=1e-2, size=2)) + 1e-9


def test_r_centroid_weights():
    # integer weights behave like repeated points
    a = r_centroid([0.0, 1.0], 1.5, weights=[3.0, 1.0])
    b = r_centroid([0.0, 0.0, 0.0, 1.0], 1.5)
    assert a[0] == pytest.approx(b[0], abs=1e-10)


# ---------------------------------------------------------------------------
# lloyd_step
# ---------------------------------------------------------------------------


def test_lloyd_step_converges_to_uniform_fixed_point():
    grid = (np.arange(10_000) + 0.5) / 10_000
    cb = Codebook(np.array([[0.1], [0.9]]))
    for _ in range(60):
        cb = lloyd_step(cb, grid)
    np.testing.assert_allclose(cb.points[:, 0], [0.25, 0.75], atol=1e-3)
    again = lloyd_step(cb, grid)
    np.testing.assert_allclose(again.points, cb.points, atol=1e-12)


def test_lloyd_step_single_point_moves_to_mean():
    x = np.random.default_rng(0).uniform(size=999)
    cb = lloyd_step(Codebook(np.array([[0.5]])), x)
    assert cb.points[0, 0] == pytest.approx(x.mean(), abs=1e-15)
    with pytest.raises(ValueError):
        lloyd_step(cb, np.empty((0, 1)))


def test_lloyd_step_reseeds_empty_cell():
    x = np.linspace(0.0, 1.0, 101)
    cb = lloyd_step(Codebook(np.array([[0.5], [5.0]])), x)
    # the dead point lands on the training point farthest from the live one
    assert sorted(cb.points[:, 0].tolist()) == pytest.approx([0.0, 0.5])


# ---------------------------------------------------------------------------
# distortion
# ---------------------------------------------------------------------------


def test_distortion_examples():
    est = distortion(Codebook(np.array([[0.5]])), U01, 2.0, 1_000_000, seed=1)
    assert abs(est.value - 1 / 12) <= 3 * est.stderr
    dense = Codebook(np.linspace(0, 1, 1001).reshape(-1, 1))
    assert distortion(dense, U01, 2.0, 100_000, seed=2).value < 1e-6
    # each half-width cell contributes 1/16, so the total is 1/8
    exact = quad(lambda x: min(abs(x - 0.25), abs(x - 0.75)), 0, 1, points=[0.25, 0.5, 0.75])[0]
    assert exact == pytest.approx(1 / 8, abs=1e-12)
    est = distortion(Codebook(np.array([[0.25], [0.75]]), r=1.0), U01, 1.0, 1_000_000, seed=3)
    assert abs(est.value - exact) <= 3 * est.stderr
    with pytest.raises(ValueError):
        distortion(dense, U01, 2.0, 10)


def test_pointwise_error():
    cb = Codebook(np.array([[0.25], [0.75]]))
    np.testing.assert_allclose(pointwise_error(cb, [0.0, 0.5, 0.8]), [0.0625, 0.0625, 0.0025])
    np.testing.assert_allclose(pointwise_error(cb, [0.0, 0.8], r=1.0), [0.25, 0.05])


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def test_optimize_uniform_n1_and_n2():
    cb = optimize(U01, 1, 2.0, config=FAST)
    assert cb.points[0, 0] == pytest.approx(0.5, abs=1e-3)
    assert abs(cb.distortion - 1 / 12) <= 2 * cb.distortion_stderr
    cb = optimize(U01, 2, 2.0, config=FAST)
    np.testing.assert_allclose(cb.points[:, 0], [0.25, 0.75], atol=1e-2)
    assert abs(cb.distortion - 1 / 48) <= 2 * cb.distortion_stderr


def test_optimize_gaussian_n2():
    cb = optimize(Gaussian([0.0], [1.0]), 2, 2.0, config=FAST)
    s = math.sqrt(2 / math.pi)
    np.testing.assert_allclose(cb.points[:, 0], [-s, s], atol=1e-2)


@pytest.mark.parametrize("n", range(1, 9))
def test_optimize_matches_uniform_oracle(n):
    cfg = OptimizeConfig(training_samples=2**18, restarts=1, max_lloyd_iters=5000, eval_samples=1_000_000)
    cb = optimize(U01, n, 2.0, config=cfg)
    np.testing.assert_allclose(cb.points[:, 0], (2 * np.arange(1, n + 1) - 1) / (2 * n), atol=5e-3)
    assert cb.distortion == pytest.approx(1 / (12 * n * n), rel=0.01)
    assert cb.stationarity_residual <= 1e-6 * U01.scale


def test_optimize_2d_restart_dominance_and_monotone_history():
    model = UniformBox([0.0, 0.0], [1.0, 1.0])
    cfg = OptimizeConfig(training_samples=2**14, restarts=4, max_lloyd_iters=300, eval_samples=10_000)
    cb = optimize(model, 7, 2.0, config=cfg)
    prov = cb.provenance
    assert len(prov.restart_distortions) == 4
    hist = np.asarray(prov.history)
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])


def test_restart_dominance_on_training_objective():
    model = UniformBox([0.0, 0.0], [1.0, 1.0])
    cfg = OptimizeConfig(training_samples=2**13, restarts=5, max_lloyd_iters=200, eval_samples=1000)
    cb = optimize(model, 6, 2.0, config=cfg)
    assert cb.provenance.history[-1] <= min(cb.provenance.restart_distortions) * (1 + 1e-12)


def test_stationarity_residual_after_convergence():
    g = Gaussian([0.0], [1.0])
    cb = optimize(g, 5, 2.0, config=FAST)
    X = qmc_sample(g, 123, 2**16)
    # a different training draw moves points only by sampling noise
    assert stationarity_residual(cb, X) < 1e-2
    assert cb.stationarity_residual <= 1e-6 * g.scale


def test_optimize_is_deterministic():
    model = UniformBox([0.0, 0.0], [1.0, 1.0])
    cfg = OptimizeConfig(training_samples=2**12, restarts=2, max_lloyd_iters=100, eval_samples=1000, seed=11)
    a = optimize(model, 5, 2.0, config=cfg)
    b = optimize(model, 5, 2.0, config=cfg)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.distortion == b.distortion


def test_optimize_nonconvergence_is_flagged():
    cfg = OptimizeConfig(training_samples=2**12, restarts=1, max_lloyd_iters=1, eval_samples=1000,
                         init=Init.SAMPLE_SUBSET)
    cb = optimize(UniformBox([0.0, 0.0], [1.0, 1.0]), 9, 2.0, config=cfg)
    assert cb.provenance.converged is False


@pytest.mark.parametrize("init", list(Init))
def test_every_initializer_reaches_a_stationary_point(init):
    cfg = OptimizeConfig(training_samples=2**14, restarts=1, max_lloyd_iters=2000, eval_samples=1000, init=init)
    cb = optimize(U01, 4, 2.0, config=cfg)
    np.testing.assert_allclose(cb.points[:, 0], [0.125, 0.375, 0.625, 0.875], atol=5e-3)


def test_optimize_with_initial_codebook():
    cb2 = optimize(U01, 2, 2.0, config=FAST)
    cb3 = optimize(U01, 3, 2.0, config=FAST, initial=cb2.points)
    np.testing.assert_allclose(cb3.points[:, 0], [1 / 6, 1 / 2, 5 / 6], atol=5e-3)
    with pytest.raises(ValueError):
        optimize(U01, 1, 2.0, config=FAST, initial=cb2.points)
    with pytest.raises(ValueError):
        optimize(U01, 0)


@pytest.mark.parametrize(
    "kw",
    [
        {"training_samples": 0},
        {"restarts": 0},
        {"max_lloyd_iters": 0},
        {"rel_improvement_floor": 0.0},
        {"rel_improvement_floor": 1.0},
        {"training_design": "grid"},
        {"stationarity_tol": 0.0},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizeConfig(**kw)


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(np.empty((0, 1)))
    with pytest.raises(ValueError):
        Codebook(np.array([[0.1], [0.1]]))
    with pytest.raises(ValueError):
        Codebook(np.array([[0.1]]), r=0.0)
    cb = Codebook(np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]))
    assert (cb.n, cb.dimension) == (3, 2)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30), st.sampled_from([1.2, 2.0, 3.0]))
def test_r_centroid_lies_in_convex_hull_1d(xs, r):
    a = r_centroid(xs, r)[0]
    assert min(xs) - 1e-9 <= a <= max(xs) + 1e-9
