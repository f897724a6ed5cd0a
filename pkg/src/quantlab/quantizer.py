"""Stationary level-n codebooks by multi-start Lloyd iteration.

The optimizer returns the best stationary codebook it finds over several
restarts; it is a fixed point of the Lloyd map on its training sample, not a
certified global optimum.  Distortions attached to a codebook always come from
an evaluation sample drawn independently of the training sample.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq, minimize

from .distributions import DensityModel, NormSpec, as_points, qmc_sample, sample
from .mc import Estimate, derive_rng, derive_seed
from .voronoi import assign_with_distance

log = logging.getLogger(__name__)


class Init(str, Enum):
    SPLITTING = "SplittingFromLowerLevel"
    KMEANS_PP = "KmeansPlusPlusStyle"
    SAMPLE_SUBSET = "SampleSubset"


@dataclass(frozen=True)
class OptimizeConfig:
    training_samples: int = 200_000
    restarts: int = 8
    max_lloyd_iters: int = 200
    rel_improvement_floor: float = 1e-7
    init: Init = Init.KMEANS_PP
    seed: int = 0
    eval_samples: int = 1_000_000
    # "qmc" (low-discrepancy, see distributions.qmc_sample) or "iid"
    training_design: str = "qmc"
    # largest codepoint move under one Lloyd step, relative to the model scale
    stationarity_tol: float = 1e-8
    # momentum extrapolation with restart-on-increase; plain Lloyd when False
    accelerate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "init", Init(self.init))
        for name in ("training_samples", "restarts", "max_lloyd_iters", "eval_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.rel_improvement_floor < 1:
            raise ValueError("rel_improvement_floor must lie in (0, 1)")
        if self.training_design not in ("qmc", "iid"):
            raise ValueError("training_design must be 'qmc' or 'iid'")
        if self.stationarity_tol <= 0:
            raise ValueError("stationarity_tol must be positive")


@dataclass(frozen=True)
class Provenance:
    init: str
    restarts: int
    lloyd_iterations: int
    training_samples: int
    seed: int
    converged: bool
    reseed_events: int = 0
    restart_distortions: tuple = ()
    restart_iterations: tuple = ()
    history: tuple = ()


@dataclass(frozen=True, eq=False)
class Codebook:
    """A level-n codebook with the order and norm it was built for."""

    points: np.ndarray
    r: float = 2.0
    norm: NormSpec = NormSpec.EUCLIDEAN
    distortion: float = float("nan")
    distortion_stderr: float = float("nan")
    stationarity_residual: float = float("nan")
    provenance: Provenance | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a codebook needs at least one point")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("codebook points must be pairwise distinct")
        if self.r <= 0:
            raise ValueError("r must be positive")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "norm", NormSpec.parse(self.norm))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------------------
# r-centroids
# ---------------------------------------------------------------------------


def _objective(points, a, r, norm, weights):
    return float(np.sum(weights * norm(points - a) ** r))


def _centroid_1d(x: np.ndarray, r: float, w: np.ndarray) -> float:
    if r == 1.0:
        order = np.argsort(x, kind="stable")
        cw = np.cumsum(w[order])
        k = int(np.searchsorted(cw, 0.5 * cw[-1]))
        return float(x[order][k])
    if r < 1.0:
        # concave between data points: the minimum sits on a data point
        cand = np.unique(x)
        vals = [float(np.sum(w * np.abs(x - c) ** r)) for c in cand]
        return float(cand[int(np.argmin(vals))])

    def grad(a):
        t = a - x
        return float(np.sum(w * np.sign(t) * np.abs(t) ** (r - 1)))

    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo
    return float(brentq(grad, lo, hi, xtol=1e-15 * max(1.0, abs(lo), abs(hi)), rtol=4 * np.finfo(float).eps, maxiter=500))


def r_centroid(points, r: float, norm=NormSpec.EUCLIDEAN, weights=None, max_iter: int = 500) -> np.ndarray:
    """Minimizer of ``sum_i w_i |x_i - a|^r`` over ``a``.

    Closed form for the Euclidean ``r = 2`` mean and the 1-D median; bracketing
    root-finding on the derivative in 1-D for ``r > 1``; iteratively reweighted
    means (Euclidean, ``r < 2``) or quasi-Newton / Powell search otherwise, always
    started from the mean and never worse than it.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValueError("r_centroid of an empty point set")
    if r <= 0:
        raise ValueError("r must be positive")
    norm = NormSpec.parse(norm)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if X.shape[0] == 1:
        return X[0].copy()
    mean = (w[:, None] * X).sum(axis=0) / w.sum()
    if r == 2.0 and norm is NormSpec.EUCLIDEAN:
        return mean
    d = X.shape[1]
    if d == 1:
        return np.array([_centroid_1d(X[:, 0], r, w)])
    if norm is NormSpec.L1 and r == 1.0:
        return np.array([_centroid_1d(X[:, k], 1.0, w) for k in range(d)])

    scale = float(np.max(np.ptp(X, axis=0))) or 1.0
    if norm is NormSpec.EUCLIDEAN and r < 2.0:
        a = mean
        for _ in range(max_iter):
            dist = np.linalg.norm(X - a, axis=1)
            dist = np.maximum(dist, 1e-12 * scale)
            ww = w * dist ** (r - 2)
            a_new = (ww[:, None] * X).sum(axis=0) / ww.sum()
            if np.linalg.norm(a_new - a) <= 1e-13 * scale:
                a = a_new
                break
            a = a_new
        best = a
    elif norm is NormSpec.EUCLIDEAN:

        def fun(a):
            diff = a - X
            dist = np.linalg.norm(diff, axis=1)
            val = np.sum(w * dist**r)
            g = r * np.sum((w * dist ** (r - 2))[:, None] * diff, axis=0)
            return val, g

        res = minimize(fun, mean, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": max_iter})
        best = res.x
    else:
        res = minimize(lambda a: _objective(X, a, r, norm, w), mean, method="Powell",
                       options={"xtol": 1e-12 * scale, "ftol": 1e-15, "maxiter": max_iter * d})
        best = res.x
    if _objective(X, best, r, norm, w) > _objective(X, mean, r, norm, w):
        return mean
    return np.asarray(best, dtype=float)


# ---------------------------------------------------------------------------
# Lloyd iteration
# ---------------------------------------------------------------------------


def _reseed(points: np.ndarray, empty: np.ndarray, X: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Move dead codepoints onto the training points farthest from the codebook."""
    points = points.copy()
    order = np.argsort(-dist, kind="stable")
    used = set(map(tuple, points[~empty]))
    k = 0
    for j in np.flatnonzero(empty):
        while k < order.size and tuple(X[order[k]]) in used:
            k += 1
        if k >= order.size:
            break
        points[j] = X[order[k]]
        used.add(tuple(points[j]))
        log.info("re-seeded empty cell %d at distance %.3g", j, dist[order[k]])
        k += 1
    return points


def lloyd_step(codebook: Codebook, training) -> Codebook:
    """One Lloyd update: assign to nearest codepoints, move each to its cell's r-centroid."""
    X = as_points(training, codebook.dimension)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    labels, dist = assign_with_distance(codebook, X)
    n = codebook.n
    new = codebook.points.copy()
    counts = np.bincount(labels, minlength=n)
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for j in range(n):
        if counts[j]:
            new[j] = r_centroid(X[order[bounds[j]:bounds[j + 1]]], codebook.r, codebook.norm)
    empty = counts == 0
    if empty.any():
        new = _reseed(new, empty, X, dist)
    return replace(codebook, points=new, distortion=float("nan"), distortion_stderr=float("nan"),
                   stationarity_residual=float("nan"))


class _GenericTrainer:
    """Lloyd map on a fixed training sample, any dimension and norm."""

    def __init__(self, X: np.ndarray, r: float, norm: NormSpec):
        self.X = np.ascontiguousarray(X)
        self.r, self.norm = r, norm
        self.reseeds = 0

    def distortion(self, points):
        _, dist = assign_with_distance(points, self.X, self.norm)
        return float(np.mean(dist**self.r))

    def step(self, points):
        """Return ``(T(points), distortion of points)``."""
        X, r, norm = self.X, self.r, self.norm
        labels, dist = assign_with_distance(points, X, norm)
        D = float(np.mean(dist * dist)) if r == 2.0 else float(np.mean(dist**r))
        n, d = points.shape
        counts = np.bincount(labels, minlength=n)
        new = points.copy()
        if r == 2.0 and norm is NormSpec.EUCLIDEAN:
            nz = counts > 0
            for k in range(d):
                s = np.bincount(labels, weights=X[:, k], minlength=n)
                new[nz, k] = s[nz] / counts[nz]
        else:
            order = np.argsort(labels, kind="stable")
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for j in np.flatnonzero(counts):
                new[j] = r_centroid(X[order[bounds[j]:bounds[j + 1]]], r, norm)
        empty = counts == 0
        if empty.any():
            self.reseeds += int(empty.sum())
            new = _reseed(new, empty, X, dist)
        return new, D


class _LineTrainer:
    """Lloyd map in one dimension on the interpolated training measure.

    The sorted sample is turned into a mixture of uniform laws on the gaps
    between consecutive order statistics (a piecewise-linear empirical CDF).
    Cell masses and moments are then continuous in the cell boundaries, which
    removes the spurious fixed points the raw empirical measure has once no
    boundary crosses a sample point.  Moments come from extended-precision
    prefix sums, so r in {1, 2} costs O(n log N) per step.
    """

    def __init__(self, X: np.ndarray, r: float):
        x = np.sort(X[:, 0])
        if x.size < 2 or x[0] == x[-1]:
            raise ValueError("need at least two distinct training points")
        self.x = x
        self.r = r
        self.N = x.size
        xl = x.astype(np.longdouble)
        self.w = np.longdouble(1) / (self.N - 1)
        a, b = xl[:-1], xl[1:]
        zero = np.array([0], dtype=np.longdouble)
        self.M1 = np.concatenate([zero, np.cumsum(self.w * (a + b) / 2)])
        self.M2 = np.concatenate([zero, np.cumsum(self.w * (a * a + a * b + b * b) / 3)])
        self.xl = xl
        self.reseeds = 0

    def _cum(self, t):
        """Mass, first and second moment of the interpolated measure below ``t``."""
        t = np.clip(np.asarray(t, dtype=float), self.x[0], self.x[-1])
        k = np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, self.N - 2)
        lo, hi = self.xl[k], self.xl[k + 1]
        tl = t.astype(np.longdouble)
        width = hi - lo
        f = np.where(width > 0, (tl - lo) / np.where(width > 0, width, 1), 0)
        wf = self.w * f
        c0 = k * self.w + wf
        c1 = self.M1[k] + wf * (lo + tl) / 2
        c2 = self.M2[k] + wf * (lo * lo + lo * tl + tl * tl) / 3
        return c0, c1, c2

    def _quantile(self, q):
        q = np.asarray(q, dtype=np.longdouble)
        k = np.clip(np.floor(q / self.w).astype(np.int64), 0, self.N - 2)
        frac = (q - k * self.w) / self.w
        return np.asarray(self.xl[k] + frac * (self.xl[k + 1] - self.xl[k]), dtype=float)

    def _bounds(self, a_sorted):
        mids = 0.5 * (a_sorted[:-1] + a_sorted[1:])
        return np.concatenate([[self.x[0]], mids, [self.x[-1]]])

    def _cells(self, a):
        b = self._bounds(a)
        c0, c1, c2 = self._cum(b)
        al = a.astype(np.longdouble)
        m0, m1 = np.diff(c0), np.diff(c1)
        if self.r == 2.0:
            cost = np.diff(c2) - 2 * al * m1 + al * al * m0
        elif self.r == 1.0:
            ca0, ca1, _ = self._cum(a)
            below0, below1 = ca0 - c0[:-1], ca1 - c1[:-1]
            above0, above1 = c0[1:] - ca0, c1[1:] - ca1
            # a codepoint outside its own cell only happens transiently
            cost = np.abs(al * below0 - below1) + np.abs(above1 - al * above0)
        else:
            cost = np.array([self._slow_cost(a[k], b[k], b[k + 1]) for k in range(a.size)], dtype=np.longdouble)
        return b, c0, m0, m1, np.maximum(cost, 0)

    def _slow_cost(self, a, lo, hi):
        # midpoint rule on the interpolated measure, adequate for r not in {1, 2}
        xs = self._quantile(np.linspace(float(self._cum(lo)[0]), float(self._cum(hi)[0]), 4097))
        mid = 0.5 * (xs[:-1] + xs[1:])
        mass = float(self._cum(hi)[0] - self._cum(lo)[0])
        return mass * float(np.mean(np.abs(mid - a) ** self.r)) if mass > 0 else 0.0

    def distortion(self, points):
        a = np.sort(points[:, 0])
        return float(self._cells(a)[4].sum())

    def step(self, points):
        perm = np.argsort(points[:, 0], kind="stable")
        a = points[perm, 0]
        b, c0, m0, m1, cost = self._cells(a)
        D = float(cost.sum())
        new = a.copy()
        nz = m0 > 0
        if self.r == 2.0:
            new[nz] = np.asarray(m1[nz] / m0[nz], dtype=float)
        elif self.r == 1.0:
            new[nz] = self._quantile(0.5 * (c0[:-1] + c0[1:])[nz])
        else:
            for k in np.flatnonzero(nz):
                lo, hi = b[k], b[k + 1]
                xs = self._quantile(np.linspace(float(c0[k]), float(c0[k + 1]), 4097))
                new[k] = _centroid_1d(0.5 * (xs[:-1] + xs[1:]), self.r, np.ones(4096))
        out = np.empty_like(points)
        out[perm, 0] = new
        if not nz.all():
            self.reseeds += int((~nz).sum())
            cand = np.concatenate([b, [self.x[0], self.x[-1]]])[:, None]
            _, dist = assign_with_distance(points, cand)
            empty = np.zeros(points.shape[0], dtype=bool)
            empty[perm[~nz]] = True
            out = _reseed(out, empty, cand, dist)
        return out, D


def _make_trainer(X, r, norm):
    if X.shape[1] == 1:
        return _LineTrainer(X, r)
    return _GenericTrainer(X, r, norm)


def _lloyd(trainer, init: np.ndarray, max_iters: int, floor: float, xtol: float, accelerate: bool):
    """Iterate the Lloyd map; returns (points, training distortion, iterations, converged, history).

    With ``accelerate`` the map is applied at a momentum-extrapolated point; an
    extrapolation that raises the distortion is discarded and momentum reset,
    so the recorded distortion sequence never increases.  Stops once the relative
    improvement is below ``floor`` and no codepoint moves more than ``xtol``.
    """
    x = init.copy()
    x_prev = x
    y = x
    t = 1.0
    hist: list[float] = []
    converged = False
    momentum = accelerate
    it = 0
    while it < max_iters:
        Ty, Dy = trainer.step(y)
        it += 1
        if momentum and hist and Dy > hist[-1]:
            y, t = x, 1.0
            Ty, Dy = trainer.step(y)
            it += 1
        improvement = (hist[-1] - Dy) / Dy if hist and Dy > 0 else (0.0 if hist else math.inf)
        hist.append(Dy)
        moved = float(np.max(np.abs(Ty - y)))
        if Dy == 0.0 or (improvement < floor and moved <= xtol):
            if not momentum:
                converged = True
                x = y
                break
            # finish with plain Lloyd so the stopping point is a fixed point of the map
            momentum = False
        x_prev, x = x, Ty
        if momentum:
            t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            beta = (t - 1) / t_next
            t = t_next
            y = x + beta * (x - x_prev)
        else:
            y = x
    if not converged:
        # ``x`` is the last Lloyd image; score it
        hist.append(trainer.distortion(x))
    return x, hist[-1], it, converged, hist


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _init_sample_subset(X, n, rng):
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] < n:
        raise ValueError("training sample has fewer distinct points than the level")
    return uniq[rng.choice(uniq.shape[0], size=n, replace=False)]


def _init_kmeanspp(X, n, r, norm, rng, pool: int = 20_000):
    sub = X[rng.choice(X.shape[0], size=min(pool, X.shape[0]), replace=False)]
    pts = [sub[rng.integers(sub.shape[0])]]
    dist = norm(sub - pts[0]) ** r
    for _ in range(1, n):
        total = dist.sum()
        j = int(rng.choice(sub.shape[0], p=dist / total)) if total > 0 else int(rng.integers(sub.shape[0]))
        pts.append(sub[j])
        dist = np.minimum(dist, norm(sub - sub[j]) ** r)
    return np.array(pts)


def _grow_by_splitting(trainer, X, start, n, r, norm, rng, inner_iters: int = 10):
    """Grow ``start`` to ``n`` points, splitting the cell with the largest inertia each time."""
    pts = np.array(start, dtype=float).reshape(-1, X.shape[1])
    while pts.shape[0] < n:
        labels, dist = assign_with_distance(pts, X, norm)
        inertia = np.bincount(labels, weights=dist**r, minlength=pts.shape[0])
        j = int(np.argmax(inertia))
        members = X[labels == j]
        spread = float(np.sqrt(np.mean(np.sum((members - pts[j]) ** 2, axis=1)))) if members.size else 1e-3
        direction = rng.standard_normal(X.shape[1])
        direction /= np.linalg.norm(direction)
        child = pts[j] + 0.5 * spread * direction
        pts = np.vstack([pts, child])
        for _ in range(inner_iters):
            pts, _ = trainer.step(pts)
    return pts


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def pointwise_error(codebook: Codebook, points, r: float | None = None) -> np.ndarray:
    """``d(x, alpha)^r`` for every point."""
    r = codebook.r if r is None else r
    _, dist = assign_with_distance(codebook, points)
    return dist * dist if r == 2.0 else dist**r


def distortion(codebook: Codebook, model: DensityModel, r: float | None = None,
               eval_samples: int = 1_000_000, seed: int = 0) -> Estimate:
    """Monte Carlo ``int d(x, alpha)^r dP`` and its standard error."""
    if eval_samples < 100:
        raise ValueError("eval_samples must be at least 100")
    X = sample(model, seed, eval_samples)
    v = pointwise_error(codebook, X, r)
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)))


def stationarity_residual(codebook: Codebook, training) -> float:
    """Largest move of a codepoint under one Lloyd step on ``training``."""
    X = as_points(training, codebook.dimension)
    trainer = _make_trainer(X, codebook.r, codebook.norm)
    new, _ = trainer.step(np.array(codebook.points))
    return float(np.max(codebook.norm(new - codebook.points)))


def training_sample(model: DensityModel, config: OptimizeConfig) -> np.ndarray:
    draw = qmc_sample if config.training_design == "qmc" else sample
    return draw(model, derive_seed(config.seed, "train"), config.training_samples)


def evaluation_seed(config: OptimizeConfig) -> int:
    return derive_seed(config.seed, "eval")


def optimize(model: DensityModel, n: int, r: float = 2.0, norm=NormSpec.EUCLIDEAN,
             config: OptimizeConfig | None = None, initial=None, training=None) -> Codebook:
    """Best-of-restarts stationary level-``n`` codebook for ``model``.

    ``initial`` (fewer than ``n`` points, e.g. a lower-level codebook) seeds the
    splitting initializer.  ``training`` overrides the sample drawn from
    ``config``; the returned distortion always uses a fresh evaluation sample.
    """
    if n < 1:
        raise ValueError("level n must be at least 1")
    config = config or OptimizeConfig()
    norm = NormSpec.parse(norm)
    X = training_sample(model, config) if training is None else as_points(training, model.dimension)
    trainer = _make_trainer(X, r, norm)

    results = []
    for k in range(config.restarts):
        rng = derive_rng(config.seed, "init", n, k)
        if config.init is Init.SPLITTING or initial is not None:
            start = r_centroid(X, r, norm) if initial is None else initial
            if initial is not None and np.asarray(initial).reshape(-1, model.dimension).shape[0] > n:
                raise ValueError("initial codebook has more points than the level")
            p0 = _grow_by_splitting(trainer, X, start, n, r, norm, rng)
        elif config.init is Init.KMEANS_PP:
            p0 = _init_kmeanspp(X, n, r, norm, rng)
        else:
            p0 = _init_sample_subset(X, n, rng)
        pts, D, iters, conv, hist = _lloyd(trainer, p0, config.max_lloyd_iters, config.rel_improvement_floor,
                                           config.stationarity_tol * model.scale, config.accelerate)
        results.append((D, k, pts, iters, conv, hist))
        log.debug("n=%d restart %d: D=%.10g after %d iterations (converged=%s)", n, k, D, iters, conv)

    D, k, pts, iters, conv, hist = min(results, key=lambda t: (t[0], t[1]))
    if model.dimension == 1:
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
    new, _ = trainer.step(pts)
    residual = float(np.max(norm(new - pts)))
    if not conv:
        log.warning("n=%d: Lloyd did not converge within %d iterations", n, config.max_lloyd_iters)
    prov = Provenance(
        init=config.init.value if initial is None else Init.SPLITTING.value,
        restarts=config.restarts,
        lloyd_iterations=iters,
        training_samples=X.shape[0],
        seed=config.seed,
        converged=conv,
        reseed_events=trainer.reseeds,
        restart_distortions=tuple(t[0] for t in results),
        restart_iterations=tuple(t[3] for t in results),
        history=tuple(hist),
    )
    cb = Codebook(pts, r=r, norm=norm, stationarity_residual=residual, provenance=prov)
    est = distortion(cb, model, r, config.eval_samples, evaluation_seed(config))
    return replace(cb, distortion=est.value, distortion_stderr=est.stderr)
