"""Absolutely continuous probability models ``P = h * Lebesgue`` on R^d.

Each model evaluates its density, draws reproducible samples and knows the
integrals of ``h**p`` that the point-density diagnostics need.  Models are
immutable after construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import special, stats
from scipy.optimize import brentq

from .mc import Estimate, derive_rng, derive_seed

log = logging.getLogger(__name__)


class NormSpec(str, Enum):
    """Norm on R^d used for distances, cells and distortion."""

    EUCLIDEAN = "euclidean"
    LINF = "linf"
    L1 = "l1"

    @property
    def code(self) -> int:
        # integer tag consumed by the compiled kernels in ``voronoi``
        return {"euclidean": 0, "linf": 1, "l1": 2}[self.value]

    def __call__(self, v, axis: int = -1):
        v = np.asarray(v, dtype=float)
        if self is NormSpec.EUCLIDEAN:
            return np.sqrt(np.sum(v * v, axis=axis))
        if self is NormSpec.LINF:
            return np.max(np.abs(v), axis=axis)
        return np.sum(np.abs(v), axis=axis)

    def unit_ball_volume(self, d: int) -> float:
        if self is NormSpec.EUCLIDEAN:
            return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        if self is NormSpec.LINF:
            return 2.0**d
        return 2.0**d / math.factorial(d)

    @classmethod
    def parse(cls, value) -> "NormSpec":
        if isinstance(value, cls):
            return value
        aliases = {"l2": "euclidean", "2": "euclidean", "inf": "linf", "max": "linf", "1": "l1"}
        key = str(value).strip().lower()
        return cls(aliases.get(key, key))


# ---------------------------------------------------------------------------
# regions: support descriptors, also used for the diagnostic compact set K
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompactBox:
    lo: tuple
    hi: tuple

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=1)

    @property
    def dimension(self) -> int | None:
        return len(self.lo)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def describe(self) -> dict:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class CompactBall:
    """Closed Euclidean ball."""

    center: tuple
    radius: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius

    @property
    def dimension(self) -> int | None:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def describe(self) -> dict:
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class AllOfRd:
    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.ones(np.atleast_2d(x).shape[0], dtype=bool)

    @property
    def dimension(self) -> int | None:
        return None  # any

    @property
    def diameter(self) -> float:
        return math.inf

    def describe(self) -> dict:
        return {"type": "all"}


Region = CompactBox | CompactBall | AllOfRd


def region_from_dict(raw: dict) -> Region:
    kind = raw.get("type")
    if kind == "box":
        lo, hi = tuple(float(v) for v in raw["lo"]), tuple(float(v) for v in raw["hi"])
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box region needs lo <= hi of equal length")
        return CompactBox(lo, hi)
    if kind == "ball":
        radius = float(raw["radius"])
        if radius <= 0:
            raise ValueError("ball region needs a positive radius")
        return CompactBall(tuple(float(v) for v in raw["center"]), radius)
    if kind == "all":
        return AllOfRd()
    raise ValueError(f"unknown region type {kind!r}")


# ---------------------------------------------------------------------------
# importance-sampling proposals for integrals of h**p
# ---------------------------------------------------------------------------


class _UniformProposal:
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self._logvol = float(np.sum(np.log(self.hi - self.lo)))

    def rvs(self, rng, count):
        return rng.uniform(self.lo, self.hi, size=(count, self.lo.size))

    def logpdf(self, x):
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        return np.where(inside, -self._logvol, -np.inf)


class _StudentProposal:
    def __init__(self, loc, shape, df=5.0):
        self.dist = stats.multivariate_t(loc=np.asarray(loc, float), shape=np.atleast_2d(shape), df=df)
        self.d = len(np.atleast_1d(loc))

    def rvs(self, rng, count):
        return np.asarray(self.dist.rvs(size=count, random_state=rng)).reshape(count, self.d)

    def logpdf(self, x):
        return np.atleast_1d(self.dist.logpdf(x))


class _ProductProposal:
    def __init__(self, parts):
        self.parts = parts

    def rvs(self, rng, count):
        return np.hstack([p.rvs(rng, count) for p in self.parts])

    def logpdf(self, x):
        return sum(p.logpdf(x[:, [j]]) for j, p in enumerate(self.parts))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class DensityKind(str, Enum):
    UNIFORM_BOX = "UniformBox"
    UNIFORM_BALL = "UniformBall"
    GAUSSIAN = "Gaussian"
    HYPER_EXPONENTIAL = "HyperExponential"
    PRODUCT_OF_1D = "ProductOf1D"


class DensityModel:
    """Base class; concrete kinds below.  Instances are read-only."""

    kind: DensityKind
    dimension: int
    pstp_class: bool = False

    # -- interface implemented by subclasses --
    def pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def power_integral(self, p: float) -> float | None:
        """Closed form of ``int h**p dx`` or ``None`` when unavailable."""
        return None

    def proposal(self, p: float):
        raise NotImplementedError

    def cdf1d(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.kind.value} has no 1-D CDF")

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube ``[0, 1)^qmc_dimension`` to draws from the model."""
        raise NotImplementedError

    @property
    def qmc_dimension(self) -> int:
        return self.dimension

    @property
    def support(self) -> Region:
        return AllOfRd()

    @property
    def mean(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def scale(self) -> float:
        """Support diameter, or the diagonal of a 6-sigma box for unbounded kinds."""
        raise NotImplementedError

    @property
    def params(self) -> dict:
        raise NotImplementedError

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "dimension": self.dimension,
            "params": self.params,
            "support": self.support.describe(),
            "pstp_class": self.pstp_class,
        }

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params})"


class UniformBox(DensityModel):
    kind = DensityKind.UNIFORM_BOX

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be vectors of equal length")
        if np.any(hi <= lo):
            raise ValueError("box needs hi > lo in every coordinate")
        self.lo, self.hi = lo, hi
        self.lo.flags.writeable = False
        self.hi.flags.writeable = False
        self.dimension = lo.size
        self.volume = float(np.prod(hi - lo))

    def pdf(self, x):
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        return np.where(inside, 1.0 / self.volume, 0.0)

    def draw(self, rng, count):
        return rng.uniform(self.lo, self.hi, size=(count, self.dimension))

    def power_integral(self, p):
        return self.volume ** (1.0 - p)

    def transform(self, u):
        return self.lo + u * (self.hi - self.lo)

    def proposal(self, p):
        return _UniformProposal(self.lo, self.hi)

    def cdf1d(self, t):
        if self.dimension != 1:
            return super().cdf1d(t)
        return np.clip((np.asarray(t, float) - self.lo[0]) / (self.hi[0] - self.lo[0]), 0.0, 1.0)

    @property
    def support(self):
        return CompactBox(tuple(self.lo), tuple(self.hi))

    @property
    def mean(self):
        return (self.lo + self.hi) / 2

    @property
    def scale(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


class UniformBall(DensityModel):
    """Uniform distribution on a closed Euclidean ball."""

    kind = DensityKind.UNIFORM_BALL

    def __init__(self, center: Sequence[float], radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        self.center = center
        self.center.flags.writeable = False
        self.radius = float(radius)
        self.dimension = center.size
        self.volume = NormSpec.EUCLIDEAN.unit_ball_volume(self.dimension) * self.radius**self.dimension

    def pdf(self, x):
        inside = np.linalg.norm(x - self.center, axis=1) <= self.radius
        return np.where(inside, 1.0 / self.volume, 0.0)

    def draw(self, rng, count):
        d = self.dimension
        g = rng.standard_normal((count, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = self.radius * rng.random(count) ** (1.0 / d)
        return self.center + g * rad[:, None]

    def power_integral(self, p):
        return self.volume ** (1.0 - p)

    def transform(self, u):
        if self.dimension == 1:
            return self.center - self.radius + 2 * self.radius * u
        g = stats.norm.ppf(u[:, 1:])
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self.center + g * (self.radius * u[:, :1] ** (1.0 / self.dimension))

    @property
    def qmc_dimension(self):
        return 1 if self.dimension == 1 else self.dimension + 1

    def proposal(self, p):
        return _UniformProposal(self.center - self.radius, self.center + self.radius)

    def cdf1d(self, t):
        if self.dimension != 1:
            return super().cdf1d(t)
        lo = self.center[0] - self.radius
        return np.clip((np.asarray(t, float) - lo) / (2 * self.radius), 0.0, 1.0)

    @property
    def support(self):
        return CompactBall(tuple(self.center), self.radius)

    @property
    def mean(self):
        return self.center.copy()

    @property
    def scale(self):
        return 2 * self.radius

    @property
    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class Gaussian(DensityModel):
    """Non-singular normal law; ``cov`` is a diagonal vector or a full matrix."""

    kind = DensityKind.GAUSSIAN
    pstp_class = True

    def __init__(self, mean: Sequence[float], cov):
        mu = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        d = mu.size
        if cov.ndim <= 1:
            cov = np.diag(np.broadcast_to(cov, (d,)).astype(float))
        if cov.shape != (d, d):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * np.abs(cov).max()):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self._mu, self.cov, self._chol = mu, cov, chol
        for a in (self._mu, self.cov, self._chol):
            a.flags.writeable = False
        self.dimension = d
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))

    def pdf(self, x):
        z = np.linalg.solve(self._chol, (x - self._mu).T)
        q = np.sum(z * z, axis=0)
        return np.exp(-0.5 * q - 0.5 * self._logdet - 0.5 * self.dimension * math.log(2 * math.pi))

    def draw(self, rng, count):
        return self._mu + rng.standard_normal((count, self.dimension)) @ self._chol.T

    def power_integral(self, p):
        d = self.dimension
        return math.exp(0.5 * d * (1 - p) * math.log(2 * math.pi) + 0.5 * (1 - p) * self._logdet - 0.5 * d * math.log(p))

    def transform(self, u):
        return self._mu + stats.norm.ppf(u) @ self._chol.T

    def proposal(self, p):
        return _StudentProposal(self._mu, self.cov / p)

    def cdf1d(self, t):
        if self.dimension != 1:
            return super().cdf1d(t)
        return stats.norm.cdf(np.asarray(t, float), loc=self._mu[0], scale=math.sqrt(self.cov[0, 0]))

    @property
    def mean(self):
        return self._mu.copy()

    @property
    def scale(self):
        return 6.0 * math.sqrt(float(np.trace(self.cov)))

    @property
    def params(self):
        return {"mean": self._mu.tolist(), "cov": self.cov.tolist()}


def _hyperexp_norming_constant(d: int, a: float, b: float, c: float, nodes: int = 20) -> float:
    """``K`` making ``K |x|^a exp(-c |x|^b)`` a density, by composite Gauss-Legendre in the radius."""
    shell = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    k = a + d - 1

    def log_g(rho):
        return k * math.log(rho) - c * rho**b

    peak = (k / (c * b)) ** (1 / b) if k > 0 else 0.0
    log_peak = log_g(peak) if peak > 0 else 0.0
    target = log_peak + math.log(1e-16)
    hi = max(peak, 1.0) * 2
    while log_g(hi) > target:
        hi *= 2
    rmax = brentq(lambda t: log_g(t) - target, max(peak, 1e-300), hi)
    edges = np.concatenate([[0.0], np.geomspace(rmax * 1e-12, rmax, 60)])
    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for lo, up in zip(edges[:-1], edges[1:]):
        rho = 0.5 * (up - lo) * x + 0.5 * (up + lo)
        total += 0.5 * (up - lo) * float(np.sum(w * rho**k * np.exp(-c * rho**b)))
    return 1.0 / (shell * total)


class HyperExponential(DensityModel):
    """Radial density ``K |x|_2^a exp(-c |x|_2^b)``; ``K`` is found by radial quadrature."""

    kind = DensityKind.HYPER_EXPONENTIAL
    pstp_class = True

    def __init__(self, dimension: int, a: float = 0.0, b: float = 2.0, c: float = 0.5):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        if a < 0 or b <= 0 or c <= 0:
            raise ValueError("hyper-exponential needs a >= 0, b > 0, c > 0")
        self.dimension = int(dimension)
        self.a, self.b, self.c = float(a), float(b), float(c)
        self.K = _hyperexp_norming_constant(self.dimension, self.a, self.b, self.c)
        self._shell = 2 * math.pi ** (self.dimension / 2) / math.gamma(self.dimension / 2)

    def pdf(self, x):
        rho = np.linalg.norm(x, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.power(rho, self.a) if self.a > 0 else np.ones_like(rho)
        return self.K * radial * np.exp(-self.c * rho**self.b)

    def draw(self, rng, count):
        d = self.dimension
        t = rng.gamma((self.a + d) / self.b, 1.0, size=count)
        rho = (t / self.c) ** (1 / self.b)
        g = rng.standard_normal((count, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * rho[:, None]

    def power_integral(self, p):
        s = (self.a * p + self.dimension) / self.b
        return self.K**p * self._shell * math.gamma(s) / (self.b * (self.c * p) ** s)

    def second_moment(self) -> float:
        d = self.dimension
        return math.exp(
            special.gammaln((self.a + d + 2) / self.b) - special.gammaln((self.a + d) / self.b)
        ) * self.c ** (-2 / self.b)

    def transform(self, u):
        shape = (self.a + self.dimension) / self.b
        if self.dimension == 1:
            v = u[:, :1]
            t = special.gammaincinv(shape, np.abs(2 * v - 1))
            return np.sign(v - 0.5) * (t / self.c) ** (1 / self.b)
        rho = (special.gammaincinv(shape, u[:, :1]) / self.c) ** (1 / self.b)
        g = stats.norm.ppf(u[:, 1:])
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * rho

    @property
    def qmc_dimension(self):
        return 1 if self.dimension == 1 else self.dimension + 1

    def proposal(self, p):
        s2 = self.second_moment() / self.dimension
        return _StudentProposal(np.zeros(self.dimension), np.eye(self.dimension) * s2 / p)

    def cdf1d(self, t):
        if self.dimension != 1:
            return super().cdf1d(t)
        t = np.asarray(t, float)
        mass = special.gammainc((self.a + 1) / self.b, self.c * np.abs(t) ** self.b)
        return 0.5 + 0.5 * np.sign(t) * mass

    @property
    def mean(self):
        return np.zeros(self.dimension)

    @property
    def scale(self):
        return 6.0 * math.sqrt(self.second_moment())

    @property
    def params(self):
        return {"a": self.a, "b": self.b, "c": self.c, "K": self.K}


class ProductOf1D(DensityModel):
    """Independent coordinates, each distributed as a one-dimensional model."""

    kind = DensityKind.PRODUCT_OF_1D

    def __init__(self, factors: Sequence[DensityModel]):
        factors = tuple(factors)
        if not factors or any(f.dimension != 1 for f in factors):
            raise ValueError("ProductOf1D needs one or more 1-D factors")
        self.factors = factors
        self.dimension = len(factors)

    def pdf(self, x):
        out = np.ones(x.shape[0])
        for j, f in enumerate(self.factors):
            out *= f.pdf(x[:, [j]])
        return out

    def draw(self, rng, count):
        # one child stream per coordinate so factors do not share draws
        children = rng.spawn(self.dimension)
        return np.hstack([f.draw(g, count) for f, g in zip(self.factors, children)])

    def power_integral(self, p):
        parts = [f.power_integral(p) for f in self.factors]
        return None if any(v is None for v in parts) else float(np.prod(parts))

    def transform(self, u):
        return np.hstack([f.transform(u[:, [j]]) for j, f in enumerate(self.factors)])

    def proposal(self, p):
        return _ProductProposal([f.proposal(p) for f in self.factors])

    def cdf1d(self, t):
        if self.dimension != 1:
            return super().cdf1d(t)
        return self.factors[0].cdf1d(t)

    @property
    def support(self):
        sups = [f.support for f in self.factors]
        if all(isinstance(s, (CompactBox, CompactBall)) for s in sups):
            lo = [s.lo[0] if isinstance(s, CompactBox) else s.center[0] - s.radius for s in sups]
            hi = [s.hi[0] if isinstance(s, CompactBox) else s.center[0] + s.radius for s in sups]
            return CompactBox(tuple(lo), tuple(hi))
        return AllOfRd()

    @property
    def mean(self):
        return np.concatenate([f.mean for f in self.factors])

    @property
    def scale(self):
        return float(np.sqrt(sum(f.scale**2 for f in self.factors)))

    @property
    def params(self):
        return {"factors": [f.describe() for f in self.factors]}


def model_from_dict(raw: dict) -> DensityModel:
    """Build a model from its configuration mapping (``kind`` plus parameters)."""
    kind = raw.get("kind")
    if kind in ("UniformBox", "uniform_box"):
        return UniformBox(raw["lo"], raw["hi"])
    if kind in ("UniformBall", "uniform_ball"):
        return UniformBall(raw["center"], raw["radius"])
    if kind in ("Gaussian", "gaussian"):
        return Gaussian(raw["mean"], raw["cov"])
    if kind in ("HyperExponential", "hyper_exponential"):
        return HyperExponential(int(raw["dimension"]), raw.get("a", 0.0), raw.get("b", 2.0), raw.get("c", 0.5))
    if kind in ("ProductOf1D", "product_of_1d"):
        return ProductOf1D([model_from_dict(f) for f in raw["factors"]])
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def as_points(x, dimension: int) -> np.ndarray:
    """Coerce ``x`` to an ``(m, d)`` float array, checking the dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dimension == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dimension:
        raise ValueError(f"expected points of dimension {dimension}, got shape {np.shape(x)}")
    return arr


def density(model: DensityModel, x) -> float | np.ndarray:
    """h(x) for a single point (returns a float) or an ``(m, d)`` array of points."""
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and (model.dimension > 1 or np.size(x) == 1))
    vals = model.pdf(as_points(x, model.dimension))
    return float(vals[0]) if single else vals


def sample(model: DensityModel, seed: int, count: int) -> np.ndarray:
    """``count`` i.i.d. draws from the model, deterministic in ``seed``."""
    if count < 1:
        raise ValueError("count must be positive")
    return model.draw(np.random.default_rng(seed), int(count))


def qmc_sample(model: DensityModel, seed: int, count: int) -> np.ndarray:
    """Low-discrepancy draws: scrambled Sobol points pushed through ``model.transform``.

    ``count`` is rounded up to the next power of two so the design stays
    balanced (every dyadic box of volume 1/count gets its share of points).
    Not i.i.d.; used for training samples, never for error estimates.
    """
    if count < 1:
        raise ValueError("count must be positive")
    m = max(int(count) - 1, 1).bit_length()
    engine = stats.qmc.Sobol(d=model.qmc_dimension, scramble=True, seed=np.random.default_rng(seed))
    u = engine.random_base2(m)
    eps = np.finfo(float).eps
    return model.transform(np.clip(u, eps, 1 - eps))


class NormingNotConverged(RuntimeError):
    """Monte Carlo norming did not reach the requested accuracy; carries the partial estimate."""

    def __init__(self, estimate: Estimate, samples: int):
        super().__init__(
            f"norming estimate {estimate.value:.6g} +/- {estimate.stderr:.3g} did not converge after {samples} samples"
        )
        self.estimate = estimate
        self.samples = samples


def power_integral_mc(
    model: DensityModel,
    p: float,
    seed: int = 0,
    rtol: float = 1e-3,
    batch: int = 1 << 16,
    max_samples: int = 1 << 22,
) -> Estimate:
    """Importance-sampling estimate of ``int h**p dx`` with its standard error."""
    prop = model.proposal(p)
    rng = derive_rng(seed, "power-integral")
    total = total_sq = 0.0
    m = 0
    while True:
        x = prop.rvs(rng, batch)
        logq = prop.logpdf(x)
        h = model.pdf(x)
        with np.errstate(divide="ignore"):
            w = np.where(h > 0, np.exp(p * np.log(np.where(h > 0, h, 1.0)) - logq), 0.0)
        total += float(w.sum())
        total_sq += float((w * w).sum())
        m += batch
        mean = total / m
        var = max(total_sq / m - mean * mean, 0.0) * m / (m - 1)
        est = Estimate(mean, math.sqrt(var / m))
        if mean > 0 and est.stderr <= rtol * mean:
            return est
        if m >= max_samples:
            raise NormingNotConverged(est, m)


def point_density_norming(model: DensityModel, r: float, method: str = "auto", **mc_options) -> float:
    """``int h^(d/(r+d)) dx``, the normalizer of the point-density measure of order ``r``.

    ``method`` is ``"analytic"``, ``"mc"`` or ``"auto"`` (analytic when a closed form exists).
    """
    if r <= 0:
        raise ValueError("r must be positive")
    p = model.dimension / (r + model.dimension)
    if method in ("auto", "analytic"):
        exact = model.power_integral(p)
        if exact is not None:
            return float(exact)
        if method == "analytic":
            raise ValueError(f"no closed form for {model.kind.value}")
    elif method != "mc":
        raise ValueError(f"unknown method {method!r}")
    return power_integral_mc(model, p, **mc_options).value


def total_mass(model: DensityModel, seed: int = 0, count: int = 1_000_000) -> Estimate:
    """Monte Carlo ``int h dx`` (should be 1) using the model's p=1 proposal."""
    prop = model.proposal(1.0)
    rng = derive_rng(seed, "mass")
    x = prop.rvs(rng, count)
    w = model.pdf(x) * np.exp(-prop.logpdf(x))
    return Estimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(count)))


def moment(model: DensityModel, order: float, seed: int = 0, count: int = 200_000) -> Estimate:
    """Monte Carlo ``E |X|_2^order``."""
    x = sample(model, derive_seed(seed, "moment"), count)
    v = np.linalg.norm(x, axis=1) ** order
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(count)))


def essential_density_range(model: DensityModel, region_points) -> tuple[float, float]:
    """(min, max) of h over the supplied points, estimating essinf/esssup on the region."""
    pts = as_points(region_points, model.dimension)
    if pts.shape[0] == 0:
        raise ValueError("region has no points")
    h = model.pdf(pts)
    return float(h.min()), float(h.max())
