"""Voronoi geometry over a codebook.

Every query is a brute-force scan over the codepoints, compiled with numba.
Ties go to the lowest codepoint index.  Functions accept any object with
``points`` (an ``(n, d)`` array) and ``norm`` attributes, or a bare array
together with ``norm=``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .distributions import NormSpec, as_points


@numba.njit(cache=True, inline="always")
def _dist(x, a, norm_code):
    d = x.shape[0]
    if norm_code == 0:
        s = 0.0
        for k in range(d):
            t = x[k] - a[k]
            s += t * t
        return math.sqrt(s)
    if norm_code == 1:
        s = 0.0
        for k in range(d):
            t = abs(x[k] - a[k])
            if t > s:
                s = t
        return s
    s = 0.0
    for k in range(d):
        s += abs(x[k] - a[k])
    return s


@numba.njit(cache=True)
def _nearest_kernel(X, A, norm_code):
    m = X.shape[0]
    n = A.shape[0]
    idx = np.empty(m, dtype=np.int64)
    dist = np.empty(m)
    for i in range(m):
        best = np.inf
        bj = 0
        for j in range(n):
            t = _dist(X[i], A[j], norm_code)
            if t < best:
                best = t
                bj = j
        idx[i] = bj
        dist[i] = best
    return idx, dist


@numba.njit(cache=True)
def _two_nearest_kernel(X, A, norm_code):
    """Nearest index, its distance, and the distance to the rest of the codebook."""
    m = X.shape[0]
    n = A.shape[0]
    idx = np.empty(m, dtype=np.int64)
    d1 = np.empty(m)
    d2 = np.empty(m)
    for i in range(m):
        b1 = np.inf
        b2 = np.inf
        bj = 0
        for j in range(n):
            t = _dist(X[i], A[j], norm_code)
            if t < b1:
                b2 = b1
                b1 = t
                bj = j
            elif t < b2:
                b2 = t
        idx[i] = bj
        d1[i] = b1
        d2[i] = b2
    return idx, d1, d2


@numba.njit(cache=True)
def _ball_count_kernel(centers, radii, S, norm_code):
    k = centers.shape[0]
    out = np.zeros(k, dtype=np.int64)
    for i in range(k):
        rad = radii[i]
        if rad <= 0.0:
            continue
        c = 0
        for s in range(S.shape[0]):
            if _dist(S[s], centers[i], norm_code) < rad:
                c += 1
        out[i] = c
    return out


def _unpack(codebook, norm=None):
    if hasattr(codebook, "points"):
        pts = np.asarray(codebook.points, dtype=float)
        nrm = NormSpec.parse(codebook.norm) if norm is None else NormSpec.parse(norm)
    else:
        pts = np.asarray(codebook, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        nrm = NormSpec.EUCLIDEAN if norm is None else NormSpec.parse(norm)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("codebook must be a non-empty (n, d) array")
    return np.ascontiguousarray(pts), nrm


def nearest(codebook, x, norm=None) -> tuple[int, float]:
    """(index, distance) of the codepoint closest to the single point ``x``."""
    pts, nrm = _unpack(codebook, norm)
    xx = as_points(x, pts.shape[1])
    if xx.shape[0] != 1:
        raise ValueError("nearest() takes a single point; use assign() for batches")
    idx, dist = _nearest_kernel(xx, pts, nrm.code)
    return int(idx[0]), float(dist[0])


def assign_with_distance(codebook, points, norm=None) -> tuple[np.ndarray, np.ndarray]:
    pts, nrm = _unpack(codebook, norm)
    X = np.ascontiguousarray(as_points(points, pts.shape[1]))
    if X.shape[0] == 0:
        raise ValueError("no points to assign")
    return _nearest_kernel(X, pts, nrm.code)


def assign(codebook, points, norm=None) -> np.ndarray:
    """Nearest-codepoint labels (lowest index on ties); a Voronoi partition of the sample."""
    return assign_with_distance(codebook, points, norm)[0]


def two_nearest(codebook, points, norm=None):
    """Labels, ``d(x, alpha)`` and ``d(x, alpha \\ {label})`` for every point."""
    pts, nrm = _unpack(codebook, norm)
    X = np.ascontiguousarray(as_points(points, pts.shape[1]))
    return _two_nearest_kernel(X, pts, nrm.code)


def distance_to_codebook(codebook, points, norm=None) -> np.ndarray:
    return assign_with_distance(codebook, points, norm)[1]


def pairwise_distances(codebook, norm=None) -> np.ndarray:
    pts, nrm = _unpack(codebook, norm)
    return nrm(pts[:, None, :] - pts[None, :, :])


def nearest_other_distances(codebook, norm=None) -> np.ndarray:
    """``d(a, alpha \\ {a})`` per codepoint; ``inf`` for a single-point codebook."""
    D = pairwise_distances(codebook, norm)
    np.fill_diagonal(D, np.inf)
    return D.min(axis=1)


def ball_counts(centers, radii, sample, norm) -> np.ndarray:
    """Number of sample points strictly inside ``B(center, radius)`` for each center."""
    nrm = NormSpec.parse(norm)
    C = np.ascontiguousarray(np.atleast_2d(np.asarray(centers, float)))
    S = np.ascontiguousarray(np.asarray(sample, float))
    return _ball_count_kernel(C, np.asarray(radii, float), S, nrm.code)


@dataclass(frozen=True)
class CellGeometry:
    codepoint_index: int
    inner_radius: float
    outer_radius_estimate: float
    nearest_other_distance: float


def cell_geometry(codebook, samples, labels=None, norm=None) -> list[CellGeometry]:
    """Inner radius ``d(a, alpha \\ {a}) / 2`` and sampled outer radius for every cell.

    ``samples`` is either an ``(m, d)`` array (assigned here unless ``labels`` is
    given) or a sequence of per-cell arrays.  The outer radius is the largest
    distance from the codepoint to one of its samples, so it approaches the
    support-restricted circumradius from below; cells without samples get 0.
    """
    pts, nrm = _unpack(codebook, norm)
    n, d = pts.shape
    other = nearest_other_distances(pts, nrm)
    outer = np.zeros(n)
    if isinstance(samples, (list, tuple)):
        if len(samples) != n:
            raise ValueError("need one sample list per codepoint")
        for i, s in enumerate(samples):
            s = np.asarray(s, float).reshape(-1, d)
            if s.shape[0]:
                outer[i] = float(nrm(s - pts[i]).max())
    else:
        X = as_points(samples, d)
        if labels is None:
            labels, dist = assign_with_distance(pts, X, nrm)
        else:
            labels = np.asarray(labels)
            dist = nrm(X - pts[labels])
        np.maximum.at(outer, labels, dist)
    return [CellGeometry(i, float(other[i] / 2), float(outer[i]), float(other[i])) for i in range(n)]


def in_open_cell(codebook, index: int, x, norm=None) -> bool:
    """Whether ``x`` lies in ``W0(a) = {x : |x - a| < d(x, alpha \\ {a})}``."""
    pts, nrm = _unpack(codebook, norm)
    if not 0 <= index < pts.shape[0]:
        raise IndexError(f"codepoint index {index} out of range")
    xx = as_points(x, pts.shape[1])[0]
    dist = nrm(pts - xx)
    own = dist[index]
    rest = np.delete(dist, index)
    return bool(rest.size == 0 or own < rest.min())
