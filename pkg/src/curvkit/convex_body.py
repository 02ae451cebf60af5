"""Origin-symmetric convex bodies described by their gauge."""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.stats import qmc

__all__ = ["ConvexBody", "gauge", "polar_gauge", "moment_norm"]


class ConvexBody:
    """Origin-symmetric convex body ``K = {x : gauge(x) <= 1}``.

    Three representations are supported: the Euclidean ball, the unit ball of
    a p-norm, and an intersection of symmetric slabs ``|a_i . x| <= 1``.
    A ``custom`` gauge callable can also be supplied; it is checked for
    symmetry on random directions.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    kind : {'euclidean', 'pnorm', 'halfspaces', 'custom'}
    p : float, optional
        Exponent for ``kind='pnorm'``; ``np.inf`` is allowed.
    normals : array_like, optional
        Rows ``a_i`` for ``kind='halfspaces'``.
    gauge_fn : callable, optional
        Vectorised gauge for ``kind='custom'``.
    """

    def __init__(self, dim: int, kind: str = "euclidean", p: float | None = None, normals=None,
                 gauge_fn: Callable | None = None, name: str | None = None):
        if dim < 2:
            raise ValueError("convex bodies need dimension >= 2")
        self.dim = int(dim)
        self.kind = kind
        self.p = None
        self.normals = None
        self._gauge_fn = None
        self._vertices = None
        self._moment_cache: dict = {}
        if kind == "euclidean":
            self.r_in = self.r_out = 1.0
        elif kind == "pnorm":
            if p is None or not (p >= 1):
                raise ValueError("p-norm bodies need p >= 1")
            self.p = float(p)
            ratio = dim ** (0.5 - (1.0 / p if np.isfinite(p) else 0.0))
            self.r_in, self.r_out = min(1.0, ratio), max(1.0, ratio)
        elif kind == "halfspaces":
            a = np.atleast_2d(np.asarray(normals, dtype=float))
            if a.shape[1] != dim:
                raise ValueError("normals must have one column per dimension")
            if np.linalg.matrix_rank(a) < dim:
                raise ValueError("slab family does not bound a body (normals do not span)")
            self.normals = a
            self._vertices = _slab_vertices(a)
            self.r_in = 1.0 / np.linalg.norm(a, axis=1).max()
            self.r_out = float(np.linalg.norm(self._vertices, axis=1).max())
        elif kind == "custom":
            if gauge_fn is None:
                raise ValueError("custom bodies need a gauge function")
            self._gauge_fn = gauge_fn
            rng = np.random.default_rng(12345)
            dirs = rng.normal(size=(4096, dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            gv, gm = np.asarray(gauge_fn(dirs)), np.asarray(gauge_fn(-dirs))
            if np.any(gv <= 0):
                raise ValueError("gauge must be positive away from the origin")
            if np.max(np.abs(gv - gm) / gv) > 1e-9:
                raise ValueError("convex body must be origin-symmetric")
            self.r_in, self.r_out = float(1 / gv.max()), float(1 / gv.min())
        else:
            raise ValueError(f"unknown body kind {kind!r}")
        self.name = name or self._default_name()

    @classmethod
    def euclidean(cls, dim: int = 2) -> "ConvexBody":
        return cls(dim, "euclidean")

    @classmethod
    def pnorm(cls, dim: int, p: float) -> "ConvexBody":
        return cls(dim, "pnorm", p=p)

    @classmethod
    def square(cls, dim: int = 2) -> "ConvexBody":
        """The cube ``[-1, 1]^d`` written as coordinate slabs."""
        return cls(dim, "halfspaces", normals=np.eye(dim), name="square" if dim == 2 else "cube")

    def _default_name(self) -> str:
        if self.kind == "pnorm":
            return f"pnorm{self.p:g}"
        return self.kind

    def describe(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.p is not None:
            out["p"] = self.p if np.isfinite(self.p) else "inf"
        if self.normals is not None:
            out["normals"] = self.normals.tolist()
        return out

    # -- gauges ---------------------------------------------------------
    def gauge(self, x) -> np.ndarray:
        """Minkowski functional ``inf{t > 0 : x in tK}``, vectorised over the last axis."""
        x = np.asarray(x, dtype=float)
        if self.kind == "euclidean":
            return np.linalg.norm(x, axis=-1)
        if self.kind == "pnorm":
            return np.linalg.norm(x, ord=self.p, axis=-1) if x.ndim == 1 else _pnorm(x, self.p)
        if self.kind == "halfspaces":
            return np.abs(x @ self.normals.T).max(axis=-1)
        return np.asarray(self._gauge_fn(x), dtype=float)

    def polar_gauge(self, y) -> np.ndarray:
        """Support function ``h_K(y) = max_{x in K} y . x``."""
        y = np.asarray(y, dtype=float)
        if self.kind == "euclidean":
            return np.linalg.norm(y, axis=-1)
        if self.kind == "pnorm":
            q = np.inf if self.p == 1 else (1.0 if not np.isfinite(self.p) else self.p / (self.p - 1))
            return np.linalg.norm(y, ord=q, axis=-1) if y.ndim == 1 else _pnorm(y, q)
        if self.kind == "halfspaces":
            return (y @ self._vertices.T).max(axis=-1)
        return _support_by_ascent(self, y)

    def contains(self, x) -> np.ndarray:
        return self.gauge(x) <= 1.0

    @property
    def vertices(self) -> np.ndarray | None:
        return self._vertices

    def kink_angles(self) -> np.ndarray:
        """Planar directions where the gauge fails to be smooth (d = 2 only)."""
        if self.dim != 2:
            return np.empty(0)
        if self.kind == "pnorm" and (self.p == 1 or not np.isfinite(self.p) or self.p < 2):
            base = np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
            return base + (np.pi / 4 if not np.isfinite(self.p) else 0.0)
        if self.kind == "halfspaces":
            v = self._vertices
            return np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * np.pi)
        return np.empty(0)

    def polar_kink_angles(self) -> np.ndarray:
        """Normal directions where the support function is not smooth (d = 2)."""
        if self.dim != 2:
            return np.empty(0)
        if self.kind == "pnorm" and (self.p == 1 or not np.isfinite(self.p) or self.p > 2):
            base = np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
            return base + (np.pi / 4 if self.p == 1 else 0.0)
        if self.kind == "halfspaces":
            a = np.vstack([self.normals, -self.normals])
            return np.mod(np.arctan2(a[:, 1], a[:, 0]), 2 * np.pi)
        return np.empty(0)

    def __repr__(self) -> str:
        return f"ConvexBody(dim={self.dim}, kind={self.kind!r}, name={self.name!r})"


def _pnorm(x, p):
    ax = np.abs(x)
    if not np.isfinite(p):
        return ax.max(axis=-1)
    m = ax.max(axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return (m[..., 0] * ((ax / safe) ** p).sum(axis=-1) ** (1.0 / p))


def _slab_vertices(a: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    verts = []
    for rows in itertools.combinations(range(a.shape[0]), d):
        m = a[list(rows)]
        if abs(np.linalg.det(m)) < 1e-12:
            continue
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            v = np.linalg.solve(m, np.array(signs))
            if np.abs(a @ v).max() <= 1 + 1e-10:
                verts.append(v)
    verts = np.array(verts)
    return np.unique(np.round(verts, 12), axis=0)


def _support_by_ascent(body: ConvexBody, y: np.ndarray) -> np.ndarray:
    # h(y) = max_z y.z / gauge(z); the ratio is scale invariant, so a derivative-free
    # search over unnormalised z from the best sampled direction copes with corners
    y2 = np.atleast_2d(y)
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(8192, body.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs / body.gauge(dirs)[:, None]
    out = np.empty(y2.shape[0])
    for i, yi in enumerate(y2):
        if not np.any(yi):
            out[i] = 0.0
            continue
        x0 = pts[np.argmax(pts @ yi)]
        res = optimize.minimize(lambda z: -(yi @ z) / body.gauge(z), x0, method="Nelder-Mead",
                                options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000})
        out[i] = max(-res.fun, float(x0 @ yi))
    return out.reshape(np.shape(y)[:-1])


def gauge(body: ConvexBody, x) -> np.ndarray:
    """Gauge of ``body`` evaluated at ``x``."""
    return body.gauge(x)


def polar_gauge(body: ConvexBody, y) -> np.ndarray:
    """Support function of ``body`` evaluated at ``y``."""
    return body.polar_gauge(y)


def _moment_points(body: ConvexBody, samples: int, seed: int, replicates: int):
    key = (samples, seed, replicates)
    cached = body._moment_cache.get(key)
    if cached is not None:
        return cached
    d = body.dim
    per = 1 << max(4, math.ceil(math.log2(max(samples / replicates, 16))))
    box = body.r_out
    reps = []
    for r in range(replicates):
        pts = qmc.Sobol(d, scramble=True, seed=np.random.default_rng([seed, r])).random(per)
        pts = (2 * pts - 1) * box
        reps.append(pts[body.gauge(pts) <= 1.0])
    cached = (reps, per, (2 * box) ** d)
    body._moment_cache[key] = cached
    return cached


def moment_norm(body: ConvexBody, y, samples: int = 1 << 20, seed: int = 0, replicates: int = 8):
    """Moment-body norm ``(d + 1)/2 * int_K |y . x| dx`` by randomized QMC.

    Parameters
    ----------
    body : ConvexBody
    y : array_like
        One vector or a stack of vectors (last axis is the dimension).
    samples : int
        Total number of quasi-random points, split across replicates.
    seed : int
        Scrambling seed; results are deterministic for fixed seed.

    Returns
    -------
    value, error : ndarray
        Mean over independent scrambles and the standard error of that mean.
    """
    y = np.asarray(y, dtype=float)
    flat = np.atleast_2d(y)
    reps, per, vol = _moment_points(body, samples, seed, replicates)
    d = body.dim
    ests = np.empty((len(reps), flat.shape[0]))
    for i, pts in enumerate(reps):
        acc = np.zeros(flat.shape[0])
        for start in range(0, pts.shape[0], 65536):
            acc += np.abs(pts[start:start + 65536] @ flat.T).sum(axis=0)
        ests[i] = (d + 1) / 2 * vol * acc / per
    value = ests.mean(axis=0)
    error = ests.std(axis=0, ddof=1) / math.sqrt(len(reps))
    shape = y.shape[:-1]
    return value.reshape(shape), error.reshape(shape)
