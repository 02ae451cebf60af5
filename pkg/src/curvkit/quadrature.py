"""Vectorised Gauss-Legendre quadrature, endpoint maps and extrapolation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize

__all__ = [
    "gauss_legendre",
    "QuadResult",
    "adaptive_integral",
    "graded_edges",
    "power_map",
    "endpoint_integral",
    "sphere_integral",
    "bisect_roots",
    "richardson_limit",
]


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return Gauss-Legendre nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class QuadResult:
    """Value of an integral with an a-posteriori error estimate."""

    value: float
    error: float
    abs_value: float = 0.0
    panels: int = 0


def _panel_sums(f, a, b, n):
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b)[:, None] + half[:, None] * x
    vals = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    return (vals * w).sum(axis=1) * half, (np.abs(vals) * w).sum(axis=1) * np.abs(half)


def adaptive_integral(
    f: Callable[[np.ndarray], np.ndarray],
    edges,
    n: int = 16,
    rtol: float = 1e-10,
    atol: float = 1e-300,
    max_rounds: int = 40,
    max_panels: int = 20000,
) -> QuadResult:
    """Integrate ``f`` over the union of panels with vectorised bisection.

    Each panel is compared against the sum over its two halves. Panels whose
    discrepancy dominates the error budget are split until the total error
    estimate falls below ``max(atol, rtol * |I|)``.

    Parameters
    ----------
    f : callable
        Vectorised integrand; receives a flat array of nodes.
    edges : array_like
        Increasing panel breakpoints.
    n : int
        Gauss-Legendre points per panel.
    """
    edges = np.unique(np.asarray(edges, dtype=float))
    if edges.size < 2:
        return QuadResult(0.0, 0.0, 0.0, 0)
    a, b = edges[:-1], edges[1:]
    coarse, _ = _panel_sums(f, a, b, n)
    done_val = 0.0
    done_err = 0.0
    done_abs = 0.0
    for _ in range(max_rounds):
        mid = 0.5 * (a + b)
        left, labs = _panel_sums(f, a, mid, n)
        right, rabs = _panel_sums(f, mid, b, n)
        fine = left + right
        err = np.abs(fine - coarse)
        total = done_val + fine.sum()
        absval = done_abs + (labs + rabs).sum()
        # rounding floor: cancellation between panels cannot beat machine precision
        floor = 64 * np.finfo(float).eps * absval
        tol = max(atol, rtol * abs(total), floor)
        total_err = done_err + err.sum()
        if total_err <= tol or a.size * 2 > max_panels:
            return QuadResult(float(total), float(max(total_err, floor)), float(absval), int(a.size))
        split = err > tol / (2.0 * a.size)
        split[np.argmax(err)] = True
        keep = ~split
        done_val += fine[keep].sum()
        done_err += err[keep].sum()
        done_abs += (labs + rabs)[keep].sum()
        a, b, mid = a[split], b[split], mid[split]
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        coarse = np.concatenate([left[split], right[split]])
    total = done_val + fine.sum()
    absval = done_abs + (labs + rabs).sum()
    floor = 64 * np.finfo(float).eps * absval
    return QuadResult(float(total), float(max(done_err + err.sum(), floor)), float(absval), int(a.size))


def graded_edges(levels: int, extra=(), ratio: float = 0.5, uniform: int = 4) -> np.ndarray:
    """Breakpoints on [0, 1] graded geometrically toward 0.

    ``uniform`` panels cover [1/2, 1]; ``levels`` geometric levels go below.
    """
    geo = ratio ** np.arange(1, levels + 1)
    top = np.linspace(0.5, 1.0, uniform + 1)
    pts = np.concatenate([[0.0], geo, top, np.asarray(extra, dtype=float)])
    pts = pts[(pts >= 0) & (pts <= 1)]
    return np.unique(pts)


def power_map(length: float, power: float):
    """Map ``v in [0, 1]`` to ``u = length * v**power`` and return ``(u, du/dv)``.

    With ``power = 1 / (1 - s)`` this removes an integrable ``u**-s``
    singularity at ``u = 0``.
    """

    def mapping(v):
        v = np.asarray(v, dtype=float)
        with np.errstate(under="ignore"):
            u = length * v**power
            du = length * power * v ** (power - 1.0) if power != 1.0 else np.full_like(v, length)
        return u, du

    return mapping


def endpoint_integral(fv, power: float, rtol: float, levels: int = 40, extra=(), head: float = 1e-11,
                      n: int = 16) -> QuadResult:
    """Integrate ``fv`` over ``v in [0, 1]`` after a ``u = L v**power`` substitution.

    Below ``v_min = head**(1/power)`` the mapped variable is ``u <= head * L``,
    where the substituted integrand equals its limit at 0 up to ``O(u)``; that
    piece is taken as ``v_min * fv(v_min)``. This avoids underflow of
    ``v**power`` and cancellation in ray geometry at grazing angles.
    """
    v_min = head ** (1.0 / power)
    if v_min < 0.5:
        k = min(levels, int(np.ceil(np.log2(0.5 / v_min))))
        geo = np.geomspace(v_min, 0.5, k + 1)
        base = np.concatenate([geo, np.linspace(0.5, 1.0, 5)])
    else:
        base = np.linspace(v_min, 1.0, 9)
    extra = np.asarray(extra, dtype=float)
    edges = np.unique(np.concatenate([base, extra[(extra > v_min) & (extra < 1)]]))
    res = adaptive_integral(fv, edges, n=n, rtol=rtol)
    f0 = np.asarray(fv(np.array([v_min, 2 * v_min if v_min < 0.5 else v_min])), dtype=float)
    f0 = np.where(np.isfinite(f0), f0, 0.0)
    head_val = v_min * f0[0]
    head_err = v_min * abs(f0[0] - f0[1]) * (head if v_min >= 0.5 else 1.0)
    return QuadResult(res.value + head_val, res.error + head_err, res.abs_value + abs(head_val), res.panels)


def sphere_integral(
    fn: Callable[[np.ndarray], np.ndarray],
    dim: int,
    kink_angles=(),
    rtol: float = 1e-11,
    azimuth: int = 256,
) -> QuadResult:
    """Integrate a function of unit vectors over the sphere in ``dim`` dimensions.

    Circles use adaptive panels split at ``kink_angles``; the two-sphere uses
    Gauss-Legendre in the height coordinate times the trapezoid rule in azimuth,
    and compares against half the azimuthal resolution for the error.
    """
    if dim == 2:

        def on_circle(t):
            return fn(np.stack([np.cos(t), np.sin(t)], axis=-1))

        edges = np.unique(np.concatenate([np.linspace(0, 2 * np.pi, 9), np.mod(kink_angles, 2 * np.pi)]))
        return adaptive_integral(on_circle, edges, rtol=rtol)
    if dim == 3:

        def at(m):
            phi = 2 * np.pi * np.arange(m) / m

            def ring(z):
                s = np.sqrt(np.clip(1 - z**2, 0, None))
                pts = np.stack(
                    [s[:, None] * np.cos(phi), s[:, None] * np.sin(phi), np.broadcast_to(z[:, None], (z.size, m))],
                    axis=-1,
                )
                return fn(pts).mean(axis=1) * 2 * np.pi

            return adaptive_integral(ring, np.linspace(-1, 1, 9), rtol=rtol)

        fine, coarse = at(azimuth), at(azimuth // 2)
        return QuadResult(fine.value, fine.error + abs(fine.value - coarse.value), fine.abs_value, fine.panels)
    raise ValueError(f"sphere quadrature implemented for dimensions 2 and 3, got {dim}")


def bisect_roots(fn, lo, hi, flo, iters: int = 60):
    """Vectorised bisection for brackets ``[lo, hi]`` with ``sign(fn(lo)) = flo``."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo = np.sign(flo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = np.sign(fn(mid))
        same = fm == flo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.abs(hi), 1e-300)):
            break
    return 0.5 * (lo + hi)


def richardson_limit(x, values, order: float | None = None):
    """Extrapolate ``values(x)`` to ``x = 0`` assuming ``v = L + c x**p``.

    Returns ``(limit, order, error)``. With three or more points the order is
    estimated from the last three; the error is the larger of the change
    relative to the extrapolation that drops the point farthest from zero and,
    for a fitted order, the distance to the first-order extrapolation.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    idx = np.argsort(-x)
    x, v = x[idx], v[idx]
    if x.size < 2:
        return float(v[-1]), float("nan"), float("inf")

    def fit(xs, vs, p):
        c = (vs[-2] - vs[-1]) / (xs[-2] ** p - xs[-1] ** p)
        return vs[-1] - c * xs[-1] ** p

    p = order
    if p is None and x.size >= 3:
        x1, x2, x3 = x[-3:]
        v1, v2, v3 = v[-3:]
        ratio = (v1 - v2) / (v2 - v3) if v2 != v3 else np.nan

        def eq(q):
            return (x1**q - x2**q) / (x2**q - x3**q) - ratio

        try:
            if np.isfinite(ratio) and ratio > 0 and eq(0.05) * eq(6.0) < 0:
                p = optimize.brentq(eq, 0.05, 6.0)
        except ValueError:
            p = None
    if p is None:
        p = 1.0
    limit = fit(x, v, p)
    if x.size >= 3:
        alt = fit(x[:-1], v[:-1], p)
        err = abs(limit - alt) * (x[-1] / x[-2]) ** p
        if order is None:
            # a fitted order reproduces all three points exactly, so the spread
            # against the first-order fit measures the model uncertainty
            err = max(err, abs(limit - fit(x, v, 1.0)))
        err = max(err, abs(v[-1] - limit) * 1e-3)
    else:
        err = abs(v[-1] - limit)
    return float(limit), float(p), float(err)
