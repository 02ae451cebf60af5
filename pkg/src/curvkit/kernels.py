"""Interaction kernels ``phi(x) = g(x/|x|) j(|x|)`` and one-parameter families.

A kernel combines an even angular weight ``g`` on the unit sphere with a
non-increasing radial profile ``j``. Every profile knows its radial tail
``int_r^inf j(t) t^(d-1) dt`` and its truncated moment ``int_0^r j(t) t^d dt``
in closed form where possible, which is what the curvature and perimeter
integrators consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .convex_body import ConvexBody
from .errors import AdmissibilityError, DomainError
from .geometry import kappa
from .quadrature import sphere_integral

__all__ = [
    "RadialProfile",
    "PowerProfile",
    "BiweightProfile",
    "IndicatorProfile",
    "ScaledProfile",
    "RegularlyVaryingProfile",
    "CustomProfile",
    "Anisotropy",
    "Isotropic",
    "GaugeWeight",
    "CustomWeight",
    "Kernel",
    "KernelStats",
    "KernelFamily",
    "eval_kernel",
    "check_admissible",
    "normalization_constant",
    "kernel_stats",
    "tail_mass",
    "tail_profile_integral",
    "fractional_constant",
    "anisotropic_fractional_constant",
    "fractional_kernel",
    "anisotropic_fractional_kernel",
    "make_family",
]


# --------------------------------------------------------------------------
# radial profiles
# --------------------------------------------------------------------------
class RadialProfile:
    """Non-increasing radial density ``j`` on ``(0, inf)`` in dimension ``dim``.

    Attributes
    ----------
    singular_order : float
        ``s`` such that ``j(r) ~ r^(-d-s)`` as ``r -> 0``; zero for bounded
        profiles. Quadrature uses it to remove the endpoint singularity.
    support_radius : float
        Radius beyond which ``j`` vanishes (``inf`` if none).
    beta : float
        Exponent in the admissibility weight ``min(1, r^beta)``.
    """

    dim: int
    singular_order: float = 0.0
    support_radius: float = math.inf
    beta: float = 1.0
    name: str = "profile"

    def __call__(self, r):
        raise NotImplementedError

    def tail(self, r):
        """``int_r^inf j(t) t^(d-1) dt``; equals ``inf`` at ``r = 0`` for singular profiles."""
        raise NotImplementedError

    def moment(self, r):
        """``int_0^r j(t) t^d dt``."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"profile": self.name}


class PowerProfile(RadialProfile):
    """``j(r) = r^(-d-s)`` with ``0 < s < 1``."""

    def __init__(self, dim: int, s: float):
        if not (0.0 < s < 1.0):
            raise AdmissibilityError(f"power profile needs 0 < s < 1, got {s}")
        self.dim, self.s = int(dim), float(s)
        self.singular_order = self.s
        self.name = f"power({self.s:g})"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return r ** (-self.dim - self.s)

    def tail(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return r ** (-self.s) / self.s

    def moment(self, r):
        r = np.asarray(r, dtype=float)
        return r ** (1.0 - self.s) / (1.0 - self.s)

    def describe(self):
        return {"profile": "power", "order": self.s}


def _poly_integral(r, cutoff, terms):
    """``sum_c c * min(r, cutoff)^k / k`` for ``terms = [(c, k), ...]``."""
    u = np.minimum(np.asarray(r, dtype=float), cutoff)
    return sum(c * u**k / k for c, k in terms)


class BiweightProfile(RadialProfile):
    """Compactly supported ``j(r) = (1 - r^2)^2`` on ``r < 1``."""

    support_radius = 1.0

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.name = "biweight"
        d = self.dim
        self._tail_terms = [(1.0, d), (-2.0, d + 2), (1.0, d + 4)]
        self._mom_terms = [(1.0, d + 1), (-2.0, d + 3), (1.0, d + 5)]
        self._tail_total = _poly_integral(1.0, 1.0, self._tail_terms)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, (1.0 - r * r) ** 2, 0.0)

    def tail(self, r):
        return self._tail_total - _poly_integral(r, 1.0, self._tail_terms)

    def moment(self, r):
        return _poly_integral(r, 1.0, self._mom_terms)


class IndicatorProfile(RadialProfile):
    """Flat profile ``j(r) = 1`` on ``r < 1``."""

    support_radius = 1.0

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.name = "indicator"

    def __call__(self, r):
        return np.where(np.asarray(r, dtype=float) < 1.0, 1.0, 0.0)

    def tail(self, r):
        u = np.minimum(np.asarray(r, dtype=float), 1.0)
        return (1.0 - u**self.dim) / self.dim

    def moment(self, r):
        u = np.minimum(np.asarray(r, dtype=float), 1.0)
        return u ** (self.dim + 1) / (self.dim + 1)


class ScaledProfile(RadialProfile):
    """``j_eps(r) = factor * eps^-d * base(r / eps)``."""

    def __init__(self, base: RadialProfile, eps: float, factor: float = 1.0):
        if not eps > 0:
            raise DomainError("scale must be positive")
        self.base, self.eps, self.factor = base, float(eps), float(factor)
        self.dim = base.dim
        self.singular_order = base.singular_order
        self.support_radius = base.support_radius * self.eps
        self.beta = base.beta
        self.name = f"{base.name}@{self.eps:g}"

    def __call__(self, r):
        return self.factor * self.eps ** (-self.dim) * self.base(np.asarray(r, dtype=float) / self.eps)

    def tail(self, r):
        return self.factor * self.base.tail(np.asarray(r, dtype=float) / self.eps)

    def moment(self, r):
        return self.factor * self.eps * self.base.moment(np.asarray(r, dtype=float) / self.eps)

    def describe(self):
        return {"profile": "scaled", "base": self.base.describe(), "eps": self.eps, "factor": self.factor}


class RegularlyVaryingProfile(RadialProfile):
    """Bounded profile ``min(nu(1), nu(r))`` with ``nu(r) = r^(-d-1) l(r)``.

    ``slow='one'`` uses ``l = 1``; ``slow='log'`` uses ``l(r) = log(e + r)``.
    """

    def __init__(self, dim: int, slow: str = "one"):
        if slow not in ("one", "log"):
            raise ValueError("slow factor must be 'one' or 'log'")
        self.dim, self.slow = int(dim), slow
        self.name = f"regvar({slow})"
        self.cap = float(self._nu(1.0))

    def _ell(self, r):
        return np.ones_like(r) if self.slow == "one" else np.log(math.e + r)

    def _nu(self, r):
        r = np.asarray(r, dtype=float)
        return r ** (-self.dim - 1.0) * self._ell(r)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r < 1.0, self.cap, self._nu(np.maximum(r, 1.0)))

    def _outer_tail(self, r):
        # int_r^inf t^-2 l(t) dt for r >= 1
        if self.slow == "one":
            return 1.0 / r
        return np.log(math.e + r) / r + np.log((math.e + r) / r) / math.e

    def tail(self, r):
        r = np.asarray(r, dtype=float)
        d = self.dim
        inner = self.cap * (1.0 - np.minimum(r, 1.0) ** d) / d
        return np.where(r < 1.0, inner + self._outer_tail(1.0), self._outer_tail(np.maximum(r, 1.0)))

    def log_integral(self, t):
        """``int_1^t l(r) / r dr`` (the slowly varying normaliser)."""
        t = float(t)
        if t <= 1.0:
            return 0.0
        if self.slow == "one":
            return math.log(t)
        val, _ = integrate.quad(lambda u: math.log(math.e + math.exp(u)), 0.0, math.log(t), limit=200)
        return val

    def moment(self, r):
        r = np.asarray(r, dtype=float)
        inner = self.cap * np.minimum(r, 1.0) ** (self.dim + 1) / (self.dim + 1)
        outer = np.vectorize(self.log_integral)(np.maximum(r, 1.0))
        return inner + outer

    def describe(self):
        return {"profile": "regularly_varying", "slow": self.slow}


class CustomProfile(RadialProfile):
    """Profile given by a callable; tails and moments by adaptive quadrature."""

    def __init__(self, dim: int, fn: Callable[[np.ndarray], np.ndarray], singular_order: float = 0.0,
                 support_radius: float = math.inf, beta: float = 1.0, name: str = "custom"):
        self.dim, self.fn = int(dim), fn
        self.singular_order, self.support_radius, self.beta = singular_order, support_radius, beta
        self.name = name

    def __call__(self, r):
        return np.asarray(self.fn(np.asarray(r, dtype=float)), dtype=float)

    def _q(self, fn, a, b):
        pts = [p for p in (1.0, self.support_radius) if a < p < b]
        val, _ = integrate.quad(fn, a, b, points=pts or None, limit=400) if np.isfinite(b) else \
            integrate.quad(fn, a, b, limit=400)
        return val

    def tail(self, r):
        d = self.dim

        def one(x):
            if x >= self.support_radius:
                return 0.0
            if x <= 0 and self.singular_order > 0:
                return math.inf
            top = self.support_radius
            f = lambda t: float(self.fn(np.asarray(t))) * t ** (d - 1)
            if np.isfinite(top):
                return self._q(f, x, top)
            return self._q(f, x, max(x, 1.0)) + self._q(f, max(x, 1.0), math.inf)

        return np.vectorize(one)(np.asarray(r, dtype=float))

    def moment(self, r):
        d = self.dim

        def one(x):
            top = min(x, self.support_radius)
            return self._q(lambda t: float(self.fn(np.asarray(t))) * t**d, 0.0, top) if top > 0 else 0.0

        return np.vectorize(one)(np.asarray(r, dtype=float))


# --------------------------------------------------------------------------
# angular weights
# --------------------------------------------------------------------------
class Anisotropy:
    """Even, bounded angular weight on the unit sphere."""

    isotropic = False
    sup: float = 1.0
    name = "anisotropy"

    def __call__(self, theta):
        raise NotImplementedError

    def kink_angles(self) -> np.ndarray:
        return np.empty(0)

    def describe(self) -> dict:
        return {"weight": self.name}


class Isotropic(Anisotropy):
    """Constant weight."""

    isotropic = True

    def __init__(self, value: float = 1.0):
        self.value = float(value)
        self.sup = self.value
        self.name = "isotropic"

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.full(theta.shape[:-1], self.value)


class GaugeWeight(Anisotropy):
    """``g(theta) = gauge_K(theta)^(-exponent)`` for a symmetric convex body ``K``."""

    def __init__(self, body: ConvexBody, exponent: float):
        self.body, self.exponent = body, float(exponent)
        self.sup = body.r_out**self.exponent
        self.name = f"gauge[{body.name}]^-{self.exponent:g}"
        self.isotropic = body.kind == "euclidean"

    def __call__(self, theta):
        return self.body.gauge(theta) ** (-self.exponent)

    def kink_angles(self):
        return self.body.kink_angles()

    def describe(self):
        return {"weight": "gauge", "body": self.body.describe(), "exponent": self.exponent}


class CustomWeight(Anisotropy):
    """Weight from a vectorised callable, checked for evenness and positivity."""

    def __init__(self, dim: int, fn: Callable, kinks=(), name: str = "custom"):
        rng = np.random.default_rng(2024)
        dirs = rng.normal(size=(2048, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        a, b = np.asarray(fn(dirs)), np.asarray(fn(-dirs))
        if np.any(a < 0) or np.max(np.abs(a - b)) > 1e-9 * max(1.0, np.abs(a).max()):
            raise AdmissibilityError("angular weight must be non-negative and even")
        self.fn, self._kinks, self.name = fn, np.asarray(kinks, dtype=float), name
        self.sup = float(a.max()) * 1.05

    def __call__(self, theta):
        return np.asarray(self.fn(np.asarray(theta, dtype=float)), dtype=float)

    def kink_angles(self):
        return self._kinks


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Kernel:
    """Kernel ``phi(x) = weight(x/|x|) * profile(|x|)`` in ``dim`` dimensions."""

    dim: int
    weight: Anisotropy
    profile: RadialProfile
    name: str = "kernel"

    def __post_init__(self):
        if self.profile.dim != self.dim:
            raise ValueError("profile dimension does not match kernel dimension")

    def __call__(self, x):
        return eval_kernel(self, x)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, **self.weight.describe(), **self.profile.describe()}


def eval_kernel(k: Kernel, x) -> np.ndarray:
    """Evaluate ``phi`` at points ``x`` (last axis is the dimension)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise DomainError("kernel is not defined at the origin")
    return k.weight(x / r[..., None]) * k.profile(r)


def check_admissible(profile: RadialProfile, beta: float | None = None) -> None:
    """Raise :class:`AdmissibilityError` unless ``profile`` is admissible.

    Checks monotonicity on a geometric grid, integrability of
    ``min(1, r^beta) j(r) r^(d-1)`` near the origin, and decay of the tail.
    """
    beta = profile.beta if beta is None else beta
    s = profile.singular_order
    if s >= beta or s < 0:
        raise AdmissibilityError(f"singularity order {s} incompatible with beta={beta}")
    r = np.geomspace(1e-6, 1e6, 400)
    if np.isfinite(profile.support_radius):
        r = r[r < profile.support_radius]
    vals = profile(r)
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise AdmissibilityError("profile must be finite and non-negative away from 0")
    if np.any(np.diff(vals) > 1e-12 * np.maximum(vals[:-1], 1e-300)):
        raise AdmissibilityError("profile must be non-increasing")
    near = np.asarray(profile.moment(np.array([1e-4, 1e-2, 1.0])), dtype=float)
    if not np.all(np.isfinite(near)) or near[0] > near[1] or near[1] > near[2]:
        raise AdmissibilityError("near-origin moment is not finite")
    tails = np.asarray(profile.tail(np.array([1.0, 1e3, 1e6])), dtype=float)
    if not np.all(np.isfinite(tails)) or not (tails[2] < tails[1] < tails[0] or tails[0] == 0):
        raise AdmissibilityError("tail integral does not decay")


def spherical_mass(weight: Anisotropy, dim: int, rtol: float = 1e-12):
    """``C_g = int_{S^(d-1)} g`` with an error estimate."""
    if weight.isotropic and isinstance(weight, Isotropic):
        return weight.value * kappa(dim - 1), 0.0
    if isinstance(weight, GaugeWeight) and weight.isotropic:
        return kappa(dim - 1), 0.0
    res = sphere_integral(weight, dim, kink_angles=weight.kink_angles(), rtol=rtol)
    return res.value, res.error


@dataclass(frozen=True)
class KernelStats:
    """Cached normalisation data of a kernel."""

    c_phi: float
    c_phi_error: float
    c_g: float
    c_g_error: float


def kernel_stats(k: Kernel) -> KernelStats:
    cache = _STATS_CACHE.get(id(k))
    if cache is not None and cache[0] is k:
        return cache[1]
    c_g, eg = spherical_mass(k.weight, k.dim)
    radial = float(k.profile.moment(1.0) + k.profile.tail(1.0))
    if not np.isfinite(radial):
        raise AdmissibilityError("kernel normalisation constant diverges")
    stats = KernelStats(c_g * radial, eg * radial + 1e-15 * c_g * radial, c_g, eg)
    _STATS_CACHE[id(k)] = (k, stats)
    return stats


_STATS_CACHE: dict = {}


def normalization_constant(k: Kernel) -> tuple[float, float]:
    """Return ``C_phi = int min(1, |x|) phi(x) dx`` and an absolute error bound."""
    st = kernel_stats(k)
    return st.c_phi, st.c_phi_error


def tail_mass(k: Kernel, radius: float, stats: KernelStats | None = None) -> float:
    """Normalised Levy mass of the complement of the ball of given radius."""
    if radius < 0:
        raise DomainError("radius must be non-negative")
    st = stats or kernel_stats(k)
    p = k.profile
    if radius >= 1.0:
        radial = float(p.tail(radius))
    else:
        radial = float(p.moment(1.0) - p.moment(radius) + p.tail(1.0))
    return st.c_g * radial / st.c_phi


def tail_profile_integral(profile: RadialProfile, radius: float) -> float:
    """``int_{|x| > R} j(|x|) dx`` for a radial profile."""
    return float(kappa(profile.dim - 1) * profile.tail(radius))


def fractional_constant(alpha: float, dim: int) -> float:
    """``kappa_{d-1} (1/alpha + 1/(1-alpha))``."""
    return kappa(dim - 1) * (1.0 / alpha + 1.0 / (1.0 - alpha))


def anisotropic_fractional_constant(alpha: float, body: ConvexBody) -> float:
    """``int_{S^(d-1)} gauge_K^(-d-alpha)`` times ``1/alpha + 1/(1-alpha)``."""
    c_g, _ = spherical_mass(GaugeWeight(body, body.dim + alpha), body.dim)
    return c_g * (1.0 / alpha + 1.0 / (1.0 - alpha))


def fractional_kernel(alpha: float, dim: int = 2) -> Kernel:
    """Isotropic ``|x|^(-d-alpha)``."""
    _check_alpha(alpha)
    return Kernel(dim, Isotropic(), PowerProfile(dim, alpha), name=f"fractional({alpha:g})")


def anisotropic_fractional_kernel(alpha: float, body: ConvexBody) -> Kernel:
    """``gauge_K(x)^(-d-alpha)``, written as gauge weight times the isotropic power."""
    _check_alpha(alpha)
    d = body.dim
    return Kernel(d, GaugeWeight(body, d + alpha), PowerProfile(d, alpha),
                  name=f"anisotropic_fractional({alpha:g},{body.name})")


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"fractional order must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class KernelFamily:
    """Indexed family of kernels with its scaling constant.

    ``kind`` is one of ``fractional``, ``anisotropic_fractional``,
    ``rescaled`` and ``regularly_varying``. The index is ``alpha`` for the
    first two and ``eps`` for the others.
    """

    kind: str
    dim: int
    build: Callable[[float], Kernel]
    scale: Callable[[float], float]
    index_range: tuple[float, float]
    params: dict

    def kernel(self, index: float) -> Kernel:
        lo, hi = self.index_range
        if not (lo < index < hi):
            raise DomainError(f"index {index} outside ({lo}, {hi}) for {self.kind}")
        return self.build(float(index))

    def scaling_constant(self, index: float) -> float:
        lo, hi = self.index_range
        if not (lo < index < hi):
            raise DomainError(f"index {index} outside ({lo}, {hi}) for {self.kind}")
        return float(self.scale(float(index)))


def make_family(kind: str, dim: int = 2, body: ConvexBody | None = None, base: RadialProfile | None = None,
                weight: Anisotropy | None = None, slow: str = "one") -> KernelFamily:
    """Build a kernel family.

    Parameters
    ----------
    kind : str
        ``fractional``, ``anisotropic_fractional``, ``rescaled`` or
        ``regularly_varying``.
    body : ConvexBody, optional
        Required for ``anisotropic_fractional``.
    base : RadialProfile, optional
        Unit-scale profile for ``rescaled`` (default: biweight).
    weight : Anisotropy, optional
        Angular weight for ``rescaled`` and ``regularly_varying``.
    slow : {'one', 'log'}
        Slowly varying factor for ``regularly_varying``.
    """
    if kind == "fractional":
        return KernelFamily(kind, dim, lambda a: fractional_kernel(a, dim), lambda a: fractional_constant(a, dim),
                            (0.0, 1.0), {})
    if kind == "anisotropic_fractional":
        if body is None:
            raise ValueError("anisotropic family needs a convex body")
        return KernelFamily(kind, body.dim, lambda a: anisotropic_fractional_kernel(a, body),
                            lambda a: anisotropic_fractional_constant(a, body), (0.0, 1.0), {"body": body.name})
    if kind == "rescaled":
        base = base or BiweightProfile(dim)
        if base.dim != dim:
            raise ValueError("base profile dimension mismatch")
        if not np.isfinite(base.support_radius):
            raise AdmissibilityError("rescaled family needs a compactly supported profile")
        w = weight or Isotropic()

        def build(eps):
            return Kernel(dim, w, ScaledProfile(base, eps), name=f"rescaled({base.name},{eps:g})")

        return KernelFamily(kind, dim, build, lambda eps: normalization_constant(build(eps))[0],
                            (0.0, math.inf), {"base": base.name})
    if kind == "regularly_varying":
        prof = RegularlyVaryingProfile(dim, slow)
        w = weight or Isotropic()

        def scale(eps):
            if eps >= 1.0:
                raise DomainError("regularly varying family needs eps < 1")
            return eps * prof.log_integral(1.0 / eps)

        def build(eps):
            return Kernel(dim, w, ScaledProfile(prof, eps, factor=1.0 / scale(eps)),
                          name=f"regularly_varying({slow},{eps:g})")

        return KernelFamily(kind, dim, build, scale, (0.0, 1.0), {"slow": slow})
    raise ValueError(f"unknown kernel family {kind!r}")
