"""Nonlocal, anisotropic and moment-body perimeters and the first-variation check.

The nonlocal perimeter is evaluated through the displacement form
``1/2 int |E sym-diff (E + y)| phi(y) dy``, which needs one singular integral
over ``y`` and is manifestly invariant under taking complements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import fft as sfft
from skimage import measure

from .convex_body import ConvexBody, moment_norm
from .curvature import QuadParams, mean_curvature_pv
from .errors import DeformationError, DomainError
from .geometry import Ball, Complement, Ellipsoid, HalfSpace, LevelSet, MappedSet, SetRep, kappa
from .kernels import Isotropic, Kernel, anisotropic_fractional_kernel, kernel_stats
from .quadrature import adaptive_integral, endpoint_integral, gauss_legendre, richardson_limit, sphere_integral

__all__ = [
    "PerimeterEstimate",
    "Deformation",
    "Dilation",
    "Rotation",
    "NormalBump",
    "ZeroField",
    "nonlocal_perimeter",
    "anisotropic_fractional_perimeter",
    "anisotropic_perimeter",
    "moment_perimeter",
    "first_variation_check",
    "unit_ball_overlap_loss",
]


@dataclass
class PerimeterEstimate:
    """Perimeter value with an error estimate and the method used."""

    value: float
    error: float
    method: str
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "method": self.method, **self.meta}


# --------------------------------------------------------------------------
# symmetric-difference volumes
# --------------------------------------------------------------------------
def unit_ball_overlap_loss(t, dim: int) -> np.ndarray:
    """``|B sym-diff (B + y)|`` for the unit ball and ``|y| = t``.

    Written without cancellation so that the ``O(t)`` behaviour at small
    shifts keeps full relative accuracy.
    """
    t = np.minimum(np.asarray(t, dtype=float), 2.0)
    if dim == 2:
        return 4.0 * np.arcsin(t / 2.0) + t * np.sqrt(np.clip(4.0 - t * t, 0.0, None))
    if dim == 3:
        return np.pi * (2.0 * t - t**3 / 6.0)
    raise DomainError("closed-form overlaps are implemented for d = 2, 3")


def _unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def _radial_displacement(k: Kernel, m: float, rtol: float):
    """``int_0^inf V_unit(s m) j(s) s^(d-1) ds`` for the unit ball."""
    d = k.dim
    prof = k.profile
    top = 2.0 / m
    s_ord = prof.singular_order
    power = 1.0 / (1.0 - s_ord) if s_ord > 0 else 1.0

    def integrand(v):
        with np.errstate(under="ignore"):
            s = top * v**power
            ds = top * power * v ** (power - 1.0)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = unit_ball_overlap_loss(s * m, d) * prof(s) * s ** (d - 1) * ds
        return np.where((ds > 0) & (s > 1e-300), val, 0.0)

    extra = []
    if np.isfinite(prof.support_radius) and prof.support_radius < top:
        extra.append((prof.support_radius / top) ** (1.0 / power))
    res = endpoint_integral(integrand, power, rtol, extra=extra)
    far = 2 * _unit_ball_volume(d) * float(prof.tail(top))
    return res.value + far, res.error + 1e-15 * abs(far)


def _ellipsoid_perimeter(k: Kernel, E: Ellipsoid, rtol: float) -> PerimeterEstimate:
    d = k.dim
    det = abs(np.linalg.det(E.matrix))
    if np.allclose(E.semi_axes, E.semi_axes[0]):
        radial, rerr = _radial_displacement(k, 1.0 / E.semi_axes[0], rtol)
        st = kernel_stats(k)
        val = 0.5 * det * st.c_g * radial
        err = 0.5 * det * (st.c_g * rerr + st.c_g_error * radial)
        return PerimeterEstimate(val, err, "symmetric_difference", {"shape": "ball"})

    inv = E.inv
    cache: dict = {}

    def radial_of(theta):
        m = np.linalg.norm(theta @ inv.T, axis=-1)
        out = np.empty(m.shape)
        for i, mi in np.ndenumerate(m):
            key = round(float(mi), 15)
            if key not in cache:
                cache[key] = _radial_displacement(k, float(mi), rtol * 0.1)[0]
            out[i] = cache[key]
        return out

    res = sphere_integral(lambda th: k.weight(th) * radial_of(th), d, kink_angles=k.weight.kink_angles(),
                          rtol=rtol, azimuth=64)
    err = 0.5 * det * (res.error + 0.1 * rtol * abs(res.value))
    return PerimeterEstimate(0.5 * det * res.value, err, "symmetric_difference",
                             {"shape": "ellipsoid"})


def _polygon(E: SetRep, n: int):
    pts, _, _ = E.boundary_curve(n)
    poly = shapely.Polygon(pts)
    if not poly.is_valid:
        raise DomainError("boundary curve does not bound a simple polygon")
    return poly, pts


def _polygon_displacement(k: Kernel, pts: np.ndarray, n_th: int, n_r: int) -> float:
    poly = shapely.Polygon(pts)
    if not poly.is_valid:
        raise DomainError("boundary curve does not bound a simple polygon")
    area = poly.area
    coords = np.asarray(poly.exterior.coords)
    edges = np.roll(pts, -1, axis=0) - pts
    lengths = np.linalg.norm(edges, axis=1)
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1) / lengths[:, None]
    diam = float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)))
    prof = k.profile
    s_ord = prof.singular_order
    power = 1.0 / (1.0 - s_ord) if s_ord > 0 else 1.0

    # half circle suffices: V(-y) = V(y) and the weight is even
    theta = np.pi * (np.arange(n_th) + 0.5) / n_th
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    width = (np.abs(normals @ dirs.T) * lengths[:, None]).sum(axis=0)
    top = min(diam, prof.support_radius)
    x, w = gauss_legendre(n_r)
    v_min = 1e-10 ** (1.0 / power)
    edges_v = np.geomspace(v_min, 1.0, 12)
    va, vb = edges_v[:-1], edges_v[1:]
    v = (0.5 * (va + vb)[:, None] + 0.5 * (vb - va)[:, None] * x).ravel()
    wv = (0.5 * (vb - va)[:, None] * w).ravel()
    s = top * v**power
    ds = top * power * v ** (power - 1.0)
    # tiny shifts: V(s theta) = s * width(theta) up to O(s^2), and exact overlay loses precision there
    lin = s < 1e-6 * diam
    vol = np.empty((n_th, s.size))
    vol[:, lin] = s[lin][None, :] * width[:, None]
    shifts = s[None, ~lin, None] * dirs[:, None, :]
    moved = shapely.polygons(coords[None, :, :] + shifts.reshape(-1, 1, 2))
    inter = shapely.area(shapely.intersection(poly, moved)).reshape(n_th, -1)
    vol[:, ~lin] = 2.0 * (area - inter)
    radial = (vol * (prof(s) * s * ds * wv)[None, :]).sum(axis=1)
    s_m = top * v_min**power
    ds_m = top * power * v_min ** (power - 1.0)
    head = v_min * width * float(s_m * prof(s_m) * s_m * ds_m)
    far = 2.0 * area * float(prof.tail(diam)) if top == diam else 0.0
    g = k.weight(dirs)
    return 0.5 * 2.0 * (np.pi / n_th) * float(np.sum(g * (radial + head + far)))


def _polygon_perimeter(k: Kernel, E: SetRep, n_boundary: int, n_angle: int, n_radial: int) -> PerimeterEstimate:
    fine = _polygon_displacement(k, E.boundary_curve(n_boundary)[0], n_angle, n_radial)
    coarse = _polygon_displacement(k, E.boundary_curve(n_boundary // 2)[0], n_angle // 2, n_radial // 2)
    return PerimeterEstimate(fine, abs(fine - coarse), "symmetric_difference",
                             {"shape": "polygon", "vertices": n_boundary})


def _levelset_perimeter(k: Kernel, E: LevelSet, window: float | None = None) -> PerimeterEstimate:
    field_ = E.field
    h = field_.spacing
    d = E.dim
    chi = (field_.values <= 0).astype(float)
    if not E.bounded:
        raise DomainError("level set touches the grid boundary; perimeter needs a bounded set")
    shape = [2 * n for n in chi.shape]
    spec = sfft.rfftn(chi, shape)
    corr = sfft.irfftn(spec * np.conj(spec), shape)
    n_in = chi.sum()
    vol = 2.0 * (n_in - corr) * h**d
    offs = [np.fft.fftfreq(n, 1.0 / n) * h for n in shape]
    grids = np.meshgrid(*offs, indexing="ij")
    z = np.stack(grids, axis=-1)
    r = np.linalg.norm(z, axis=-1)
    r0 = 4.0 * h
    ramp = np.clip((r - r0) / r0, 0.0, 1.0)
    ramp = ramp * ramp * (3 - 2 * ramp)
    # beyond this radius the lattice window no longer holds every shift; use V = 2|E| there
    r_win = 0.99 * h * min(chi.shape)
    lo_box = np.argwhere(chi > 0).min(axis=0)
    hi_box = np.argwhere(chi > 0).max(axis=0)
    if np.linalg.norm(hi_box - lo_box + 1) * h >= r_win:
        raise DomainError("grid too small: the bounding-box diagonal of the set must stay below the grid width")
    mask = (r > r0) & (r <= r_win)
    phi = np.zeros_like(r)
    phi[mask] = k.weight(z[mask] / r[mask][:, None]) * k.profile(r[mask])
    lattice = 0.5 * float(np.sum(ramp * phi * vol)) * h**d
    # near origin: V(y) ~ |y| w(theta) with w from the extracted boundary facets
    facets_n, facets_a = _boundary_facets(E)
    if d == 2:
        def wfun(th):
            return k.weight(th) * (np.abs(th @ facets_n.T) * facets_a).sum(axis=-1)
        res = sphere_integral(wfun, 2, rtol=1e-8)
    else:
        def wfun(th):
            flat = th.reshape(-1, 3)
            out = np.empty(flat.shape[0])
            for i in range(0, flat.shape[0], 256):
                blk = flat[i:i + 256]
                out[i:i + 256] = k.weight(blk) * (np.abs(blk @ facets_n.T) * facets_a).sum(axis=-1)
            return out.reshape(th.shape[:-1])
        res = sphere_integral(wfun, 3, rtol=1e-6, azimuth=32)
    # radial weight (1 - ramp) integrated against j(s) s^d
    x, w = gauss_legendre(32)
    s = 0.5 * 2 * r0 * (x + 1)
    ramp_s = np.clip((s - r0) / r0, 0, 1)
    ramp_s = ramp_s * ramp_s * (3 - 2 * ramp_s)
    inner = float(k.profile.moment(r0)) + float(np.sum(w * r0 * (1 - ramp_s) * k.profile(s) * s**d * (s > r0)))
    near = 0.5 * res.value * inner
    far = n_in * h**d * kernel_stats(k).c_g * float(k.profile.tail(r_win))
    total = lattice + near + far
    return PerimeterEstimate(total, abs(total) * h, "symmetric_difference",
                             {"shape": "levelset", "spacing": h, "order": "O(h)"})


def _boundary_facets(E: LevelSet):
    """Unit normals and measures of marching-squares/cubes boundary facets."""
    f = E.field
    h = f.spacing
    if E.dim == 2:
        normals, lengths = [], []
        for c in measure.find_contours(f.values, 0.0):
            p = c * h + f.origin
            seg = np.diff(p, axis=0)
            ln = np.linalg.norm(seg, axis=1)
            ok = ln > 0
            normals.append(np.stack([seg[ok, 1], -seg[ok, 0]], axis=1) / ln[ok, None])
            lengths.append(ln[ok])
        return np.concatenate(normals), np.concatenate(lengths)
    verts, faces, _, _ = measure.marching_cubes(f.values, 0.0, spacing=(h,) * 3)
    tri = verts[faces]
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    ok = area > 0
    return cr[ok] / (2 * area[ok, None]), area[ok]


def nonlocal_perimeter(k: Kernel, E: SetRep, h: float | None = None, rtol: float = 1e-10,
                       n_boundary: int = 1024) -> PerimeterEstimate:
    """Nonlocal perimeter ``1/2 int |E sym-diff (E + y)| phi(y) dy``.

    Parameters
    ----------
    k : Kernel
    E : SetRep
        Bounded set: ball, ellipsoid, planar mapped set, or level set.
        A complement is evaluated through its base set (same integrand).
    h : float, optional
        Grid resolution; only used for level sets (which carry their own grid).
    """
    if isinstance(E, Complement):
        est = nonlocal_perimeter(k, E.base, h, rtol, n_boundary)
        est.meta["complement"] = True
        return est
    if isinstance(E, HalfSpace):
        raise DomainError("perimeter of an unbounded set is infinite")
    if isinstance(E, Ellipsoid):
        return _ellipsoid_perimeter(k, E, rtol)
    if isinstance(E, LevelSet):
        return _levelset_perimeter(k, E)
    if E.dim == 2 and E.bounding_ball() is not None:
        return _polygon_perimeter(k, E, n_boundary, 128, 16)
    raise DomainError(f"no perimeter route for {type(E).__name__}")


def anisotropic_fractional_perimeter(alpha: float, body: ConvexBody, E: SetRep, h: float | None = None,
                                     rtol: float = 1e-10) -> PerimeterEstimate:
    """Nonlocal perimeter for ``phi(y) = gauge_K(y)^(-d-alpha)``."""
    return nonlocal_perimeter(anisotropic_fractional_kernel(alpha, body), E, h, rtol)


# --------------------------------------------------------------------------
# local anisotropic perimeters
# --------------------------------------------------------------------------
def _boundary_integral(E: SetRep, density, kink_normals=()) -> tuple[float, float, str]:
    """``int over the boundary of density(n)`` for a 1-homogeneous ``density``."""
    if isinstance(E, Complement):
        return _boundary_integral(E.base, lambda n: density(-n), kink_normals)
    if isinstance(E, Ellipsoid):
        # boundary point c + M u has normal along M^-T u with area element |det M| |M^-T u| du
        det = abs(np.linalg.det(E.matrix))
        inv_t = E.inv.T

        def integrand(u):
            return density(u @ inv_t.T)

        kinks = ()
        if E.dim == 2 and len(kink_normals):
            kv = np.asarray(kink_normals) @ E.matrix
            kinks = np.mod(np.arctan2(kv[:, 1], kv[:, 0]), 2 * np.pi)
        res = sphere_integral(integrand, E.dim, kink_angles=kinks, rtol=1e-12)
        return det * res.value, det * res.error, "boundary_integral"
    if isinstance(E, LevelSet):
        n, a = _boundary_facets(E)
        return float(np.sum(density(n) * a)), float(E.field.spacing ** 2 * np.sum(a)), "boundary_integral"
    if E.dim == 2:
        vals = []
        for m in (2048, 1024):
            poly, pts = _polygon(E, m)
            edges = np.roll(pts, -1, axis=0) - pts
            nrm = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
            vals.append(float(np.sum(density(nrm))))
        return vals[0], abs(vals[0] - vals[1]), "boundary_integral"
    raise DomainError(f"no boundary representation for {type(E).__name__}")


def anisotropic_perimeter(E: SetRep, body: ConvexBody) -> PerimeterEstimate:
    """``int over the boundary of h_K(n)`` (support function of ``K`` at the normal)."""
    val, err, method = _boundary_integral(E, body.polar_gauge, _polar_kink_normals(body))
    return PerimeterEstimate(val, err, method)


def _polar_kink_normals(body: ConvexBody):
    ang = body.polar_kink_angles()
    return np.stack([np.cos(ang), np.sin(ang)], axis=1) if len(ang) else ()


def _boundary_rule(E: SetRep, n: int):
    """Fixed rule ``int over the boundary of f(n) ~ sum w_i f(m_i)`` for 1-homogeneous ``f``.

    The ``m_i`` are scaled normals, so the rule is exact up to the underlying
    angular quadrature.
    """
    if isinstance(E, Complement):
        m, w = _boundary_rule(E.base, n)
        return -m, w
    if isinstance(E, Ellipsoid):
        det = abs(np.linalg.det(E.matrix))
        if E.dim == 2:
            t = 2 * np.pi * np.arange(n) / n
            u = np.stack([np.cos(t), np.sin(t)], axis=1)
            return u @ E.inv, np.full(n, det * 2 * np.pi / n)
        x, wz = gauss_legendre(max(8, n // 32))
        az = 2 * np.pi * np.arange(n // 16) / (n // 16)
        sz = np.sqrt(1 - x * x)
        u = np.stack([np.outer(sz, np.cos(az)), np.outer(sz, np.sin(az)), np.repeat(x[:, None], az.size, 1)], -1)
        w = np.repeat(wz[:, None], az.size, 1) * 2 * np.pi / az.size
        return u.reshape(-1, 3) @ E.inv, det * w.ravel()
    if isinstance(E, LevelSet):
        m, a = _boundary_facets(E)
        return m, a
    if E.dim == 2:
        _, pts = _polygon(E, n)
        edges = np.roll(pts, -1, axis=0) - pts
        return np.stack([edges[:, 1], -edges[:, 0]], axis=1), np.ones(n)
    raise DomainError(f"no boundary representation for {type(E).__name__}")


def moment_perimeter(E: SetRep, body: ConvexBody, samples: int = 1 << 20, seed: int = 0,
                     nodes: int = 512) -> PerimeterEstimate:
    """Boundary integral of the moment-body norm of the normal.

    The statistical error of the moment norm is propagated conservatively:
    all normals share one point set, so their errors are added.
    """
    m, w = _boundary_rule(E, nodes)
    val, err = moment_norm(body, m, samples, seed)
    total = float(np.sum(w * val))
    stat = float(np.sum(w * err))
    m2, w2 = _boundary_rule(E, nodes // 2)
    coarse = float(np.sum(w2 * moment_norm(body, m2, samples, seed)[0]))
    quad = abs(total - coarse)
    return PerimeterEstimate(total, quad + stat, "boundary_integral",
                             {"samples": samples, "seed": seed, "statistical_error": stat, "quad_error": quad})


# --------------------------------------------------------------------------
# deformations and the first variation
# --------------------------------------------------------------------------
class Deformation:
    """Vector field ``psi`` generating ``Phi_eps(x) = x + eps psi(x)``."""

    name = "deformation"
    lipschitz = 0.0

    def psi(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian_psi(self, x) -> np.ndarray:
        """``D psi`` by central differences."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        step = 1e-6
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            cols.append((self.psi(x + e) - self.psi(x - e)) / (2 * step))
        return np.stack(cols, axis=-1)

    def check_step(self, eps: float) -> None:
        if abs(eps) * self.lipschitz >= 0.5:
            raise DeformationError(f"step {eps} too large for a diffeomorphism (Lipschitz {self.lipschitz:.3g})")

    def apply(self, E: SetRep, eps: float) -> SetRep:
        self.check_step(eps)
        if eps == 0:
            return E
        bound = abs(eps) * getattr(self, "sup", 1.0)
        return MappedSet(E, lambda p: np.asarray(p) + eps * self.psi(p),
                         lambda p: np.eye(np.shape(p)[-1]) + eps * self.jacobian_psi(p), bound, label=self.name)

    def describe(self) -> dict:
        return {"name": self.name}


class ZeroField(Deformation):
    name = "zero"

    def psi(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def apply(self, E, eps):
        return E


class _Affine(Deformation):
    """``psi(x) = L (x - c)``; maps ellipsoids to ellipsoids exactly.

    Outside a neighbourhood of the set the field is meant to be cut off; since
    only values near the set enter, the affine formula is used as is.
    """

    def __init__(self, center, linear):
        self.center = np.asarray(center, dtype=float)
        self.linear = np.asarray(linear, dtype=float)
        self.lipschitz = float(np.linalg.norm(self.linear, 2))

    def psi(self, x):
        return (np.asarray(x, dtype=float) - self.center) @ self.linear.T

    def jacobian_psi(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.linear, x.shape + (x.shape[-1],))

    def apply(self, E, eps):
        self.check_step(eps)
        a = np.eye(self.center.size) + eps * self.linear
        if isinstance(E, Ellipsoid):
            c = E.center + eps * self.psi(E.center)
            return Ellipsoid(c, matrix=a @ E.matrix)
        if isinstance(E, Complement):
            return Complement(self.apply(E.base, eps))
        return super().apply(E, eps)


class Dilation(_Affine):
    """Uniform dilation about ``center``; on a ball centred there ``psi . nu = r``."""

    name = "dilation"

    def __init__(self, center):
        c = np.asarray(center, dtype=float)
        super().__init__(c, np.eye(c.size))


class Rotation(_Affine):
    """Infinitesimal rotation about ``center`` in the plane of the first two axes (tangential on balls)."""

    name = "rotation"

    def __init__(self, center):
        c = np.asarray(center, dtype=float)
        gen = np.zeros((c.size, c.size))
        gen[0, 1], gen[1, 0] = -1.0, 1.0
        super().__init__(c, gen)


class NormalBump(Deformation):
    """Radial bump ``psi = a beta(theta) eta(|x - c|) (x - c)/|x - c|``.

    ``beta`` is a C^2 bump of half-width ``width`` in the angle ``theta``
    between ``x - c`` and the bump direction, and ``eta`` switches the field
    off near the centre. The direction is a planar angle or a unit vector.
    """

    name = "normal_bump"

    def __init__(self, center, angle, width: float = 0.6, amplitude: float = 1.0, inner: float = 0.2):
        self.center = np.asarray(center, dtype=float)
        if np.ndim(angle) == 0:
            self.angle = float(angle)
            self.axis = np.array([np.cos(self.angle), np.sin(self.angle)])
        else:
            axis = np.asarray(angle, dtype=float)
            self.axis = axis / np.linalg.norm(axis)
            self.angle = float(np.arctan2(self.axis[1], self.axis[0]))
        if self.axis.size != self.center.size:
            raise ValueError("bump direction and centre dimensions differ")
        self.width, self.amp, self.inner = float(width), float(amplitude), float(inner)
        self.sup = abs(self.amp)
        # |eta'| <= 1.875 / inner, |beta'| <= 1.72 / width, |D (x / |x|)| <= 1 / |x|
        self.lipschitz = abs(self.amp) * (1.875 + 1.72 / self.width + 1.0) / self.inner

    def beta(self, theta):
        dt = np.asarray(theta) / self.width
        return np.clip(1 - dt * dt, 0, None) ** 3

    def eta(self, r):
        t = np.clip((np.asarray(r) - self.inner) / self.inner, 0.0, 1.0)
        return t**3 * (10 - 15 * t + 6 * t * t)

    def psi(self, x):
        w = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(w, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        if self.center.size == 2:
            th = np.abs(np.angle(np.exp(1j * (np.arctan2(w[..., 1], w[..., 0]) - self.angle))))
        else:
            th = np.arccos(np.clip(w @ self.axis / safe, -1.0, 1.0))
        scale = self.amp * self.beta(th) * self.eta(r) / safe
        return w * scale[..., None]

    def describe(self):
        return {"name": self.name, "axis": self.axis.tolist(), "width": self.width, "amplitude": self.amp}


def first_variation_check(k: Kernel, E: SetRep, D: Deformation, eps0: float = 1e-3, q: QuadParams | None = None,
                          boundary_nodes: int = 64) -> dict:
    """Compare the derivative of the nonlocal perimeter with the curvature integral.

    ``lhs`` is a Richardson-combined central difference of the perimeter
    along ``Phi_eps`` at ``eps0, 2 eps0, 4 eps0``; ``rhs`` integrates the
    unnormalised curvature times ``psi . nu`` over the boundary.
    """
    D.check_step(4 * eps0)
    if isinstance(D, ZeroField):
        lhs = 0.0
    else:
        diffs = []
        for m in (1, 2, 4):
            eps = m * eps0
            plus = nonlocal_perimeter(k, D.apply(E, eps)).value
            minus = nonlocal_perimeter(k, D.apply(E, -eps)).value
            diffs.append((plus - minus) / (2 * eps))
        r1 = (4 * diffs[0] - diffs[1]) / 3
        r2 = (4 * diffs[1] - diffs[2]) / 3
        lhs = (16 * r1 - r2) / 15
    rhs = _curvature_flux(k, E, D, q, boundary_nodes)
    gap = abs(lhs - rhs) / abs(rhs) if rhs != 0 else abs(lhs)
    return {"lhs": float(lhs), "rhs": float(rhs), "gap": float(gap), "eps0": eps0,
            "kernel": k.name, "set": E.describe(), "deformation": D.describe()}


def _curvature_flux(k, E, D, q, nodes):
    d = E.dim
    norm = kappa(d - 2)
    same_everywhere = isinstance(E, Ball) and isinstance(k.weight, Isotropic)
    if d == 2:
        pts, normals, speed = E.boundary_curve(nodes)
        flux = np.einsum("ni,ni->n", D.psi(pts), normals)
        h_const = None
        total = 0.0
        for p, f, s in zip(pts, flux, speed):
            if abs(f) < 1e-14:
                continue
            if same_everywhere:
                if h_const is None:
                    h_const = mean_curvature_pv(k, E, p, q).value
                h = h_const
            else:
                h = mean_curvature_pv(k, E, p, q).value
            total += h * f * s
        return norm * total * 2 * np.pi / nodes
    if d == 3 and isinstance(E, Ellipsoid):
        x, w = gauss_legendre(16)
        m = 32
        phi = 2 * np.pi * np.arange(m) / m
        total = 0.0
        h_const = None
        for z, wz in zip(x, w):
            sz = math.sqrt(1 - z * z)
            for ph in phi:
                u = np.array([sz * math.cos(ph), sz * math.sin(ph), z])
                p = E.center + E.matrix @ u
                nrm = E.inv.T @ u
                area = abs(np.linalg.det(E.matrix)) * np.linalg.norm(nrm)
                nrm = nrm / np.linalg.norm(nrm)
                f = float(D.psi(p) @ nrm)
                if abs(f) < 1e-14:
                    continue
                if same_everywhere:
                    if h_const is None:
                        h_const = mean_curvature_pv(k, E, p, q).value
                    h = h_const
                else:
                    h = mean_curvature_pv(k, E, p, q).value
                total += wz * (2 * np.pi / m) * h * f * area
        return norm * total
    raise DomainError("curvature flux needs a planar boundary curve or an ellipsoid")
