"""Nonlocal mean and directional curvatures.

Two independent evaluators are provided. The ray evaluator writes the
principal value in polar coordinates around the boundary point: for each
direction the radial integral of the symmetrised indicator against the
kernel reduces to the profile tail evaluated at the crossing distances, and
the contributions at the origin cancel between opposite directions. The
remaining angular integral has an integrable endpoint singularity at the
tangent directions, which a power substitution removes.

The planar evaluator works in Cartesian coordinates ``(rho, h)`` on the
plane spanned by a tangent direction and the normal; it integrates the
graph of the boundary column by column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Complement, Graph, SetRep, TangentFrame, kappa
from .kernels import (
    GaugeWeight,
    Isotropic,
    Kernel,
    RadialProfile,
    anisotropic_fractional_kernel,
    kernel_stats,
)
from .convex_body import ConvexBody
from .errors import DomainError
from .quadrature import (
    adaptive_integral,
    endpoint_integral,
    gauss_legendre,
    power_map,
    sphere_integral,
)

__all__ = [
    "QuadParams",
    "CurvatureResult",
    "mean_curvature_pv",
    "anisotropic_fractional_curvature",
    "column_integral",
    "directional_curvature",
    "directional_up",
    "mean_from_directional",
    "classical_directional_curvature",
    "classical_mean_curvature",
    "limit_curvature_anisotropic",
    "limit_curvature_general",
    "tangent_average_curvature",
    "ball_speed",
    "translation_gap",
    "symmetry_gap",
    "monotonicity_holds",
]


@dataclass(frozen=True)
class QuadParams:
    """Quadrature controls.

    Attributes
    ----------
    tol : float
        Relative tolerance of the adaptive angular and radial rules.
    levels : int
        Geometric grading levels toward singular endpoints.
    angular : int
        Azimuthal trapezoid points on circles of directions (three dimensions).
    near_radius : float, optional
        Patch radius for the planar evaluator; defaults to the graph radius.
    far_cutoff : float, optional
        Radius beyond which unbounded sets are truncated.
    """

    tol: float = 1e-9
    levels: int = 40
    angular: int = 64
    near_radius: float | None = None
    far_cutoff: float | None = None


@dataclass
class CurvatureResult:
    """Curvature value with separate quadrature and truncation error estimates."""

    value: float
    quad_error: float
    truncation_bound: float
    meta: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return self.quad_error + self.truncation_bound

    def as_dict(self) -> dict:
        return {"value": self.value, "quad_error": self.quad_error,
                "truncation_bound": self.truncation_bound, **self.meta}


def _exact_rays(E: SetRep) -> bool:
    if isinstance(E, Complement):
        return _exact_rays(E.base)
    return type(E).ray_crossings is not SetRep.ray_crossings


def _singular_power(profile: RadialProfile) -> float:
    s = profile.singular_order
    return 1.0 / (1.0 - s) if s > 0 else 1.0


def _tail_at(profile: RadialProfile, r):
    good = np.isfinite(r) & (r > 0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = profile.tail(np.where(good, r, 1.0))
    return np.where(good, val, 0.0)


def _ray_values(k: Kernel, E: SetRep, frame: TangentFrame, local_dirs, r_max):
    r, jump = E.ray_crossings(frame, local_dirs, r_max)
    s = (jump * _tail_at(k.profile, r)).sum(axis=1)
    if k.weight.isotropic and isinstance(k.weight, Isotropic):
        return k.weight.value * s
    return k.weight(frame.directions(local_dirs)) * s


def _kink_offsets(k: Kernel, frame: TangentFrame, sgn_e: float, sgn_n: float) -> np.ndarray:
    """Angles from the tangent direction (in one quarter) where the weight has kinks."""
    if frame.dim != 2:
        return np.empty(0)
    ang = np.asarray(k.weight.kink_angles(), dtype=float)
    if ang.size == 0:
        return ang
    w = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    le, ln = w @ frame.tangents[0], w @ frame.normal
    u = np.arctan2(sgn_n * ln, sgn_e * le)
    return u[(u > 0) & (u < np.pi / 2)]


def mean_curvature_pv(k: Kernel, E: SetRep, x, q: QuadParams | None = None,
                      normalized: bool = True) -> CurvatureResult:
    """Nonlocal mean curvature at a boundary point by the ray evaluator.

    Parameters
    ----------
    k : Kernel
    E : SetRep
        Set whose boundary contains ``x``.
    x : array_like
    q : QuadParams, optional
    normalized : bool
        Divide by the area of the unit ``(d-2)``-sphere (default), which makes
        the fractional curvature of a ball converge to the classical one after
        multiplication by ``1 - alpha``.

    Returns
    -------
    CurvatureResult
    """
    q = q or QuadParams()
    x = np.asarray(x, dtype=float)
    d = k.dim
    if E.dim != d or x.size != d:
        raise DomainError("kernel, set and point dimensions differ")
    frame = E.frame(x)
    exact = _exact_rays(E)
    r_max = q.far_cutoff
    trunc = 0.0
    if not exact:
        far = E.far_radius(frame.point)
        if not np.isfinite(far):
            r_max = r_max or 64.0 * E.length_scale
            trunc = k.weight.sup * kappa(d - 1) * float(k.profile.tail(r_max))
        elif r_max is not None and r_max < far:
            trunc = k.weight.sup * kappa(d - 1) * float(k.profile.tail(r_max))
    elif r_max is not None:
        r_max = None
    power = _singular_power(k.profile)
    umap = power_map(np.pi / 2, power)

    def integrate(fv, extra_u=()):
        extra_v = (2 * np.asarray(extra_u, dtype=float) / np.pi) ** (1.0 / power)
        return endpoint_integral(fv, power, q.tol / 4, q.levels, extra_v)

    total, err, absval = 0.0, 0.0, 0.0
    panels = 0
    if d == 2:
        for sgn_e, sgn_n in ((1, 1), (-1, 1), (1, -1), (-1, -1)):

            def integrand(v, se=sgn_e, sn=sgn_n):
                u, du = umap(v)
                dirs = np.stack([se * np.cos(u), sn * np.sin(u)], axis=1)
                val = _ray_values(k, E, frame, dirs, r_max)
                return np.where(du > 0, val * du, 0.0)

            res = integrate(integrand, _kink_offsets(k, frame, sgn_e, sgn_n))
            total, err, absval, panels = total + res.value, err + res.error, absval + res.abs_value, panels + res.panels
    elif d == 3:
        results = []
        for m in (q.angular, q.angular // 2):
            phi = 2 * np.pi * np.arange(m) / m
            cphi, sphi = np.cos(phi), np.sin(phi)
            tot_m, err_m, abs_m = 0.0, 0.0, 0.0
            for sgn_n in (1, -1):

                def integrand(v, sn=sgn_n, cphi=cphi, sphi=sphi, m=m):
                    u, du = umap(v)
                    cu, su = np.cos(u), np.sin(u)
                    dirs = np.stack([
                        (cu[:, None] * cphi).ravel(),
                        (cu[:, None] * sphi).ravel(),
                        np.repeat(sn * su, m),
                    ], axis=1)
                    vals = _ray_values(k, E, frame, dirs, r_max).reshape(u.size, m)
                    ring = vals.mean(axis=1) * 2 * np.pi * cu
                    return np.where(du > 0, ring * du, 0.0)

                res = integrate(integrand)
                tot_m, err_m, abs_m = tot_m + res.value, err_m + res.error, abs_m + res.abs_value
                panels += res.panels
            results.append((tot_m, err_m, abs_m))
        total, err, absval = results[0]
        err += abs(results[0][0] - results[1][0])
    else:
        raise DomainError("the ray evaluator supports dimensions 2 and 3")
    scale = 1.0 / kappa(d - 2) if normalized else 1.0
    meta = {"method": "ray", "panels": panels, "power": power, "exact_rays": exact}
    return CurvatureResult(total * scale, err * scale, trunc * scale, meta)


def anisotropic_fractional_curvature(alpha: float, body: ConvexBody, E: SetRep, x, q: QuadParams | None = None,
                                     normalized: bool = True) -> CurvatureResult:
    """Curvature for the kernel ``gauge_K(x)^(-d-alpha)``."""
    return mean_curvature_pv(anisotropic_fractional_kernel(alpha, body), E, x, q, normalized)


# --------------------------------------------------------------------------
# planar (Cartesian) evaluator
# --------------------------------------------------------------------------
_T_SPLIT = 1.2


def column_integral(k: Kernel, e, nu, rho, lo, hi, nodes: int = 20) -> np.ndarray:
    """Signed ``int_lo^hi phi(rho e + h nu) dh`` for arrays of columns.

    The substitution ``h = |rho| tan t`` turns each column into an integral
    over a bounded angle; near ``t = +-pi/2`` a further square-root map
    smooths the kernel tail.
    """
    rho = np.asarray(rho, dtype=float)
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    rho = np.broadcast_to(rho, lo.shape)
    a = np.abs(rho)
    sg = np.where(rho >= 0, 1.0, -1.0)
    safe = np.where(a > 0, a, 1.0)
    tlo, thi = np.arctan2(lo, safe), np.arctan2(hi, safe)
    flip = thi < tlo
    tlo, thi = np.where(flip, thi, tlo), np.where(flip, tlo, thi)
    R = k.profile.support_radius
    if np.isfinite(R):
        cap = np.arccos(np.clip(a / R, 0.0, 1.0))
        tlo, thi = np.clip(tlo, -cap, cap), np.clip(thi, -cap, cap)
    x, w = gauss_legendre(nodes)
    e = np.asarray(e, dtype=float)
    nu = np.asarray(nu, dtype=float)
    iso = isinstance(k.weight, Isotropic)

    def F(t, sgn, aa):
        c = np.cos(t)
        r = aa[..., None] / c
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = k.profile(r) * r * r / aa[..., None]
        if not iso:
            dirs = (sgn[..., None] * c)[..., None] * e + np.sin(t)[..., None] * nu
            val = val * k.weight(dirs)
        else:
            val = val * k.weight.value
        return np.where(np.isfinite(val), val, 0.0)

    # breakpoints: the square-root maps near +-pi/2 and kinks of the angular weight
    cuts = [np.full(lo.shape, -_T_SPLIT), np.full(lo.shape, _T_SPLIT)]
    if not iso and e.size == 2:
        kinks = np.asarray(k.weight.kink_angles(), dtype=float)
        if kinks.size:
            kv = np.stack([np.cos(kinks), np.sin(kinks)], axis=1)
            ke, kn = kv @ e, kv @ nu
            for ce, cn in zip(ke, kn):
                # direction (sg cos t, sin t) parallel to +-(ce, cn)
                t_k = np.arctan(cn / np.where(sg * ce != 0, sg * ce, 1e-300))
                cuts.append(t_k)
    B = np.sort(np.stack([tlo, thi] + [np.clip(c, tlo, thi) for c in cuts], axis=-1), axis=-1)
    total = np.zeros(lo.shape)
    for i in range(B.shape[-1] - 1):
        pa, pb = B[..., i], B[..., i + 1]
        ok = pb > pa
        if not np.any(ok):
            continue
        pa, pb, sgk, ak = pa[ok], pb[ok], sg[ok], safe[ok]
        mid = 0.5 * (pa + pb)
        right, left = mid > _T_SPLIT, mid < -_T_SPLIT
        plain = ~(right | left)
        part = np.zeros(pa.shape)
        if np.any(plain):
            half = 0.5 * (pb[plain] - pa[plain])
            t = mid[plain][:, None] + half[:, None] * x
            part[plain] = (F(t, sgk[plain], ak[plain]) * w).sum(axis=-1) * half
        if np.any(right):
            s_hi = np.sqrt(np.clip(np.pi / 2 - pa[right], 0, None))
            s_lo = np.sqrt(np.clip(np.pi / 2 - pb[right], 0, None))
            half = 0.5 * (s_hi - s_lo)
            sv = (0.5 * (s_hi + s_lo))[:, None] + half[:, None] * x
            part[right] = (F(np.pi / 2 - sv * sv, sgk[right], ak[right]) * 2 * sv * w).sum(axis=-1) * half
        if np.any(left):
            s_lo = np.sqrt(np.clip(pa[left] + np.pi / 2, 0, None))
            s_hi = np.sqrt(np.clip(pb[left] + np.pi / 2, 0, None))
            half = 0.5 * (s_hi - s_lo)
            sv = (0.5 * (s_hi + s_lo))[:, None] + half[:, None] * x
            part[left] = (F(-np.pi / 2 + sv * sv, sgk[left], ak[left]) * 2 * sv * w).sum(axis=-1) * half
        total[ok] += part
    total = np.where(a > 0, total, 0.0)
    return np.where(flip, -total, total)


def _half_plane_tail(k: Kernel, e, nu, offset: float, dim: int, rtol: float) -> float:
    """``int_{rho > offset} |rho|^(d-2) int_R phi(rho e + h nu) dh drho`` for ``offset > 0``."""

    def integrand(theta):
        c = np.cos(theta)
        dirs = c[:, None] * e + np.sin(theta)[:, None] * nu
        with np.errstate(divide="ignore"):
            tail = _tail_at(k.profile, offset / c)
        return k.weight(dirs) * c ** (dim - 2) * tail

    edges = np.linspace(-np.pi / 2, np.pi / 2, 9)
    return adaptive_integral(integrand, edges, rtol=rtol).value


def _interval_integrals(k, e, nu, rho, h, start, keep):
    """``sum_i s_i int phi`` over the sign intervals of each column, masked by ``keep(lo, hi, s)``."""
    n, m = h.shape
    total = np.zeros(n)
    s = start.copy()
    prev = np.full(n, -np.inf)
    for i in range(m + 1):
        nxt = h[:, i] if i < m else np.full(n, np.inf)
        lo, hi, weight = keep(prev, nxt, s)
        valid = (hi > lo) & (weight != 0)
        if np.any(valid):
            total[valid] += weight[valid] * column_integral(k, e, nu, rho[valid], lo[valid], hi[valid])
        prev = nxt
        s = -s
    return total


def directional_curvature(k: Kernel, G: Graph, e, q: QuadParams | None = None) -> CurvatureResult:
    """Directional curvature along a tangent direction by planar integration.

    The plane through the base point spanned by ``e`` and the normal is split
    into the patch box ``|rho| <= rho_p, |h| <= H`` where the set is the
    subgraph of ``G``, the parts of the patch columns outside the box, and
    the far columns. Column integrals use the set's exact line crossings.

    Parameters
    ----------
    k : Kernel
    G : Graph
        Local graph (normal coordinates); its ``parent`` completes the set.
    e : array_like
        Unit tangent direction in the graph's tangent coordinates.
    """
    q = q or QuadParams()
    d = G.dim
    e_loc = np.asarray(e, dtype=float).ravel()[: d - 1]
    e_loc = e_loc / np.linalg.norm(e_loc)
    fr = G.frame_
    e_g = e_loc @ fr.tangents
    nu = fr.normal
    S = G.parent if G.parent is not None else (G if G.is_global else None)
    rho_p = min(G.radius, q.near_radius or G.radius)
    H = G.height
    power = _singular_power(k.profile)
    rmap = power_map(rho_p, power)
    rtol = q.tol / 4
    support = k.profile.support_radius

    # patch box: only the band between 0 and the graph survives the +-rho pairing
    def box(v):
        rho, dr = rmap(v)
        out = np.zeros_like(rho)
        for sgn in (1.0, -1.0):
            f = G.f(sgn * rho[:, None] * e_loc)
            out += -2.0 * column_integral(k, e_g, nu, sgn * rho, 0.0, f)
        with np.errstate(over="ignore", invalid="ignore"):
            val = out * rho ** (d - 2) * dr
        return np.where((dr > 0) & (rho > 1e-300), val, 0.0)

    extra = []
    if np.isfinite(support) and support < rho_p:
        extra.append((support / rho_p) ** (1.0 / power))
    res_box = endpoint_integral(box, power, rtol, q.levels, extra)
    value, err, absval = res_box.value, res_box.error, res_box.abs_value
    trunc = 0.0
    ball_of = None
    if S is None:
        theta_mass = adaptive_integral(lambda t: np.abs(np.cos(t)) ** (d - 2), [0, 2 * np.pi]).value
        trunc = 0.5 * k.weight.sup * theta_mass * float(k.profile.tail(min(rho_p, H)))
    else:
        p0 = fr.point

        def corr(rho):
            out = np.zeros_like(rho)
            for sgn in (1.0, -1.0):
                pts = p0 + (sgn * rho)[:, None] * e_g
                h, start = S.line_crossings(pts, nu)

                def keep(lo, hi, s):
                    up_lo, up_hi = np.maximum(lo, H), hi
                    dn_lo, dn_hi = lo, np.minimum(hi, -H)
                    # (chi - 1) above the box, (chi + 1) below; at most one is non-zero per interval
                    above = (s < 0) & (up_hi > up_lo)
                    below = (s > 0) & (dn_hi > dn_lo)
                    lo2 = np.where(above, up_lo, dn_lo)
                    hi2 = np.where(above, up_hi, dn_hi)
                    wgt = np.where(above, -2.0, np.where(below, 2.0, 0.0))
                    return lo2, hi2, wgt

                out += _interval_integrals(k, e_g, nu, sgn * rho, h, start, keep)
            return out * np.abs(rho) ** (d - 2)

        # absolute scale: kernel mass outside the patch, so exact cancellation terminates
        iso_sup = Kernel(d, Isotropic(k.weight.sup), k.profile)
        mass = 2 * _half_plane_tail(iso_sup, e_g, nu, min(rho_p, H), d, 1e-6)
        atol = rtol * max(mass, 1e-300)
        if not (np.isfinite(support) and support <= H):
            res_c = adaptive_integral(corr, np.linspace(0, rho_p, 5), rtol=rtol, atol=atol)
            value, err, absval = value + res_c.value, err + res_c.error, absval + res_c.abs_value

        def far(rho):
            out = np.zeros_like(rho)
            for sgn in (1.0, -1.0):
                pts = p0 + (sgn * rho)[:, None] * e_g
                h, start = S.line_crossings(pts, nu)
                out += _interval_integrals(k, e_g, nu, sgn * rho, h, start, lambda lo, hi, s: (lo, hi, s))
            return out * rho ** (d - 2)

        bps = np.abs(S.column_breakpoints(p0, e_g, nu))
        bounded = S.bounding_ball() is not None or S.exterior_bounding_ball() is not None
        if bounded and bps.size:
            rho_max = float(bps.max())
        else:
            rho_max = q.far_cutoff or 64.0 * max(S.length_scale, rho_p)
            bounded = False
        if np.isfinite(support):
            rho_max = min(rho_max, support)
        edges = [rho_p, max(rho_max, rho_p)]
        edges += [b for b in bps if rho_p < b < rho_max]
        if np.isfinite(support) and rho_p < support < rho_max:
            edges.append(support)
        if rho_max > rho_p:
            edges = np.sort(np.asarray(edges))
            span = np.geomspace(rho_p, rho_max, 12) if rho_max > 4 * rho_p else np.linspace(rho_p, rho_max, 5)
            res_f = adaptive_integral(far, np.union1d(edges, span), rtol=rtol, atol=atol)
            value, err, absval = value + res_f.value, err + res_f.error, absval + res_f.abs_value
        edge = max(rho_max, rho_p)
        if bounded:
            tail = S.far_sign() * (_half_plane_tail(k, e_g, nu, edge, d, rtol)
                                   + _half_plane_tail(k, -e_g, nu, edge, d, rtol))
            value += tail
            err += 1e-12 * abs(tail)
        elif not (np.isfinite(support) and support <= edge):
            trunc = 0.5 * 2 * _half_plane_tail(iso_sup, e_g, nu, edge, d, rtol)
    meta = {"method": "planar", "rho_patch": rho_p, "box_height": H, "power": power}
    floor = 64 * np.finfo(float).eps * absval
    return CurvatureResult(0.5 * value, 0.5 * max(err, floor), trunc, meta)


def directional_up(profile: RadialProfile, G: Graph, e, q: QuadParams | None = None) -> CurvatureResult:
    """One-sided directional curvature ``-2 int_0^inf rho^(d-2) int_0^f(rho e) j``.

    Only the isotropic profile enters. The radial integral runs over the graph
    patch; for a global graph up to the far cutoff. The omitted region is
    bounded by the full half-plane mass and reported as truncation.
    """
    q = q or QuadParams()
    d = G.dim
    k = Kernel(d, Isotropic(), profile)
    e_loc = np.asarray(e, dtype=float).ravel()[: d - 1]
    e_loc = e_loc / np.linalg.norm(e_loc)
    e_g = e_loc @ G.frame_.tangents
    nu = G.frame_.normal
    top = (q.far_cutoff or 64.0 * G.radius) if G.is_global else G.radius
    power = _singular_power(profile)
    rmap = power_map(top, power)

    def integrand(v):
        rho, dr = rmap(v)
        f = G.f(rho[:, None] * e_loc)
        with np.errstate(over="ignore", invalid="ignore"):
            val = -2.0 * column_integral(k, e_g, nu, rho, 0.0, f) * rho ** (d - 2) * dr
        return np.where((dr > 0) & (rho > 1e-300), val, 0.0)

    extra = []
    if np.isfinite(profile.support_radius) and profile.support_radius < top:
        extra.append((profile.support_radius / top) ** (1.0 / power))
    res = endpoint_integral(integrand, power, q.tol / 4, q.levels, extra)
    trunc = 0.0
    if not (np.isfinite(profile.support_radius) and profile.support_radius <= top):
        trunc = _half_plane_tail(k, e_g, nu, top, d, q.tol)
    return CurvatureResult(res.value, res.error, trunc, {"method": "one-sided", "radius": top})


def mean_from_directional(k: Kernel, E: SetRep, x, q: QuadParams | None = None) -> CurvatureResult:
    """Mean curvature as the normalised average of directional curvatures.

    In the plane both tangent directions are used; in three dimensions the
    tangent circle is sampled with the trapezoid rule at two resolutions.
    """
    q = q or QuadParams()
    G = E.graph(np.asarray(x, dtype=float))
    d = E.dim
    if d == 2:
        a = directional_curvature(k, G, [1.0], q)
        b = directional_curvature(k, G, [-1.0], q)
        meta = {"method": "planar-mean", "K_plus": a.value, "K_minus": b.value}
        return CurvatureResult(0.5 * (a.value + b.value), 0.5 * (a.quad_error + b.quad_error),
                               0.5 * (a.truncation_bound + b.truncation_bound), meta)
    if d == 3:
        m = max(q.angular // 4, 4)
        phis = np.pi * np.arange(m) / m
        vals, errs, trs = [], [], []
        for phi in phis:
            r = directional_curvature(k, G, [math.cos(phi), math.sin(phi)], q)
            vals.append(r.value)
            errs.append(r.quad_error)
            trs.append(r.truncation_bound)
        vals = np.array(vals)
        fine, coarse = vals.mean(), vals[::2].mean()
        return CurvatureResult(float(fine), float(np.mean(errs) + abs(fine - coarse)), float(np.mean(trs)),
                               {"method": "planar-mean", "directions": m})
    raise DomainError("planar evaluator supports dimensions 2 and 3")


# --------------------------------------------------------------------------
# local limits
# --------------------------------------------------------------------------
def classical_directional_curvature(E: SetRep, x, e) -> float:
    """``-e . D^2 f(0) e`` for a tangent direction ``e``.

    ``e`` is either a global vector of length ``d`` (projected onto the
    tangent plane) or ``d - 1`` frame coordinates.
    """
    x = np.asarray(x, dtype=float)
    hess = E.hessian(x)
    e = np.asarray(e, dtype=float).ravel()
    if e.size == E.dim:
        e = E.frame(x).tangents @ e
    n = np.linalg.norm(e)
    if not n > 0:
        raise DomainError("direction has no tangential component")
    e = e / n
    return float(-e @ hess @ e)


def classical_mean_curvature(E: SetRep, x) -> float:
    """Average of the principal curvatures, ``-trace(D^2 f(0)) / (d - 1)``."""
    return float(-np.trace(E.hessian(np.asarray(x, dtype=float))) / (E.dim - 1))


def _tangent_average(E, x, fn, d, samples=256):
    frame = E.frame(np.asarray(x, dtype=float))
    hess = E.hessian(np.asarray(x, dtype=float))
    if d == 2:
        e = frame.tangents[0]
        kap = -float(hess[0, 0])
        return 0.5 * (fn(e) + fn(-e)) * kap
    phi = 2 * np.pi * np.arange(samples) / samples
    loc = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    kap = -np.einsum("ni,ij,nj->n", loc, hess, loc)
    glob = loc @ frame.tangents
    return float(np.mean(fn(glob) * kap))


def tangent_average_curvature(E: SetRep, x, weight) -> float:
    """Mean of ``g(e) K_e`` over unit tangents ``e`` at ``x``."""
    return float(_tangent_average(E, x, weight, E.dim))


def limit_curvature_anisotropic(E: SetRep, x, body: ConvexBody) -> float:
    """Local limit of ``(1 - alpha)`` times the anisotropic fractional curvature.

    The average of ``K_e / gauge(e)^(d+1)`` over unit tangents ``e``.
    """
    d = E.dim
    return _tangent_average(E, x, lambda v: body.gauge(v) ** (-(d + 1)), d)


def limit_curvature_general(E: SetRep, x, weight) -> float:
    """Tangent average of ``g(e) K_e`` divided by ``C_g = int_{S^(d-1)} g``.

    For ``g = 1`` this is ``H / kappa_{d-1}``.
    """
    d = E.dim
    c_g = sphere_integral(weight, d, kink_angles=getattr(weight, "kink_angles", lambda: ())()).value
    if not c_g > 0:
        raise DomainError("angular weight has zero mass")
    return _tangent_average(E, x, weight, d) / c_g


def ball_speed(k: Kernel, radius: float, q: QuadParams | None = None, samples: int = 8):
    """Extreme curvatures of the ball of given radius and of its complement.

    Returns ``(upper, lower)``: the maximum of the curvature of the ball and
    of minus the curvature of its complement over boundary samples, and the
    corresponding minimum.
    """
    d = k.dim
    B = Ball(np.zeros(d), radius)
    C = Complement(B)
    if isinstance(k.weight, Isotropic) or getattr(k.weight, "isotropic", False):
        pts = radius * np.eye(d)[:1]
    elif d == 2:
        t = np.pi * np.arange(samples) / samples
        pts = radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(samples, d))
        pts = radius * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    vals = []
    for p in pts:
        vals.append(mean_curvature_pv(k, B, p, q).value)
        vals.append(-mean_curvature_pv(k, C, p, q).value)
    return max(vals), min(vals)


# --------------------------------------------------------------------------
# axioms as checks
# --------------------------------------------------------------------------
def translation_gap(k: Kernel, E: SetRep, x, shift, q: QuadParams | None = None) -> float:
    """``|H(x + z, E + z) - H(x, E)|``."""
    shift = np.asarray(shift, dtype=float)
    a = mean_curvature_pv(k, E, x, q).value
    b = mean_curvature_pv(k, E.translated(shift), np.asarray(x) + shift, q).value
    return abs(a - b)


def symmetry_gap(k: Kernel, E: SetRep, x, q: QuadParams | None = None) -> float:
    """``|H(x, E) + H(x, complement of E)|``."""
    a = mean_curvature_pv(k, E, x, q).value
    b = mean_curvature_pv(k, Complement(E), x, q).value
    return abs(a + b)


def monotonicity_holds(k: Kernel, inner: SetRep, outer: SetRep, x, q: QuadParams | None = None) -> bool:
    """For ``inner`` contained in ``outer`` touching at ``x``: ``H(x, outer) <= H(x, inner)``."""
    a = mean_curvature_pv(k, outer, x, q)
    b = mean_curvature_pv(k, inner, x, q)
    return a.value <= b.value + a.error + b.error
