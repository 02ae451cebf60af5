"""Set representations, tangent frames and local graph patches.

Every set exposes a signed ``level`` function (negative inside), so the
symmetrised indicator is ``sign(level)``: ``-1`` inside, ``+1`` outside.
Analytic sets also report exact crossings of rays and lines with their
boundary, which is what lets the curvature integrators treat the radial
direction in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.special import gamma

from .errors import DegenerateNormalError, DomainError, LocalizationError
from .quadrature import bisect_roots

__all__ = [
    "kappa",
    "TangentFrame",
    "make_frame",
    "SetRep",
    "HalfSpace",
    "Ball",
    "Ellipsoid",
    "Complement",
    "Graph",
    "MappedSet",
    "LevelSetField",
    "LevelSet",
    "classify",
    "tangent_frame",
    "to_graph",
    "hessian_at",
]


def kappa(m: int) -> float:
    """Surface area of the unit ``m``-sphere, ``2 pi^((m+1)/2) / Gamma((m+1)/2)``."""
    return float(2.0 * math.pi ** ((m + 1) / 2.0) / gamma((m + 1) / 2.0))


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal frame at a boundary point: outward normal plus tangents."""

    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray  # shape (d - 1, d)

    @property
    def dim(self) -> int:
        return self.point.size

    def to_global(self, local):
        """Map local coordinates ``(y', h)`` (last axis) to global points."""
        local = np.asarray(local, dtype=float)
        return self.point + local[..., :-1] @ self.tangents + local[..., -1:] * self.normal

    def directions(self, local_dirs):
        """Rotate local direction vectors into global coordinates."""
        local_dirs = np.asarray(local_dirs, dtype=float)
        return local_dirs[..., :-1] @ self.tangents + local_dirs[..., -1:] * self.normal

    def to_local(self, y):
        y = np.asarray(y, dtype=float) - self.point
        return np.concatenate([y @ self.tangents.T, (y @ self.normal)[..., None]], axis=-1)


def make_frame(point, normal) -> TangentFrame:
    """Complete a unit normal to an orthonormal frame deterministically."""
    point = np.asarray(point, dtype=float)
    nu = np.asarray(normal, dtype=float)
    n = np.linalg.norm(nu)
    if not n > 0:
        raise DegenerateNormalError("normal vector vanishes")
    nu = nu / n
    d = nu.size
    if d == 2:
        tangents = np.array([[nu[1], -nu[0]]])
    else:
        axis = np.zeros(d)
        axis[np.argmin(np.abs(nu))] = 1.0
        basis = [nu]
        for k in range(d):
            cand = np.roll(axis, k)
            for b in basis:
                cand = cand - (cand @ b) * b
            if np.linalg.norm(cand) > 1e-6:
                basis.append(cand / np.linalg.norm(cand))
            if len(basis) == d:
                break
        tangents = np.array(basis[1:])
    return TangentFrame(point, nu, tangents)


# --------------------------------------------------------------------------
# base class
# --------------------------------------------------------------------------
class SetRep:
    """Common interface of closed sets with smooth boundary."""

    dim: int
    tol: float = 1e-12
    bounded: bool = False
    name: str = "set"

    def level(self, y) -> np.ndarray:
        """Signed function, negative in the interior and positive outside."""
        raise NotImplementedError

    def classify(self, y) -> np.ndarray:
        """Symmetrised indicator: ``-1`` inside, ``+1`` outside, ``0`` on a tie."""
        v = np.asarray(self.level(y), dtype=float)
        return np.where(np.abs(v) <= self.tol, 0.0, np.sign(v))

    def frame(self, x) -> TangentFrame:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        """Hessian of the local graph at ``x`` in tangent coordinates."""
        return self.graph(x).hess0

    def graph(self, x, radius: float | None = None) -> "Graph":
        return fit_graph(self, x, radius)

    @property
    def length_scale(self) -> float:
        return 1.0

    def bounding_ball(self):
        """``(center, radius)`` containing the set, or ``None`` if unbounded."""
        return None

    def exterior_bounding_ball(self):
        """Ball containing the complement, for co-bounded sets."""
        return None

    def far_radius(self, x) -> float:
        """Distance from ``x`` beyond which the indicator is constant along rays."""
        ball = self.bounding_ball() or self.exterior_bounding_ball()
        if ball is None:
            return math.inf
        c, r = ball
        return float(np.linalg.norm(np.asarray(x) - c) + r)

    def far_sign(self) -> float:
        """Indicator value at infinity (``+1`` for bounded sets)."""
        return 1.0 if self.bounding_ball() is not None else -1.0

    def ray_crossings(self, frame: TangentFrame, local_dirs, r_max: float | None = None):
        """Crossing distances and indicator jumps along rays from ``frame.point``.

        Returns ``(r, jump)`` of shape ``(n, m)``; unused slots have
        ``r = inf`` and ``jump = 0``.
        """
        return generic_ray_crossings(self, frame, local_dirs, r_max=r_max)

    def line_crossings(self, points, direction):
        """Boundary crossings of the lines ``p + h v``.

        Returns ``(h, start)`` where ``h`` has shape ``(n, m)`` sorted and
        padded with ``inf`` and ``start`` is the indicator at ``h -> -inf``.
        """
        return generic_line_crossings(self, points, direction)

    def column_breakpoints(self, x, e, nu) -> np.ndarray:
        """Offsets ``rho`` where the lines ``x + rho e + h nu`` become tangent."""
        ball = self.bounding_ball() or self.exterior_bounding_ball()
        if ball is None:
            return np.empty(0)
        c, r = ball
        w = c - np.asarray(x)
        we, wn = w @ e, w @ nu
        perp2 = max(w @ w - we**2 - wn**2, 0.0)
        if perp2 >= r * r:
            return np.empty(0)
        half = math.sqrt(r * r - perp2)
        return np.array([we - half, we + half])

    def translated(self, z) -> "SetRep":
        raise NotImplementedError

    def boundary_curve(self, n: int):
        """Planar boundary samples ``(points, normals, speed)`` uniform in a parameter on ``[0, 2 pi)``."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.name}


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------
class Graph(SetRep):
    """Subgraph ``{(y', h) : h <= f(y')}`` in normal coordinates at a boundary point.

    Parameters
    ----------
    f : callable
        Vectorised height function of ``y'`` (last axis of length ``d - 1``).
    radius : float
        Patch radius inside which ``f`` describes the boundary.
    dim : int
    hess0 : ndarray, optional
        ``D^2 f(0)``; estimated by finite differences when omitted.
    frame : TangentFrame, optional
        Embedding of the normal coordinates in space (identity by default).
    parent : SetRep, optional
        Full set used to complete integrals outside the patch.
    is_global : bool
        ``True`` when the subgraph itself is the whole set.
    height : float, optional
        Half-height of the box in which the set coincides with the subgraph.
    """

    name = "graph"

    def __init__(self, f: Callable, radius: float, dim: int, hess0=None, frame: TangentFrame | None = None,
                 parent: SetRep | None = None, is_global: bool = False, height: float | None = None,
                 slope: Callable | None = None):
        self.f, self.radius, self.dim = f, float(radius), int(dim)
        self.frame_ = frame or TangentFrame(np.zeros(dim), np.eye(dim)[-1], np.eye(dim)[:-1])
        self.parent, self.is_global = parent, is_global
        self._slope = slope
        if hess0 is None:
            hess0 = _fd_hessian(f, dim - 1, 1e-3 * self.radius)
        self.hess0 = np.atleast_2d(np.asarray(hess0, dtype=float))
        if height is None:
            height = self._auto_height()
        self.height = float(height)

    def _auto_height(self):
        if self.dim == 2:
            pts = np.linspace(-self.radius, self.radius, 65)[:, None]
        else:
            t = np.linspace(0, 2 * np.pi, 33)
            rr = np.linspace(0, self.radius, 9)
            pts = (rr[:, None, None] * np.stack([np.cos(t), np.sin(t)], -1)[None]).reshape(-1, 2)
        fmax = float(np.nanmax(np.abs(self.f(pts))))
        return max(1.5 * fmax, 0.25 * self.radius)

    def slope(self, rho, e):
        """``f(rho e) / rho`` for ``rho > 0``; the limit ``0`` at ``rho = 0``."""
        rho = np.asarray(rho, dtype=float)
        if self._slope is not None:
            return self._slope(rho, e)
        e = np.asarray(e, dtype=float)
        pts = rho[..., None] * e[..., None, :] if rho.ndim == e.ndim else rho[..., None] * e
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.f(pts) / rho
        return np.where(rho > 0, out, 0.0)

    # as a set in its own coordinates (meaningful for global graphs)
    def level(self, y):
        y = np.asarray(y, dtype=float)
        return y[..., -1] - self.f(y[..., :-1])

    def frame(self, x=None):
        if x is not None and np.linalg.norm(np.asarray(x, dtype=float)) > 0:
            raise LocalizationError("graph frames are only available at the origin")
        return TangentFrame(np.zeros(self.dim), np.eye(self.dim)[-1], np.eye(self.dim)[:-1])

    def graph(self, x=None, radius=None):
        return self

    def hessian(self, x=None):
        return self.hess0

    def line_crossings(self, points, direction):
        v = np.asarray(direction, dtype=float)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if np.allclose(v, np.eye(self.dim)[-1]):
            h = self.f(points[:, :-1]) - points[:, -1]
            return h[:, None], np.full(points.shape[0], -1.0)
        return generic_line_crossings(self, points, v)

    def far_radius(self, x):
        return math.inf if self.is_global else self.radius

    def far_sign(self):
        return 0.0

    def describe(self):
        return {"kind": "graph", "radius": self.radius}


def _fd_hessian(f, m, step):
    hess = np.zeros((m, m))
    eye = np.eye(m)
    f0 = float(f(np.zeros((1, m)))[0])
    for i in range(m):
        for j in range(m):
            if i == j:
                pts = np.array([2 * step * eye[i], -2 * step * eye[i]])
                fp, fm = f(pts)
                hess[i, i] = (fp - 2 * f0 + fm) / (4 * step * step)
            else:
                pts = np.array([step * (eye[i] + eye[j]), step * (eye[i] - eye[j]),
                                step * (-eye[i] + eye[j]), -step * (eye[i] + eye[j])])
                a, b, c, dd = f(pts)
                hess[i, j] = (a - b - c + dd) / (4 * step * step)
    return hess


# --------------------------------------------------------------------------
# analytic sets
# --------------------------------------------------------------------------
def _stable_quadratic(a2, b, c0):
    """Roots of ``a2 h^2 + 2 b h + c0 = 0`` (nan when complex), ascending."""
    disc = b * b - a2 * c0
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -(b + np.copysign(sq, np.where(b == 0, 1.0, b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        h1 = q / a2
        h2 = np.where(q != 0, c0 / q, h1)
    lo, hi = np.minimum(h1, h2), np.maximum(h1, h2)
    return np.where(ok, lo, np.inf), np.where(ok, hi, np.inf)


class HalfSpace(SetRep):
    """Closed half-space ``{y : y . n <= offset}``."""

    name = "halfspace"

    def __init__(self, normal, offset: float = 0.0):
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset) / np.linalg.norm(n)
        self.dim = n.size

    def level(self, y):
        return np.asarray(y, dtype=float) @ self.normal - self.offset

    def frame(self, x):
        return make_frame(x, self.normal)

    def hessian(self, x):
        return np.zeros((self.dim - 1, self.dim - 1))

    def graph(self, x, radius=None):
        radius = radius or 1.0
        return Graph(lambda yp: np.zeros(np.shape(yp)[:-1]), radius, self.dim, np.zeros((self.dim - 1,) * 2),
                     frame=self.frame(x), parent=self, height=radius)

    def ray_crossings(self, frame, local_dirs, r_max=None):
        n = np.asarray(local_dirs).shape[0]
        return np.full((n, 1), np.inf), np.zeros((n, 1))

    def line_crossings(self, points, direction):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vn = float(np.asarray(direction) @ self.normal)
        if vn == 0.0:
            return np.full((points.shape[0], 1), np.inf), np.sign(self.level(points))
        h = (self.offset - points @ self.normal) / vn
        return h[:, None], np.full(points.shape[0], -1.0 if vn > 0 else 1.0)

    def far_radius(self, x):
        return math.inf

    def far_sign(self):
        return 0.0

    def column_breakpoints(self, x, e, nu):
        return np.empty(0)

    def translated(self, z):
        return HalfSpace(self.normal, self.offset + float(np.asarray(z) @ self.normal))

    def describe(self):
        return {"kind": "halfspace", "normal": self.normal.tolist(), "offset": self.offset}


class Ellipsoid(SetRep):
    """Solid ellipsoid ``c + M B`` where ``B`` is the closed unit ball.

    Parameters
    ----------
    center : array_like
    semi_axes : array_like
        Semi-axis lengths along the columns of ``rotation``.
    rotation : array_like, optional
        Orthogonal matrix; identity when omitted.
    matrix : array_like, optional
        Alternative to ``semi_axes``/``rotation``: any invertible ``M``.
    """

    name = "ellipsoid"

    def __init__(self, center, semi_axes=None, rotation=None, matrix=None):
        c = np.asarray(center, dtype=float)
        self.center, self.dim = c, c.size
        if matrix is None:
            a = np.asarray(semi_axes, dtype=float)
            if a.size != self.dim or np.any(a <= 0):
                raise ValueError("semi-axes must be positive, one per dimension")
            rot = np.eye(self.dim) if rotation is None else np.asarray(rotation, dtype=float)
            matrix = rot * a
        self.matrix = np.asarray(matrix, dtype=float)
        u, s, _ = np.linalg.svd(self.matrix)
        self.semi_axes, self.rotation = s, u
        self.inv = np.linalg.inv(self.matrix)
        self.quad = self.inv.T @ self.inv
        self.bounded = True

    def _w(self, y):
        return np.asarray(y, dtype=float) - self.center

    def level(self, y):
        w = self._w(y)
        return np.einsum("...i,ij,...j->...", w, self.quad, w) - 1.0

    def frame(self, x):
        return make_frame(x, self.quad @ self._w(x))

    @property
    def length_scale(self):
        return float(self.semi_axes.min())

    def hessian(self, x):
        fr = self.frame(x)
        grad = 2 * self.quad @ self._w(x)
        return -2 * fr.tangents @ self.quad @ fr.tangents.T / np.linalg.norm(grad)

    def graph(self, x, radius=None):
        fr = self.frame(x)
        A, T, nu = self.quad, fr.tangents, fr.normal
        TAT = T @ A @ T.T
        nAw0 = float(nu @ A @ self._w(x))
        nAT = nu @ A @ T.T
        a2 = float(nu @ A @ nu)
        # curvature radius in the tightest direction sets the usable patch
        hess = self.hessian(x)
        kmax = max(np.abs(np.linalg.eigvalsh(hess)).max(), 1e-12)
        radius = radius or 0.5 * min(1.0 / kmax, self.length_scale)

        def f(yp):
            yp = np.asarray(yp, dtype=float)
            c0 = np.einsum("...i,ij,...j->...", yp, TAT, yp)
            b = nAw0 + yp @ nAT
            disc = b * b - a2 * c0
            if np.any(disc < 0):
                raise LocalizationError("column misses the ellipsoid inside the patch")
            return -c0 / (b + np.sqrt(disc))

        return Graph(f, radius, self.dim, hess, frame=fr, parent=self)

    def ray_crossings(self, frame, local_dirs, r_max=None):
        dirs = frame.directions(local_dirs)
        num = -2.0 * dirs @ (self.quad @ self._w(frame.point))
        den = np.einsum("ni,ij,nj->n", dirs, self.quad, dirs)
        r = num / den
        inward = r > 0
        return np.where(inward, r, np.inf)[:, None], np.where(inward, 2.0, 0.0)[:, None]

    def line_crossings(self, points, direction):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v = np.asarray(direction, dtype=float)
        w = points - self.center
        Av = self.quad @ v
        a2 = float(v @ Av)
        b = w @ Av
        c0 = np.einsum("ni,ij,nj->n", w, self.quad, w) - 1.0
        lo, hi = _stable_quadratic(a2, b, c0)
        return np.stack([lo, hi], axis=1), np.ones(points.shape[0])

    def column_breakpoints(self, x, e, nu):
        A, w0 = self.quad, self._w(x)
        a2 = nu @ A @ nu
        b0, b1 = nu @ A @ w0, nu @ A @ e
        c00, c01, c02 = w0 @ A @ w0 - 1.0, 2 * (e @ A @ w0), e @ A @ e
        # discriminant b^2 - a2 c0 as a quadratic in rho
        qa, qb, qc = b1 * b1 - a2 * c02, 2 * b0 * b1 - a2 * c01, b0 * b0 - a2 * c00
        roots = np.roots([qa, qb, qc])
        return np.sort(roots[np.abs(roots.imag) < 1e-12].real)

    def bounding_ball(self):
        return self.center, float(self.semi_axes.max())

    def translated(self, z):
        return Ellipsoid(self.center + np.asarray(z, dtype=float), matrix=self.matrix)

    def volume(self) -> float:
        d = self.dim
        return float(abs(np.linalg.det(self.matrix)) * math.pi ** (d / 2) / gamma(d / 2 + 1))

    def boundary_curve(self, n):
        if self.dim != 2:
            raise DomainError("boundary curves are planar")
        t = 2 * np.pi * np.arange(n) / n
        circ = np.stack([np.cos(t), np.sin(t)], axis=1)
        pts = self.center + circ @ self.matrix.T
        tang = np.stack([-np.sin(t), np.cos(t)], axis=1) @ self.matrix.T
        speed = np.linalg.norm(tang, axis=1)
        sgn = np.sign(np.linalg.det(self.matrix))
        normals = sgn * np.stack([tang[:, 1], -tang[:, 0]], axis=1) / speed[:, None]
        return pts, normals, speed

    def describe(self):
        return {"kind": "ellipsoid", "center": self.center.tolist(), "matrix": self.matrix.tolist()}


class Ball(Ellipsoid):
    """Closed Euclidean ball."""

    name = "ball"

    def __init__(self, center, radius: float = 1.0):
        c = np.asarray(center, dtype=float)
        if not radius > 0:
            raise ValueError("radius must be positive")
        super().__init__(c, np.full(c.size, float(radius)))
        self.radius = float(radius)

    def level(self, y):
        return np.linalg.norm(self._w(y), axis=-1) - self.radius

    def frame(self, x):
        return make_frame(x, self._w(x))

    def hessian(self, x):
        return -np.eye(self.dim - 1) / self.radius

    def graph(self, x, radius=None):
        r = self.radius
        fr = self.frame(x)

        def f(yp):
            s = np.sum(np.asarray(yp, dtype=float) ** 2, axis=-1)
            if np.any(s > r * r):
                raise LocalizationError("column misses the ball inside the patch")
            return -s / (r + np.sqrt(r * r - s))

        def slope(rho, e):
            rho = np.asarray(rho, dtype=float)
            return -rho / (r + np.sqrt(np.clip(r * r - rho * rho, 0, None)))

        return Graph(f, radius or 0.5 * r, self.dim, self.hessian(x), frame=fr, parent=self, slope=slope)

    def ray_crossings(self, frame, local_dirs, r_max=None):
        dirs = frame.directions(local_dirs)
        r = -2.0 * dirs @ self._w(frame.point)
        inward = r > 0
        return np.where(inward, r, np.inf)[:, None], np.where(inward, 2.0, 0.0)[:, None]

    def translated(self, z):
        return Ball(self.center + np.asarray(z, dtype=float), self.radius)

    def describe(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


class Complement(SetRep):
    """Closure of the complement of another set."""

    name = "complement"

    def __init__(self, base: SetRep):
        self.base, self.dim = base, base.dim
        self.bounded = False

    def level(self, y):
        return -self.base.level(y)

    def frame(self, x):
        fr = self.base.frame(x)
        return TangentFrame(fr.point, -fr.normal, fr.tangents)

    def hessian(self, x):
        return -self.base.hessian(x)

    @property
    def length_scale(self):
        return self.base.length_scale

    def graph(self, x, radius=None):
        g = self.base.graph(x, radius)
        f = g.f
        slope = None if g._slope is None else (lambda rho, e: -g._slope(rho, e))
        return Graph(lambda yp: -f(yp), g.radius, self.dim, -g.hess0, frame=self.frame(x), parent=self,
                     height=g.height, slope=slope)

    def ray_crossings(self, frame, local_dirs, r_max=None):
        base_frame = TangentFrame(frame.point, -frame.normal, frame.tangents)
        ld = np.array(local_dirs, dtype=float)
        ld[:, -1] = -ld[:, -1]
        r, jump = self.base.ray_crossings(base_frame, ld, r_max)
        return r, -jump

    def line_crossings(self, points, direction):
        h, start = self.base.line_crossings(points, direction)
        return h, -start

    def column_breakpoints(self, x, e, nu):
        return self.base.column_breakpoints(x, e, nu)

    def bounding_ball(self):
        return None

    def exterior_bounding_ball(self):
        return self.base.bounding_ball()

    def far_sign(self):
        return -self.base.far_sign()

    def translated(self, z):
        return Complement(self.base.translated(z))

    def boundary_curve(self, n):
        pts, normals, speed = self.base.boundary_curve(n)
        return pts, -normals, speed

    def describe(self):
        return {"kind": "complement", "of": self.base.describe()}


# --------------------------------------------------------------------------
# generic crossing search
# --------------------------------------------------------------------------
def _sign_changes(signs):
    """Indices ``(row, col)`` where ``signs[:, col] != signs[:, col + 1]``."""
    return np.nonzero(signs[:, 1:] != signs[:, :-1])


def generic_ray_crossings(E: SetRep, frame: TangentFrame, local_dirs, r_max=None, graph: Graph | None = None,
                          far_samples: int = 96):
    """Ray crossings from a boundary point by local-graph and level-function scans.

    Within half the patch radius the ray is compared against the local
    graph through the slope ``f(rho e)/rho``, which is regular at the base
    point; beyond it the level function is sampled and sign changes are
    refined by bisection.
    """
    local_dirs = np.atleast_2d(np.asarray(local_dirs, dtype=float))
    n, d = local_dirs.shape
    if graph is None:
        graph = E.graph(frame.point)
    tan = local_dirs[:, :-1]
    sn = local_dirs[:, -1]
    c = np.linalg.norm(tan, axis=1)
    et = tan / np.where(c > 0, c, 1.0)[:, None]
    r_near = 0.5 * min(graph.radius, graph.height)
    ref = np.concatenate([[0.0], np.geomspace(1e-10, 1.0, 40) * r_near])

    def qfun(r, rows):
        rr = np.asarray(r, dtype=float)
        cc, ee, ss = c[rows], et[rows], sn[rows]
        if rr.ndim == 2:
            return ss[:, None] - cc[:, None] * graph.slope(rr * cc[:, None], ee)
        return ss - cc * graph.slope(rr * cc, ee)

    all_rows = np.arange(n)
    qs = np.sign(qfun(np.broadcast_to(ref, (n, ref.size)), all_rows))
    qs[:, 0] = np.sign(sn)
    rows, cols = _sign_changes(qs)
    rows_keep = qs[rows, cols] != 0
    rows, cols = rows[rows_keep], cols[rows_keep]
    near_r = bisect_roots(lambda r: qfun(r, rows), ref[cols], ref[cols + 1], qs[rows, cols])
    near_jump = qs[rows, cols + 1] - qs[rows, cols]
    end_sign = qs[:, -1]

    far = E.far_radius(frame.point) if r_max is None else r_max
    if not np.isfinite(far):
        far = 64.0 * max(graph.radius, E.length_scale)
    out_r = [[] for _ in range(n)]
    out_j = [[] for _ in range(n)]
    for i, r, j in zip(rows, near_r, near_jump):
        out_r[i].append(r)
        out_j[i].append(j)
    if far > r_near:
        step = max(E.length_scale, r_near) / 24.0
        m = int(min(max(far_samples, math.ceil((far - r_near) / step)), 4096))
        grid = r_near + (far - r_near) * np.linspace(0.0, 1.0, m + 1)
        dirs = frame.directions(local_dirs)
        pts = frame.point + grid[None, :, None] * dirs[:, None, :]
        signs = np.sign(E.level(pts))
        mismatch = signs[:, 0] != end_sign
        for i in np.nonzero(mismatch & (signs[:, 0] != 0))[0]:
            out_r[i].append(r_near)
            out_j[i].append(signs[i, 0] - end_sign[i])
        frows, fcols = _sign_changes(signs)
        good = (signs[frows, fcols] != 0) & (signs[frows, fcols + 1] != 0)
        frows, fcols = frows[good], fcols[good]
        if frows.size:
            fdirs = dirs[frows]

            def lv(r):
                return E.level(frame.point + r[:, None] * fdirs)

            far_r = bisect_roots(lv, grid[fcols], grid[fcols + 1], signs[frows, fcols])
            for i, r, j in zip(frows, far_r, signs[frows, fcols + 1] - signs[frows, fcols]):
                out_r[i].append(r)
                out_j[i].append(j)
    width = max(1, max(len(v) for v in out_r))
    r_arr = np.full((n, width), np.inf)
    j_arr = np.zeros((n, width))
    for i in range(n):
        k = len(out_r[i])
        if k:
            r_arr[i, :k] = out_r[i]
            j_arr[i, :k] = out_j[i]
    return r_arr, j_arr


def generic_line_crossings(E: SetRep, points, direction, half_length: float | None = None, samples: int = 257):
    """Sign-change scan of the level function along lines ``p + h v``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(direction, dtype=float)
    ball = E.bounding_ball() or E.exterior_bounding_ball()
    if half_length is None:
        if ball is None:
            half_length = 64.0 * E.length_scale
        else:
            c, r = ball
            half_length = float(np.max(np.linalg.norm(points - c, axis=1)) + r)
    grid = np.linspace(-half_length, half_length, samples)
    pts = points[:, None, :] + grid[None, :, None] * v
    signs = np.sign(E.level(pts))
    rows, cols = _sign_changes(signs)
    h = bisect_roots(lambda t: E.level(points[rows] + t[:, None] * v), grid[cols], grid[cols + 1],
                     signs[rows, cols]) if rows.size else np.empty(0)
    width = max(1, np.bincount(rows, minlength=points.shape[0]).max() if rows.size else 1)
    out = np.full((points.shape[0], width), np.inf)
    fill = np.zeros(points.shape[0], dtype=int)
    for i, hv in zip(rows, h):
        out[i, fill[i]] = hv
        fill[i] += 1
    start = signs[:, 0]
    if ball is None:
        start = np.where(start == 0, 1.0, start)
    else:
        start = np.full(points.shape[0], E.far_sign())
    return np.sort(out, axis=1), start


def fit_graph(E: SetRep, x, radius: float | None = None, degree: int = 10, columns: int = 41) -> Graph:
    """Local graph by column root finding and a polynomial least-squares fit.

    Columns ``x + y' + h nu`` are solved for the boundary height on a
    Chebyshev set of offsets; the fit has no constant or linear term since
    the frame is tangent at ``x``.
    """
    fr = E.frame(x)
    d = E.dim
    radius = radius or 0.25 * E.length_scale
    if d == 2:
        yp = (radius * np.cos(np.pi * np.arange(columns) / (columns - 1)))[:, None]
    else:
        k = int(math.sqrt(columns * 4))
        t = np.cos(np.pi * np.arange(k) / (k - 1))
        g1, g2 = np.meshgrid(t, t)
        yp = radius * np.stack([g1.ravel(), g2.ravel()], axis=1)
        yp = yp[np.linalg.norm(yp, axis=1) <= radius * (1 + 1e-12)]
    heights = _column_heights(E, fr, yp, radius)
    powers = _monomials(d - 1, degree)
    design = _design(yp / radius, powers)
    coef, *_ = np.linalg.lstsq(design, heights, rcond=None)
    resid = np.abs(design @ coef - heights).max()

    def f(q):
        q = np.asarray(q, dtype=float)
        return _design(q.reshape(-1, d - 1) / radius, powers).reshape(q.shape[:-1] + (len(powers),)) @ coef

    def slope(rho, e):
        # f(rho e) / rho term by term, so accuracy is kept near the base point
        rho = np.asarray(rho, dtype=float)
        e = np.asarray(e, dtype=float)
        out = np.zeros(rho.shape)
        for c, pw in zip(coef, powers):
            deg = sum(pw)
            dirpart = np.prod([(e[:, None, i] if rho.ndim == 2 else e[..., i]) ** pw[i] for i in range(d - 1)],
                              axis=0)
            out = out + c * dirpart * (rho / radius) ** (deg - 1) / radius
        return out

    hess = np.zeros((d - 1, d - 1))
    for c, pw in zip(coef, powers):
        if sum(pw) == 2:
            idx = [i for i in range(d - 1) for _ in range(pw[i])]
            if idx[0] == idx[1]:
                hess[idx[0], idx[0]] = 2 * c / radius**2
            else:
                hess[idx[0], idx[1]] = hess[idx[1], idx[0]] = c / radius**2
    g = Graph(f, radius, d, hess, frame=fr, parent=E, slope=slope)
    g.fit_residual = float(resid)
    return g


def _column_heights(E, fr, yp, half):
    base = fr.point + yp @ fr.tangents
    lo = np.full(yp.shape[0], -half)
    hi = np.full(yp.shape[0], half)
    slo = np.sign(E.level(base + lo[:, None] * fr.normal))
    shi = np.sign(E.level(base + hi[:, None] * fr.normal))
    if np.any(slo >= 0) or np.any(shi <= 0):
        raise LocalizationError("boundary is not a graph over the tangent plane at this scale")
    return bisect_roots(lambda h: E.level(base + h[:, None] * fr.normal), lo, hi, slo)


def _monomials(m, degree):
    if m == 1:
        return [(k,) for k in range(2, degree + 1)]
    return [(i, k - i) for k in range(2, degree + 1) for i in range(k + 1)]


def _design(u, powers):
    u = np.atleast_2d(u)
    return np.stack([np.prod(u ** np.array(p), axis=1) for p in powers], axis=1)


# --------------------------------------------------------------------------
# images of sets under diffeomorphisms
# --------------------------------------------------------------------------
class MappedSet(SetRep):
    """Image ``Phi(E)`` of a set under a diffeomorphism close to the identity.

    Parameters
    ----------
    base : SetRep
    forward : callable
        ``Phi`` applied to points (last axis).
    jacobian : callable
        ``D Phi`` at points, shape ``(..., d, d)``.
    displacement_bound : float
        Bound on ``|Phi(p) - p|``, used for bounding balls.
    """

    name = "mapped"

    def __init__(self, base: SetRep, forward: Callable, jacobian: Callable, displacement_bound: float = 0.0,
                 label: str = "mapped"):
        self.base, self.forward, self.jacobian = base, forward, jacobian
        self.dim = base.dim
        self.disp = float(displacement_bound)
        self.bounded = base.bounded
        self.label = label

    @property
    def length_scale(self):
        return self.base.length_scale

    def inverse(self, y, iters: int = 30):
        y = np.asarray(y, dtype=float)
        p = y.copy()
        for _ in range(iters):
            res = self.forward(p) - y
            if np.max(np.abs(res), initial=0.0) < 1e-15 * max(1.0, float(np.max(np.abs(y), initial=0.0))):
                break
            jac = self.jacobian(p)
            p = p - np.linalg.solve(jac, res[..., None])[..., 0]
        return p

    def level(self, y):
        return self.base.level(self.inverse(y))

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        p = self.inverse(x)
        nb = self.base.frame(p).normal
        nu = np.linalg.solve(self.jacobian(p).T, nb)
        return make_frame(x, nu)

    def graph(self, x, radius=None):
        return fit_graph(self, x, radius or 0.25 * self.length_scale)

    def bounding_ball(self):
        ball = self.base.bounding_ball()
        return None if ball is None else (ball[0], ball[1] + self.disp)

    def exterior_bounding_ball(self):
        ball = self.base.exterior_bounding_ball()
        return None if ball is None else (ball[0], ball[1] + self.disp)

    def far_sign(self):
        return self.base.far_sign()

    def boundary_curve(self, n):
        pts, normals, speed = self.base.boundary_curve(n)
        jac = self.jacobian(pts)
        tang = np.stack([-normals[:, 1], normals[:, 0]], axis=1)
        mt = np.einsum("nij,nj->ni", jac, tang)
        new_speed = speed * np.linalg.norm(mt, axis=1)
        mt /= np.linalg.norm(mt, axis=1, keepdims=True)
        return self.forward(pts), np.stack([mt[:, 1], -mt[:, 0]], axis=1), new_speed

    def describe(self):
        return {"kind": "mapped", "label": self.label, "base": self.base.describe()}


# --------------------------------------------------------------------------
# level sets on grids
# --------------------------------------------------------------------------
@dataclass
class LevelSetField:
    """Samples of a level function on a uniform grid.

    ``values[i, j, ...]`` is the value at ``origin + spacing * (i, j, ...)``.
    """

    values: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)

    @property
    def dim(self) -> int:
        return self.values.ndim

    def coordinates(self):
        axes = [self.origin[i] + self.spacing * np.arange(n) for i, n in enumerate(self.values.shape)]
        return np.meshgrid(*axes, indexing="ij")

    @classmethod
    def from_function(cls, fn, lower, upper, spacing):
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        counts = np.floor((upper - lower) / spacing + 1e-9).astype(int) + 1
        axes = [lower[i] + spacing * np.arange(n) for i, n in enumerate(counts)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(grids, axis=-1)
        return cls(fn(pts), lower, spacing)

    def save(self, path) -> None:
        """Write the field: a text header ended by ``data``, then raw floats.

        Header lines are ``dims n1 n2 ...``, ``spacing h`` and ``origin x1 x2 ...``;
        the payload is row-major little-endian 64-bit floats.
        """
        head = [
            _LEVELSET_MAGIC,
            "dims " + " ".join(str(n) for n in self.values.shape),
            f"spacing {self.spacing!r}",
            "origin " + " ".join(repr(float(v)) for v in self.origin),
            "data",
        ]
        with open(path, "wb") as fh:
            fh.write(("\n".join(head) + "\n").encode("ascii"))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "LevelSetField":
        with open(path, "rb") as fh:
            raw = fh.read()
        meta = {}
        pos = 0
        while True:
            end = raw.find(b"\n", pos)
            if end < 0:
                raise ValueError(f"{path}: level-set header not terminated")
            line = raw[pos:end].decode("ascii").strip()
            pos = end + 1
            if line == "data":
                break
            key, _, rest = line.partition(" ")
            meta[key] = rest.split()
        if _LEVELSET_MAGIC.split()[0] not in meta:
            raise ValueError(f"{path}: not a level-set file")
        try:
            dims = tuple(int(v) for v in meta["dims"])
            spacing = float(meta["spacing"][0])
            origin = np.array([float(v) for v in meta["origin"]])
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"{path}: bad level-set header ({exc})") from None
        values = np.frombuffer(raw, dtype="<f8", offset=pos)
        if values.size != int(np.prod(dims)) or origin.size != len(dims):
            raise ValueError(f"{path}: payload does not match header")
        return cls(values.reshape(dims).astype(float), origin, spacing)


_LEVELSET_MAGIC = "curvkit-levelset 1"


class LevelSet(SetRep):
    """Sublevel set ``{u <= 0}`` of a gridded function with cubic-spline interpolation."""

    name = "levelset"

    def __init__(self, field: LevelSetField):
        self.field = field
        self.dim = field.dim
        self.tol = 0.0
        self._coef = ndimage.spline_filter(field.values, order=3, mode="nearest")
        lo = field.origin
        hi = field.origin + field.spacing * (np.array(field.values.shape) - 1)
        self.lower, self.upper = lo, hi
        v = field.values
        edge = np.concatenate([np.moveaxis(v, i, 0)[[0, -1]].ravel() for i in range(v.ndim)])
        self.bounded = bool(np.all(edge > 0))

    @property
    def length_scale(self):
        return float(np.min(self.upper - self.lower)) / 4.0

    def level(self, y):
        y = np.asarray(y, dtype=float)
        idx = (y - self.field.origin) / self.field.spacing
        flat = idx.reshape(-1, self.dim).T
        vals = ndimage.map_coordinates(self._coef, flat, order=3, mode="nearest", prefilter=False)
        return vals.reshape(y.shape[:-1])

    def gradient(self, y):
        y = np.asarray(y, dtype=float)
        step = 1e-3 * self.field.spacing
        out = np.empty(y.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            out[..., i] = (self.level(y + e) - self.level(y - e)) / (2 * step)
        return out

    def project(self, x, iters: int = 20):
        """Newton projection of ``x`` onto the zero level along the gradient."""
        x = np.asarray(x, dtype=float)
        for _ in range(iters):
            g = self.gradient(x)
            gg = g @ g
            if gg < 1e-24:
                raise DegenerateNormalError("level-set gradient vanishes")
            dx = self.level(x) * g / gg
            x = x - dx
            if np.linalg.norm(dx) < 1e-14 * self.field.spacing:
                break
        return x

    def frame(self, x):
        x = self.project(x)
        g = self.gradient(x)
        if np.linalg.norm(g) < 1e-12:
            raise DegenerateNormalError("level-set gradient vanishes")
        return make_frame(x, g)

    def graph(self, x, radius=None):
        h = self.field.spacing
        return fit_graph(self, x, radius or 3.0 * h, degree=2, columns=7)

    def hessian(self, x):
        return self.graph(x).hess0

    def bounding_ball(self):
        if not self.bounded:
            return None
        c = 0.5 * (self.lower + self.upper)
        return c, float(np.linalg.norm(self.upper - c))

    def describe(self):
        return {"kind": "levelset", "shape": list(self.field.values.shape), "spacing": self.field.spacing}


# --------------------------------------------------------------------------
# functional front end
# --------------------------------------------------------------------------
def classify(E: SetRep, y):
    """Symmetrised indicator of ``E`` at ``y``."""
    return E.classify(y)


def tangent_frame(E: SetRep, x) -> TangentFrame:
    return E.frame(x)


def to_graph(E: SetRep, x, radius: float | None = None) -> Graph:
    return E.graph(x, radius)


def hessian_at(E: SetRep, x) -> np.ndarray:
    return E.hessian(x)
