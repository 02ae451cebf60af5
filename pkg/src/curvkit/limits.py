"""Sweeps of normalised curvatures along kernel families and their limits.

Each sweep evaluates a normalised curvature at a ladder of indices, fits
``v(x) = L + c x**p`` through the last three points with ``x`` the distance
of the index to its limit, and compares ``L`` with a target computed from
the classical geometry of the set.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .convex_body import ConvexBody
from .curvature import (
    QuadParams,
    anisotropic_fractional_curvature,
    classical_mean_curvature,
    limit_curvature_anisotropic,
    mean_curvature_pv,
    tangent_average_curvature,
)
from .errors import DomainError
from .geometry import HalfSpace, SetRep, kappa
from .kernels import (
    BiweightProfile,
    Isotropic,
    Kernel,
    RadialProfile,
    ScaledProfile,
    fractional_kernel,
    make_family,
    normalization_constant,
    tail_mass,
)
from .perimeter import Deformation, NormalBump
from .quadrature import richardson_limit

__all__ = [
    "SweepReport",
    "MovingSets",
    "sweep_alpha_up",
    "sweep_alpha_down",
    "sweep_rescaled",
    "sweep_regularly_varying",
    "limits_agree",
    "rescaled_constant_ratio",
]

CSV_COLUMNS = ("index", "normalized_value", "quad_error", "truncation_bound", "target", "gap", "order_estimate")


@dataclass
class SweepReport:
    """Normalised values along an index ladder with their extrapolated limit.

    Attributes
    ----------
    kind : str
        Sweep name, e.g. ``alpha_up``.
    indices : list of float
        Strictly monotone ladder of family indices.
    values, quad_errors, truncation_bounds : list of float
        Normalised curvature per index and its error split.
    distances : list of float
        Distance of each index to the limit, the Richardson variable.
    target : float
    target_source : str
        How the target was obtained.
    limit, limit_error, order : float
        Richardson extrapolation over the last three points.
    extra : dict
        Additional per-row columns (for example tail masses).
    """

    kind: str
    indices: list
    values: list
    quad_errors: list
    truncation_bounds: list
    distances: list
    target: float
    target_source: str
    limit: float
    limit_error: float
    order: float
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def _relative(self, v):
        if self.target == 0:
            return abs(v)
        return abs(v - self.target) / abs(self.target)

    @property
    def gap(self) -> float:
        """Relative distance of the extrapolated limit to the target."""
        return self._relative(self.limit)

    @property
    def row_gaps(self) -> list:
        return [self._relative(v) for v in self.values]

    def residuals(self) -> np.ndarray:
        """Distance of each row to the extrapolated limit."""
        return np.abs(np.asarray(self.values) - self.limit)

    def rows(self) -> list[dict]:
        out = []
        for i, idx in enumerate(self.indices):
            row = {
                "index": idx,
                "normalized_value": self.values[i],
                "quad_error": self.quad_errors[i],
                "truncation_bound": self.truncation_bounds[i],
                "target": self.target,
                "gap": self.row_gaps[i],
                "order_estimate": self.order,
            }
            for name, col in self.extra.items():
                row[name] = col[i]
            out.append(row)
        return out

    def write_csv(self, fh, header: dict | None = None) -> None:
        """Write ``#`` summary lines, one row per index and a final extrapolation row."""
        names = list(CSV_COLUMNS) + list(self.extra)
        for key, val in {**(header or {}), **self.summary()}.items():
            fh.write(f"# {key}={val}\n")
        writer = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: repr(float(v)) for k, v in row.items()})
        writer.writerow({
            "index": "extrapolated",
            "normalized_value": repr(self.limit),
            "quad_error": repr(self.limit_error),
            "truncation_bound": "",
            "target": repr(self.target),
            "gap": repr(self.gap),
            "order_estimate": repr(self.order),
        })

    def to_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh, header)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "limit": self.limit,
            "limit_error": self.limit_error,
            "order_estimate": self.order,
            "target": self.target,
            "target_source": self.target_source,
            "gap": self.gap,
        }

    def as_dict(self) -> dict:
        return {**self.summary(), **self.meta, "rows": self.rows()}


def _check_ladder(indices, toward: str):
    idx = np.asarray(indices, dtype=float)
    if idx.size < 1 or not np.all(np.isfinite(idx)):
        raise DomainError("index ladder must be a non-empty list of numbers")
    steps = np.diff(idx)
    ok = np.all(steps > 0) if toward == "up" else np.all(steps < 0)
    if not ok:
        raise DomainError(f"index ladder must be strictly {'increasing' if toward == 'up' else 'decreasing'}")
    return [float(v) for v in idx]


def _map_rows(fn: Callable, items: Sequence, workers: int) -> list:
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _build_report(kind, indices, distances, rows, target, source, extra=None, meta=None) -> SweepReport:
    values = [r[0] for r in rows]
    qerr = [r[1] for r in rows]
    trunc = [r[2] for r in rows]
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{kind} sweep produced non-finite values")
    limit, order, err = richardson_limit(distances[-3:], values[-3:])
    # the fit cannot be more accurate than the rows it is built from
    err = float(err + max(qerr[-1] + trunc[-1], 0.0))
    return SweepReport(kind, list(indices), values, qerr, trunc, list(distances), float(target), source,
                       limit, err, order, extra or {}, meta or {})


# --------------------------------------------------------------------------
# moving sets
# --------------------------------------------------------------------------


@dataclass
class MovingSets:
    """Sets ``E_n = Phi_n(E)`` with ``Phi_n = id + delta0/n * b``.

    The default field ``b`` is a radial bump supported in a cone whose axis
    is tangent to ``E`` at the tracked point and whose half-width is below a
    right angle, so ``b`` vanishes near the tracked point and the point stays
    on every ``dE_n``.
    """

    base: SetRep
    point: np.ndarray
    delta0: float = 0.05
    counts: tuple = (1, 2, 4)
    field_: Deformation | None = None

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        if self.field_ is None:
            frame = self.base.frame(self.point)
            radius = float(self.base.length_scale)
            centre = self.point - radius * frame.normal
            self.field_ = NormalBump(centre, frame.tangents[0], width=1.2, amplitude=1.0, inner=0.5 * radius)
        if np.linalg.norm(self.field_.psi(self.point)) > 1e-14:
            raise DomainError("bump field does not vanish at the tracked point")
        self.counts = tuple(int(n) for n in self.counts)
        if any(n < 1 for n in self.counts) or any(np.diff(self.counts) <= 0):
            raise DomainError("set counts must be increasing positive integers")

    def delta(self, n: int) -> float:
        return self.delta0 / n

    def member(self, n: int) -> SetRep:
        return self.field_.apply(self.base, self.delta(n))

    def c2_norms(self, samples: int = 2000, seed: int = 0) -> np.ndarray:
        """Sampled ``C^2`` norms of ``Phi_n - id`` for each count."""
        rng = np.random.default_rng(seed)
        d = self.base.dim
        centre, radius = self.base.bounding_ball() if self.base.bounded else (self.point, 2.0)
        pts = np.asarray(centre) + 1.5 * radius * rng.uniform(-1, 1, size=(samples, d))
        b = self.field_.psi(pts)
        jac = self.field_.jacobian_psi(pts)
        step = 1e-4
        second = 0.0
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            diff = (self.field_.jacobian_psi(pts + e) - self.field_.jacobian_psi(pts - e)) / (2 * step)
            second = max(second, float(np.max(np.abs(diff))))
        base_norm = max(float(np.max(np.abs(b))), float(np.max(np.abs(jac))), second)
        return np.array([self.delta(n) * base_norm for n in self.counts])

    def describe(self) -> dict:
        return {"delta0": self.delta0, "counts": list(self.counts), "point": self.point.tolist(),
                "field": self.field_.describe()}


def limits_agree(a: SweepReport, b: SweepReport) -> bool:
    """Whether two extrapolated limits agree within their combined errors."""
    return abs(a.limit - b.limit) <= a.limit_error + b.limit_error


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


def sweep_alpha_up(E, x, alphas=(0.9, 0.95, 0.99), body: ConvexBody | None = None, q: QuadParams | None = None,
                   workers: int = 1) -> SweepReport:
    """``(1 - alpha)`` times the fractional curvature as ``alpha`` increases to 1.

    The isotropic target is the classical mean curvature, the average of the
    principal curvatures.

    Parameters
    ----------
    E : SetRep or MovingSets
        With moving sets the ``k``-th index is evaluated on the ``k``-th set
        of the sequence, so the ladder and the counts must have equal length.
    x : array_like
        Boundary point (shared by all moving sets).
    body : ConvexBody, optional
        Use the anisotropic kernel ``gauge_K^(-d-alpha)``; the target is then
        the anisotropic local limit.
    """
    alphas = _check_ladder(alphas, "up")
    if any(not (0 < a < 1) for a in alphas):
        raise DomainError("fractional orders must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    if isinstance(E, MovingSets):
        if len(E.counts) != len(alphas):
            raise DomainError("moving-set sweep needs one set per index")
        sets = [E.member(n) for n in E.counts]
        fixed = E.base
        meta = {"moving_sets": E.describe()}
    else:
        sets = [E] * len(alphas)
        fixed = E
        meta = {}

    def row(i):
        a = alphas[i]
        if body is None:
            r = mean_curvature_pv(fractional_kernel(a, fixed.dim), sets[i], x, q)
        else:
            r = anisotropic_fractional_curvature(a, body, sets[i], x, q)
        s = 1.0 - a
        return s * r.value, s * r.quad_error, s * r.truncation_bound

    rows = _map_rows(row, range(len(alphas)), workers)
    if body is None:
        target, source = classical_mean_curvature(fixed, x), "classical mean curvature"
    else:
        target, source = limit_curvature_anisotropic(fixed, x, body), "anisotropic local limit"
        meta["body"] = body.name
    return _build_report("alpha_up", alphas, [1.0 - a for a in alphas], rows, target, source, meta=meta)


def sweep_alpha_down(E, x, alphas=(0.1, 0.05, 0.01), q: QuadParams | None = None, workers: int = 1) -> SweepReport:
    """``C_alpha^{-1}`` times the fractional curvature as ``alpha`` decreases to 0.

    The target is ``1 / kappa_{d-2}`` for every bounded set; the ``tail_mass``
    column records the normalised mass outside the unit ball.
    """
    alphas = _check_ladder(alphas, "down")
    if any(not (0 < a < 1) for a in alphas):
        raise DomainError("fractional orders must lie in (0, 1)")
    if not getattr(E, "bounded", False):
        raise DomainError("the small-order limit needs a bounded set")
    family = make_family("fractional", E.dim)
    x = np.asarray(x, dtype=float)

    def row(a):
        k = family.kernel(a)
        c = family.scaling_constant(a)
        r = mean_curvature_pv(k, E, x, q)
        return r.value / c, r.quad_error / c, r.truncation_bound / c, tail_mass(k, 1.0)

    rows = _map_rows(row, alphas, workers)
    extra = {"tail_mass": [r[3] for r in rows]}
    return _build_report("alpha_down", alphas, alphas, rows, 1.0 / kappa(E.dim - 2), "inverse sphere area",
                         extra=extra)


def _first_moment(profile: RadialProfile) -> float:
    """``int_0^inf r^d j(r) dr``."""
    top = profile.support_radius
    if not np.isfinite(top):
        raise DomainError("rescaled sweep needs a compactly supported profile")
    return float(profile.moment(top))


def sweep_rescaled(E, x, eps=(0.2, 0.1, 0.05), base: RadialProfile | None = None, weight=None,
                   q: QuadParams | None = None, workers: int = 1) -> SweepReport:
    """``eps^{-1}`` times the curvature of ``g(x) eps^-d j(|x|/eps)`` as ``eps`` decreases.

    The target is ``int r^d j dr`` times the tangent average of ``g(e) K_e``.
    """
    eps = _check_ladder(eps, "down")
    d = E.dim
    base = base or BiweightProfile(d)
    weight = weight or Isotropic()
    family = make_family("rescaled", d, base=base, weight=weight)
    x = np.asarray(x, dtype=float)
    moment = _first_moment(base)

    def row(e):
        r = mean_curvature_pv(family.kernel(e), E, x, q)
        return r.value / e, r.quad_error / e, r.truncation_bound / e

    rows = _map_rows(row, eps, workers)
    if isinstance(E, HalfSpace):
        target = 0.0
    else:
        target = moment * tangent_average_curvature(E, x, weight)
    return _build_report("rescaled", eps, eps, rows, target, "first moment times weighted curvature",
                         meta={"base": base.name, "first_moment": moment})


def sweep_regularly_varying(E, x, eps=(1e-1, 1e-2, 1e-3), weight=None, perturbation: RadialProfile | None = None,
                            q: QuadParams | None = None, workers: int = 1) -> SweepReport:
    """Curvature of the regularly varying family ``psi_eps`` as ``eps`` decreases.

    ``psi_eps`` already carries the ``eps log(1/eps)`` normalisation. The
    convergence is logarithmic, so the Richardson variable is
    ``1 / log(1/eps)``.

    Parameters
    ----------
    perturbation : RadialProfile, optional
        Compactly supported unit-scale profile ``p``; each row then adds the
        curvature of ``eps^-d p(|x|/eps) / (eps log(1/eps))``, whose
        normalised first moment vanishes in the limit.
    """
    eps = _check_ladder(eps, "down")
    d = E.dim
    weight = weight or Isotropic()
    family = make_family("regularly_varying", d, weight=weight)
    x = np.asarray(x, dtype=float)

    def row(e):
        r = mean_curvature_pv(family.kernel(e), E, x, q)
        val, qe, tb = r.value, r.quad_error, r.truncation_bound
        if perturbation is not None:
            pk = Kernel(d, weight, ScaledProfile(perturbation, e, factor=1.0 / family.scaling_constant(e)))
            p = mean_curvature_pv(pk, E, x, q)
            val, qe, tb = val + p.value, qe + p.quad_error, tb + p.truncation_bound
        raw = Kernel(d, weight, ScaledProfile(family.kernel(e).profile.base, e))
        return val, qe, tb, normalization_constant(raw)[0] / (e * math.log(1.0 / e))

    rows = _map_rows(row, eps, workers)
    if isinstance(E, HalfSpace):
        target = 0.0
    else:
        target = tangent_average_curvature(E, x, weight)
    dist = [1.0 / math.log(1.0 / e) for e in eps]
    meta = {"perturbation": perturbation.name if perturbation is not None else None}
    return _build_report("regularly_varying", eps, dist, rows, target, "weighted tangent curvature",
                         extra={"scaling_ratio": [r[3] for r in rows]}, meta=meta)


def rescaled_constant_ratio(base: RadialProfile, eps: float) -> float:
    """``C_{phi_eps} / eps`` for the rescaled family; tends to ``int |x| phi``."""
    k = Kernel(base.dim, Isotropic(), ScaledProfile(base, eps))
    return normalization_constant(k)[0] / eps
