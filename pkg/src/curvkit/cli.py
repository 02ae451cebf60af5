"""Command-line front end.

Settings come from an optional INI file (``--config``) with sections
``[kernel]``, ``[set]``, ``[body]``, ``[run]``, ``[sweep]``, ``[flow]`` and
``[moment]``; command-line flags override file values. Single evaluations
are written as JSON, sweeps and flow traces as CSV. Every output carries
the package version, a hash of the resolved configuration, the seed and the
worker count.

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
or admissibility errors.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .convex_body import ConvexBody, moment_norm
from .curvature import QuadParams, mean_curvature_pv, mean_from_directional
from .errors import ConfigError, CurvkitError
from .flow import FlowConfig, circle_field, ellipse_field, run
from .geometry import Ball, Complement, Ellipsoid, HalfSpace, LevelSet, LevelSetField, kappa
from .kernels import (
    BiweightProfile,
    IndicatorProfile,
    Kernel,
    anisotropic_fractional_kernel,
    fractional_kernel,
    make_family,
)
from .limits import MovingSets, sweep_alpha_down, sweep_alpha_up, sweep_rescaled, sweep_regularly_varying
from .perimeter import (
    Dilation,
    NormalBump,
    Rotation,
    anisotropic_perimeter,
    first_variation_check,
    moment_perimeter,
    nonlocal_perimeter,
)

SUBCOMMANDS = ("curvature", "perimeter", "limit-sweep", "flow", "moment-body")

# flag name -> (config section, key)
_CONFIG_KEYS = {
    "dim": ("run", "dimension"),
    "kernel": ("kernel", "spec"),
    "body": ("body", "body"),
    "set": ("set", "set"),
    "center": ("set", "center"),
    "point": ("set", "point"),
    "out": ("run", "out"),
    "seed": ("run", "seed"),
    "workers": ("run", "workers"),
    "tol": ("run", "tol"),
    "normalization": ("run", "normalization"),
    "method": ("run", "method"),
    "mode": ("run", "mode"),
    "deformation": ("run", "deformation"),
    "sweep": ("sweep", "sweep"),
    "indices": ("sweep", "indices"),
    "moving_delta": ("sweep", "moving_delta"),
    "spacing": ("flow", "spacing"),
    "end_time": ("flow", "end_time"),
    "extent": ("flow", "extent"),
    "snapshot_every": ("flow", "snapshot_every"),
    "record_every": ("flow", "record_every"),
    "direction": ("moment", "direction"),
    "samples": ("moment", "samples"),
}

_DEFAULTS = {
    "dim": 2,
    "kernel": "fractional:0.5",
    "body": "euclidean",
    "set": "ball:1",
    "seed": 0,
    "workers": 1,
    "tol": 1e-9,
    "normalization": "normalized",
    "method": "ray",
    "mode": "nonlocal",
    "sweep": "alpha-up",
    "spacing": 1.0 / 64,
    "end_time": 0.1,
    "extent": 1.5,
    "snapshot_every": 0,
    "record_every": 1,
    "samples": 1 << 20,
}


# --------------------------------------------------------------------------
# spec parsing
# --------------------------------------------------------------------------


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot read {what} from {text!r}") from None


def parse_body(spec: str, dim: int) -> ConvexBody:
    """``euclidean | square | pnorm:<p> | halfspaces:[[a11, a12, ...], ...]``."""
    spec = str(spec).strip()
    name, _, arg = spec.partition(":")
    try:
        if name == "euclidean":
            return ConvexBody.euclidean(dim)
        if name == "square":
            return ConvexBody.square(dim)
        if name == "pnorm":
            return ConvexBody.pnorm(dim, float(arg))
        if name == "halfspaces":
            normals = np.asarray(json.loads(arg), dtype=float)
            if normals.ndim != 2 or normals.shape[1] != dim:
                raise ConfigError(f"half-space normals must be a list of {dim}-vectors")
            return ConvexBody(dim, "halfspaces", normals=normals)
    except (ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad body spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown body {spec!r}")


def parse_kernel(spec: str, dim: int, body: ConvexBody | None = None) -> Kernel:
    """``fractional:<alpha> | anisotropic:<alpha> | rescaled:<eps>[:<profile>] | regularly_varying:<eps>``."""
    parts = str(spec).strip().split(":")
    kind = parts[0]
    if len(parts) < 2:
        raise ConfigError(f"kernel spec {spec!r} needs an index, e.g. fractional:0.5")
    try:
        index = float(parts[1])
    except ValueError:
        raise ConfigError(f"bad kernel index in {spec!r}") from None
    if kind == "fractional":
        return fractional_kernel(index, dim)
    if kind == "anisotropic":
        return anisotropic_fractional_kernel(index, body or ConvexBody.euclidean(dim))
    if kind == "rescaled":
        profile = parts[2] if len(parts) > 2 else "biweight"
        base = {"biweight": BiweightProfile, "indicator": IndicatorProfile}.get(profile)
        if base is None:
            raise ConfigError(f"unknown compact profile {profile!r}")
        return make_family("rescaled", dim, base=base(dim)).kernel(index)
    if kind in ("regularly_varying", "regvar"):
        return make_family("regularly_varying", dim).kernel(index)
    raise ConfigError(f"unknown kernel kind {kind!r}")


def _family_of(spec: str, dim: int):
    parts = str(spec).split(":")
    if parts[0] == "rescaled":
        profile = parts[2] if len(parts) > 2 else "biweight"
        base = {"biweight": BiweightProfile, "indicator": IndicatorProfile}[profile]
        return make_family("rescaled", dim, base=base(dim)), float(parts[1])
    if parts[0] in ("regularly_varying", "regvar"):
        return make_family("regularly_varying", dim), float(parts[1])
    return None, None


def parse_set(spec: str, dim: int, center=None):
    """``ball:<r> | ellipsoid:<a>,<b>[,<c>] | halfspace | complement:<set> | levelset:<path>``."""
    spec = str(spec).strip()
    name, _, arg = spec.partition(":")
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    if c.size != dim:
        raise ConfigError(f"centre must have {dim} coordinates")
    if name == "ball":
        r = _floats(arg or "1", "radius")
        if len(r) != 1 or r[0] <= 0:
            raise ConfigError("ball radius must be one positive number")
        return Ball(c, r[0])
    if name in ("ellipsoid", "ellipse"):
        axes = _floats(arg, "semi-axes")
        if len(axes) != dim or min(axes) <= 0:
            raise ConfigError(f"ellipsoid needs {dim} positive semi-axes")
        return Ellipsoid(c, semi_axes=axes)
    if name == "halfspace":
        n = _floats(arg, "normal") if arg else [0.0] * (dim - 1) + [1.0]
        if len(n) != dim:
            raise ConfigError(f"half-space normal must have {dim} components")
        return HalfSpace(n, 0.0)
    if name == "complement":
        return Complement(parse_set(arg, dim, center))
    if name == "levelset":
        path = Path(arg)
        if not path.is_file():
            raise ConfigError(f"level-set file {arg!r} not found")
        try:
            field = LevelSetField.load(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if field.dim != dim:
            raise ConfigError("level-set file dimension differs from --dim")
        return LevelSet(field)
    raise ConfigError(f"unknown set {spec!r}")


def default_point(E, dim: int) -> np.ndarray:
    """A boundary point chosen from the set description."""
    if isinstance(E, Complement):
        return default_point(E.base, dim)
    if isinstance(E, Ellipsoid):
        return E.center + E.matrix[:, 0]
    if isinstance(E, HalfSpace):
        return E.offset * E.normal
    raise ConfigError("this set needs an explicit --point on its boundary")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with default settings")
    common.add_argument("--dim", type=int)
    common.add_argument("--kernel", help="e.g. fractional:0.5, anisotropic:0.5, rescaled:0.1, regularly_varying:0.01")
    common.add_argument("--body", help="euclidean | square | pnorm:<p> | halfspaces:[[...], ...]")
    common.add_argument("--set", help="ball:<r> | ellipsoid:<a>,<b> | halfspace | complement:<set> | levelset:<path>")
    common.add_argument("--center", help="comma-separated centre of the set")
    common.add_argument("--point", help="comma-separated boundary point")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--normalization", choices=["normalized", "unnormalized"])

    parser = argparse.ArgumentParser(prog="curvkit", description="Nonlocal curvature toolkit")
    parser.add_argument("--version", action="version", version=f"curvkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curvature", parents=[common], help="nonlocal mean curvature at a boundary point")
    p.add_argument("--method", choices=["ray", "directional"])

    p = sub.add_parser("perimeter", parents=[common], help="nonlocal or anisotropic perimeter")
    p.add_argument("--mode", choices=["nonlocal", "anisotropic", "moment", "first-variation"])
    p.add_argument("--deformation", choices=["dilation", "rotation", "bump"])
    p.add_argument("--samples", type=int)

    p = sub.add_parser("limit-sweep", parents=[common], help="normalised curvature along a kernel family")
    p.add_argument("--sweep", choices=["alpha-up", "alpha-down", "rescaled", "regularly-varying"])
    p.add_argument("--indices", help="comma-separated ladder of alpha or eps values")
    p.add_argument("--moving-delta", type=float, dest="moving_delta",
                   help="alpha-up only: evaluate on moving sets with this delta0")

    p = sub.add_parser("flow", parents=[common], help="level-set curvature flow")
    p.add_argument("--spacing", type=float)
    p.add_argument("--end-time", type=float, dest="end_time")
    p.add_argument("--extent", type=float)
    p.add_argument("--snapshot-every", type=int, dest="snapshot_every")
    p.add_argument("--record-every", type=int, dest="record_every")

    p = sub.add_parser("moment-body", parents=[common], help="moment-body norm of a direction")
    p.add_argument("--direction", help="comma-separated vector (default: first axis)")
    p.add_argument("--samples", type=int)
    return parser


def _read_config(path) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise ConfigError(f"config file {path!r} not found")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    out = {}
    for flag, (section, key) in _CONFIG_KEYS.items():
        if cp.has_option(section, key):
            out[flag] = cp.get(section, key)
    # kernel section may spell the kernel out field by field
    if "kernel" not in out and cp.has_section("kernel") and cp.has_option("kernel", "kind"):
        ks = cp["kernel"]
        index = ks.get("alpha", ks.get("epsilon"))
        if index is None:
            raise ConfigError("[kernel] needs alpha or epsilon")
        out["kernel"] = f"{ks['kind']}:{index}" + (f":{ks['profile']}" if "profile" in ks else "")
        if "dimension" in ks and "dim" not in out:
            out["dim"] = ks["dimension"]
        if "body" in ks and "body" not in out:
            out["body"] = ks["body"]
    return out


_TYPES = {"dim": int, "seed": int, "workers": int, "tol": float, "moving_delta": float, "spacing": float,
          "end_time": float, "extent": float, "snapshot_every": int, "record_every": int, "samples": int}


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) into a plain dict."""
    cfg = {"command": args.command}
    from_file = _read_config(getattr(args, "config", None))
    for key in _CONFIG_KEYS:
        if not hasattr(args, key) and key not in from_file:
            continue
        val = getattr(args, key, None)
        if val is None:
            val = from_file.get(key, _DEFAULTS.get(key))
        if val is not None and key in _TYPES:
            try:
                val = _TYPES[key](val)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {val!r}") from None
        cfg[key] = val
    for key in ("dim", "kernel", "body", "set", "seed", "workers", "tol", "normalization"):
        cfg.setdefault(key, _DEFAULTS[key])
    if cfg["dim"] not in (2, 3):
        raise ConfigError("dimension must be 2 or 3")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be positive")
    if cfg["normalization"] not in ("normalized", "unnormalized"):
        raise ConfigError("normalization must be 'normalized' or 'unnormalized'")
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_metadata(cfg: dict) -> dict:
    return {"version": __version__, "config_hash": config_hash(cfg), "seed": cfg["seed"],
            "workers": cfg["workers"]}


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _emit(text: str, out) -> None:
    """Write to ``out`` atomically (temp file then rename) or to stdout."""
    if not out:
        sys.stdout.write(text)
        return
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    def fix(v):
        if isinstance(v, np.generic):
            return v.item()
        if isinstance(v, np.ndarray):
            return v.tolist()
        raise TypeError(f"cannot serialise {type(v).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=fix) + "\n"


def _common(cfg):
    d = cfg["dim"]
    body = parse_body(cfg["body"], d)
    center = _floats(cfg["center"], "centre") if cfg.get("center") else None
    E = parse_set(cfg["set"], d, center)
    x = np.asarray(_floats(cfg["point"], "point")) if cfg.get("point") else None
    if x is not None and x.size != d:
        raise ConfigError(f"point must have {d} coordinates")
    return d, body, E, x


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_curvature(cfg: dict) -> str:
    d, body, E, x = _common(cfg)
    x = default_point(E, d) if x is None else x
    k = parse_kernel(cfg["kernel"], d, body)
    q = QuadParams(tol=cfg["tol"])
    res = (mean_from_directional if cfg.get("method") == "directional" else mean_curvature_pv)(k, E, x, q)
    scale = kappa(d - 2) if cfg["normalization"] == "unnormalized" else 1.0
    meta = {**res.meta, "kernel": k.name, "set": cfg["set"], "point": x.tolist(),
            "normalization": cfg["normalization"], **run_metadata(cfg)}
    return _json({"value": scale * res.value, "quad_error": scale * res.quad_error,
                  "truncation_bound": scale * res.truncation_bound, "meta": meta})


def _deformation(name, E, d):
    c = getattr(E, "center", np.zeros(d))
    if name == "dilation":
        return Dilation(c)
    if name == "rotation":
        return Rotation(c)
    if name == "bump":
        return NormalBump(c, np.eye(d)[1], width=0.6, amplitude=1.0, inner=0.2)
    raise ConfigError("first-variation mode needs --deformation dilation|rotation|bump")


def cmd_perimeter(cfg: dict) -> str:
    d, body, E, _ = _common(cfg)
    mode = cfg.get("mode") or "nonlocal"
    if mode == "nonlocal":
        out = nonlocal_perimeter(parse_kernel(cfg["kernel"], d, body), E).as_dict()
    elif mode == "anisotropic":
        out = anisotropic_perimeter(E, body).as_dict()
    elif mode == "moment":
        out = moment_perimeter(E, body, samples=cfg.get("samples") or _DEFAULTS["samples"],
                               seed=cfg["seed"]).as_dict()
    else:
        k = parse_kernel(cfg["kernel"], d, body)
        out = first_variation_check(k, E, _deformation(cfg.get("deformation"), E, d),
                                    q=QuadParams(tol=cfg["tol"]))
    out["meta"] = {**out.get("meta", {}), "mode": mode, "set": cfg["set"], **run_metadata(cfg)}
    return _json(out)


def cmd_limit_sweep(cfg: dict) -> str:
    d, body, E, x = _common(cfg)
    x = default_point(E, d) if x is None else x
    q = QuadParams(tol=cfg["tol"])
    kind = cfg.get("sweep") or "alpha-up"
    ladder = _floats(cfg["indices"], "indices") if cfg.get("indices") else None
    kw = {"q": q, "workers": cfg["workers"]}
    if kind == "alpha-up":
        target = E
        if cfg.get("moving_delta"):
            counts = tuple(2**i for i in range(len(ladder or (0.9, 0.95, 0.99))))
            target = MovingSets(E, x, delta0=cfg["moving_delta"], counts=counts)
        aniso = None if cfg["body"] == "euclidean" else body
        report = sweep_alpha_up(target, x, *([ladder] if ladder else []), body=aniso, **kw)
    elif kind == "alpha-down":
        report = sweep_alpha_down(E, x, *([ladder] if ladder else []), **kw)
    elif kind == "rescaled":
        report = sweep_rescaled(E, x, *([ladder] if ladder else []), **kw)
    elif kind == "regularly-varying":
        report = sweep_regularly_varying(E, x, *([ladder] if ladder else []), **kw)
    else:
        raise ConfigError(f"unknown sweep {kind!r}")
    buf = io.StringIO()
    report.write_csv(buf, header=run_metadata(cfg))
    return buf.getvalue()


def cmd_flow(cfg: dict) -> str:
    d, body, E, _ = _common(cfg)
    h = cfg.get("spacing") or _DEFAULTS["spacing"]
    extent = cfg.get("extent") or _DEFAULTS["extent"]
    end = cfg.get("end_time") or _DEFAULTS["end_time"]
    extra = {"record_every": cfg.get("record_every") or 1, "snapshot_every": cfg.get("snapshot_every") or 0,
             "workers": cfg["workers"]}
    family, index = _family_of(cfg["kernel"], d)
    if family is not None:
        fc = FlowConfig.for_family(family, index, end, **extra)
    else:
        fc = FlowConfig(parse_kernel(cfg["kernel"], d, body), end, **extra)
    if isinstance(E, Ellipsoid) and np.allclose(E.matrix, E.matrix[0, 0] * np.eye(d)):
        u0 = circle_field(float(E.matrix[0, 0]), h, extent, center=E.center, dim=d)
    elif isinstance(E, Ellipsoid) and d == 2 and np.allclose(E.matrix, np.diag(np.diag(E.matrix))):
        u0 = ellipse_field(np.diag(E.matrix), h, extent, center=E.center)
    elif isinstance(E, LevelSet):
        u0 = E.field
    else:
        raise ConfigError("flow needs a ball, an axis-aligned ellipse or a level-set file")
    trace = run(u0, fc)
    meta = run_metadata(cfg)
    if trace.extinction_time is not None:
        meta["extinction_time"] = trace.extinction_time
    if trace.snapshots:
        if not cfg.get("out"):
            raise ConfigError("snapshots need --out to derive file names")
        stem = Path(cfg["out"])
        for i, (t, fld) in enumerate(trace.snapshots):
            fld.save(stem.with_name(f"{stem.stem}.{i:04d}.ls"))
        meta["snapshots"] = len(trace.snapshots)
    buf = io.StringIO()
    trace.write_csv(buf, header=meta)
    return buf.getvalue()


def cmd_moment_body(cfg: dict) -> str:
    d, body, _, _ = _common(cfg)
    y = np.asarray(_floats(cfg["direction"], "direction")) if cfg.get("direction") else np.eye(d)[0]
    if y.size != d:
        raise ConfigError(f"direction must have {d} components")
    val, err = moment_norm(body, y, samples=cfg.get("samples") or _DEFAULTS["samples"], seed=cfg["seed"])
    return _json({"norm": float(np.ravel(val)[0]), "error": float(np.ravel(err)[0]), "body": body.name,
                  "direction": y.tolist(), "meta": run_metadata(cfg)})


_COMMANDS = {
    "curvature": cmd_curvature,
    "perimeter": cmd_perimeter,
    "limit-sweep": cmd_limit_sweep,
    "flow": cmd_flow,
    "moment-body": cmd_moment_body,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        text = _COMMANDS[args.command](cfg)
        _emit(text, cfg.get("out"))
    except CurvkitError as exc:
        sys.stderr.write(_json({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}))
        return exc.exit_code
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(_json({"error": type(exc).__name__, "message": str(exc), "exit_code": 3}))
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
