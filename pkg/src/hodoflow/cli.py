"""Command-line front end: ``hodoflow {geodesic,field,blowup,verify}``.

Every flag can also come from a JSON config file (``--config``); keys mirror
the flag names with dashes or underscores, and flags given on the command
line win.  Exit codes: 0 success, 1 configuration error, 2 boundary hit
(partial result written), 3 verification failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import closed_forms as cf
from . import hodograph as hg
from .errors import BoundaryHit, ConfigError, HodoflowError, StepUnderflow
from .fparams import as_fparam
from .geodesics import INTEGRAL_NAMES, PhaseState, integrate_geodesic, write_trajectory_csv
from .geometry import SurfaceChart
from .oracle import FieldGrid, euler_residual, mesh, uniform_axis

EXIT_OK, EXIT_CONFIG, EXIT_BOUNDARY, EXIT_VERIFY = 0, 1, 2, 3

# hodograph systems selectable by --family, with the parameter keys they take
SYSTEMS = {
    "cylinder": ("F1", "F2"),
    "cone": ("F1", "F2"),
    "cone_alt": ("phi1", "phi2"),
    "s2": ("F1", "F2"),
    "s2_stationary": ("F1", "F2"),
    "s3_stationary": ("F1", "F2", "F3"),
}
SYSTEM_CHART = {"cylinder": "cylinder", "cone": "cone", "cone_alt": "cone", "s2": "sphere2",
                "s2_stationary": "sphere2", "s3_stationary": "sphere3"}
CHUNK = 4096


# -- config --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--chart", choices=["cylinder", "cone", "sphere2", "sphere3"])
    p.add_argument("--alpha", type=float, help="cone parameter")
    p.add_argument("--R", type=float, help="radius of the cylinder or sphere")
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--workers", type=int)
    p.add_argument("--tol", type=float)


def _family_flags(p: argparse.ArgumentParser):
    p.add_argument("--family", help="closed-form family id or hodograph system id")
    p.add_argument("--params", help="JSON object, or @path to a JSON file")
    p.add_argument("--sheet", type=int, choices=[-1, 1])
    p.add_argument("--printed", action="store_const", const=True,
                   help="use the formula exactly as printed (compatibility switch)")
    p.add_argument("--t", type=float, help="evaluation time")
    p.add_argument("--grid", action="append", metavar="AXIS=MIN:MAX:COUNT")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hodoflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", help="trace one geodesic and its first integrals")
    _common(g)
    g.add_argument("--init", help="comma list: coordinates then velocities")
    g.add_argument("--t-end", type=float)

    f = sub.add_parser("field", help="evaluate a family or solve a hodograph system on a grid")
    _common(f)
    _family_flags(f)

    b = sub.add_parser("blowup", help="trace the blow-up locus det M = 0 on a grid")
    _common(b)
    _family_flags(b)

    v = sub.add_parser("verify", help="finite-difference Euler residual of a field")
    _common(v)
    _family_flags(v)
    v.add_argument("--threshold", type=float)
    v.add_argument("--fd-step", type=float)
    v.add_argument("--stationary", action="store_const", const=True,
                   help="declare the field time independent")
    v.add_argument("--perturb", type=float, help="add this constant to the first velocity")
    v.add_argument("--samples", type=int, help="random sample points instead of a grid")
    v.add_argument("--seed", type=int)
    return parser


DEFAULTS = {"tol": 1e-10, "format": "csv", "workers": 1, "t": None, "threshold": 1e-5,
            "fd_step": 1e-4, "sheet": 1, "printed": False, "seed": 0, "perturb": 0.0,
            "stationary": False}


def load_config(args: argparse.Namespace) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in raw.items()}
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    for k, v in DEFAULTS.items():
        cfg.setdefault(k, v)
    if "params" in cfg:
        cfg["params"] = _parse_params(cfg["params"])
    if cfg["tol"] <= 0 or cfg["fd_step"] <= 0 or cfg["threshold"] <= 0:
        raise ConfigError("tolerances must be positive")
    if int(cfg["workers"]) < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def _parse_params(p):
    if isinstance(p, dict):
        return p
    if not isinstance(p, str):
        raise ConfigError("params must be a JSON object")
    try:
        if p.startswith("@"):
            with open(p[1:]) as fh:
                p = fh.read()
        out = json.loads(p)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse params: {exc}") from None
    if not isinstance(out, dict):
        raise ConfigError("params must be a JSON object")
    return out


def _require(cfg, key, flag=None):
    if cfg.get(key) is None:
        raise ConfigError(f"missing required key '{flag or key}'")
    return cfg[key]


def parse_grid(chart: SurfaceChart, specs) -> list:
    """``["theta=0.1:1.5:50", ...]`` (or a mapping axis -> [min, max, count])."""
    if isinstance(specs, dict):
        specs = [f"{k}={v[0]}:{v[1]}:{v[2]}" for k, v in specs.items()]
    if not specs:
        raise ConfigError("missing required key 'grid'")
    found = {}
    for s in specs:
        try:
            name, rng = s.split("=", 1)
            lo, hi, count = rng.split(":")
            lo, hi, count = float(lo), float(hi), int(count)
        except ValueError:
            raise ConfigError(f"bad grid spec {s!r}; expected axis=min:max:count") from None
        if name not in chart.coord_names:
            raise ConfigError(f"unknown axis {name!r} for chart {chart.kind}; "
                              f"expected {chart.coord_names}")
        found[name] = (lo, hi, count)
    axes = []
    for k, name in enumerate(chart.coord_names):
        if name not in found:
            raise ConfigError(f"grid is missing axis {name!r}")
        lo, hi, count = found[name]
        (clo, chi), per = chart.coord_ranges[k], chart.periodic[k]
        wrap = per and math.isclose(hi - lo, 2 * math.pi)
        if not per and not (clo < lo and hi < chi):
            raise ConfigError(f"grid axis {name} range [{lo}, {hi}] leaves the open "
                              f"interval ({clo}, {chi})")
        axes.append(uniform_axis(lo, hi, count, periodic=wrap))
    return axes


def _system_chart(cfg, system) -> SurfaceChart:
    kind = SYSTEM_CHART[system]
    if cfg.get("chart") not in (None, kind):
        raise ConfigError(f"system {system} lives on {kind}, not {cfg['chart']}")
    return SurfaceChart.from_config({**cfg, "chart": kind})


# -- field sources -------------------------------------------------------------

class Source:
    """A velocity field from a closed form or a hodograph system."""

    def __init__(self, cfg):
        fid = _require(cfg, "family")
        params = dict(cfg.get("params", {}))
        self.id = fid
        self.family = None
        self.system = None
        if fid in cf.FAMILY_IDS:
            R = cfg.get("R")
            if fid.startswith("cone") and cfg.get("alpha") is not None:
                params.setdefault("alpha", cfg["alpha"])
            self.family = cf.SolutionFamily(fid, params, sheet=int(cfg["sheet"]),
                                            R=1.0 if R is None else float(R),
                                            printed=bool(cfg["printed"]))
            self.chart = self.family.chart
            self.stationary = self.family.stationary
            self.guess = self._family_guess
        elif fid in SYSTEMS:
            # function specs may also sit at the top level of a config file
            for key in (*SYSTEMS[fid], "guess", "sigma"):
                if key in cfg and key not in params:
                    params[key] = cfg[key]
            self.chart = _system_chart(cfg, fid)
            self.system, self.guess_vec = _make_system(fid, self.chart, params, cfg)
            self.stationary = fid in ("s2_stationary", "s3_stationary")
            self.guess = self.guess_vec
        else:
            raise ConfigError(f"unknown family {fid!r}; expected one of "
                              f"{list(cf.FAMILY_IDS) + list(SYSTEMS)}")
        t = cfg.get("t")
        self.t = (self.family.default_time if self.family is not None else 0.0) if t is None \
            else float(t)
        self.provenance = {"family": fid, "params": _jsonable(params), "t": self.t}
        if self.family is not None:
            self.provenance.update(sheet=self.family.sheet, printed=self.family.printed)

    def _family_guess(self, t, pts):
        U, _ = cf.eval_field(self.family, t, pts)
        return np.nan_to_num(U, nan=0.0)

    def hodograph(self):
        return self.family.system() if self.family is not None else self.system

    def evaluate(self, t, pts):
        """``(U, valid)`` at an arbitrary batch of points."""
        if self.family is not None:
            return cf.eval_field(self.family, t, pts)
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.chart.dim)
        w, info = hg.solve_batch(self.system, t, flat,
                                 np.broadcast_to(self.guess_vec, flat.shape).copy())
        ok = info.converged & self.chart.interior_mask(flat)
        w = np.where(ok[:, None], w, np.nan)
        return w.reshape(pts.shape), ok.reshape(pts.shape[:-1])

    def grid(self, axes, workers=1) -> FieldGrid:
        if self.family is not None:
            X = mesh(axes)
            flat = X.reshape(-1, self.chart.dim)
            chunks = [flat[i:i + CHUNK] for i in range(0, flat.shape[0], CHUNK)]
            parts = _map(lambda c: cf.eval_field(self.family, self.t, c), chunks, workers)
            U = np.concatenate([p[0] for p in parts]).reshape(X.shape)
            ok = np.concatenate([p[1] for p in parts]).reshape(X.shape[:-1])
        else:
            U, ok, _ = hg.solve_grid(self.system, self.t, axes, self.guess_vec)
            ok &= self.chart.interior_mask(mesh(axes))
        return FieldGrid(self.chart, self.t, axes, U, ok, self.provenance, self.stationary)


def _map(fn, chunks, workers):
    """``[fn(c) for c in chunks]``, threaded when asked; order is preserved."""
    if int(workers) > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: np.asarray(o).tolist()))


def _make_system(fid, chart, params, cfg):
    keys = SYSTEMS[fid]
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"system {fid} needs params {missing}")
    Fs = [as_fparam(params[k]) for k in keys]
    if fid == "cylinder":
        sys_ = hg.make_cylinder_system(*Fs, R=chart.R)
    elif fid == "cone":
        sys_ = hg.make_cone_system(*Fs, alpha=chart.alpha)
    elif fid == "cone_alt":
        sys_ = hg.make_cone_alt_system(*Fs, alpha=chart.alpha)
    elif fid == "s2":
        sys_ = hg.make_s2_system(*Fs, sigma=int(params.get("sigma", cfg["sheet"])), R=chart.R)
    elif fid == "s2_stationary":
        sys_ = hg.make_s2_stationary_system(*Fs, R=chart.R)
    else:
        sys_ = hg.make_s3_stationary_system(*Fs, R=chart.R)
    guess = np.asarray(params.get("guess", np.full(chart.dim, 0.1)), dtype=float)
    if guess.shape != (chart.dim,):
        raise ConfigError(f"guess needs {chart.dim} entries")
    return sys_, guess


# -- output --------------------------------------------------------------------

@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _trajectory_json(traj, fh):
    chart = traj.chart
    names = list(INTEGRAL_NAMES[chart.kind])
    vals = traj.integrals
    cols = {"t": traj.ts.tolist()}
    for k, n in enumerate(chart.coord_names):
        cols[n] = traj.coords[:, k].tolist()
    for k, n in enumerate(chart.velocity_names):
        cols[n] = traj.velocities[:, k].tolist()
    for n in names:
        cols[n] = [None if not np.isfinite(v) else float(v) for v in vals[n]]
    fh.write(json.dumps({"chart": chart.to_config(), "columns": cols}) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_geodesic(cfg) -> int:
    chart = SurfaceChart.from_config({**cfg, "chart": _require(cfg, "chart")})
    init = _require(cfg, "init")
    if isinstance(init, str):
        try:
            init = [float(v) for v in init.split(",")]
        except ValueError:
            raise ConfigError(f"bad --init {init!r}") from None
    if len(init) != 2 * chart.dim:
        raise ConfigError(f"--init needs {2 * chart.dim} numbers for {chart.kind}")
    t_end = float(_require(cfg, "t_end", "t-end"))
    state = PhaseState(float(cfg.get("t0", 0.0)), np.array(init[:chart.dim]),
                       np.array(init[chart.dim:]))
    try:
        chart.check(state.coords)
    except HodoflowError as exc:
        raise ConfigError(str(exc)) from None
    code = EXIT_OK
    try:
        traj = integrate_geodesic(chart, state, t_end, tol=float(cfg["tol"]))
    except (BoundaryHit, StepUnderflow) as exc:
        traj = exc.trajectory
        code = EXIT_BOUNDARY
        print(f"hodoflow: {type(exc).__name__} at t={traj.ts[-1]!r}; partial trajectory "
              "written", file=sys.stderr)
    with _output(cfg.get("out")) as fh:
        if cfg["format"] == "json":
            _trajectory_json(traj, fh)
        else:
            write_trajectory_csv(traj, fh)
    return code


def cmd_field(cfg) -> int:
    src = Source(cfg)
    axes = parse_grid(src.chart, cfg.get("grid"))
    grid = src.grid(axes, cfg["workers"])
    with _output(cfg.get("out")) as fh:
        if cfg["format"] == "json":
            grid.to_json(fh)
        else:
            grid.to_csv(fh)
    summary = {"rows": int(grid.mask.size), "valid": int(grid.mask.sum()),
               "invalid": int(grid.mask.size - grid.mask.sum()), "family": src.id, "t": src.t}
    print(json.dumps(summary), file=sys.stderr if cfg.get("out") in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_blowup(cfg) -> int:
    src = Source(cfg)
    axes = parse_grid(src.chart, cfg.get("grid"))
    locus = hg.trace_blowup(src.hodograph(), axes, t=src.t, guess=src.guess)
    with _output(cfg.get("out")) as fh:
        if cfg["format"] == "json":
            fh.write(json.dumps({
                "chart": src.chart.to_config(), "provenance": src.provenance,
                "points": locus.points.tolist(), "detM": locus.det.tolist(),
                "polylines": [np.asarray(p).tolist() for p in locus.polylines]}) + "\n")
        else:
            locus.to_csv(fh)
    return EXIT_OK


def _sample_points(src, cfg, n):
    """Deterministic random points: regular points of the family's sample box,
    or uniform over the grid box for hodograph systems."""
    rng = np.random.default_rng(int(cfg["seed"]))
    if src.family is not None:
        return src.family.sample_points(n, rng, src.t)
    box = [(float(a[0]), float(a[-1])) for a in parse_grid(src.chart, cfg.get("grid"))]
    return np.stack([rng.uniform(lo, hi, n) for lo, hi in box], axis=-1)


def cmd_verify(cfg) -> int:
    src = Source(cfg)
    stationary = bool(cfg["stationary"])
    if stationary and not src.stationary:
        warnings.warn(f"{src.id} is time dependent; ignoring --stationary and "
                      "differencing in time", stacklevel=1)
        stationary = False
    stationary = stationary or src.stationary
    if cfg.get("samples"):
        pts = _sample_points(src, cfg, int(cfg["samples"]))
    else:
        pts = mesh(parse_grid(src.chart, cfg.get("grid"))).reshape(-1, src.chart.dim)
    delta = float(cfg["perturb"])

    def field(t, x):
        U, ok = src.evaluate(t, x)
        if delta:
            U = U.copy()
            U[..., 0] += delta
        return U, ok

    chunks = [pts[i:i + CHUNK] for i in range(0, pts.shape[0], CHUNK)]

    def run(chunk):
        return euler_residual(src.chart, field, src.t, float(cfg["fd_step"]),
                              stationary=stationary, points=chunk)

    reports = _map(run, chunks, cfg["workers"])
    residual = np.concatenate([r.residual for r in reports])
    used = np.concatenate([r.used for r in reports])
    if not used.any():
        raise ConfigError("no sample point has a valid stencil")
    norms = np.max(np.abs(residual[used]), axis=-1)
    report = {"max": float(norms.max()), "mean": float(norms.mean()),
              "n_nodes": int(used.sum()), "n_excluded": int(used.size - used.sum()),
              "fd_step": float(cfg["fd_step"]), "threshold": float(cfg["threshold"]),
              "family": src.id, "t": src.t, "stationary": stationary,
              "passed": bool(norms.max() < float(cfg["threshold"]))}
    with _output(cfg.get("out")) as fh:
        fh.write(json.dumps(report) + "\n")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


COMMANDS = {"geodesic": cmd_geodesic, "field": cmd_field, "blowup": cmd_blowup,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, HodoflowError, ValueError) as exc:
        print(f"hodoflow: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
