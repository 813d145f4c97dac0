"""Independent checks on velocity fields.

* ``euler_residual`` plugs a field into the Euler equation with central
  differences.
* ``evolve_characteristics`` transports initial data along geodesics and
  interpolates the arrivals back onto a grid.
* ``conservation_report`` summarises first-integral drift along a trajectory.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, InsufficientDomain, MultiValued
from .geodesics import Trajectory, integrate_endpoints
from .geometry import SurfaceChart, christoffel_at

TWO_PI = 2 * math.pi


# -- grids -------------------------------------------------------------------

def uniform_axis(lo, hi, count, periodic=False):
    """``count`` uniform nodes on ``[lo, hi]``, or ``[lo, hi)`` when periodic."""
    if count < 2:
        raise ConfigError("grid counts must be >= 2")
    if not lo < hi:
        raise ConfigError(f"grid needs min < max, got {lo} >= {hi}")
    return np.linspace(lo, hi, int(count), endpoint=not periodic)


@dataclass
class FieldGrid:
    chart: SurfaceChart
    t: float
    axes: list
    values: np.ndarray
    mask: np.ndarray
    provenance: dict = field(default_factory=dict)
    stationary: bool = False

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        shape = tuple(a.size for a in self.axes)
        if len(self.axes) != self.chart.dim:
            raise ConfigError(f"{self.chart.kind} grid needs {self.chart.dim} axes")
        for a in self.axes:
            d = np.diff(a)
            if a.size < 2 or np.any(d <= 0):
                raise ConfigError("grid axes must be strictly increasing with >= 2 nodes")
            if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
                raise ConfigError("grid axes must be uniform")
        if self.values.shape != shape + (self.chart.dim,) or self.mask.shape != shape:
            raise ConfigError("grid values/mask do not match the axes")
        self.values = np.where(self.mask[..., None], self.values, np.nan)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ConfigError("grid values must be finite wherever the mask is set")

    @property
    def shape(self):
        return self.mask.shape

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def coords(self):
        return mesh(self.axes)

    def wraps(self):
        """Per axis: does the axis close up on itself (periodic, full turn)?"""
        return tuple(bool(p and math.isclose(a[-1] + (a[1] - a[0]) - a[0], TWO_PI,
                                             rel_tol=1e-9))
                     for p, a in zip(self.chart.periodic, self.axes))

    # -- serialisation --------------------------------------------------------
    def header(self):
        return [*self.chart.coord_names, *self.chart.velocity_names, "valid"]

    def to_csv(self, path_or_file):
        x = self.coords.reshape(-1, self.chart.dim)
        w = self.values.reshape(-1, self.chart.dim)
        m = self.mask.reshape(-1)

        def emit(fh):
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for xi, wi, mi in zip(x, w, m):
                wr.writerow([*(repr(float(c)) for c in xi),
                             *(repr(float(c)) if mi else "nan" for c in wi), int(mi)])

        _emit(path_or_file, emit)

    @classmethod
    def from_csv(cls, path_or_file, chart: SurfaceChart, t=0.0, provenance=None,
                 stationary=False):
        text = _slurp(path_or_file)
        rows = list(csv.reader(io.StringIO(text)))
        n = chart.dim
        expected = [*chart.coord_names, *chart.velocity_names, "valid"]
        if rows[0] != expected:
            raise ConfigError(f"CSV header {rows[0]} does not match {expected}")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        axes = [np.unique(data[:, k]) for k in range(n)]
        shape = tuple(a.size for a in axes)
        if data.shape[0] != math.prod(shape):
            raise ConfigError("CSV rows do not form a tensor grid")
        # rows are written in C order, so a plain reshape recovers the grid
        values = data[:, n:2 * n].reshape(shape + (n,))
        mask = data[:, 2 * n].astype(bool).reshape(shape)
        return cls(chart, t, axes, values, mask, provenance or {}, stationary)

    def to_dict(self):
        return {
            "chart": self.chart.to_config(),
            "t": self.t,
            "stationary": self.stationary,
            "provenance": self.provenance,
            "axes": {name: a.tolist() for name, a in zip(self.chart.coord_names, self.axes)},
            "values": {name: [None if not np.isfinite(v) else float(v)
                              for v in self.values[..., k].reshape(-1)]
                       for k, name in enumerate(self.chart.velocity_names)},
            "valid": self.mask.reshape(-1).astype(int).tolist(),
        }

    def to_json(self, path_or_file):
        _emit(path_or_file, lambda fh: fh.write(json.dumps(self.to_dict()) + "\n"))

    @classmethod
    def from_dict(cls, d):
        chart = SurfaceChart.from_config(d["chart"])
        axes = [np.asarray(d["axes"][name], dtype=float) for name in chart.coord_names]
        shape = tuple(a.size for a in axes)
        values = np.stack([np.array([np.nan if v is None else v for v in d["values"][name]],
                                    dtype=float).reshape(shape)
                           for name in chart.velocity_names], axis=-1)
        mask = np.asarray(d["valid"], dtype=bool).reshape(shape)
        return cls(chart, float(d["t"]), axes, values, mask, d.get("provenance", {}),
                   bool(d.get("stationary", False)))

    @classmethod
    def from_json(cls, path_or_file):
        return cls.from_dict(json.loads(_slurp(path_or_file)))


def _emit(path_or_file, write):
    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            write(fh)


def _slurp(path_or_file):
    if hasattr(path_or_file, "read"):
        return path_or_file.read()
    with open(path_or_file) as fh:
        return fh.read()


def mesh(axes):
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def sample_field(chart, field_fn, t, axes, provenance=None, stationary=False):
    """Evaluate ``field_fn(t, coords) -> (U, valid)`` on a tensor grid."""
    X = mesh(axes)
    U, ok = _call_field(field_fn, t, X)
    return FieldGrid(chart, t, axes, U, ok, provenance or {}, stationary)


def _call_field(field_fn, t, x):
    out = field_fn(t, x)
    if isinstance(out, tuple):
        U, ok = out
        U = np.asarray(U, dtype=float)
        ok = np.asarray(ok, dtype=bool)
    else:
        U = np.asarray(out, dtype=float)
        ok = np.ones(U.shape[:-1], dtype=bool)
    return U, ok & np.all(np.isfinite(U), axis=-1)


# -- residuals ---------------------------------------------------------------

@dataclass
class ResidualReport:
    residual: np.ndarray  # (..., n) per node, NaN where excluded
    used: np.ndarray
    fd_step: float
    reasons: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return int(np.count_nonzero(self.used))

    @property
    def n_excluded(self):
        return int(self.used.size - self.n_nodes)

    @property
    def norms(self):
        return np.max(np.abs(self.residual[self.used]), axis=-1)

    @property
    def max(self):
        return float(self.norms.max())

    @property
    def mean(self):
        return float(self.norms.mean())

    def summary(self):
        return {"max": self.max, "mean": self.mean, "n_nodes": self.n_nodes,
                "n_excluded": self.n_excluded, "fd_step": self.fd_step}

    def to_json(self, path_or_file=None):
        text = json.dumps(self.summary(), sort_keys=False)
        if path_or_file is not None:
            _emit(path_or_file, lambda fh: fh.write(text + "\n"))
        return text


def _christoffel_term(chart, x, U):
    G = christoffel_at(chart, x, check=False)
    return np.einsum("...ilm,...l,...m->...i", G, U, U)


def euler_residual(chart: SurfaceChart, field_or_grid, t=0.0, fd_step=1e-4,
                   stationary=None, points=None) -> ResidualReport:
    """Central-difference residual of the Euler equation.

    ``field_or_grid`` is either a FieldGrid (differences use the grid
    spacing; the grid must be stationary since it holds a single snapshot)
    or a callable ``f(t, coords)`` returning ``U`` or ``(U, valid)`` that is
    probed at ``points`` with step ``fd_step``.  A node counts only if every
    stencil value is valid.
    """
    if isinstance(field_or_grid, FieldGrid):
        return _grid_residual(field_or_grid, stationary)
    if not fd_step > 0:
        raise ConfigError("fd_step must be positive")
    if points is None:
        raise ConfigError("a callable field needs sample points")
    x = np.asarray(points, dtype=float)
    if x.shape[-1] != chart.dim:
        raise ConfigError(f"points need {chart.dim} coordinates")
    n = chart.dim
    h = float(fd_step)
    U, ok = _call_field(field_or_grid, t, x)
    U0 = np.where(ok[..., None], U, 0.0)
    conv = np.zeros_like(U0)
    reasons = {"invalid_node": int(np.count_nonzero(~ok))}
    stencil_ok = ok.copy()
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        Up, okp = _call_field(field_or_grid, t, x + e)
        Um, okm = _call_field(field_or_grid, t, x - e)
        stencil_ok &= okp & okm
        dU = (np.where(okp[..., None], Up, 0.0) - np.where(okm[..., None], Um, 0.0)) / (2 * h)
        conv += U0[..., k:k + 1] * dU
    if stationary:
        dt = 0.0
    else:
        Up, okp = _call_field(field_or_grid, t + h, x)
        Um, okm = _call_field(field_or_grid, t - h, x)
        stencil_ok &= okp & okm
        dt = (np.where(okp[..., None], Up, 0.0) - np.where(okm[..., None], Um, 0.0)) / (2 * h)
    reasons["stencil_outside_mask"] = int(np.count_nonzero(ok & ~stencil_ok))
    res = dt + conv + _christoffel_term(chart, np.where(ok[..., None], x, _inner(chart)), U0)
    if not stencil_ok.any():
        raise InsufficientDomain("no node has its whole stencil inside the validity mask")
    res = np.where(stencil_ok[..., None], res, np.nan)
    return ResidualReport(res, stencil_ok, h, reasons)


def _inner(chart):
    return np.array([0.5 * (lo + min(hi, lo + 2.0)) if math.isfinite(lo) and math.isfinite(hi)
                     else (lo + 1.0 if math.isfinite(lo) else 0.0)
                     for lo, hi in chart.coord_ranges])


def _grid_residual(grid: FieldGrid, stationary):
    if stationary is None:
        stationary = grid.stationary
    if not stationary:
        raise ConfigError("a single grid snapshot has no time derivative; "
                          "pass a callable field for time-dependent data")
    chart = grid.chart
    n = chart.dim
    U = np.where(grid.mask[..., None], grid.values, 0.0)
    used = grid.mask.copy()
    conv = np.zeros_like(U)
    wraps = grid.wraps()
    for k, h in enumerate(grid.spacing):
        Up = np.roll(U, -1, axis=k)
        Um = np.roll(U, 1, axis=k)
        mp = np.roll(grid.mask, -1, axis=k)
        mm = np.roll(grid.mask, 1, axis=k)
        if not wraps[k]:
            edge = [slice(None)] * n
            edge[k] = [0, -1]
            mp = mp.copy()
            mp[tuple(edge)] = False
        used &= mp & mm
        conv += U[..., k:k + 1] * (Up - Um) / (2 * h)
    res = conv + _christoffel_term(chart, np.where(grid.mask[..., None], grid.coords,
                                                    _inner(chart)), U)
    if not used.any():
        raise InsufficientDomain("no grid node has its whole stencil inside the mask")
    reasons = {"invalid_node": int(np.count_nonzero(~grid.mask)),
               "stencil_outside_mask": int(np.count_nonzero(grid.mask & ~used))}
    return ResidualReport(np.where(used[..., None], res, np.nan), used,
                          float(grid.spacing.max()), reasons)


# -- characteristics -----------------------------------------------------------

def _map_jacobian_sign(grid: FieldGrid, Xend, alive):
    """Sign of the Lagrangian map Jacobian at seed nodes (0 where unknown)."""
    n = grid.chart.dim
    shape = grid.shape
    X = Xend.reshape(shape + (n,))
    A = alive.reshape(shape)
    J = np.zeros(shape + (n, n))
    known = A.copy()
    wraps = grid.wraps()
    for k in range(n):
        Xp, Xm = np.roll(X, -1, axis=k), np.roll(X, 1, axis=k)
        Ap, Am = np.roll(A, -1, axis=k), np.roll(A, 1, axis=k)
        if not wraps[k]:
            Ap = Ap.copy()
            Am = Am.copy()
            idx = [slice(None)] * n
            idx[k] = -1
            Ap[tuple(idx)] = False
            idx[k] = 0
            Am[tuple(idx)] = False
        d = Xp - Xm
        for j, per in enumerate(grid.chart.periodic):
            if per:
                d[..., j] = (d[..., j] + math.pi) % TWO_PI - math.pi
        J[..., :, k] = d
        known &= Ap & Am
    det = np.linalg.det(np.where(known[..., None, None], J, np.eye(n)))
    return np.where(known, np.sign(det), 0.0)


class _LagrangianInterpolator:
    """Values at physical points from data carried by a forward map.

    Seeds sit on a regular grid with Lagrangian coordinates ``xi`` (in seed
    index units); ``X(xi)`` are their arrival positions and ``V(xi)`` their
    velocities.  For a target ``x`` we fit weighted quadratic models of
    ``X - x`` and ``V`` around the current ``xi`` (Wendland weights, radius
    ``radius`` seed spacings), solve ``X(xi) = x`` by Newton on the fitted
    model, and evaluate ``V`` there.  Fitting in ``xi`` keeps the support a
    regular stencil however much the map shears or stretches the arrivals.
    """

    def __init__(self, grid: FieldGrid, Xend, Vend, alive, radius):
        self.n = grid.chart.dim
        self.shape = np.array(grid.shape)
        self.wraps = grid.wraps()
        self.periodic = grid.chart.periodic
        self.scale = grid.spacing
        self.X = Xend.reshape(tuple(self.shape) + (self.n,))
        self.V = Vend.reshape(tuple(self.shape) + (self.n,))
        self.alive = alive.reshape(tuple(self.shape))
        self.radius = float(radius)
        self.basis = _QuadraticBasis(self.n)
        r = int(math.ceil(self.radius))
        rng = np.arange(-r, r + 1)
        self.offsets = np.stack(np.meshgrid(*[rng] * self.n, indexing="ij"),
                                axis=-1).reshape(-1, self.n)
        # nearest-arrival lookup (periodic chart axes folded into one turn)
        idx = np.argwhere(self.alive)
        pts = self._fold(self.X[self.alive])
        for k, per in enumerate(self.periodic):
            if per:
                shift = np.zeros(self.n)
                shift[k] = TWO_PI
                pts = np.concatenate([pts, pts + shift, pts - shift])
                idx = np.concatenate([idx, idx, idx])
        self.seed_index = idx
        self.tree = cKDTree(pts / self.scale) if idx.size else None

    def _fold(self, x):
        x = np.array(x, dtype=float, copy=True)
        for k, per in enumerate(self.periodic):
            if per:
                x[..., k] = np.mod(x[..., k], TWO_PI)
        return x

    def _fit(self, xi, target):
        """Weighted quadratic fit around ``xi``; ``None`` if unsupported."""
        base = np.rint(xi).astype(int)
        idx = base + self.offsets
        for k in range(self.n):
            if self.wraps[k]:
                idx[:, k] = np.mod(idx[:, k], self.shape[k])
        inside = np.all((idx >= 0) & (idx < self.shape), axis=1)
        idx, off = idx[inside], (base + self.offsets)[inside]
        keep = self.alive[tuple(idx.T)]
        idx, off = idx[keep], off[keep]
        d = off - xi
        r = np.linalg.norm(d, axis=1) / self.radius
        near = r < 1.0
        idx, d, r = idx[near], d[near], r[near]
        if idx.shape[0] < 2 * self.basis.size:
            return None
        # xi must be enclosed by live seeds
        pos, neg = d >= 0, d <= 0
        if not all(np.any(np.all(np.where(bits, pos, neg), axis=1)) for bits in _orthants(self.n)):
            return None
        dx = self.X[tuple(idx.T)] - target
        for k, per in enumerate(self.periodic):
            if per:
                dx[:, k] = (dx[:, k] + math.pi) % TWO_PI - math.pi
        dx /= self.scale
        wgt = np.sqrt((1 - r) ** 4 * (4 * r + 1))[:, None]
        B = self.basis(d)
        rhs = np.concatenate([dx, self.V[tuple(idx.T)]], axis=1)
        coef, _, rank, sv = np.linalg.lstsq(B * wgt, rhs * wgt, rcond=None)
        if rank < B.shape[1] or sv[-1] < 1e-8 * sv[0]:
            return None
        return coef

    def __call__(self, target, max_iter=12):
        out = np.full(self.n, np.nan)
        if self.tree is None:
            return out
        _, j = self.tree.query(self._fold(target) / self.scale)
        xi = self.seed_index[j].astype(float)
        n = self.n
        for _ in range(max_iter):
            coef = self._fit(xi, target)
            if coef is None:
                return out
            D0 = coef[0, :n]
            J = coef[1:1 + n, :n].T
            try:
                step = -np.linalg.solve(J, D0)
            except np.linalg.LinAlgError:
                return out
            if np.linalg.norm(step) > self.radius:
                return out
            xi = xi + step
            if np.linalg.norm(step) < 1e-10:
                break
        coef = self._fit(xi, target)
        if coef is None or np.abs(coef[0, :n]).max() > 1e-8:
            return out
        return coef[0, n:]


def _orthants(n):
    return [np.array([(b >> k) & 1 for k in range(n)], dtype=bool) for b in range(1 << n)]


class _QuadraticBasis:
    def __init__(self, n):
        self.n = n
        self.size = 1 + n + n * (n + 1) // 2

    def __call__(self, d):
        cols = [np.ones(d.shape[0])]
        cols += [d[:, k] for k in range(self.n)]
        cols += [d[:, a] * d[:, b] for a in range(self.n) for b in range(a, self.n)]
        return np.stack(cols, axis=1)


def evolve_characteristics(chart: SurfaceChart, initial: FieldGrid, t_target, tol=1e-10,
                           workers=1, strict=True, target_axes=None,
                           radius_factor=2.5) -> FieldGrid:
    """Carry the initial field along geodesics to ``t_target``.

    Every valid node seeds one characteristic.  Arrivals are interpolated onto
    ``target_axes`` (default: the initial axes) by quadratic moving least
    squares in the seeds' grid coordinates, within ``radius_factor`` seed
    spacings (see ``_LagrangianInterpolator``); target nodes not enclosed by
    live seeds are masked out.  If neighbouring characteristics have crossed, the
    Lagrangian map has folded: the affected target nodes form the
    MultiValued region (raised when ``strict``, masked otherwise).
    """
    if chart != initial.chart:
        raise ConfigError("initial grid lives on a different chart")
    n = chart.dim
    x0 = initial.coords.reshape(-1, n)
    w0 = initial.values.reshape(-1, n)
    seeded = initial.mask.reshape(-1)
    xe = np.full_like(x0, np.nan)
    we = np.full_like(w0, np.nan)
    if seeded.any():
        a, b, status = integrate_endpoints(chart, x0[seeded], w0[seeded], initial.t, t_target,
                                           tol=tol, workers=workers)
        good = status == 0
        sel = np.flatnonzero(seeded)
        xe[sel[good]] = a[good]
        we[sel[good]] = b[good]
    alive = np.all(np.isfinite(xe), axis=1)

    scale = initial.spacing
    interp = _LagrangianInterpolator(initial, xe, we, alive, radius_factor)
    taxes = initial.axes if target_axes is None else [np.asarray(a, float) for a in target_axes]
    X = mesh(taxes)
    tshape = X.shape[:-1]
    flat = X.reshape(-1, n)
    vals = np.array([interp(x) for x in flat]).reshape(tshape + (n,))
    mask = np.all(np.isfinite(vals), axis=-1)

    sign = _map_jacobian_sign(initial, xe, alive)
    folded = (sign < 0).reshape(-1)
    region = np.zeros(tshape, dtype=bool)
    if folded.any():
        # target nodes inside the box of the folded arrivals, padded by one
        # cell of the coarser grid so a narrow fold still catches a node
        fx = xe[folded]
        pad = np.maximum(scale, [a[1] - a[0] for a in taxes])
        lo = fx.min(axis=0) - pad
        hi = fx.max(axis=0) + pad
        region = np.all((X >= lo) & (X <= hi), axis=-1)
    prov = dict(initial.provenance)
    prov.update({"evolved_from_t": initial.t, "tol": tol})
    out = FieldGrid(chart, float(t_target), taxes, vals, mask & ~region, prov,
                    initial.stationary)
    if region.any() and strict:
        raise MultiValued(region, out)
    return out


# -- conservation --------------------------------------------------------------

def conservation_report(chart: SurfaceChart, trajectory: Trajectory) -> dict:
    """Max drift of every defined first integral along ``trajectory``."""
    if len(trajectory) == 0:
        raise ConfigError("empty trajectory")
    if trajectory.chart != chart:
        raise ConfigError("trajectory lives on a different chart")
    return dict(trajectory.drift)
