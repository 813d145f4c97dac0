"""Geodesic flow and its first integrals.

Characteristics of the pressureless Euler system are geodesics, so every
hodograph construction in this package rests on the integrals evaluated here.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import BoundaryHit, HodoflowError, StepUnderflow, UndefinedIntegral
from .geometry import SurfaceChart, christoffel_at, metric_diag

# fixed batch size for endpoint integration: results must not depend on
# how many workers share the batches
BATCH_CHUNK = 256


@dataclass(frozen=True)
class PhaseState:
    t: float
    coords: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "coords", np.array(self.coords, dtype=float))
        object.__setattr__(self, "velocities", np.array(self.velocities, dtype=float))
        if self.coords.shape != self.velocities.shape or self.coords.ndim != 1:
            raise ValueError("coords and velocities must be 1-D of equal length")
        if not (np.all(np.isfinite(self.coords)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("phase state must be finite")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.coords, self.velocities])

    @classmethod
    def from_vector(cls, t, y) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        n = y.size // 2
        return cls(t, y[:n], y[n:])


def geodesic_rhs(chart: SurfaceChart, state: PhaseState) -> PhaseState:
    """Time derivative of ``state``: ``(dx, du) = (u, -Gamma(u, u))``."""
    G = christoffel_at(chart, state.coords)
    u = state.velocities
    du = -np.einsum("ilm,l,m->i", G, u, u)
    return PhaseState(1.0, u.copy(), du)


# -- integrals ---------------------------------------------------------------

INTEGRAL_NAMES = {
    "cylinder": ("H", "Lz", "u", "v", "z-ut", "phi-vt"),
    "cone": ("H", "L3", "I3", "I4"),
    "sphere2": ("H", "L1", "L2", "L3", "I1", "I2"),
    "sphere3": ("H", "L1", "L2", "L3", "L4", "L5", "L6"),
}

# integrals that change when the radial velocity changes sign
SEGMENTED = {"cone": ("I3", "I4"), "sphere2": ("I1", "I2")}


def unwrap_period(chart: SurfaceChart, name: str) -> float | None:
    """Branch period of an arctan-built integral, or None if single-valued."""
    if chart.kind == "cone" and name == "I4":
        return math.pi / math.sqrt(chart.alpha)
    if chart.kind == "sphere2" and name == "I2":
        return math.pi
    return None


def s3_pq(coords):
    """Matrices with ``(L1, L2, L3) = R^2 P u`` and ``(L4, L5, L6) = R^2 Q u``."""
    x = np.asarray(coords, dtype=float)
    s1, c1 = np.sin(x[..., 0]), np.cos(x[..., 0])
    s2, c2 = np.sin(x[..., 1]), np.cos(x[..., 1])
    s3, c3 = np.sin(x[..., 2]), np.cos(x[..., 2])
    zero = np.zeros_like(s1)
    P = np.stack([
        np.stack([-s2 * c3, -s1 * c1 * c2 * c3, s1 * c1 * s2 * s3], axis=-1),
        np.stack([c2, -s1 * c1 * s2, zero], axis=-1),
        np.stack([zero, s1**2 * c3, -(s1**2) * s2 * c2 * s3], axis=-1),
    ], axis=-2)
    Q = np.stack([
        np.stack([s2 * s3, s1 * c1 * c2 * s3, s1 * c1 * s2 * c3], axis=-1),
        np.stack([zero, s1**2 * s3, s1**2 * s2 * c2 * c3], axis=-1),
        np.stack([zero, zero, s1**2 * s2**2], axis=-1),
    ], axis=-2)
    return P, Q


def s2_momenta(chart: SurfaceChart, coords, velocities):
    x = np.asarray(coords, dtype=float)
    w = np.asarray(velocities, dtype=float)
    R2 = chart.R**2
    th, ph = x[..., 0], x[..., 1]
    u, v = w[..., 0], w[..., 1]
    s, c = np.sin(th), np.cos(th)
    L1 = -R2 * (s * c * np.cos(ph) * v + np.sin(ph) * u)
    L2 = -R2 * (s * c * np.sin(ph) * v - np.cos(ph) * u)
    L3 = R2 * s * s * v
    return L1, L2, L3


def s3_momenta(chart: SurfaceChart, coords, velocities):
    P, Q = s3_pq(coords)
    w = np.asarray(velocities, dtype=float)
    R2 = chart.R**2
    low = R2 * np.einsum("...ij,...j->...i", P, w)
    high = R2 * np.einsum("...ij,...j->...i", Q, w)
    return low, high


def _sigma(u):
    return np.where(u < 0, -1.0, 1.0)


def integral_values(chart: SurfaceChart, t, coords, velocities) -> dict:
    """Every integral of ``chart`` at a batch of phase points.

    Returns ``name -> array``; entries are NaN where a formula is undefined.
    ``sigma`` is the sign of the radial velocity at each point (``+1`` at 0).
    """
    x = np.asarray(coords, dtype=float)
    w = np.asarray(velocities, dtype=float)
    t = np.asarray(t, dtype=float)
    g = metric_diag(chart, x, check=False)
    H = np.sum(g * w * w, axis=-1)
    out = {"H": H}
    with np.errstate(divide="ignore", invalid="ignore"):
        if chart.kind == "cylinder":
            R2 = chart.R**2
            out["Lz"] = R2 * w[..., 1]
            out["u"] = w[..., 0] + 0.0 * t
            out["v"] = w[..., 1] + 0.0 * t
            out["z-ut"] = x[..., 0] - w[..., 0] * t
            out["phi-vt"] = x[..., 1] - w[..., 1] * t
        elif chart.kind == "cone":
            a = chart.alpha
            r, ph = x[..., 0], x[..., 1]
            u, v = w[..., 0], w[..., 1]
            sa = math.sqrt(a)
            out["L3"] = a * r * r * v
            out["I3"] = r * r + H * t * t - 2.0 * r * u * t
            I4 = ph + (np.arctan((u * r - H * t) / (sa * r * r * v))
                       - np.arctan(u / (sa * r * v))) / sa
            out["I4"] = np.where(v != 0.0, I4, np.nan)
        elif chart.kind == "sphere2":
            th, ph = x[..., 0], x[..., 1]
            u, v = w[..., 0], w[..., 1]
            L1, L2, L3 = s2_momenta(chart, x, w)
            out["L1"], out["L2"], out["L3"] = L1, L2, L3
            s, c = np.sin(th), np.cos(th)
            sg = _sigma(u)
            speed = np.sqrt(u * u + s * s * v * v)
            ang = np.arctan2(speed * c, np.abs(u) * s)
            I1 = t + sg * ang / speed
            out["I1"] = np.where(speed > 0.0, I1, np.nan)
            k = v * s * s / speed
            I2 = ph + np.arctan(v * s * c / u) - np.arctan(k * np.tan(speed * t + sg * ang))
            out["I2"] = np.where((speed > 0.0) & (u != 0.0), I2, np.nan)
        else:
            low, high = s3_momenta(chart, x, w)
            for i in range(3):
                out[f"L{i + 1}"] = low[..., i]
                out[f"L{i + 4}"] = high[..., i]
    return {name: np.asarray(out[name], dtype=float) for name in INTEGRAL_NAMES[chart.kind]}


@dataclass(frozen=True)
class IntegralSet:
    values: dict
    undefined: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.require(name)

    def require(self, name) -> float:
        if name in self.undefined:
            raise UndefinedIntegral(name, self.undefined[name])
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def names(self):
        return list(self.values) + [n for n in self.undefined if n not in self.values]


_UNDEFINED_REASON = {
    "I4": "angular velocity v vanishes",
    "I1": "zero speed",
    "I2": "radial velocity u vanishes or zero speed",
}


def integrals_at(chart: SurfaceChart, state: PhaseState) -> IntegralSet:
    chart.check(state.coords)
    vals = integral_values(chart, state.t, state.coords, state.velocities)
    defined, undefined = {}, {}
    for name, val in vals.items():
        v = float(val)
        if math.isfinite(v):
            defined[name] = v
        else:
            undefined[name] = _UNDEFINED_REASON.get(name, "formula undefined")
    return IntegralSet(defined, undefined)


# -- identities --------------------------------------------------------------

def relation_residuals(chart: SurfaceChart, coords, velocities) -> dict:
    """Vectorised residuals of the identities among the integrals."""
    x = np.asarray(coords, dtype=float)
    w = np.asarray(velocities, dtype=float)
    vals = integral_values(chart, 0.0, x, w)
    R2H = chart.R**2 * vals["H"]
    if chart.kind == "sphere2":
        th, ph = x[..., 0], x[..., 1]
        L1, L2, L3 = vals["L1"], vals["L2"], vals["L3"]
        return {
            "great_circle": np.cos(ph) * L1 + np.sin(ph) * L2 + L3 / np.tan(th),
            "momentum_norm": L1**2 + L2**2 + L3**2 - R2H,
        }
    if chart.kind == "sphere3":
        p1, p2, p3 = x[..., 0], x[..., 1], x[..., 2]
        L = np.stack([vals[f"L{i}"] for i in range(1, 7)], axis=-1)
        P, Q = s3_pq(x)
        pred = np.einsum("...ij,...j->...i", P, np.linalg.solve(Q, L[..., 3:, None])[..., 0])
        return {
            "s3_relation": (np.cos(p2) * L[..., 0] + np.sin(p2) * np.cos(p3) * L[..., 1]
                            + L[..., 2] / np.tan(p1)),
            "det_P": np.linalg.det(P),
            "det_Q": np.linalg.det(Q) - np.sin(p1)**4 * np.sin(p2)**3 * np.sin(p3)**2,
            "rank_two": np.max(np.abs(L[..., :3] - pred), axis=-1),
            "momentum_norm": np.sum(L**2, axis=-1) - R2H,
        }
    return {}


def relation_checks(chart: SurfaceChart, state: PhaseState) -> dict:
    chart.check(state.coords)
    res = relation_residuals(chart, state.coords, state.velocities)
    return {k: float(v) for k, v in res.items()}


# -- integration -------------------------------------------------------------

def _initial_step(chart, y0, t0, t_end, tol):
    """Starting step from the usual two-evaluation estimate."""
    code, par = chart.code, chart.kernel_param
    span = abs(t_end - t0)
    f0 = np.asarray(kernels.rhs(code, par, y0))
    sc = tol + tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / sc)
    d1 = np.max(np.abs(f0) / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + math.copysign(h0, t_end - t0) * f0
    if not kernels.interior(code, list(y1)):
        return h0 * 1e-3
    f1 = np.asarray(kernels.rhs(code, par, y1))
    d2 = np.max(np.abs(f1 - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


class Trajectory:
    """Accepted integration steps with cubic Hermite dense output."""

    def __init__(self, chart, ts, ys, n_accepted, n_rejected):
        self.chart = chart
        self.ts = np.asarray(ts, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.ts.setflags(write=False)
        self.ys.setflags(write=False)
        self.step_stats = {"accepted": int(n_accepted), "rejected": int(n_rejected)}

    def __len__(self):
        return self.ts.size

    @property
    def dim(self):
        return self.chart.dim

    @property
    def coords(self):
        return self.ys[:, :self.dim]

    @property
    def velocities(self):
        return self.ys[:, self.dim:]

    @property
    def samples(self) -> list[PhaseState]:
        return [PhaseState.from_vector(t, y) for t, y in zip(self.ts, self.ys)]

    @property
    def final(self) -> PhaseState:
        return PhaseState.from_vector(self.ts[-1], self.ys[-1])

    @cached_property
    def _slopes(self):
        code, par = self.chart.code, self.chart.kernel_param
        return np.array([kernels.rhs(code, par, y) for y in self.ys])

    def at(self, t):
        """Dense-output state at time ``t`` (cubic Hermite on the step)."""
        ts = self.ts
        lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
        if not lo <= t <= hi:
            raise ValueError(f"t={t} outside the integrated interval")
        if ts.size == 1:
            return PhaseState.from_vector(t, self.ys[0])
        if ts[-1] >= ts[0]:
            i = int(np.clip(np.searchsorted(ts, t) - 1, 0, ts.size - 2))
        else:
            i = int(np.clip(np.searchsorted(-ts, -t) - 1, 0, ts.size - 2))
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        y0, y1 = self.ys[i], self.ys[i + 1]
        f0, f1 = self._slopes[i], self._slopes[i + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return PhaseState.from_vector(t, h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1)

    @cached_property
    def integrals(self) -> dict:
        return integral_values(self.chart, self.ts, self.coords, self.velocities)

    @cached_property
    def segments(self) -> np.ndarray:
        """Segment index per sample; a new segment starts at each radial turn."""
        sg = _sigma(self.velocities[:, 0])
        return np.concatenate([[0], np.cumsum(sg[1:] != sg[:-1])]).astype(int)

    @cached_property
    def drift(self) -> dict:
        return segmented_drift(self.chart, self.integrals, self.segments)

    def to_csv(self, path_or_file):
        write_trajectory_csv(self, path_or_file)


def segmented_drift(chart, values: dict, segments) -> dict:
    """Max ``|I(t) - I(t_start)|`` per integral.

    Integrals in ``SEGMENTED`` are compared within each radial-velocity
    segment only; arctan-built ones are unwrapped by their branch period first.
    """
    segments = np.asarray(segments)
    seg_names = SEGMENTED.get(chart.kind, ())
    out = {}
    for name, vals in values.items():
        vals = np.asarray(vals, dtype=float)
        groups = [np.arange(vals.size)] if name not in seg_names else [
            np.flatnonzero(segments == s) for s in np.unique(segments)]
        period = unwrap_period(chart, name)
        worst = 0.0
        for idx in groups:
            seq = vals[idx]
            seq = seq[np.isfinite(seq)]
            if seq.size == 0:
                continue
            if period is not None:
                seq = np.unwrap(seq, period=period)
            worst = max(worst, float(np.max(np.abs(seq - seq[0]))))
        out[name] = worst
    return out


def integrate_geodesic(chart: SurfaceChart, initial: PhaseState, t_end: float,
                       tol: float = 1e-10, max_steps: int = 1_000_000) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration of the geodesic through ``initial``.

    ``tol`` is used as both the relative and absolute local error bound.
    Raises BoundaryHit when the path leaves the open chart and StepUnderflow
    when the step drops below ``1e-14 * |t_end|``; both carry the partial
    trajectory.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    chart.check(initial.coords)
    if initial.coords.size != chart.dim:
        raise ValueError("state dimension does not match the chart")
    y0 = initial.vector
    t0 = initial.t
    if t_end == t0:
        return Trajectory(chart, [t0], [y0], 0, 0)
    h0 = _initial_step(chart, y0, t0, t_end, tol)
    hmin = 1e-14 * max(abs(t_end), abs(t0))
    ts, ys, n_acc, n_rej, status = kernels.integrate(
        chart.code, chart.kernel_param, y0, t0, float(t_end), tol, tol, h0, max_steps, hmin)
    traj = Trajectory(chart, ts, ys, n_acc, n_rej)
    if status == 1:
        raise BoundaryHit(traj.final, traj)
    if status == 2:
        raise StepUnderflow(traj.final, traj)
    if status == 3:
        raise HodoflowError(f"step budget of {max_steps} exhausted at t={traj.ts[-1]:.6g}")
    return traj


def integrate_endpoints(chart: SurfaceChart, coords, velocities, t0, t_end, tol=1e-10,
                        workers: int = 1, max_steps: int = 1_000_000):
    """Flow many phase points from ``t0`` to ``t_end``; endpoints only.

    Returns ``(coords, velocities, status)`` with kernel status codes per
    point.  Work is cut into fixed-size batches so the numbers do not depend
    on ``workers``.
    """
    x = np.asarray(coords, dtype=float).reshape(-1, chart.dim)
    w = np.asarray(velocities, dtype=float).reshape(-1, chart.dim)
    Y = np.concatenate([x, w], axis=1)
    if t_end == t0 or Y.shape[0] == 0:
        return x.copy(), w.copy(), np.zeros(Y.shape[0], dtype=np.int64)
    h0 = min(1e-3, abs(t_end - t0))
    hmin = 1e-14 * max(abs(t_end), abs(t0))
    chunks = [Y[i:i + BATCH_CHUNK] for i in range(0, Y.shape[0], BATCH_CHUNK)]

    def run(chunk):
        return kernels.integrate_batch(chart.code, chart.kernel_param, chunk, float(t0),
                                       float(t_end), tol, tol, h0, max_steps, hmin)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    Yend = np.concatenate([r[0] for r in results])
    status = np.concatenate([r[1] for r in results])
    n = chart.dim
    return Yend[:, :n], Yend[:, n:], status


def write_trajectory_csv(traj: Trajectory, path_or_file):
    chart = traj.chart
    names = list(INTEGRAL_NAMES[chart.kind])
    header = ["t", *chart.coord_names, *chart.velocity_names, *names]
    vals = traj.integrals
    cols = [traj.ts, *traj.coords.T, *traj.velocities.T, *[vals[k] for k in names]]
    rows = np.column_stack(cols)

    def emit(fh):
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) for v in row])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)
