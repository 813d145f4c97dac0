"""Implicit hodograph systems ``S_i(t, x, u) = 0`` and their solution.

A system is a vectorised residual in the velocities plus, optionally, an
analytic velocity Jacobian (the M matrix).  Solutions are found pointwise by
damped Newton iteration; grids are swept with continuation so that each point
starts from its neighbour's velocities, which also keeps every row on one
sheet of the multi-valued solution.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NoConvergence, SingularJacobian
from .fparams import Constant, FParam, Linear, as_fparam
from .geodesics import integral_values, s2_momenta, s3_momenta
from .geometry import SurfaceChart

_EPS = np.finfo(float).eps


def _arity(F: FParam):
    if isinstance(F, Constant):
        return 0
    if isinstance(F, Linear):
        return F.b.size
    return F.nargs


def _apply(F: FParam, args):
    k = _arity(F)
    use = args if k is None else args[:k]
    out = F(*use)
    shape = np.broadcast(*[np.asarray(a) for a in args]).shape
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


def _apply_grad(F: FParam, args):
    """Gradient of ``F`` with respect to all of ``args`` (zeros for unused ones)."""
    k = _arity(F)
    shape = np.broadcast(*[np.asarray(a) for a in args]).shape
    use = args if k is None else args[:k]
    g = F.grad(*use) if use else []
    out = [np.broadcast_to(np.asarray(gi, dtype=float), shape) for gi in g]
    out += [np.zeros(shape)] * (len(args) - len(out))
    return out


@dataclass
class HodographSystem:
    """Residuals ``S(t, coords, velocities)`` with shape ``(..., n)``.

    ``jacobian_fn`` is the analytic M matrix when one is available; otherwise
    M is formed by central differences.  ``reduced`` optionally carries the
    scalar-equation form of a stationary system.
    """

    chart: SurfaceChart
    name: str
    residual_fn: object
    jacobian_fn: object = None
    stationary: bool = False
    domain_fn: object = None
    reduced: object = None
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.chart.dim

    @property
    def analytic_jacobian(self):
        return self.jacobian_fn is not None

    def residual(self, t, coords, velocities):
        x = np.asarray(coords, dtype=float)
        w = np.asarray(velocities, dtype=float)
        with np.errstate(all="ignore"):
            return np.asarray(self.residual_fn(t, x, w), dtype=float)

    def jacobian(self, t, coords, velocities, fd=None):
        """M = dS/du, shape ``(..., n, n)``; ``fd=True`` forces differences."""
        use_fd = (self.jacobian_fn is None) if fd is None else fd
        if not use_fd:
            with np.errstate(all="ignore"):
                return np.asarray(self.jacobian_fn(t, np.asarray(coords, dtype=float),
                                                   np.asarray(velocities, dtype=float)))
        return fd_jacobian(self, t, coords, velocities)

    def in_domain(self, t, coords, velocities):
        x = np.asarray(coords, dtype=float)
        w = np.asarray(velocities, dtype=float)
        ok = np.all(np.isfinite(self.residual(t, x, w)), axis=-1)
        if self.domain_fn is not None:
            with np.errstate(all="ignore"):
                ok &= self.domain_fn(t, x, w)
        return ok


def fd_jacobian(sys: HodographSystem, t, coords, velocities):
    x = np.asarray(coords, dtype=float)
    w = np.asarray(velocities, dtype=float)
    n = w.shape[-1]
    cols = []
    for k in range(n):
        h = np.maximum(1e-7, 1e-7 * np.abs(w[..., k]))
        up = w.copy()
        dn = w.copy()
        up[..., k] += h
        dn[..., k] -= h
        cols.append((sys.residual(t, x, up) - sys.residual(t, x, dn)) / (2 * h[..., None]))
    return np.stack(cols, axis=-1)


def m_matrix(sys: HodographSystem, t, coords, velocities):
    return sys.jacobian(t, coords, velocities)


def det_m(sys: HodographSystem, t, coords, velocities):
    return np.linalg.det(m_matrix(sys, t, coords, velocities))


# -- system constructors -----------------------------------------------------

def _cone_chart(chart_or_alpha):
    if isinstance(chart_or_alpha, SurfaceChart):
        if chart_or_alpha.kind != "cone":
            raise ValueError("cone system needs a cone chart")
        return chart_or_alpha
    return SurfaceChart.cone(chart_or_alpha)


def _sphere_chart(kind, chart_or_R):
    if isinstance(chart_or_R, SurfaceChart):
        if chart_or_R.kind != kind:
            raise ValueError(f"system needs a {kind} chart")
        return chart_or_R
    return SurfaceChart(kind, R=float(chart_or_R))


def make_cone_system(F1, F2, alpha) -> HodographSystem:
    """``I3 = F1(H, L3)``, ``I4 = F2(H, L3)``."""
    chart = _cone_chart(alpha)
    F1, F2 = as_fparam(F1), as_fparam(F2)

    def res(t, x, w):
        vals = integral_values(chart, t, x, w)
        args = (vals["H"], vals["L3"])
        return np.stack([vals["I3"] - _apply(F1, args), vals["I4"] - _apply(F2, args)], axis=-1)

    return HodographSystem(chart, "cone", res, params={"F1": F1, "F2": F2})


def make_cone_alt_system(phi1, phi2, alpha) -> HodographSystem:
    """``H = phi1(I3, I4)``, ``L3 = phi2(I3, I4)``.

    Functions that only use ``I3`` (a one-argument linear, say) never
    evaluate ``I4``, so the system stays defined where ``v = 0``.
    """
    chart = _cone_chart(alpha)
    phi1, phi2 = as_fparam(phi1), as_fparam(phi2)
    need_i4 = any(_arity(f) is None or _arity(f) >= 2 for f in (phi1, phi2))

    def res(t, x, w):
        vals = integral_values(chart, t, x, w)
        args = (vals["I3"], vals["I4"]) if need_i4 else (vals["I3"],)
        return np.stack([vals["H"] - _apply(phi1, args), vals["L3"] - _apply(phi2, args)], axis=-1)

    return HodographSystem(chart, "cone_alt", res, stationary=False,
                           params={"phi1": phi1, "phi2": phi2})


def s2_first_integral(t, theta, u, v, sigma):
    """Time-dependent integral I1 on one sheet: smooth in ``u`` for fixed ``sigma``."""
    s, c = np.sin(theta), np.cos(theta)
    speed = np.sqrt(u * u + s * s * v * v)
    return t + sigma * np.arctan2(speed * c, sigma * u * s) / speed


def make_s2_system(F1, F2, sigma=1, R=1.0) -> HodographSystem:
    """``I1 = F1(L1, L2)``, ``v sin^2 theta = F2(L1, L2)`` on the sheet ``sigma``."""
    chart = _sphere_chart("sphere2", R)
    F1, F2 = as_fparam(F1), as_fparam(F2)
    sigma = 1.0 if sigma >= 0 else -1.0

    def res(t, x, w):
        th = x[..., 0]
        u, v = w[..., 0], w[..., 1]
        L1, L2, _ = s2_momenta(chart, x, w)
        I1 = s2_first_integral(t, th, u, v, sigma)
        return np.stack([I1 - _apply(F1, (L1, L2)),
                         v * np.sin(th) ** 2 - _apply(F2, (L1, L2))], axis=-1)

    def domain(t, x, w):
        # argument of the arcsin in the printed form of I1
        s, c = np.sin(x[..., 0]), np.cos(x[..., 0])
        u, v = w[..., 0], w[..., 1]
        arg = np.sqrt((u * u + s * s * v * v) / (u * u + s * s * c * c * v * v)) * np.abs(c)
        return np.isfinite(arg) & (arg <= 1.0 + 1e-12) & (sigma * u >= 0)

    return HodographSystem(chart, "s2", res, domain_fn=domain,
                           params={"F1": F1, "F2": F2, "sigma": sigma})


def make_s2_stationary_system(F1, F2, R=1.0) -> HodographSystem:
    """Stationary S^2 system in ``xi = L3 = R^2 v sin^2 theta``.

    ``R^2 (sin cos cos(phi) v + sin(phi) u) = F1(xi)`` and
    ``R^2 (sin cos sin(phi) v - cos(phi) u) = F2(xi)``; at ``R = 1`` these are
    the usual equations.  The M matrix is analytic.
    """
    chart = _sphere_chart("sphere2", R)
    F1, F2 = as_fparam(F1), as_fparam(F2)
    R2 = chart.R ** 2

    def res(t, x, w):
        th, ph = x[..., 0], x[..., 1]
        u, v = w[..., 0], w[..., 1]
        s, c = np.sin(th), np.cos(th)
        xi = R2 * s * s * v
        return np.stack([R2 * (s * c * np.cos(ph) * v + np.sin(ph) * u) - _apply(F1, (xi,)),
                         R2 * (s * c * np.sin(ph) * v - np.cos(ph) * u) - _apply(F2, (xi,))],
                        axis=-1)

    def jac(t, x, w):
        th, ph = x[..., 0], x[..., 1]
        v = w[..., 1]
        s, c = np.sin(th), np.cos(th)
        xi = R2 * s * s * v
        d1 = _apply_grad(F1, (xi,))[0]
        d2 = _apply_grad(F2, (xi,))[0]
        cp, sp = np.cos(ph), np.sin(ph)
        row1 = np.stack([R2 * sp, R2 * (s * c * cp - s * s * d1)], axis=-1)
        row2 = np.stack([-R2 * cp, R2 * (s * c * sp - s * s * d2)], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def reduced_residual(x, v):
        th, ph = x[..., 0], x[..., 1]
        s, c = np.sin(th), np.cos(th)
        xi = R2 * s * s * v
        return R2 * s * c * v - np.cos(ph) * _apply(F1, (xi,)) - np.sin(ph) * _apply(F2, (xi,))

    def reduced_u(x, v):
        th, ph = x[..., 0], x[..., 1]
        xi = R2 * np.sin(th) ** 2 * v
        return (np.sin(ph) * _apply(F1, (xi,)) - np.cos(ph) * _apply(F2, (xi,))) / R2

    return HodographSystem(chart, "s2_stationary", res, jacobian_fn=jac, stationary=True,
                           reduced=(reduced_residual, reduced_u),
                           params={"F1": F1, "F2": F2})


def make_s3_stationary_system(F1, F2, F3, R=1.0) -> HodographSystem:
    """``L_{3+i} = F_i(L1, L2, L3)`` on the 3-sphere."""
    chart = _sphere_chart("sphere3", R)
    Fs = [as_fparam(F) for F in (F1, F2, F3)]

    def res(t, x, w):
        low, high = s3_momenta(chart, x, w)
        args = (low[..., 0], low[..., 1], low[..., 2])
        return np.stack([high[..., i] - _apply(Fs[i], args) for i in range(3)], axis=-1)

    return HodographSystem(chart, "s3_stationary", res, stationary=True,
                           params={"F1": Fs[0], "F2": Fs[1], "F3": Fs[2]})


def make_cylinder_system(F1, F2, R=1.0) -> HodographSystem:
    """``u = F1(z - u t, phi - v t)``, ``v = F2(z - u t, phi - v t)``."""
    chart = _sphere_chart("cylinder", R)
    F1, F2 = as_fparam(F1), as_fparam(F2)

    def res(t, x, w):
        u, v = w[..., 0], w[..., 1]
        args = (x[..., 0] - u * t, x[..., 1] - v * t)
        return np.stack([u - _apply(F1, args), v - _apply(F2, args)], axis=-1)

    def jac(t, x, w):
        u, v = w[..., 0], w[..., 1]
        args = (x[..., 0] - u * t, x[..., 1] - v * t)
        g1 = _apply_grad(F1, args)
        g2 = _apply_grad(F2, args)
        row1 = np.stack([1.0 + t * g1[0], t * g1[1]], axis=-1)
        row2 = np.stack([t * g2[0], 1.0 + t * g2[1]], axis=-1)
        return np.stack([row1, row2], axis=-2)

    stationary = isinstance(F1, Constant) and isinstance(F2, Constant)
    return HodographSystem(chart, "cylinder", res, jacobian_fn=jac, stationary=stationary,
                           params={"F1": F1, "F2": F2})


# -- Newton ------------------------------------------------------------------

@dataclass
class SolveInfo:
    converged: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    det: np.ndarray
    singular: np.ndarray
    history: list


def _scaled_det(J):
    det = np.linalg.det(J)
    norms = np.prod(np.linalg.norm(J, axis=-1), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return det, np.where(norms > 0, np.abs(det) / norms, 0.0)


def solve_batch(sys: HodographSystem, t, coords, guess, max_iter=50, tol=1e-12,
                damping=1.0, jac_tol=1e-12):
    """Damped Newton at many points at once; each point iterates independently.

    Returns ``(velocities, SolveInfo)``.  A point stops as converged when
    ``max|S| <= tol`` or when a full Newton step falls to rounding level.
    ``jac_tol`` bounds the Hadamard ratio ``|det M| / prod(row norms)``;
    points below it stop as singular.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    x = np.atleast_2d(np.asarray(coords, dtype=float))
    w = np.array(np.broadcast_to(np.asarray(guess, dtype=float), x.shape), dtype=float)
    N = x.shape[0]
    active = np.ones(N, dtype=bool)
    conv = np.zeros(N, dtype=bool)
    sing = np.zeros(N, dtype=bool)
    iters = np.zeros(N, dtype=int)
    dets = np.full(N, np.nan)
    S = sys.residual(t, x, w)
    rn = np.max(np.abs(S), axis=-1)
    rn[~np.isfinite(rn)] = np.inf
    history = [rn.copy()]
    done = rn <= tol
    conv |= done
    active &= ~done
    for it in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, wa = x[idx], w[idx]
        J = sys.jacobian(t, xa, wa)
        det, ratio = _scaled_det(J)
        dets[idx] = det
        bad = ~(ratio > jac_tol) | ~np.all(np.isfinite(J), axis=(-2, -1))
        if bad.any():
            sing[idx[bad]] = True
            active[idx[bad]] = False
            idx, xa, wa, J = idx[~bad], xa[~bad], wa[~bad], J[~bad]
            if idx.size == 0:
                break
        step = -np.linalg.solve(J, S[idx][..., None])[..., 0]
        lam = np.full(idx.size, float(damping))
        r0 = rn[idx]
        trial = wa + lam[:, None] * step
        St = sys.residual(t, xa, trial)
        rt = np.max(np.abs(St), axis=-1)
        rt[~np.isfinite(rt)] = np.inf
        for _ in range(30):
            worse = rt > (1.0 - 1e-4 * lam) * r0
            if not worse.any():
                break
            lam[worse] *= 0.5
            trial[worse] = wa[worse] + lam[worse, None] * step[worse]
            St[worse] = sys.residual(t, xa[worse], trial[worse])
            r_new = np.max(np.abs(St[worse]), axis=-1)
            r_new[~np.isfinite(r_new)] = np.inf
            rt[worse] = r_new
        moved = rt < r0
        # full steps at rounding level relative to the iterate itself; no
        # absolute floor, since some fields are many decades below one
        smax, wmax = np.max(np.abs(step), axis=-1), np.max(np.abs(wa), axis=-1)
        rel = np.where(smax == 0, 0.0, smax / np.where(wmax > 0, wmax, np.inf))
        stalled = (rel <= 8 * _EPS) & np.isfinite(r0)
        # or the residual cannot drop further and the step is near rounding
        stalled |= (rt >= r0) & (rel <= 1024 * _EPS) & np.isfinite(r0)
        w[idx[moved]] = trial[moved]
        S[idx[moved]] = St[moved]
        rn[idx[moved]] = rt[moved]
        iters[idx] += 1
        ok = (rn[idx] <= tol) | stalled
        conv[idx[ok]] = True
        active[idx[ok]] = False
        failed = ~moved & ~ok
        active[idx[failed]] = False
        history.append(rn.copy())
    return w, SolveInfo(conv, iters, rn, dets, sing, history)


def solve_velocities(sys: HodographSystem, t, coords, guess, max_iter=50, tol=1e-12,
                     damping=1.0, jac_tol=1e-12, full_output=False):
    """Velocities with ``max|S| < tol`` at one point.

    Raises SingularJacobian (with the iterate) when M degenerates and
    NoConvergence otherwise.  With ``full_output`` also returns a dict with
    the iteration count and the residual history.
    """
    x = np.asarray(coords, dtype=float).reshape(1, -1)
    g = np.asarray(guess, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(g)):
        raise ValueError("guess must be finite")
    w, info = solve_batch(sys, t, x, g, max_iter, tol, damping, jac_tol)
    if info.singular[0]:
        raise SingularJacobian(w[0], float(info.det[0]))
    if not info.converged[0]:
        raise NoConvergence(w[0], float(info.residual[0]), int(info.iterations[0]))
    if full_output:
        return w[0], {"iterations": int(info.iterations[0]),
                      "residuals": [float(h[0]) for h in info.history],
                      "det": float(info.det[0])}
    return w[0]


def _guess_array(guess, t, pts, n):
    if callable(guess):
        return np.asarray(guess(t, pts), dtype=float).reshape(pts.shape[0], n)
    return np.broadcast_to(np.asarray(guess, dtype=float), (pts.shape[0], n)).copy()


def solve_grid(sys: HodographSystem, t, axes, guess, **opts):
    """Solve on the tensor grid ``axes`` by continuation.

    The first column (all points with the last axis at its first node) is
    swept point by point along axis 0; from there every row continues along
    the last axis, all rows advancing together.  ``guess`` is a vector or a
    callable ``guess(t, coords)``; it seeds the very first node, and every
    node whose continuation seed failed.

    Returns ``(velocities, ok, det)`` shaped like the grid.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    n = sys.n
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = mesh.shape[:-1]
    rows = mesh.reshape(-1, axes[-1].size, n)  # (rows, last-axis, n)
    nrow = rows.shape[0]
    W = np.full(rows.shape, np.nan)
    ok = np.zeros(rows.shape[:2], dtype=bool)
    dets = np.full(rows.shape[:2], np.nan)
    fallback = _guess_array(guess, t, rows[:, 0], n)
    # first column: sequential continuation along the flattened leading axes
    prev = None
    for i in range(nrow):
        seeds = [fallback[i]] if prev is None else [prev, fallback[i]]
        for sd in seeds:
            w, info = solve_batch(sys, t, rows[i, :1], sd[None], **opts)
            if info.converged[0]:
                W[i, 0], ok[i, 0], dets[i, 0] = w[0], True, info.det[0]
                prev = w[0]
                break
    for j in range(1, rows.shape[1]):
        seed = np.where(ok[:, j - 1, None], W[:, j - 1], _guess_array(guess, t, rows[:, j], n))
        w, info = solve_batch(sys, t, rows[:, j], seed, **opts)
        retry = ~info.converged & ok[:, j - 1]
        if retry.any():
            w2, info2 = solve_batch(sys, t, rows[retry, j],
                                    _guess_array(guess, t, rows[retry, j], n), **opts)
            w[retry] = np.where(info2.converged[:, None], w2, w[retry])
            info.converged[retry] = info2.converged
        W[:, j] = np.where(info.converged[:, None], w, np.nan)
        ok[:, j] = info.converged
    good = ok.reshape(-1)
    flatW = W.reshape(-1, n)
    det = np.full(good.shape, np.nan)
    if good.any():
        det[good] = np.linalg.det(sys.jacobian(t, mesh.reshape(-1, n)[good], flatW[good]))
    return W.reshape(shape + (n,)), ok.reshape(shape), det.reshape(shape)


# -- blow-up loci ------------------------------------------------------------

@dataclass
class BlowupLocus:
    """Zero set of det M on a coordinate grid.

    ``points``/``det`` are the refined edge crossings; ``polylines`` lists
    index arrays into ``points`` (2-D charts only).
    """

    chart: SurfaceChart
    axes: list
    sign: np.ndarray
    points: np.ndarray
    det: np.ndarray
    polylines: list

    @property
    def empty(self):
        return self.points.shape[0] == 0

    def to_csv(self, path_or_file):
        header = ["polyline", *self.chart.coord_names, "detM"]
        line_of = np.full(self.points.shape[0], -1, dtype=int)
        order = []
        for k, pl in enumerate(self.polylines):
            for i in pl:
                if line_of[i] < 0:
                    line_of[i] = k
                    order.append(i)
        order += [i for i in range(self.points.shape[0]) if line_of[i] < 0]

        def emit(fh):
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for i in order:
                wr.writerow([int(line_of[i]), *[repr(float(c)) for c in self.points[i]],
                             repr(float(self.det[i]))])

        if hasattr(path_or_file, "write"):
            emit(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                emit(fh)


def _det_at(sys, t, point, guess, opts):
    w, info = solve_batch(sys, t, point[None], guess[None], **opts)
    # a failed solve still leaves the last iterate, which is what we want when
    # M does not depend on the velocities (the linear families)
    J = sys.jacobian(t, point[None], w)
    return float(np.linalg.det(J)[0]), w[0]


def trace_blowup(sys: HodographSystem, axes, t=0.0, guess=None, refine_tol=1e-9,
                 solve_opts=None) -> BlowupLocus:
    """Locate ``det M = 0`` on the grid ``axes`` and refine every crossing.

    Sign changes of det M between neighbouring solved nodes are refined along
    the grid edge (Brent's bracketing method) until ``|det M| < refine_tol``;
    the crossings are joined into polylines by marching squares in 2-D.
    """
    opts = dict(solve_opts or {})
    axes = [np.asarray(a, dtype=float) for a in axes]
    n = sys.n
    if guess is None:
        guess = np.zeros(n)
    W, ok, det = solve_grid(sys, t, axes, guess, **opts)
    sign = np.where(ok, np.sign(det), 0).astype(int)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    points, dvals, edge_id = [], [], {}
    shape = ok.shape
    for d in range(n):
        sl_a = [slice(None)] * n
        sl_b = [slice(None)] * n
        sl_a[d] = slice(0, shape[d] - 1)
        sl_b[d] = slice(1, shape[d])
        sa, sb = sign[tuple(sl_a)], sign[tuple(sl_b)]
        hits = np.argwhere((sa * sb) < 0)
        for h in hits:
            ia = tuple(h)
            ib = list(h)
            ib[d] += 1
            ib = tuple(ib)
            pa, pb = mesh[ia], mesh[ib]
            wa, wb = W[ia], W[ib]
            cache = {}

            def f(s, pa=pa, pb=pb, wa=wa, wb=wb, cache=cache):
                p = pa + s * (pb - pa)
                g = wa if s < 0.5 else wb
                val, w = _det_at(sys, t, p, g, opts)
                cache[s] = val
                return val

            fa, fb = det[ia], det[ib]
            s = brentq(lambda s: det[ia] if s == 0 else (det[ib] if s == 1 else f(s)),
                       0.0, 1.0, xtol=1e-15, rtol=4 * _EPS, maxiter=200)
            p = pa + s * (pb - pa)
            val, _ = _det_at(sys, t, p, wa if s < 0.5 else wb, opts)
            if not abs(val) < refine_tol:
                # fall back to plain bisection on the bracket
                lo, hi, flo = 0.0, 1.0, fa
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    fm = f(mid)
                    if abs(fm) < refine_tol or hi - lo < 1e-16:
                        s, val = mid, fm
                        break
                    if np.sign(fm) == np.sign(flo):
                        lo, flo = mid, fm
                    else:
                        hi = mid
                p = pa + s * (pb - pa)
            edge_id[(ia, ib)] = len(points)
            points.append(p)
            dvals.append(val)
    pts = np.array(points).reshape(-1, n)
    dv = np.array(dvals)
    polylines = _assemble(sign, edge_id, pts, det) if n == 2 else []
    return BlowupLocus(sys.chart, axes, sign, pts, dv, polylines)


def _assemble(sign, edge_id, pts, det):
    """Marching squares: join edge crossings cell by cell into polylines."""
    nx, ny = sign.shape
    segs = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            if any(sign[c] == 0 for c in corners):
                continue
            edges = []
            for k in range(4):
                a, b = corners[k], corners[(k + 1) % 4]
                key = (a, b) if (a, b) in edge_id else (b, a)
                if key in edge_id:
                    edges.append(edge_id[key])
            if len(edges) == 2:
                segs.append((edges[0], edges[1]))
            elif len(edges) == 4:
                # saddle: decide the pairing by the mean corner value
                centre = np.mean([det[c] for c in corners])
                if np.sign(centre) == sign[corners[0]]:
                    segs += [(edges[0], edges[3]), (edges[1], edges[2])]
                else:
                    segs += [(edges[0], edges[1]), (edges[2], edges[3])]
    adj = {}
    for a, b in segs:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen = set()
    lines = []
    # open chains first (start at endpoints), then closed loops
    starts = [p for p in sorted(adj) if len(adj[p]) == 1] + sorted(adj)
    for s0 in starts:
        if s0 in seen:
            continue
        chain = [s0]
        seen.add(s0)
        cur = s0
        while True:
            nxt = [q for q in adj[cur] if q not in seen]
            if not nxt:
                break
            cur = nxt[0]
            seen.add(cur)
            chain.append(cur)
        lines.append(np.array(chain, dtype=int))
    for p in range(pts.shape[0]):
        if p not in seen:
            lines.append(np.array([p], dtype=int))
    return lines


# -- blow-up in time ---------------------------------------------------------

def velocity_gradient(sys: HodographSystem, t, coords, velocities, h=1e-6):
    """``du/dx = -M^{-1} dS/dx`` by implicit differentiation; shape ``(..., n, n)``."""
    x = np.atleast_2d(np.asarray(coords, dtype=float))
    w = np.atleast_2d(np.asarray(velocities, dtype=float))
    n = x.shape[-1]
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = h * max(1.0, float(np.max(np.abs(x[:, k]))))
        cols.append((sys.residual(t, x + e, w) - sys.residual(t, x - e, w)) / (2 * e[k]))
    Sx = np.stack(cols, axis=-1)
    M = sys.jacobian(t, x, w)
    return -np.linalg.solve(M, Sx)


def blowup_time(sys: HodographSystem, coords, guess, t_start=0.0, t_max=10.0, dt=0.05,
                tol=1e-6, solve_opts=None):
    """First time at which the velocity gradient diverges at some sample point.

    Marches in ``t`` with continuation, monitoring
    ``g(t) = 1 / max |du/dx|`` over the samples ``coords``.  When ``g`` stops
    decreasing (or the solve fails) the zero of ``g`` is refined by secant
    steps taken from the left.  Returns ``math.inf`` when nothing blows up
    before ``t_max``.
    """
    opts = dict(solve_opts or {})
    x = np.atleast_2d(np.asarray(coords, dtype=float))

    sheet = None

    def g_at(tt, seed):
        w, info = solve_batch(sys, tt, x, seed, **opts)
        if not info.converged.all():
            return None, w
        sgn = np.sign(np.linalg.det(sys.jacobian(tt, x, w)))
        # the sign of det M labels the sheet; a flip means Newton jumped roots
        if sheet is not None and np.any(sgn != sheet):
            return None, w
        worst = float(np.max(np.abs(velocity_gradient(sys, tt, x, w))))
        return (1.0 / worst if worst > 0 else math.inf), w

    g0, W0 = g_at(t_start, _guess_array(guess, t_start, x, sys.n))
    if g0 is None:
        raise NoConvergence(W0, math.nan, 0)
    sheet = np.sign(np.linalg.det(sys.jacobian(t_start, x, W0)))

    def g_pred(tt, hist):
        # try a linear predictor first, then the last solution as it stands
        (tb, _, Wb) = hist[-1]
        tries = [Wb]
        if len(hist) >= 2:
            ta, _, Wa = hist[-2]
            tries.insert(0, Wb + (Wb - Wa) * (tt - tb) / (tb - ta))
        for seed in tries:
            g, w = g_at(tt, seed)
            if g is not None:
                return g, w
        return None, None

    left = [(t_start, g0, W0)]
    t_cur = t_start
    while t_cur < t_max:
        t_next = min(t_cur + dt, t_max)
        g_next, W_next = g_pred(t_next, left)
        g_last = left[-1][1]
        if g_next is not None and g_next <= g_last and g_next > 1e-3 * g0:
            left.append((t_next, g_next, W_next))
            t_cur = t_next
            continue
        if len(left) >= 2 and g_last < left[-2][1]:
            t_hit = _refine_from_left(g_pred, left, tol)
            if t_hit is not None:
                return t_hit
        if g_next is None:
            dt *= 0.5
            if dt < tol:
                return t_cur
            continue
        left.append((t_next, g_next, W_next))
        t_cur = t_next
    return math.inf


def _refine_from_left(g_pred, left, tol):
    """Secant iteration for ``g = 0`` using points left of the singularity."""
    hist = list(left[-2:])
    g_scale = left[0][1]
    for _ in range(200):
        (ta, ga, _), (tb, gb, _) = hist[-2], hist[-1]
        if gb >= ga:
            return None
        t_est = tb - gb * (tb - ta) / (gb - ga)
        if not (math.isfinite(t_est) and t_est > tb):
            return None
        if t_est - tb < tol:
            return t_est
        for shrink in (0.9, 0.5, 0.25, 0.1, 0.01):
            t_try = tb + shrink * (t_est - tb)
            g_try, W_try = g_pred(t_try, hist)
            if g_try is not None and g_try < gb:
                break
        else:
            return t_est if gb < 1e-2 * g_scale else None
        hist.append((t_try, g_try, W_try))
    return hist[-1][0]
