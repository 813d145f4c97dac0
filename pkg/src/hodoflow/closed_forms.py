"""Explicit solution families of the hodograph equations.

Every family evaluates to ``(U, valid)`` on a batch of coordinates: ``U`` has
shape ``(..., n)`` and is NaN exactly where ``valid`` is False, so grids can
tell a singular node from a failed one.

A few printed formulas do not solve the Euler equation as they stand.  The
corrected forms are the default; ``printed=True`` reproduces the printed ones
so their failure can be demonstrated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import hodograph as hg
from .errors import OutOfFamilyDomain, Unsupported
from .fparams import Constant, Linear, Log, Power, Quadratic
from .geodesics import s3_pq
from .geometry import SurfaceChart

TWO_PI = 2 * math.pi

FAMILY_IDS = ("cone_linear", "cone_stationary", "s2_simplest", "s2_stat_linear",
              "s2_stat_quadratic", "s2_stat_power", "s2_stat_log", "s3_stat_linear")

DEFAULTS = {
    "cone_linear": {"alpha": 0.25, "a1": 2.0, "b1": 1.0, "a2": 0.3},
    "cone_stationary": {"alpha": 0.25, "a1": 5.0, "a2": 1.0},
    "s2_simplest": {"F1": 1.0, "F2": 0.3},
    "s2_stat_linear": {"a1": 1.0, "a2": 0.5, "b1": 0.3, "b2": -0.2},
    "s2_stat_quadratic": {"a1": 0.7, "a2": 0.3, "b1": 0.2, "b2": -0.1, "c1": -0.15, "c2": 0.05},
    "s2_stat_power": {"a": 1.2, "b": 0.5, "d": 2.0, "m": 2.0},
    "s2_stat_log": {"a": 0.6, "b": 0.8},
    "s3_stat_linear": {"a": [0.4, -0.3, 0.5], "b": [0.2, -0.1, 0.15],
                       "c": [0.1, 0.25, -0.2], "d": [-0.15, 0.1, 0.3]},
}

# coordinate boxes used for default grids and random sampling: away from the
# poles, the equator and the blow-up sets of the default parameters
SAMPLE_BOX = {
    "cone_linear": ((1.0, 2.0), (0.0, TWO_PI)),
    "cone_stationary": ((1.0, 2.0), (0.0, TWO_PI)),
    "s2_simplest": ((0.4, 1.2), (0.0, TWO_PI)),
    "s2_stat_linear": ((0.3, 1.0), (0.0, TWO_PI)),
    "s2_stat_quadratic": ((0.3, 1.1), (0.0, TWO_PI)),
    "s2_stat_power": ((0.65, 1.2), (0.0, TWO_PI)),
    "s2_stat_log": ((0.3, 1.2), (0.0, TWO_PI)),
    "s3_stat_linear": ((0.8, 2.3), (0.8, 2.3), (0.8, 2.3)),
}

# time at which the non-stationary families are exercised by default
DEFAULT_TIME = {"cone_linear": 0.3, "s2_simplest": 0.2}


@dataclass(frozen=True)
class Asymptotics:
    """Leading behaviour ``u ~ x**u_exp``, ``v ~ x**v_exp`` with ``x`` the
    distance to the pole or the equator.  ``kind == "essential"`` flags an
    exponentially flat approach with no power law."""

    u_exp: float | None
    v_exp: float | None
    kind: str = "power"


@dataclass(frozen=True)
class ReducedPotential:
    """One-dimensional reduction ``u_t + u u_x = force(x)``."""

    variable: str
    p: object
    dp: object
    force: object


@dataclass(frozen=True)
class SolutionFamily:
    id: str
    params: dict = field(default_factory=dict)
    sheet: int = 1
    R: float = 1.0
    printed: bool = False

    def __post_init__(self):
        if self.id not in FAMILY_IDS:
            raise Unsupported(f"unknown family {self.id!r}; expected one of {FAMILY_IDS}")
        merged = dict(DEFAULTS[self.id])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise OutOfFamilyDomain(f"{self.id}: unknown parameter(s) {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "sheet", 1 if self.sheet >= 0 else -1)
        if not self.R > 0:
            raise OutOfFamilyDomain("R must be positive")
        p = merged
        if self.id.startswith("cone") and not 0 < p["alpha"] <= 1:
            raise OutOfFamilyDomain("cone needs alpha in (0, 1]")
        if self.id == "s2_stat_power":
            if p["m"] == 0:
                raise OutOfFamilyDomain("power family needs m != 0")
            if p["d"] == 0:
                raise OutOfFamilyDomain("power family needs d != 0")
        if self.id in ("s2_stat_power", "s2_stat_log") and p["a"] ** 2 + p["b"] ** 2 == 0:
            raise OutOfFamilyDomain(f"{self.id} needs a^2 + b^2 > 0")
        if self.id == "s3_stat_linear":
            for k in "abcd":
                if np.asarray(p[k], dtype=float).shape != (3,):
                    raise OutOfFamilyDomain(f"s3_stat_linear parameter {k} needs 3 entries")

    # -- descriptors --------------------------------------------------------
    @property
    def chart(self) -> SurfaceChart:
        if self.id.startswith("cone"):
            return SurfaceChart.cone(self.params["alpha"])
        if self.id.startswith("s3"):
            return SurfaceChart.sphere3(self.R)
        return SurfaceChart.sphere2(self.R)

    @property
    def stationary(self) -> bool:
        return self.id not in ("cone_linear", "s2_simplest")

    @property
    def default_time(self) -> float:
        return DEFAULT_TIME.get(self.id, 0.0)

    @property
    def sample_box(self):
        if self.id == "s2_simplest" and self.sheet < 0:
            # the southward sheet lives in the southern hemisphere
            (lo, hi), phi = SAMPLE_BOX[self.id]
            return (math.pi - hi, math.pi - lo), phi
        if self.id in ("s2_stat_power", "s2_stat_log"):
            # keep sin(phi + alpha_hat) away from zero, on the side where the
            # field is defined in the northern hemisphere
            p = self.params
            ah = math.atan2(p["a"], p["b"])
            start = 0.5 if self.id == "s2_stat_log" or p["d"] > 0 else math.pi + 0.5
            return SAMPLE_BOX[self.id][0], (start - ah, start - ah + math.pi - 1.0)
        return SAMPLE_BOX[self.id]

    def to_config(self) -> dict:
        params = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                  for k, v in self.params.items()}
        return {"family": self.id, "params": params, "sheet": self.sheet, "R": self.R,
                "printed": self.printed}

    # -- evaluation -----------------------------------------------------------
    def __call__(self, t, coords):
        return eval_field(self, t, coords)

    def system(self) -> hg.HodographSystem:
        """The hodograph system this family solves."""
        p = self.params
        if self.id in ("cone_linear", "cone_stationary"):
            b1 = p.get("b1", 0.0)
            return hg.make_cone_alt_system(Linear(p["a1"], b1), Constant(p["a2"]), p["alpha"])
        if self.id == "s2_simplest":
            return hg.make_s2_system(Constant(p["F1"]), Constant(p["F2"]), self.sheet, self.R)
        if self.id == "s2_stat_linear":
            return hg.make_s2_stationary_system(Linear(p["a1"], p["b1"]), Linear(p["a2"], p["b2"]),
                                                self.R)
        if self.id == "s2_stat_quadratic":
            return hg.make_s2_stationary_system(Quadratic(p["a1"], p["b1"], p["c1"]),
                                                Quadratic(p["a2"], p["b2"], p["c2"]), self.R)
        if self.id == "s2_stat_power":
            expo = 1.0 + 1.0 / p["m"]
            return hg.make_s2_stationary_system(Power(p["a"] * p["d"], expo),
                                                Power(p["b"] * p["d"], expo), self.R)
        if self.id == "s2_stat_log":
            return hg.make_s2_stationary_system(Log(p["a"]), Log(p["b"]), self.R)
        a, b, c, d = (np.asarray(p[k], dtype=float) for k in "abcd")
        Fs = [Linear(a[i], [b[i], c[i], d[i]]) for i in range(3)]
        return hg.make_s3_stationary_system(*Fs, R=self.R)

    def sample_points(self, n, rng, t=None, margin=0.1, vmax=5.0):
        """``n`` uniform random points of the sample box that pass
        :meth:`regular_mask` at time ``t`` (default: the family's time)."""
        t = self.default_time if t is None else t
        box = self.sample_box
        pts, have = [], 0
        for _ in range(200):
            x = np.stack([rng.uniform(lo, hi, max(n, 1024)) for lo, hi in box], axis=-1)
            x = x[self.regular_mask(t, x, margin, vmax)]
            pts.append(x)
            have += x.shape[0]
            if have >= n:
                break
        return np.concatenate(pts)[:n]

    def regular_mask(self, t, coords, margin=0.1, vmax=5.0):
        """Valid points well away from the singular sets.

        Keeps points whose M matrix has Hadamard ratio
        ``|det M| / prod(row norms)`` above ``margin`` (it vanishes on the
        blow-up set) and whose velocity components stay below ``vmax``, so a
        fixed finite-difference step still resolves the field.
        """
        x = np.asarray(coords, dtype=float)
        U, ok = eval_field(self, t, x)
        ok &= np.all(np.abs(np.nan_to_num(U, nan=np.inf)) <= vmax, axis=-1)
        out = ok.copy()
        if ok.any():
            J = self.system().jacobian(t, x[ok], U[ok])
            det = np.abs(np.linalg.det(J))
            norms = np.prod(np.linalg.norm(J, axis=-1), axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                out[ok] = np.where(norms > 0, det / norms, 0.0) > margin
        return out


def _angles(x):
    return np.sin(x[..., 0]), np.cos(x[..., 0]), np.sin(x[..., 1]), np.cos(x[..., 1])


def _cone_linear(p, t, x, sheet, printed):
    alpha, a1, a2 = p["alpha"], p["a1"], p["a2"]
    b1 = p.get("b1", 0.0)
    r = x[..., 0]
    c = a2 * a2 / (alpha * r * r)
    D = 1.0 - b1 * t * t
    q = b1 * r * t
    # roots of D u^2 + 2 q u - K = 0, so that disc = q^2 + D K
    K = a1 - c * D + (0.0 if printed else b1 * r * r)  # printed radicand drops b1 r^2 D
    disc = q * q + D * K
    valid = disc >= 0
    sq = np.sqrt(np.where(valid, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # cancellation-free form of each root
        if sheet > 0:
            u = np.where(q >= 0, K / (q + sq), (sq - q) / D)
        else:
            u = np.where(q >= 0, -(q + sq) / D, K / (q - sq))
    v = a2 / (alpha * r * r)
    valid &= np.isfinite(u) & (r > 0)
    return np.stack([u, v + 0.0 * u], axis=-1), valid


def _s2_simplest(p, t, x, sheet):
    F1, F2 = float(p["F1"]), float(p["F2"])
    th = x[..., 0]
    s, c = np.sin(th), np.cos(th)
    tau = t - F1
    sg = float(sheet)
    w = _solve_w(np.broadcast_to(tau, th.shape), s, c, F2, sg)
    valid = np.isfinite(w)
    with np.errstate(invalid="ignore"):
        u2 = w * w - F2 * F2 / (s * s)
        u = sg * np.sqrt(np.maximum(u2, 0.0))
    v = F2 / (s * s)
    u = np.where(valid, u, np.nan)
    return np.stack([u, np.where(valid, v, np.nan)], axis=-1), valid


def _w_equation(w, tau, s, c, F2, sg):
    S = np.sqrt(np.maximum(w * w * s * s - F2 * F2, 0.0))
    g = tau * w + sg * np.arctan2(w * c, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        dA = np.where(S > 0, -c * F2 * F2 / (S * (w * w - F2 * F2)), -np.inf * np.sign(c))
        dA = np.where(F2 == 0, 0.0, dA)
    return g, tau + sg * dA


def _solve_w(tau, s, c, F2, sg):
    """Smallest root ``w >= |F2| / sin`` of the scalar equation, or NaN.

    Brackets by scanning outward on a geometric grid, then runs Newton steps
    that fall back to bisection whenever they leave the bracket.
    """
    tau = np.asarray(tau, dtype=float)
    shape = tau.shape
    tau, s, c = tau.ravel(), np.broadcast_to(s, shape).ravel(), np.broadcast_to(c, shape).ravel()
    w0 = np.abs(F2) / s
    offs = np.concatenate([[0.0], np.logspace(-10, 4, 281)])
    grid = w0[:, None] + offs[None, :] * (1.0 + w0[:, None])
    gv, _ = _w_equation(grid, tau[:, None], s[:, None], c[:, None], F2, sg)
    sign = np.sign(gv)
    change = (sign[:, :-1] * sign[:, 1:]) <= 0
    has = change.any(axis=1) & (grid[:, 0] > 0) | (change.any(axis=1) & (F2 == 0))
    k = np.argmax(change, axis=1)
    rows = np.arange(grid.shape[0])
    lo, hi = grid[rows, k], grid[rows, k + 1]
    glo = gv[rows, k]
    w = 0.5 * (lo + hi)
    exact = gv[rows, k] == 0
    for _ in range(100):
        g, dg = _w_equation(w, tau, s, c, F2, sg)
        same = np.sign(g) == np.sign(glo)
        lo = np.where(same, w, lo)
        glo = np.where(same, g, glo)
        hi = np.where(same, hi, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            wn = w - g / dg
        inside = np.isfinite(wn) & (wn > lo) & (wn < hi)
        wn = np.where(inside, wn, 0.5 * (lo + hi))
        if np.all(np.abs(wn - w) <= 4e-16 * np.maximum(1.0, np.abs(w))):
            w = wn
            break
        w = wn
    w = np.where(exact, grid[rows, k], w)
    w = np.where(has & (w > 0), w, np.nan)
    return w.reshape(shape)


def _s2_stationary(fid, p, x, sheet, printed):
    s, c, sp, cp = _angles(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fid == "s2_stat_linear":
            a1, a2, b1, b2 = p["a1"], p["a2"], p["b1"], p["b2"]
            A = a1 * cp + a2 * sp
            den = c - s * (b1 * cp + b2 * sp)
            u = a1 * sp - a2 * cp + s * A * (b1 * sp - b2 * cp) / den
            v = A / (s * den)
            valid = np.isfinite(u) & np.isfinite(v) & (den != 0)
        elif fid == "s2_stat_quadratic":
            a1, a2, b1, b2, c1, c2 = (p[k] for k in ("a1", "a2", "b1", "b2", "c1", "c2"))
            A = a1 * cp + a2 * sp
            B = b1 * cp + b2 * sp
            C = c1 * cp + c2 * sp
            Dd = c - s * B
            disc = Dd * Dd + (4.0 if printed else -4.0) * s * s * A * C
            valid = disc >= 0
            sq = np.sqrt(np.where(valid, disc, 0.0))
            # roots of s C xi^2 - Dd xi + s A = 0 in cancellation-free form
            big = Dd + np.where(Dd >= 0, 1.0, -1.0) * sq
            r_big = big / (2 * s * C)
            r_small = 2 * s * A / big
            same_sign_branch = (Dd >= 0) == (sheet > 0)
            xi = np.where(same_sign_branch, r_big, r_small)
            if printed:
                xi = (Dd + sheet * sq) / (2 * s * C)
            v = xi / (s * s)
            u = sp * (a1 + b1 * xi + c1 * xi * xi) - cp * (a2 + b2 * xi + c2 * xi * xi)
            valid &= np.isfinite(u) & np.isfinite(v)
        elif fid == "s2_stat_power":
            a, b, d, m = p["a"], p["b"], p["d"], p["m"]
            K = math.hypot(a, b)
            ah = math.atan2(a, b)
            y = (c / s) / (K * np.sin(x[..., 1] + ah))
            if printed:
                pref = (K * K / d) ** m
                ym = np.abs(y) ** m
                v = pref * ym / (s * s)
                u = -pref * np.cos(x[..., 1] + ah) * y * ym
                valid = np.isfinite(u) & np.isfinite(v) & (y > 0)
            else:
                ratio = y / d
                valid = ratio > 0
                xi = np.where(valid, ratio, 1.0) ** m
                v = xi / (s * s)
                u = -K * np.cos(x[..., 1] + ah) * y * xi
                valid &= np.isfinite(u) & np.isfinite(v)
        elif fid == "s2_stat_log":
            a, b = p["a"], p["b"]
            K = math.hypot(a, b)
            ah = math.atan2(a, b)
            sn = np.sin(x[..., 1] + ah)
            y = (c / s) / (K * sn)
            if printed:
                e = np.exp(-K * K * (c / s) ** 2 / sn**2)
                u = (np.cos(x[..., 1] + ah) / sn) * (c / s) * e
                valid = np.isfinite(u) & (y >= 0)
            else:
                e = np.exp(-y * y)
                u = -(np.cos(x[..., 1] + ah) / sn) * (c / s) * e
                valid = np.isfinite(u) & (y >= 0)
            v = e / (s * s)
            # e underflows to 0 far from the equator, outside F's domain
            valid &= np.isfinite(v) & (e > 0)
        else:
            raise Unsupported(fid)
    return np.stack([u, v], axis=-1), valid


def _s3_linear(p, x, printed):
    a, b, c, d = (np.asarray(p[k], dtype=float) for k in "abcd")
    P, Q = s3_pq(x)
    if printed:
        C = Q - b[:, None] * P[..., None, 0, :] - c[:, None] * Q[..., None, 1, :] \
            - d[:, None] * Q[..., None, 2, :]
    else:
        C = Q - b[:, None] * P[..., None, 0, :] - c[:, None] * P[..., None, 1, :] \
            - d[:, None] * P[..., None, 2, :]
    det = np.linalg.det(C)
    valid = np.isfinite(det) & (np.abs(det) > 1e-300)
    Csafe = np.where(valid[..., None, None], C, np.eye(3))
    U = np.linalg.solve(Csafe, np.broadcast_to(a, x.shape)[..., None])[..., 0]
    return U, valid


def eval_field(family: SolutionFamily, t, coords, strict=False):
    """Velocities of ``family`` at ``coords`` and time ``t``.

    Returns ``(U, valid)``.  With ``strict=True`` an invalid point raises
    OutOfFamilyDomain instead.
    """
    x = np.asarray(coords, dtype=float)
    chart = family.chart
    if x.shape[-1] != chart.dim:
        raise OutOfFamilyDomain(f"{family.id} takes {chart.dim} coordinates")
    inside = chart.interior_mask(x)
    xs = np.where(inside[..., None], x, _safe_point(chart))
    p = family.params
    fid = family.id
    with np.errstate(all="ignore"):
        if fid == "cone_linear":
            U, ok = _cone_linear(p, float(t), xs, family.sheet, family.printed)
        elif fid == "cone_stationary":
            U, ok = _cone_linear({**p, "b1": 0.0}, 0.0, xs, family.sheet, False)
        elif fid == "s2_simplest":
            U, ok = _s2_simplest(p, float(t), xs, family.sheet)
        elif fid.startswith("s2_stat"):
            U, ok = _s2_stationary(fid, p, xs, family.sheet, family.printed)
        else:
            U, ok = _s3_linear(p, xs, family.printed)
    ok = ok & inside & np.all(np.isfinite(U), axis=-1)
    if family.R != 1.0 and not fid.startswith("cone"):
        U = U / family.R**2
    U = np.where(ok[..., None], U, np.nan)
    if strict and not np.all(ok):
        raise OutOfFamilyDomain(f"{fid}: {int(np.size(ok) - np.count_nonzero(ok))} point(s) "
                                "outside the family's domain")
    return U, ok


def _safe_point(chart):
    lo = [0.5 * (a + min(b, a + 2.0)) if math.isfinite(b) else a + 1.0
          for a, b in chart.coord_ranges]
    return np.array(lo)


# -- asymptotics -------------------------------------------------------------

def asymptotic_exponents(family: SolutionFamily, location: str) -> Asymptotics:
    """Predicted leading power laws near the north pole or the equator."""
    if location not in ("north_pole", "equator"):
        raise ValueError("location must be 'north_pole' or 'equator'")
    fid = family.id
    if fid == "s2_stat_power":
        m = float(family.params["m"])
        if location == "north_pole":
            return Asymptotics(-1.0 - m, -2.0 - m)
        return Asymptotics(m + 1.0, m)
    if fid == "s2_stat_linear":
        if location == "north_pole":
            return Asymptotics(0.0, -1.0)
        return Asymptotics(0.0, 0.0)
    if fid == "s2_stat_log":
        return Asymptotics(None, None, kind="essential")
    raise Unsupported(f"no asymptotic law for {fid}")


def measure_exponents(family: SolutionFamily, location: str, phi: float,
                      dist=(1e-4, 1e-2), samples=41) -> Asymptotics:
    """Log-log slopes of ``|u|`` and ``|v|`` against the distance to the
    pole (``theta``) or the equator (``pi/2 - theta``)."""
    d = np.logspace(math.log10(dist[0]), math.log10(dist[1]), samples)
    th = d if location == "north_pole" else math.pi / 2 - d
    x = np.stack([th, np.full_like(th, phi)], axis=-1)
    U, ok = eval_field(family, 0.0, x)
    if not ok.all():
        raise OutOfFamilyDomain(f"{family.id} undefined along phi={phi} near {location}")
    ld = np.log(d)
    su = np.polyfit(ld, np.log(np.abs(U[:, 0])), 1)[0]
    sv = np.polyfit(ld, np.log(np.abs(U[:, 1])), 1)[0]
    return Asymptotics(float(su), float(sv))


# -- one-dimensional reductions ----------------------------------------------

def reduced_1d_potential(family: SolutionFamily) -> ReducedPotential:
    """Potential of the external force in the one-dimensional reduction.

    On the sphere ``p(theta) = -F2^2 / (2 sin^2 theta)`` and the force is
    ``+p'``; on the cone ``p(r) = a2^2 / (2 alpha r^2)`` and the force is
    ``-p'``.
    """
    p = family.params
    if family.id == "s2_simplest":
        F2 = float(p["F2"])

        def pot(th):
            return -0.5 * F2 * F2 / np.sin(th) ** 2

        def dpot(th):
            return F2 * F2 * np.cos(th) / np.sin(th) ** 3

        return ReducedPotential("theta", pot, dpot, dpot)
    if family.id in ("cone_linear", "cone_stationary"):
        a2, alpha = float(p["a2"]), float(p["alpha"])

        def pot(r):
            return 0.5 * a2 * a2 / (alpha * np.asarray(r, dtype=float) ** 2)

        def dpot(r):
            return -a2 * a2 / (alpha * np.asarray(r, dtype=float) ** 3)

        return ReducedPotential("r", pot, dpot, lambda r: -dpot(r))
    raise Unsupported(f"no one-dimensional reduction for {family.id}")


def family_from_config(cfg: dict) -> SolutionFamily:
    fid = cfg.get("family")
    if fid is None:
        raise OutOfFamilyDomain("missing key 'family'")
    params = dict(cfg.get("params", {}))
    return SolutionFamily(fid, params, sheet=int(cfg.get("sheet", 1)),
                          R=float(cfg.get("R", 1.0)), printed=bool(cfg.get("printed", False)))
