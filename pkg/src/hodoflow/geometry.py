"""Coordinate charts, metrics, Christoffel symbols and embeddings.

Four charts are supported: the flat cylinder, the cone of opening
``alpha = sin^2(theta0)``, the round 2-sphere and the round 3-sphere.  All
metrics are diagonal.  Every evaluator accepts either a single point of shape
``(n,)`` or a batch of shape ``(..., n)`` and broadcasts over the leading axes.

Periodic angles (``phi`` on the 2D charts, ``phi3`` on the 3-sphere) are not
range-checked: geodesics are integrated in the universal cover and the
embedding is periodic anyway.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CoordsOutOfRange

KINDS = ("cylinder", "cone", "sphere2", "sphere3")

# kernel chart codes, shared with the compiled and pure-Python kernels
CODES = {"cylinder": 0, "cone": 1, "sphere2": 2, "sphere3": 3}

_INF = math.inf


@dataclass(frozen=True)
class SurfaceChart:
    kind: str
    R: float = 1.0
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown chart kind {self.kind!r}")
        if self.kind == "cone":
            if self.alpha is None or not (0.0 < self.alpha <= 1.0):
                raise ConfigError("cone needs alpha in (0, 1]")
        elif not self.R > 0:
            raise ConfigError("R must be positive")

    # -- constructors -------------------------------------------------------
    @classmethod
    def cylinder(cls, R=1.0):
        return cls("cylinder", R=float(R))

    @classmethod
    def cone(cls, alpha):
        return cls("cone", alpha=float(alpha))

    @classmethod
    def sphere2(cls, R=1.0):
        return cls("sphere2", R=float(R))

    @classmethod
    def sphere3(cls, R=1.0):
        return cls("sphere3", R=float(R))

    @classmethod
    def from_config(cls, cfg: dict) -> "SurfaceChart":
        """Build from ``{"chart": "cone", "alpha": 0.25}`` style mappings."""
        kind = cfg.get("chart")
        if kind is None:
            raise ConfigError("missing key 'chart'")
        if kind == "cone":
            if "alpha" not in cfg or cfg["alpha"] is None:
                raise ConfigError("missing key 'alpha' for chart cone")
            return cls.cone(cfg["alpha"])
        if kind not in KINDS:
            raise ConfigError(f"unknown chart {kind!r}")
        R = cfg.get("R")
        return cls(kind, R=1.0 if R is None else float(R))

    def to_config(self) -> dict:
        if self.kind == "cone":
            return {"chart": "cone", "alpha": self.alpha}
        return {"chart": self.kind, "R": self.R}

    # -- descriptors --------------------------------------------------------
    @property
    def dim(self) -> int:
        return 3 if self.kind == "sphere3" else 2

    @property
    def coord_names(self) -> tuple[str, ...]:
        return {
            "cylinder": ("z", "phi"),
            "cone": ("r", "phi"),
            "sphere2": ("theta", "phi"),
            "sphere3": ("phi1", "phi2", "phi3"),
        }[self.kind]

    @property
    def velocity_names(self) -> tuple[str, ...]:
        return ("u1", "u2", "u3") if self.dim == 3 else ("u", "v")

    @property
    def coord_ranges(self) -> tuple[tuple[float, float], ...]:
        """Open intervals; periodic angles are reported as ``[0, 2pi)``."""
        two_pi = 2 * math.pi
        return {
            "cylinder": ((-_INF, _INF), (0.0, two_pi)),
            "cone": ((0.0, _INF), (0.0, two_pi)),
            "sphere2": ((0.0, math.pi), (0.0, two_pi)),
            "sphere3": ((0.0, math.pi), (0.0, math.pi), (0.0, two_pi)),
        }[self.kind]

    @property
    def periodic(self) -> tuple[bool, ...]:
        return {
            "cylinder": (False, True),
            "cone": (False, True),
            "sphere2": (False, True),
            "sphere3": (False, False, True),
        }[self.kind]

    @property
    def code(self) -> int:
        return CODES[self.kind]

    @property
    def kernel_param(self) -> float:
        return self.alpha if self.kind == "cone" else 0.0

    # -- domain checks ------------------------------------------------------
    def interior_mask(self, coords, margin=0.0):
        """Boolean mask of points strictly inside the chart (by ``margin``)."""
        x = np.asarray(coords, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        for k, ((lo, hi), per) in enumerate(zip(self.coord_ranges, self.periodic)):
            if per:
                continue
            ok &= (x[..., k] > lo + margin) & (x[..., k] < hi - margin)
        return ok

    def check(self, coords, margin=0.0):
        x = np.asarray(coords, dtype=float)
        if x.shape[-1] != self.dim:
            raise CoordsOutOfRange(self, coords, f"expected {self.dim} coordinates")
        if not np.all(self.interior_mask(x, margin)):
            raise CoordsOutOfRange(self, coords, "point on or beyond a coordinate singularity")
        return x


def _as_points(chart, coords, check=True):
    x = np.asarray(coords, dtype=float)
    if check:
        chart.check(x)
    elif x.shape[-1] != chart.dim:
        raise CoordsOutOfRange(chart, coords, f"expected {chart.dim} coordinates")
    return x


def metric_diag(chart: SurfaceChart, coords, check=True):
    """Diagonal of the metric tensor, shape ``(..., n)``."""
    x = _as_points(chart, coords, check)
    out = np.empty(x.shape, dtype=float)
    R2 = chart.R**2
    if chart.kind == "cylinder":
        out[..., 0] = 1.0
        out[..., 1] = R2
    elif chart.kind == "cone":
        out[..., 0] = 1.0
        out[..., 1] = chart.alpha * x[..., 0] ** 2
    elif chart.kind == "sphere2":
        out[..., 0] = R2
        out[..., 1] = R2 * np.sin(x[..., 0]) ** 2
    else:
        s1 = np.sin(x[..., 0])
        s2 = np.sin(x[..., 1])
        out[..., 0] = R2
        out[..., 1] = R2 * s1**2
        out[..., 2] = R2 * s1**2 * s2**2
    return out


def metric_at(chart: SurfaceChart, coords, check=True):
    """Metric tensor ``g_ij`` at ``coords``; shape ``(..., n, n)``."""
    d = metric_diag(chart, coords, check)
    n = chart.dim
    g = np.zeros(d.shape + (n,), dtype=float)
    idx = np.arange(n)
    g[..., idx, idx] = d
    return g


def christoffel_at(chart: SurfaceChart, coords, check=True):
    """Closed-form Christoffel symbols ``G[..., i, j, k] = Gamma^i_{jk}``."""
    x = _as_points(chart, coords, check)
    n = chart.dim
    G = np.zeros(x.shape[:-1] + (n, n, n), dtype=float)
    if chart.kind == "cylinder":
        return G
    if chart.kind == "cone":
        r = x[..., 0]
        G[..., 0, 1, 1] = -chart.alpha * r
        G[..., 1, 0, 1] = G[..., 1, 1, 0] = 1.0 / r
        return G
    if chart.kind == "sphere2":
        s, c = np.sin(x[..., 0]), np.cos(x[..., 0])
        G[..., 0, 1, 1] = -s * c
        G[..., 1, 0, 1] = G[..., 1, 1, 0] = c / s
        return G
    s1, c1 = np.sin(x[..., 0]), np.cos(x[..., 0])
    s2, c2 = np.sin(x[..., 1]), np.cos(x[..., 1])
    G[..., 0, 1, 1] = -s1 * c1
    G[..., 0, 2, 2] = -s1 * c1 * s2**2
    G[..., 1, 0, 1] = G[..., 1, 1, 0] = c1 / s1
    G[..., 1, 2, 2] = -s2 * c2
    G[..., 2, 0, 2] = G[..., 2, 2, 0] = c1 / s1
    G[..., 2, 1, 2] = G[..., 2, 2, 1] = c2 / s2
    return G


def christoffel_fd(chart: SurfaceChart, coords, h=1e-4):
    """Christoffel symbols from central differences of the metric.

    Uses ``Gamma^i_{jk} = 1/2 g^{il} (d_j g_{lk} + d_k g_{lj} - d_l g_{jk})``.
    Independent of :func:`christoffel_at`; only the metric evaluator is shared.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(coords, dtype=float)
    chart.check(x, margin=2 * h)
    n = chart.dim
    ginv = np.linalg.inv(metric_at(chart, x))
    # dg[..., l, j, k] = d_l g_{jk}
    dg = np.empty(x.shape[:-1] + (n, n, n), dtype=float)
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        dg[..., l, :, :] = (metric_at(chart, x + e, check=False)
                            - metric_at(chart, x - e, check=False)) / (2 * h)
    # lower[..., l, j, k] = d_j g_{lk} + d_k g_{lj} - d_l g_{jk}
    lower = (np.swapaxes(dg, -3, -2)
             + np.moveaxis(dg, -3, -1)
             - dg)
    return 0.5 * np.einsum("...il,...ljk->...ijk", ginv, lower)


def embed(chart: SurfaceChart, coords):
    """Euclidean embedding point (R^3, or R^4 for the 3-sphere)."""
    x = np.asarray(coords, dtype=float)
    if x.shape[-1] != chart.dim:
        raise CoordsOutOfRange(chart, coords, f"expected {chart.dim} coordinates")
    # closed ranges are fine here: poles embed without trouble
    for k, ((lo, hi), per) in enumerate(zip(chart.coord_ranges, chart.periodic)):
        if not per and (np.any(x[..., k] < lo) or np.any(x[..., k] > hi)):
            raise CoordsOutOfRange(chart, coords, "outside the closed chart")
    R = chart.R
    if chart.kind == "cylinder":
        z, phi = x[..., 0], x[..., 1]
        return np.stack([R * np.cos(phi), R * np.sin(phi), z], axis=-1)
    if chart.kind == "cone":
        r, phi = x[..., 0], x[..., 1]
        s0 = math.sqrt(chart.alpha)
        c0 = math.sqrt(1.0 - chart.alpha)
        return np.stack([s0 * r * np.cos(phi), s0 * r * np.sin(phi), c0 * r], axis=-1)
    if chart.kind == "sphere2":
        th, phi = x[..., 0], x[..., 1]
        return R * np.stack([np.sin(th) * np.cos(phi), np.sin(th) * np.sin(phi),
                             np.cos(th)], axis=-1)
    p1, p2, p3 = x[..., 0], x[..., 1], x[..., 2]
    s1, s2 = np.sin(p1), np.sin(p2)
    return R * np.stack([np.cos(p1), s1 * np.cos(p2), s1 * s2 * np.cos(p3),
                         s1 * s2 * np.sin(p3)], axis=-1)


def pullback_metric(chart: SurfaceChart, coords, h=1e-5):
    """``J^T J`` with ``J`` the central-difference Jacobian of :func:`embed`."""
    x = np.asarray(coords, dtype=float)
    n = chart.dim
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        cols.append((embed(chart, x + e) - embed(chart, x - e)) / (2 * h))
    J = np.stack(cols, axis=-1)
    return np.einsum("...ai,...aj->...ij", J, J)
