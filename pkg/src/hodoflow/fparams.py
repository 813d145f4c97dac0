"""Arbitrary functions entering the hodograph equations.

Each function object is callable on one or more integral values (arrays
broadcast) and exposes ``grad`` returning the partial derivatives, so that
hodograph systems can build analytic Jacobians when they want one.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError


class FParam:
    kind = "callable"
    nargs = None  # None: any number of arguments

    def __call__(self, *args):
        raise NotImplementedError

    def grad(self, *args, h=1e-6):
        """Partial derivatives by central differences (overridden where exact)."""
        out = []
        for k in range(len(args)):
            up = list(args)
            dn = list(args)
            step = h * np.maximum(1.0, np.abs(np.asarray(args[k], dtype=float)))
            up[k] = np.asarray(args[k], dtype=float) + step
            dn[k] = np.asarray(args[k], dtype=float) - step
            out.append((self(*up) - self(*dn)) / (2 * step))
        return out

    def derivative(self, x):
        return self.grad(x)[0]

    def to_config(self) -> dict:
        raise ConfigError(f"{self.kind} functions cannot be serialised")


class Wrapped(FParam):
    def __init__(self, fn, grad=None):
        self.fn = fn
        self._grad = grad

    def __call__(self, *args):
        return np.asarray(self.fn(*args), dtype=float)

    def grad(self, *args, h=1e-6):
        if self._grad is not None:
            return list(self._grad(*args))
        return super().grad(*args, h=h)


class Constant(FParam):
    kind = "constant"

    def __init__(self, value):
        self.value = float(value)

    def __call__(self, *args):
        shape = np.broadcast(*[np.asarray(a) for a in args]).shape if args else ()
        return np.full(shape, self.value)

    def grad(self, *args, h=None):
        return [np.zeros(np.shape(a)) for a in args]

    def to_config(self):
        return {"type": "constant", "value": self.value}


class Linear(FParam):
    """``a + b . x``; ``b`` is a scalar for one argument or a list for several."""

    kind = "linear"

    def __init__(self, a, b):
        self.a = float(a)
        self.b = np.atleast_1d(np.asarray(b, dtype=float))

    def __call__(self, *args):
        if len(args) != self.b.size:
            raise ValueError(f"linear function takes {self.b.size} arguments, got {len(args)}")
        out = self.a
        for bk, x in zip(self.b, args):
            out = out + bk * np.asarray(x, dtype=float)
        return np.asarray(out, dtype=float)

    def grad(self, *args, h=None):
        shape = np.broadcast(*[np.asarray(a) for a in args]).shape
        return [np.full(shape, bk) for bk in self.b]

    def to_config(self):
        b = float(self.b[0]) if self.b.size == 1 else self.b.tolist()
        return {"type": "linear", "a": self.a, "b": b}


class Quadratic(FParam):
    kind = "quadratic"
    nargs = 1

    def __init__(self, a, b, c):
        self.a, self.b, self.c = float(a), float(b), float(c)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + self.b * x + self.c * x * x

    def grad(self, x, h=None):
        return [self.b + 2.0 * self.c * np.asarray(x, dtype=float)]

    def to_config(self):
        return {"type": "quadratic", "a": self.a, "b": self.b, "c": self.c}


class Power(FParam):
    """``k * x**p`` on ``x > 0``."""

    kind = "power"
    nargs = 1

    def __init__(self, k, p):
        self.k, self.p = float(k), float(p)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(x > 0, self.k * np.abs(x) ** self.p, np.nan)

    def grad(self, x, h=None):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return [np.where(x > 0, self.k * self.p * np.abs(x) ** (self.p - 1.0), np.nan)]

    def to_config(self):
        return {"type": "power", "k": self.k, "p": self.p}


class Log(FParam):
    """``k * x * sqrt(log(1/x))`` on ``0 < x <= 1``."""

    kind = "log"
    nargs = 1

    def __init__(self, k):
        self.k = float(k)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        # tolerate a rounding excess above 1
        x = np.where((x > 1) & (x <= 1 + 1e-12), 1.0, x)
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (x > 0) & (x <= 1)
            return np.where(ok, self.k * x * np.sqrt(-np.log(np.where(ok, x, 1.0))), np.nan)

    def grad(self, x, h=None):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (x > 0) & (x < 1)
            lg = -np.log(np.where(ok, x, 0.5))
            return [np.where(ok, self.k * (np.sqrt(lg) - 0.5 / np.sqrt(lg)), np.nan)]

    def to_config(self):
        return {"type": "log", "k": self.k}


class Tabulated(FParam):
    """Monotone cubic (PCHIP) interpolant through ``(x, y)`` samples."""

    kind = "tabulated"
    nargs = 1

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.y.shape or self.x.size < 2:
            raise ConfigError("tabulated function needs matching 1-D x and y with >= 2 samples")
        if np.any(np.diff(self.x) <= 0):
            raise ConfigError("tabulated x must be strictly increasing")
        self._f = PchipInterpolator(self.x, self.y, extrapolate=False)
        self._df = self._f.derivative()

    def __call__(self, x):
        return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x, h=None):
        return [np.asarray(self._df(np.asarray(x, dtype=float)), dtype=float)]

    def to_config(self):
        return {"type": "tabulated", "x": self.x.tolist(), "y": self.y.tolist()}


_TYPES = {
    "constant": (Constant, ("value",)),
    "linear": (Linear, ("a", "b")),
    "quadratic": (Quadratic, ("a", "b", "c")),
    "power": (Power, ("k", "p")),
    "log": (Log, ("k",)),
    "tabulated": (Tabulated, ("x", "y")),
}


def as_fparam(spec) -> FParam:
    """Coerce a number, callable, FParam or config mapping into an FParam."""
    if isinstance(spec, FParam):
        return spec
    if isinstance(spec, (int, float, np.floating, np.integer)):
        return Constant(spec)
    if isinstance(spec, dict):
        return from_config(spec)
    if callable(spec):
        return Wrapped(spec)
    raise ConfigError(f"cannot interpret {spec!r} as a function")


def from_config(cfg: dict) -> FParam:
    kind = cfg.get("type")
    if kind not in _TYPES:
        raise ConfigError(f"unknown function type {kind!r}; expected one of {sorted(_TYPES)}")
    cls, keys = _TYPES[kind]
    missing = [k for k in keys if k not in cfg]
    if kind == "quadratic":
        missing = [k for k in missing if k != "c"]
    if missing:
        raise ConfigError(f"function type {kind!r} is missing key(s) {missing}")
    args = [cfg.get(k, 0.0) for k in keys]
    return cls(*args)
