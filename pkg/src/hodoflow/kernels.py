"""Backend selection for the geodesic kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module.  Set ``HODOFLOW_KERNELS=python`` to force
the fallback (the test suite runs the parity checks both ways).
"""
import os

from . import _pykernels

_forced = os.environ.get("HODOFLOW_KERNELS", "").strip().lower()

if _forced == "python":
    backend = _pykernels
else:
    try:
        from . import _ckernels as backend
    except ImportError:
        if _forced == "cython":
            raise
        backend = _pykernels

BACKEND = backend.BACKEND
rhs = backend.rhs
interior = backend.interior
integrate = backend.integrate
integrate_batch = backend.integrate_batch


def available_backends():
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
