"""Backend selection for the closed-loop integration kernels.

The compiled extension ``stsreach._kernels`` is used when it is importable;
otherwise the numpy implementation in ``stsreach._kernels_py`` takes over.
Set STSREACH_PURE_PYTHON=1 to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py
from .errors import IntegrationFailure

try:
    if os.environ.get("STSREACH_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


class _Checked:
    """Wraps a backend module and turns non-finite output into IntegrationFailure."""

    def __init__(self, impl, name):
        self._impl = impl
        self.name = name

    def integrate_state(self, p, x0, t, xr, ur, K, steps):
        try:
            X = self._impl.integrate_state(p, x0, t, xr, ur, K, np.asarray(steps, dtype=np.int_))
        except np.linalg.LinAlgError as exc:
            raise IntegrationFailure(f"singular mass matrix: {exc}") from exc
        _check(X, t, p)
        return X

    def integrate_sensitivity(self, p, x0, t, xr, ur, K, steps):
        try:
            X, S = self._impl.integrate_sensitivity(p, x0, t, xr, ur, K, np.asarray(steps, dtype=np.int_))
        except np.linalg.LinAlgError as exc:
            raise IntegrationFailure(f"singular mass matrix: {exc}") from exc
        _check(X, t, p)
        _check(S.reshape(len(t), -1), t, p)
        return X, S


def _check(arr, t, p):
    bad = ~np.all(np.isfinite(arr), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise IntegrationFailure(f"non-finite trajectory at t={t[k]:.6g} for p={np.asarray(p).tolist()}")


_BACKENDS = {"python": _Checked(_kernels_py, "python")}
if _compiled is not None:
    _BACKENDS["cython"] = _Checked(_compiled, "cython")


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the named backend, or the default one when ``name`` is None."""
    if name is None:
        name = BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})") from None
