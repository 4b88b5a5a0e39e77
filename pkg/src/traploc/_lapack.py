"""Binding to LAPACK ``dlasq1`` (bidiagonal singular values by dqds).

scipy ships the routine in ``scipy.linalg.cython_lapack`` but does not wrap
it for Python, so the function pointer is read from the exported capsule.
dqds returns singular values to high relative accuracy, which the graded
trap matrices need.
"""
from __future__ import annotations

import ctypes
import warnings

import numpy as np

_P_INT = ctypes.POINTER(ctypes.c_int)
_P_DBL = ctypes.POINTER(ctypes.c_double)
_SIG = ctypes.CFUNCTYPE(None, _P_INT, _P_DBL, _P_DBL, _P_DBL, _P_INT)


def _load():
    try:
        from scipy.linalg import cython_lapack

        cap = cython_lapack.__pyx_capi__["dlasq1"]
        get_name = ctypes.pythonapi.PyCapsule_GetName
        get_name.restype = ctypes.c_char_p
        get_name.argtypes = [ctypes.py_object]
        get_ptr = ctypes.pythonapi.PyCapsule_GetPointer
        get_ptr.restype = ctypes.c_void_p
        get_ptr.argtypes = [ctypes.py_object, ctypes.c_char_p]
        return _SIG(get_ptr(cap, get_name(cap)))
    except Exception:  # pragma: no cover - depends on the scipy build
        return None


_DLASQ1 = _load()


def bidiagonal_singular_values(d: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Singular values (descending) of the upper bidiagonal with diagonal ``d``."""
    n = d.size
    if n == 0:
        return np.empty(0)
    if _DLASQ1 is None:  # pragma: no cover
        warnings.warn("dlasq1 unavailable; falling back to dense SVD (absolute accuracy only)")
        B = np.diag(d) + np.diag(e, 1)
        return np.linalg.svd(B, compute_uv=False)
    dd = np.ascontiguousarray(d, dtype=np.float64).copy()
    ee = np.zeros(n, dtype=np.float64)
    ee[: n - 1] = e
    work = np.zeros(4 * n, dtype=np.float64)
    info = ctypes.c_int(0)
    _DLASQ1(
        ctypes.byref(ctypes.c_int(n)),
        dd.ctypes.data_as(_P_DBL),
        ee.ctypes.data_as(_P_DBL),
        work.ctypes.data_as(_P_DBL),
        ctypes.byref(info),
    )
    if info.value != 0:
        raise ArithmeticError(f"dlasq1 failed with info={info.value}")
    return dd
