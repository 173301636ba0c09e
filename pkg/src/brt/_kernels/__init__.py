"""Convolution kernel backends.

The compiled extension is selected at import when present; BRT_KERNELS
overrides the choice ("ext" insists on the compiled core, "python" forces
the numpy fallback). Dispatch also falls back per call for anything the
extension does not handle (non-float32 inputs), which is what routes the
float64 gradient-check oracles through numpy automatically.
"""
from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

__all__ = ["correlate_valid", "grad_weights", "grad_input", "backend_name"]

_ext = None
_requested = os.environ.get("BRT_KERNELS", "auto").lower()
if _requested not in ("auto", "ext", "python"):
    raise ValueError(f"BRT_KERNELS must be auto, ext or python, got {_requested!r}")
if _requested in ("auto", "ext"):
    try:
        from . import _convext as _ext  # type: ignore[no-redef]
    except ImportError:
        _ext = None
    if _requested == "ext" and _ext is None:
        raise ImportError("BRT_KERNELS=ext but the compiled extension is not available")

_BACKEND = "ext" if _ext is not None else "python"


def backend_name() -> str:
    return _BACKEND


def _ext_ok(*arrays) -> bool:
    return _ext is not None and all(a.dtype == np.float32 for a in arrays)


def correlate_valid(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (C, Hp, Wp) x (O, C, kh, kw) -> (O, H, W)."""
    if _ext_ok(xp, w):
        return _ext.correlate_valid(np.ascontiguousarray(xp), np.ascontiguousarray(w))
    return numpy_backend.correlate_valid(xp, w)


def grad_weights(xp: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Weight gradient of correlate_valid wrt w for upstream gy."""
    if _ext_ok(xp, gy):
        return _ext.grad_weights(np.ascontiguousarray(xp), np.ascontiguousarray(gy))
    return numpy_backend.grad_weights(xp, gy)


def grad_input(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Input gradient of correlate_valid: full correlation with the
    channel-swapped, spatially flipped weights. Returns the padded-input
    shape (C, Hp, Wp)."""
    kh, kw = w.shape[2], w.shape[3]
    gyz = np.pad(gy, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return correlate_valid(gyz, wt)
