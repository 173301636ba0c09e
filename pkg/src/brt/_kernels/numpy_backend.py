"""Pure-numpy convolution kernels, the always-available fallback.

Shapes follow the compiled backend exactly:
  correlate_valid: xp (C, Hp, Wp), w (O, C, kh, kw) -> (O, Hp-kh+1, Wp-kw+1)
  grad_weights:    xp (C, Hp, Wp), gy (O, H, W)     -> (O, C, kh, kw)

Both reduce to tensordot over sliding windows, which BLAS turns into a GEMM.
dtype is whatever comes in, so float64 oracle paths stay exact.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def correlate_valid(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def grad_weights(xp: np.ndarray, gy: np.ndarray) -> np.ndarray:
    kh = xp.shape[1] - gy.shape[1] + 1
    kw = xp.shape[2] - gy.shape[2] + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return np.tensordot(gy, win, axes=([1, 2], [1, 2]))
