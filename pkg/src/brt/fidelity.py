"""Quadratic data-fidelity term for the stacked burst observation model.

Each frame is modelled as y_i = H S_i x + n_i with S_i a sparse warp and H
the per-pixel degradation. The fidelity is

    f(x) = 1 / (2 sigma^2 B) * sum_i || y_i - H S_i x ||^2

with exact gradient (1 / (sigma^2 B)) * sum_i S_i^T H^T (H S_i x - y_i).
Computations preserve the input dtype so float64 oracles stay float64.
"""
from __future__ import annotations

import numpy as np

from .cfa import DegradationOp
from .image import Burst, as_array
from .warps import SparseWarp

__all__ = [
    "data_fidelity_value",
    "data_fidelity_gradient",
    "accumulate_gradient",
    "normal_apply",
    "estimate_operator_norm",
]


def _frames_arrays(frames):
    if isinstance(frames, Burst):
        frames = frames.frames
    return [as_array(f) for f in frames]


def _check_setup(x, frames, warps, sigma=1.0):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    if len(frames) != len(warps):
        raise ValueError(f"{len(frames)} frames but {len(warps)} warps")
    h, w = x.shape[0], x.shape[1]
    for f, s in zip(frames, warps):
        if f.shape != x.shape:
            raise ValueError(f"frame shape {f.shape} does not match estimate {x.shape}")
        if (s.height, s.width) != (h, w):
            raise ValueError("warp dims do not match the estimate")


def data_fidelity_value(x, frames, warps, op: DegradationOp, sigma: float) -> float:
    x = as_array(x)
    frames = _frames_arrays(frames)
    _check_setup(x, frames, warps, sigma)
    b = len(frames)
    flat = x.reshape(-1, x.shape[2])
    total = 0.0
    for y, s in zip(frames, warps):
        pred = op.apply((s.matrix @ flat).reshape(x.shape))
        r = pred - y
        total += float(np.vdot(r, r).real)
    return total / (2.0 * sigma * sigma * b)


def accumulate_gradient(x, frames, warps, op: DegradationOp, order=None) -> np.ndarray:
    """sum_i S_i^T H^T (H S_i x - y_i), without any sigma or B scaling.

    The solver consumes this raw accumulation directly (its step divides by
    B and the sigma factors cancel against the prox parameterisation).
    `order` fixes the summation sequence; default is ascending frame index.
    """
    x = as_array(x)
    frames = _frames_arrays(frames)
    _check_setup(x, frames, warps)
    if order is None:
        order = range(len(frames))
    c = x.shape[2]
    flat = x.reshape(-1, c)
    z = np.zeros_like(flat)
    for i in order:
        s, y = warps[i], frames[i]
        pred = op.apply((s.matrix @ flat).reshape(x.shape))
        # H is binary diagonal, so H^T(H S x - y) = H(pred - y)
        r = op.apply(pred - y)
        z += s.adjoint_matrix @ r.reshape(-1, c)
    return z.reshape(x.shape).astype(x.dtype, copy=False)


def data_fidelity_gradient(x, frames, warps, op: DegradationOp, sigma: float) -> np.ndarray:
    x = as_array(x)
    frames = _frames_arrays(frames)
    _check_setup(x, frames, warps, sigma)
    z = accumulate_gradient(x, frames, warps, op)
    return z / (sigma * sigma * len(frames))


def normal_apply(v: np.ndarray, warps, op: DegradationOp, order=None) -> np.ndarray:
    """sum_i S_i^T H^T H S_i v, the (unscaled) normal operator of the model."""
    v = as_array(v)
    if order is None:
        order = range(len(warps))
    c = v.shape[2]
    flat = v.reshape(-1, c)
    out = np.zeros_like(flat)
    for i in order:
        s = warps[i]
        t = op.apply((s.matrix @ flat).reshape(v.shape))
        out += s.adjoint_matrix @ t.reshape(-1, c)
    return out.reshape(v.shape).astype(v.dtype, copy=False)


def estimate_operator_norm(
    warps,
    op: DegradationOp,
    iterations: int = 30,
    rng: "np.random.Generator | None" = None,
    channels: int = 3,
) -> float:
    """Largest eigenvalue of (1/B) sum_i S_i^T H^T H S_i by power iteration.

    The operator is symmetric positive semi-definite, so the spectral norm
    and the top eigenvalue coincide. Runs in float64 regardless of pipeline
    dtype; the estimate enters only as a step-size safety factor.
    """
    if not warps:
        raise ValueError("need at least one warp")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if rng is None:
        rng = np.random.default_rng(0)
    h, w = warps[0].height, warps[0].width
    b = len(warps)
    v = rng.standard_normal((h, w, channels)).astype(np.float64)
    lam = 0.0
    for _ in range(iterations):
        av = normal_apply(v, warps, op) / b
        num = float(np.vdot(v, av).real)
        den = float(np.vdot(v, v).real)
        if den == 0.0:
            return 0.0
        lam = num / den
        norm = float(np.linalg.norm(av))
        if norm == 0.0:
            # v fell entirely into the null space; the observed quotient stands
            return max(lam, 0.0)
        v = av / norm
    return max(lam, 0.0)
