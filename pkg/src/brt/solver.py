"""Unrolled proximal-gradient restoration over the burst forward model.

One restoration runs K iterations of

    u     = x_t + w_t (x_t - x_{t-1})               extrapolation
    z     = sum_i S_i^T H^T (H S_i u - y_i)          gradient accumulation
    x_t+1 = prox(x_t - z / B, sigma, s_t)            proximal step

starting from x_0 = 0 and x_1 = a cheap per-task initialisation of the
reference frame. The 1/sigma^2 of the fidelity gradient and the sigma^2 of
the matched step size cancel, so neither appears in the update; sigma enters
only through the prox. Iterates stay unclamped until a single final clamp
to [0, 1].

Frame contributions are accumulated in a canonical content-keyed order
(sorted by frame and warp bytes), which makes restorations bit-identical
under any matched permutation of (frames, warps) despite float addition
being non-associative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import proxnet
from .align import AlignmentResult, PyramidConfig, align_burst
from .cfa import DegradationOp, bilinear_demosaic
from .fidelity import accumulate_gradient, data_fidelity_value, estimate_operator_norm
from .image import Burst, Image, PixelSpace, as_array
from .warps import AffineTransform, build_warp, invert_transform

__all__ = [
    "IdentityProx",
    "SoftThresholdProx",
    "NetworkProx",
    "SolverConfig",
    "IterationTrace",
    "init_continuation",
    "initialize_estimate",
    "canonical_frame_order",
    "run",
    "run_with_alignment",
    "DEFAULT_S_MAX",
    "DEFAULT_S_MIN",
]

DEFAULT_S_MAX = 0.7
DEFAULT_S_MIN = 0.05


class IdentityProx:
    """No-op proximal map; turns the solver into plain gradient descent."""

    def apply(self, v: np.ndarray, sigma: float, s_t: float) -> np.ndarray:
        return v

    def __repr__(self):
        return "IdentityProx()"


class SoftThresholdProx:
    """Elementwise soft shrinkage with a fixed threshold."""

    def __init__(self, threshold: float):
        if threshold < 0:
            raise ValueError("threshold must be non-negative")
        self.threshold = float(threshold)

    def apply(self, v: np.ndarray, sigma: float, s_t: float) -> np.ndarray:
        t = np.asarray(self.threshold, dtype=v.dtype)
        return np.sign(v) * np.maximum(np.abs(v) - t, 0)

    def __repr__(self):
        return f"SoftThresholdProx({self.threshold})"


class NetworkProx:
    """Learned proximal map backed by the residual denoiser."""

    def __init__(self, params: proxnet.ProxNetParams):
        self.params = params

    def apply(self, v: np.ndarray, sigma: float, s_t: float) -> np.ndarray:
        out, _ = proxnet.forward_with_cache(self.params, v, sigma, s_t)
        return out

    def __repr__(self):
        return f"NetworkProx(depth={self.params.cfg.depth}, filters={self.params.cfg.filters})"


def init_continuation(iterations: int, s_max: float = DEFAULT_S_MAX, s_min: float = DEFAULT_S_MIN):
    """Initial per-iteration prox parameters s (log-spaced, descending) and
    extrapolation weights w_t = (t - 1) / (t + 2)."""
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if not (s_max >= s_min > 0):
        raise ValueError("need s_max >= s_min > 0")
    if iterations == 1:
        s = np.array([s_max], dtype=np.float32)
    else:
        s = np.geomspace(s_max, s_min, iterations).astype(np.float32)
    t = np.arange(1, iterations + 1, dtype=np.float32)
    w = (t - 1.0) / (t + 2.0)
    return s, w


@dataclass
class SolverConfig:
    iterations: int
    sigma: float
    s: np.ndarray
    w: np.ndarray
    prox: object
    lipschitz_safety: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.s = np.asarray(self.s, dtype=np.float32)
        self.w = np.asarray(self.w, dtype=np.float32)
        if self.s.shape != (self.iterations,) or self.w.shape != (self.iterations,):
            raise ValueError("s and w must both have one entry per iteration")

    @classmethod
    def default(cls, iterations: int, sigma: float, prox=None, **kw) -> "SolverConfig":
        s, w = init_continuation(iterations)
        return cls(iterations, sigma, s, w, prox if prox is not None else IdentityProx(), **kw)


@dataclass
class IterationTrace:
    """Per-iteration diagnostics. fidelity is evaluated at the new iterate,
    grad_norm is the fidelity gradient norm at the extrapolated point."""

    fidelity: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    snapshots: "list | None" = None
    warnings: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("iteration,fidelity,grad_norm\n")
            for i, (fv, gn) in enumerate(zip(self.fidelity, self.grad_norm), start=1):
                f.write(f"{i},{fv:.10e},{gn:.10e}\n")


def initialize_estimate(burst: Burst, op: DegradationOp) -> np.ndarray:
    """First iterate from the reference frame: a copy for identity
    degradation, bilinear demosaicking for CFA observations."""
    ref = burst.reference.data
    if op.is_identity:
        return ref.copy()
    return bilinear_demosaic(ref.astype(np.float64)).astype(np.float32)


def canonical_frame_order(frames, warps) -> list:
    """Content-keyed accumulation order, invariant to input permutation."""
    def key(i):
        m = warps[i].matrix
        return (
            as_array(frames[i]).tobytes(),
            m.indptr.tobytes(),
            m.indices.tobytes(),
            m.data.tobytes(),
        )
    return sorted(range(len(frames)), key=key)


def run(burst: Burst, warps, op: DegradationOp, config: SolverConfig):
    """Restore one burst with known warps. Returns (Image, IterationTrace)."""
    if len(warps) != len(burst):
        raise ValueError(f"{len(burst)} frames but {len(warps)} warps")
    frames = [f.data for f in burst.frames]
    b = len(frames)
    order = canonical_frame_order(frames, warps)

    scale = 1.0 / b
    if config.lipschitz_safety:
        lam = estimate_operator_norm(warps, op, iterations=30, rng=np.random.default_rng(0))
        scale /= max(1.0, lam)

    trace = IterationTrace()
    x_prev = np.zeros_like(frames[0])
    x = initialize_estimate(burst, op)
    sigma = config.sigma
    for t in range(config.iterations):
        w_t = float(config.w[t])
        u = x + w_t * (x - x_prev)
        z = accumulate_gradient(u, frames, warps, op, order)
        v = x - scale * z
        x_next = config.prox.apply(v, sigma, float(config.s[t]))
        trace.fidelity.append(data_fidelity_value(x_next, frames, warps, op, sigma))
        trace.grad_norm.append(float(np.linalg.norm(z)) / (sigma * sigma * b))
        x_prev, x = x, x_next

    out = Image(np.clip(x, 0.0, 1.0), PixelSpace.LINEAR_RGB)
    return out, trace


def run_with_alignment(
    burst: Burst,
    op: DegradationOp,
    config: SolverConfig,
    pyramid_config: "PyramidConfig | None" = None,
    interp: str = "bilinear",
):
    """Align, then restore with the estimated warps.

    Frames whose alignment did not converge are excluded and B shrinks
    accordingly. If every non-reference frame fails, restoration proceeds
    from the reference alone and says so in trace.warnings.

    Returns (Image, list[AlignmentResult], IterationTrace).
    """
    results = align_burst(burst, pyramid_config)
    dims = (burst.reference.height, burst.reference.width)

    kept_frames = []
    kept_warps = []
    ref_pos = None
    for i, (frame, res) in enumerate(zip(burst.frames, results)):
        if i == burst.reference_index:
            ref_pos = len(kept_frames)
            kept_frames.append(frame)
            kept_warps.append(build_warp(AffineTransform(), dims, interp))
            continue
        if not res.converged:
            continue
        # the alignment transform registers the frame; the observation model
        # needs the motion that produced it, which is the inverse
        kept_frames.append(frame)
        kept_warps.append(build_warp(invert_transform(res.transform), dims, interp))

    sub = Burst(tuple(kept_frames), ref_pos)
    out, trace = run(sub, kept_warps, op, config)
    dropped = len(burst) - len(kept_frames)
    if dropped:
        trace.warnings.append(f"excluded {dropped} frame(s) with failed alignment")
    if len(kept_frames) == 1 and len(burst) > 1:
        trace.warnings.append("alignment failed for all non-reference frames; restored single-frame")
    return out, results, trace
