"""Rigid burst alignment by enhanced-correlation-coefficient maximisation.

Alignment runs coarse to fine on a Gaussian pyramid and estimates, per
frame, the gather transform that registers the moving frame onto the
reference: moving(T(q)) ~= reference(q). The estimate therefore inverts the
motion that produced the frame, and the solver re-inverts it when it needs
the forward observation warp.

The inner loop is the forward-additive ECC scheme: both images are
zero-meaned over the valid overlap, the warped image is linearised with the
warped gradient images, and the update solves the 3x3 normal equations of
the correlation surrogate. The correlation rho in [-1, 1] doubles as the
convergence diagnostic; a final value below ECC_CONVERGENCE_THRESHOLD flags
the frame as unreliable rather than raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .cfa import bilinear_demosaic
from .image import Image, PixelSpace, as_array
from .warps import AffineTransform

__all__ = [
    "PyramidConfig",
    "AlignmentResult",
    "ECC_CONVERGENCE_THRESHOLD",
    "MIN_COARSE_SIDE",
    "luma",
    "gaussian_pyramid",
    "estimate_alignment",
    "align_burst",
]

ECC_CONVERGENCE_THRESHOLD = 0.9
MIN_COARSE_SIDE = 32

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class PyramidConfig:
    levels: int = 3
    blur_std: float = 1.0
    max_iterations_per_level: int = 50
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("need at least one pyramid level")
        if self.blur_std <= 0:
            raise ValueError("blur_std must be positive")
        if self.max_iterations_per_level < 1:
            raise ValueError("need at least one iteration per level")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class AlignmentResult:
    transform: AffineTransform
    final_ecc: float
    converged: bool


def luma(img: Image) -> Image:
    """Single-channel intensity for alignment purposes.

    Mosaicked input is demosaicked first so the checkerboard of zeros does
    not masquerade as texture.
    """
    if img.space is PixelSpace.MOSAICKED_LINEAR:
        img = bilinear_demosaic(img)
    if img.channels == 1:
        return img
    arr = img.data.astype(np.float64) @ _LUMA
    return Image(arr.astype(np.float32), img.space)


def gaussian_pyramid(img, config: PyramidConfig) -> list:
    """Blur-then-decimate pyramid; level 0 is the untouched input.

    Refuses configurations whose coarsest level would drop under
    MIN_COARSE_SIDE pixels on the short side, since the alignment model
    cannot be constrained reliably below that.
    """
    arr = as_array(img)
    if arr.shape[2] != 1:
        raise ValueError("pyramid expects single-channel input, convert with luma()")
    short = min(arr.shape[0], arr.shape[1])
    if short // (2 ** (config.levels - 1)) < MIN_COARSE_SIDE:
        raise ValueError(
            f"{config.levels} levels would shrink the short side {short} below "
            f"{MIN_COARSE_SIDE} px"
        )
    levels = [arr.astype(np.float64)[:, :, 0]]
    for _ in range(config.levels - 1):
        blurred = gaussian_filter(levels[-1], config.blur_std)
        levels.append(blurred[::2, ::2])
    if isinstance(img, Image):
        return [Image(l.astype(np.float32), img.space) for l in levels]
    return levels


def max_feasible_levels(height: int, width: int, requested: int) -> int:
    short = min(height, width)
    n = 1
    while n < requested and short // (2 ** n) >= MIN_COARSE_SIDE:
        n += 1
    return n


def _bilinear_sample(arr, sx, sy):
    """Sample arr at float coords; returns (values, valid mask)."""
    h, w = arr.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    valid = (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = sx - x0c
    fy = sy - y0c
    v00 = arr[y0c, x0c]
    v01 = arr[y0c, x0c + 1]
    v10 = arr[y0c + 1, x0c]
    v11 = arr[y0c + 1, x0c + 1]
    vals = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    return vals, valid


class _EccFailure(Exception):
    """Internal: the surrogate became ill-posed at the current estimate."""


def _ecc_level(ref, mov, params, config):
    """Run ECC iterations on one pyramid level. Returns (params, rho)."""
    ref_s = gaussian_filter(ref, config.blur_std)
    mov_s = gaussian_filter(mov, config.blur_std)
    gy_img, gx_img = np.gradient(mov_s)
    h, w = ref_s.shape
    ys, xs = np.mgrid[0:h, 0:w]
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    tvals = ref_s.ravel()

    theta, dx, dy = params
    rho_prev = None
    rho = -1.0
    for _ in range(config.max_iterations_per_level):
        c, s = math.cos(theta), math.sin(theta)
        sx = c * xs - s * ys + dx
        sy = s * xs + c * ys + dy
        iw, valid = _bilinear_sample(mov_s, sx, sy)
        if valid.sum() < 12:
            raise _EccFailure("overlap too small")
        gxw, _ = _bilinear_sample(gx_img, sx, sy)
        gyw, _ = _bilinear_sample(gy_img, sx, sy)

        xv, yv = xs[valid], ys[valid]
        iwv = iw[valid]
        tv = tvals[valid]
        gxv, gyv = gxw[valid], gyw[valid]

        tb = tv - tv.mean()
        ib = iwv - iwv.mean()
        tn = np.linalg.norm(tb)
        im_n = np.linalg.norm(ib)
        if tn == 0.0 or im_n == 0.0:
            raise _EccFailure("zero-variance region")
        rho = float(tb @ ib) / (tn * im_n)
        if rho_prev is not None and abs(rho - rho_prev) < config.epsilon:
            break
        rho_prev = rho

        jt = gxv * (-s * xv - c * yv) + gyv * (c * xv - s * yv)
        g = np.stack([jt, gxv, gyv], axis=1)
        g = g - g.mean(axis=0)
        hess = g.T @ g
        gi = g.T @ ib
        gt = g.T @ tb
        try:
            ip = np.linalg.solve(hess, gi)
        except np.linalg.LinAlgError as e:
            raise _EccFailure("singular normal equations") from e
        lam_n = float(im_n * im_n - ib @ (g @ ip))
        lam_d = float(tb @ ib - tb @ (g @ ip))
        if lam_d <= 0.0:
            raise _EccFailure("negative correlation surrogate")
        lam = lam_n / lam_d
        err = lam * tb - ib
        try:
            delta = np.linalg.solve(hess, g.T @ err)
        except np.linalg.LinAlgError as e:
            raise _EccFailure("singular normal equations") from e
        theta += delta[0]
        dx += delta[1]
        dy += delta[2]
    return (theta, dx, dy), rho


def _final_rho(ref, mov, params, config):
    """Correlation of the registered pair at full resolution."""
    ref_s = gaussian_filter(ref, config.blur_std)
    mov_s = gaussian_filter(mov, config.blur_std)
    h, w = ref_s.shape
    ys, xs = np.mgrid[0:h, 0:w]
    theta, dx, dy = params
    c, s = math.cos(theta), math.sin(theta)
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    sx = c * xs - s * ys + dx
    sy = s * xs + c * ys + dy
    iw, valid = _bilinear_sample(mov_s, sx, sy)
    if valid.sum() < 12:
        return -1.0
    tb = ref_s.ravel()[valid]
    tb = tb - tb.mean()
    ib = iw[valid]
    ib = ib - ib.mean()
    tn = np.linalg.norm(tb)
    im_n = np.linalg.norm(ib)
    if tn == 0.0 or im_n == 0.0:
        return -1.0
    return float(tb @ ib) / (tn * im_n)


def estimate_alignment(moving: Image, reference: Image, config: PyramidConfig) -> AlignmentResult:
    """Estimate the rigid gather transform registering moving onto reference.

    Raises ValueError for degenerate (zero-variance) inputs; everything else
    that can go wrong is reported through converged=False.
    """
    ref = luma(reference).data.astype(np.float64)[:, :, 0]
    mov = luma(moving).data.astype(np.float64)[:, :, 0]
    if ref.shape != mov.shape:
        raise ValueError(f"frame shapes differ: {mov.shape} vs {ref.shape}")
    if float(ref.std()) == 0.0 or float(mov.std()) == 0.0:
        raise ValueError("cannot align zero-variance images")

    levels = max_feasible_levels(ref.shape[0], ref.shape[1], config.levels)
    cfg = PyramidConfig(levels, config.blur_std, config.max_iterations_per_level, config.epsilon)
    ref_pyr = gaussian_pyramid(ref[:, :, None], cfg)
    mov_pyr = gaussian_pyramid(mov[:, :, None], cfg)

    params = (0.0, 0.0, 0.0)
    failed = False
    for lev in reversed(range(levels)):
        try:
            params, _ = _ecc_level(ref_pyr[lev], mov_pyr[lev], params, cfg)
        except _EccFailure:
            failed = True
            break
        if lev > 0:
            params = (params[0], params[1] * 2.0, params[2] * 2.0)

    rho = _final_rho(ref_pyr[0], mov_pyr[0], params, cfg)
    transform = AffineTransform(float(params[0]), float(params[1]), float(params[2]))
    converged = (not failed) and rho >= ECC_CONVERGENCE_THRESHOLD
    return AlignmentResult(transform, float(rho), bool(converged))


def align_burst(burst, config: "PyramidConfig | None" = None) -> list:
    """Align every frame to the burst reference.

    The reference gets an exact identity result. Per-frame degeneracies are
    folded into converged=False results so one bad frame cannot abort the
    rest of the burst.
    """
    if config is None:
        config = PyramidConfig()
    ref = burst.frames[burst.reference_index]
    results = []
    for i, frame in enumerate(burst.frames):
        if i == burst.reference_index:
            results.append(AlignmentResult(AffineTransform(), 1.0, True))
            continue
        try:
            results.append(estimate_alignment(frame, ref, config))
        except ValueError:
            results.append(AlignmentResult(AffineTransform(), -1.0, False))
    return results
