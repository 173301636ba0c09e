"""Shared test fixtures and independent oracles.

The oracle implementations here deliberately avoid the package's vectorised
code paths: warp matrices are assembled point by point from the transform
definition, convolutions run as plain loops in float64. Slow, but they are
the ground truth the fast code is checked against.
"""
import math

import numpy as np
import scipy.ndimage as ndi

from brt.image import Burst, Image, PixelSpace
from brt.warps import AffineTransform, build_warp, apply_warp
from brt.image import center_crop


def smooth_texture(h: int, w: int, seed: int = 0, channels: int = 3, cell: int = 4) -> np.ndarray:
    """Band-limited random image in [0, 1]; has usable gradients everywhere."""
    rng = np.random.default_rng(seed)
    gh, gw = h // cell + 4, w // cell + 4
    grid = rng.random((gh, gw, channels))
    out = np.stack(
        [ndi.zoom(grid[..., c], (h / gh, w / gw), order=3, grid_mode=True, mode="nearest")
         for c in range(channels)],
        axis=-1,
    )
    lo, hi = out.min(), out.max()
    return ((out - lo) / (hi - lo)).astype(np.float32)


def dense_warp_oracle(transform: AffineTransform, dims, interp: str = "bilinear") -> np.ndarray:
    """Row-by-row dense warp matrix straight from the definition
    output[q] = input[T(q)], T(q) = R(theta) q + t. Only for tiny dims."""
    h, w = dims
    n = h * w
    m = np.zeros((n, n), dtype=np.float64)
    c, s = math.cos(transform.rotation), math.sin(transform.rotation)
    for y in range(h):
        for x in range(w):
            row = y * w + x
            sx = c * x - s * y + transform.dx
            sy = s * x + c * y + transform.dy
            if interp == "nearest":
                xi, yi = math.floor(sx + 0.5), math.floor(sy + 0.5)
                if 0 <= xi < w and 0 <= yi < h:
                    m[row, yi * w + xi] = 1.0
                continue
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            taps = [
                (y0, x0, (1 - fx) * (1 - fy)),
                (y0, x0 + 1, fx * (1 - fy)),
                (y0 + 1, x0, (1 - fx) * fy),
                (y0 + 1, x0 + 1, fx * fy),
            ]
            live = [(ty, tx, wt) for ty, tx, wt in taps if wt > 0.0]
            if any(not (0 <= tx < w and 0 <= ty < h) for ty, tx, _ in live):
                continue  # partial support: the whole row is dropped
            for ty, tx, wt in live:
                m[row, ty * w + tx] = wt
    return m


def naive_correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Loop-based valid cross-correlation, float64."""
    x = x.astype(np.float64)
    w = w.astype(np.float64)
    co, ci, kh, kw = w.shape
    oh, ow = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    out = np.zeros((co, oh, ow))
    for o in range(co):
        for c in range(ci):
            for i in range(kh):
                for j in range(kw):
                    out[o] += w[o, c, i, j] * x[c, i : i + oh, j : j + ow]
    return out


def corner_epe(est: AffineTransform, true: AffineTransform, dims) -> float:
    """Mean displacement of the four image corners between two transforms."""
    h, w = dims
    pts = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    return float(np.linalg.norm(est.apply(pts) - true.apply(pts), axis=1).mean())


def make_aligned_pair(texture: np.ndarray, crop: int, observation: AffineTransform,
                      sigma: float = 0.0, rng=None):
    """Reference/moving crop pair with full content (no zero borders) plus
    the true registration transform in crop coordinates.

    The moving frame is the texture pushed through the observation warp and
    centre-cropped; cropping conjugates the transform by the crop offset.
    """
    h, w = texture.shape[:2]
    dims = (h, w)
    ref = center_crop(Image(texture, PixelSpace.LINEAR_RGB), crop, crop)
    warped = apply_warp(build_warp(observation, dims), Image(texture, PixelSpace.LINEAR_RGB))
    mov = center_crop(warped, crop, crop)
    oy, ox = (h - crop) // 2, (w - crop) // 2
    c, s = math.cos(observation.rotation), math.sin(observation.rotation)
    # T_crop(q) = T(q + o) - o
    dx = c * ox - s * oy + observation.dx - ox
    dy = s * ox + c * oy + observation.dy - oy
    obs_crop = AffineTransform(observation.rotation, dx, dy)
    if sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        ref = Image(ref.data + rng.normal(0, sigma, ref.data.shape).astype(np.float32),
                    PixelSpace.LINEAR_RGB)
        mov = Image(mov.data + rng.normal(0, sigma, mov.data.shape).astype(np.float32),
                    PixelSpace.LINEAR_RGB)
    return ref, mov, obs_crop


def make_burst(frames, reference_index=None) -> Burst:
    imgs = tuple(Image(f, PixelSpace.LINEAR_RGB) if isinstance(f, np.ndarray) else f
                 for f in frames)
    if reference_index is None:
        reference_index = len(imgs) - 1
    return Burst(imgs, reference_index)
