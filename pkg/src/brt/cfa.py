"""Per-pixel degradation operators: identity and Bayer colour sampling.

Both operators are binary diagonal in the stacked-sample basis, hence
self-adjoint and idempotent. The CFA keeps exactly one colour sample per
pixel site following an RGGB tile whose 2x2 phase is configurable.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve

from .image import Image, PixelSpace, as_array

__all__ = [
    "DegradationOp",
    "IdentityOp",
    "CfaOp",
    "apply_degradation",
    "bilinear_demosaic",
]

# RGGB tile: channel kept at each (row % 2, col % 2) site
_RGGB = np.array([[0, 1], [1, 2]], dtype=np.int64)

_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64)
_K_REDBLUE = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)


class DegradationOp:
    """Common surface for the per-pixel measurement operators."""

    is_identity = False

    def apply(self, arr: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityOp(DegradationOp):
    is_identity = True

    def apply(self, arr: np.ndarray) -> np.ndarray:
        return arr

    def __repr__(self):
        return "IdentityOp()"


class CfaOp(DegradationOp):
    """RGGB colour filter array with a configurable 2x2 phase offset.

    offset = (row_offset, col_offset) shifts which corner of the tile sits at
    pixel (0, 0). The mask for a given image size is cached since the solver
    applies the operator thousands of times at fixed dims.
    """

    def __init__(self, offset=(0, 0)):
        oy, ox = int(offset[0]) % 2, int(offset[1]) % 2
        self.offset = (oy, ox)
        self._mask_cache = {}

    def channel_map(self, height: int, width: int) -> np.ndarray:
        """(h, w) array of which channel index is kept at each site."""
        oy, ox = self.offset
        ys = (np.arange(height) + oy) % 2
        xs = (np.arange(width) + ox) % 2
        return _RGGB[ys[:, None], xs[None, :]]

    def mask(self, height: int, width: int) -> np.ndarray:
        key = (height, width)
        m = self._mask_cache.get(key)
        if m is None:
            cm = self.channel_map(height, width)
            m = np.zeros((height, width, 3), dtype=bool)
            for c in range(3):
                m[:, :, c] = cm == c
            m.setflags(write=False)
            self._mask_cache[key] = m
        return m

    def apply(self, arr: np.ndarray) -> np.ndarray:
        if arr.shape[2] != 3:
            raise ValueError("CFA sampling needs 3-channel input")
        return arr * self.mask(arr.shape[0], arr.shape[1])

    def __repr__(self):
        return f"CfaOp(offset={self.offset})"


def apply_degradation(op: DegradationOp, img: Image) -> Image:
    """Apply the measurement operator with pixel-space bookkeeping."""
    if op.is_identity:
        return img
    if img.space is not PixelSpace.LINEAR_RGB:
        raise ValueError(f"CFA sampling expects LINEAR_RGB input, got {img.space.name}")
    return Image(op.apply(img.data), PixelSpace.MOSAICKED_LINEAR)


def bilinear_demosaic(img, op: "CfaOp | None" = None) -> "Image | np.ndarray":
    """Mask-normalised bilinear interpolation of a mosaicked image.

    At interior sites this reduces to the classic stencils (4-neighbour cross
    for green, 2- or 4-tap averages for red/blue) and it keeps the measured
    samples untouched. Borders renormalise over whichever same-colour sites
    the 3x3 window still covers, so no boundary row needs special casing.
    """
    if op is None:
        op = CfaOp()
    arr = as_array(img)
    h, w = arr.shape[0], arr.shape[1]
    if arr.shape[2] != 3:
        raise ValueError("demosaic expects 3-channel mosaicked input")
    if h < 2 or w < 2:
        raise ValueError("demosaic needs at least a 2x2 image")
    mask = op.mask(h, w)
    out = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        k = _K_GREEN if c == 1 else _K_REDBLUE
        m = mask[:, :, c].astype(np.float64)
        num = convolve(arr[:, :, c].astype(np.float64) * m, k, mode="constant", cval=0.0)
        den = convolve(m, k, mode="constant", cval=0.0)
        out[:, :, c] = num / den
    if isinstance(img, Image):
        return Image(out.astype(np.float32), PixelSpace.LINEAR_RGB)
    return out.astype(arr.dtype, copy=False)
