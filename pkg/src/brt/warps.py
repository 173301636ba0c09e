"""Rigid transforms and their sparse warp-matrix realisation.

Transforms act on (x, y) pixel coordinates as p -> R p + t with the rotation
taken about the coordinate origin. Warping follows the gather convention:
the warped image at target pixel q samples the source image at T(q), so a
warp built from T realises "resample the source through T".

Each warp is materialised as an N x N CSR matrix (N = h * w, one stencil row
per target pixel, shared across channels). Bilinear rows hold up to four
weights summing to one, nearest rows a single unit weight. Target pixels
whose source stencil leaves the image keep an all-zero row, which makes the
adjoint drop those measurements instead of inventing data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix

from . import container
from .image import Image, as_array

__all__ = [
    "AffineTransform",
    "SparseWarp",
    "identity_transform",
    "compose",
    "invert_transform",
    "rotation_about",
    "build_warp",
    "apply_warp",
    "apply_warp_adjoint",
    "save_warp",
    "load_warp",
]

_INTERP_TAGS = {"bilinear": 0, "nearest": 1}
_INTERP_BY_TAG = {v: k for k, v in _INTERP_TAGS.items()}


@dataclass(frozen=True)
class AffineTransform:
    """Rigid 2-d motion: rotation (radians, about the origin) plus translation."""

    rotation: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    @cached_property
    def matrix(self) -> np.ndarray:
        """2x3 matrix [R | t] acting on column vectors (x, y, 1)."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s, self.dx], [s, c, self.dy]], dtype=np.float64)

    def apply(self, xy: np.ndarray) -> np.ndarray:
        """Map points, shape (..., 2) in (x, y) order."""
        xy = np.asarray(xy, dtype=np.float64)
        m = self.matrix
        return xy @ m[:, :2].T + m[:, 2]

    @property
    def degrees(self) -> float:
        return math.degrees(self.rotation)


def identity_transform() -> AffineTransform:
    return AffineTransform(0.0, 0.0, 0.0)


def compose(outer: AffineTransform, inner: AffineTransform) -> AffineTransform:
    """Transform equivalent to applying inner first, then outer."""
    c, s = math.cos(outer.rotation), math.sin(outer.rotation)
    dx = c * inner.dx - s * inner.dy + outer.dx
    dy = s * inner.dx + c * inner.dy + outer.dy
    return AffineTransform(outer.rotation + inner.rotation, dx, dy)


def invert_transform(t: AffineTransform) -> AffineTransform:
    """Exact inverse; compose(t, invert_transform(t)) is the identity."""
    c, s = math.cos(-t.rotation), math.sin(-t.rotation)
    return AffineTransform(-t.rotation, -(c * t.dx - s * t.dy), -(s * t.dx + c * t.dy))


def rotation_about(angle: float, center_xy, dx: float = 0.0, dy: float = 0.0) -> AffineTransform:
    """Rotation about an arbitrary pivot plus translation, in origin form.

    Useful for sampling camera shake about the image centre while keeping a
    single canonical parameterisation.
    """
    cx, cy = float(center_xy[0]), float(center_xy[1])
    c, s = math.cos(angle), math.sin(angle)
    tx = cx - (c * cx - s * cy) + dx
    ty = cy - (s * cx + c * cy) + dy
    return AffineTransform(angle, tx, ty)


class SparseWarp:
    """CSR resampling operator for a fixed geometry and interpolation mode."""

    def __init__(self, matrix: csr_matrix, height: int, width: int, interp: str):
        if interp not in _INTERP_TAGS:
            raise ValueError(f"unknown interpolation mode {interp!r}")
        n = height * width
        if matrix.shape != (n, n):
            raise ValueError(f"matrix shape {matrix.shape} does not match {height}x{width}")
        self.matrix = matrix
        self.height = height
        self.width = width
        self.interp = interp

    @cached_property
    def adjoint_matrix(self) -> csr_matrix:
        return self.matrix.T.tocsr()

    def oob_rows(self) -> np.ndarray:
        """Target pixel indices whose stencil left the source image."""
        return np.flatnonzero(np.diff(self.matrix.indptr) == 0)

    def __repr__(self):
        return (
            f"SparseWarp({self.height}x{self.width}, {self.interp}, "
            f"nnz={self.matrix.nnz}, oob={len(self.oob_rows())})"
        )


def _spatial_dims(dims) -> tuple:
    if len(dims) == 3:
        h, w, c = dims
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
    elif len(dims) == 2:
        h, w = dims
    else:
        raise ValueError(f"dims must be (h, w) or (h, w, c), got {dims!r}")
    if h <= 0 or w <= 0:
        raise ValueError("warp dims must be positive")
    return int(h), int(w)


def build_warp(transform: AffineTransform, dims, interp: str = "bilinear") -> SparseWarp:
    """Materialise the resampling matrix for one transform.

    Zero weights never enter the stencil, so the identity transform yields an
    exact identity matrix. A row is declared out of range as soon as any of
    its surviving taps falls outside the source, keeping weight rows that do
    exist summing to one exactly.
    """
    h, w = _spatial_dims(dims)
    if interp not in _INTERP_TAGS:
        raise ValueError(f"unknown interpolation mode {interp!r}")
    n = h * w

    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src = transform.apply(pts)
    sx, sy = src[:, 0], src[:, 1]

    if interp == "nearest":
        tx = np.floor(sx + 0.5).astype(np.int64)
        ty = np.floor(sy + 0.5).astype(np.int64)
        ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
        rows = np.flatnonzero(ok)
        cols = ty[ok] * w + tx[ok]
        vals = np.ones(len(rows), dtype=np.float64)
        mat = csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat.sort_indices()
        return SparseWarp(mat, h, w, interp)

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    tap_x = np.stack([x0, x0 + 1, x0, x0 + 1])
    tap_y = np.stack([y0, y0, y0 + 1, y0 + 1])
    tap_w = np.stack(
        [(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx]
    )

    live = tap_w > 0.0
    inside = (tap_x >= 0) & (tap_x < w) & (tap_y >= 0) & (tap_y < h)
    row_oob = np.any(live & ~inside, axis=0)
    keep = live & ~row_oob[np.newaxis, :]

    rows = np.broadcast_to(np.arange(n), (4, n))[keep]
    cols = (tap_y * w + tap_x)[keep]
    vals = tap_w[keep]
    mat = csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return SparseWarp(mat, h, w, interp)


def _apply_matrix(mat: csr_matrix, warp: SparseWarp, img):
    arr = as_array(img)
    if arr.shape[0] != warp.height or arr.shape[1] != warp.width:
        raise ValueError(
            f"image {arr.shape[:2]} does not match warp {warp.height}x{warp.width}"
        )
    c = arr.shape[2]
    flat = arr.reshape(-1, c)
    out = (mat @ flat).astype(arr.dtype, copy=False)
    out = out.reshape(arr.shape)
    if isinstance(img, Image):
        return Image(out, img.space)
    return out


def apply_warp(warp: SparseWarp, img):
    """Resample an image (or raw array) through the warp, channelwise."""
    return _apply_matrix(warp.matrix, warp, img)


def apply_warp_adjoint(warp: SparseWarp, img):
    """Apply the exact transpose of the warp matrix (scatter of the gather)."""
    return _apply_matrix(warp.adjoint_matrix, warp, img)


def save_warp(warp: SparseWarp, path) -> None:
    container.write_warp_blob(path, warp.matrix, _INTERP_TAGS[warp.interp], warp.height, warp.width)


def load_warp(path) -> SparseWarp:
    mat, tag, h, w = container.read_warp_blob(path)
    if tag not in _INTERP_BY_TAG:
        raise ValueError(f"unknown interpolation tag {tag}")
    return SparseWarp(mat, h, w, _INTERP_BY_TAG[tag])
