"""Image containers, pixel-space bookkeeping, metrics and raster I/O.

Every image in the pipeline is a float32 array of shape (height, width,
channels) in raster order with a nominal [0, 1] range. A PixelSpace tag
travels with the pixels so colour-space mixups fail loudly instead of
producing quietly wrong numbers.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import cv2
import numpy as np

from . import container

__all__ = [
    "PixelSpace",
    "Image",
    "Burst",
    "load_image",
    "save_image",
    "linrgb_to_srgb",
    "srgb_to_linrgb",
    "psnr",
    "center_crop",
    "as_array",
]


class PixelSpace(enum.IntEnum):
    """Declared interpretation of stored intensities.

    LINEAR_RGB        scene-linear RGB
    SRGB              display-encoded RGB
    MOSAICKED_LINEAR  linear RGB with only one sample per pixel site kept,
                      the other two channels exactly zero
    """

    LINEAR_RGB = 0
    SRGB = 1
    MOSAICKED_LINEAR = 2


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable dense intensity grid plus its declared pixel space.

    The constructor always copies and freezes the buffer, coerces to float32
    and rejects non-finite values. 2-d input is treated as single channel.
    """

    data: np.ndarray
    space: PixelSpace

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, order="C")
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"image data must be (h, w, c), got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("empty image")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {arr.shape[2]}")
        space = PixelSpace(self.space)
        if space is PixelSpace.MOSAICKED_LINEAR and arr.shape[2] != 3:
            raise ValueError("mosaicked images must carry 3 channels")
        if not np.isfinite(arr).all():
            raise ValueError("image contains NaN or Inf samples")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "space", space)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, space: "PixelSpace | None" = None) -> "Image":
        return Image(data, self.space if space is None else space)

    def __repr__(self):
        return f"Image({self.height}x{self.width}x{self.channels}, {self.space.name})"


@dataclass(frozen=True, eq=False)
class Burst:
    """An ordered set of frames observing the same scene.

    All frames must share dimensions and pixel space; reference_index points
    at the frame whose geometry the restoration is anchored to.
    """

    frames: tuple
    reference_index: int

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("burst needs at least one frame")
        f0 = frames[0]
        for f in frames:
            if not isinstance(f, Image):
                raise TypeError("burst frames must be Image instances")
            if (f.height, f.width, f.channels) != (f0.height, f0.width, f0.channels):
                raise ValueError("burst frames must share dimensions")
            if f.space is not f0.space:
                raise ValueError("burst frames must share pixel space")
        if not 0 <= self.reference_index < len(frames):
            raise ValueError(
                f"reference_index {self.reference_index} out of range for {len(frames)} frames"
            )
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    @property
    def reference(self) -> Image:
        return self.frames[self.reference_index]


def as_array(img: Union[Image, np.ndarray]) -> np.ndarray:
    """Unwrap an Image to its array, pass ndarrays through (h, w, c)."""
    if isinstance(img, Image):
        return img.data
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return arr


# -- colour transfer ---------------------------------------------------------

_SRGB_KNEE = 0.0031308


def linrgb_to_srgb(img: Image) -> Image:
    """Apply the standard sRGB opto-electronic transfer function.

    Below the knee the curve is linear (12.92 v), above it follows
    1.055 v^(1/2.4) - 0.055. The two branches agree at the knee to well
    under 1e-6 so the output is continuous.
    """
    if img.space is not PixelSpace.LINEAR_RGB:
        raise ValueError(f"expected LINEAR_RGB input, got {img.space.name}")
    v = img.data.astype(np.float64)
    lo = 12.92 * v
    hi = 1.055 * np.power(np.maximum(v, _SRGB_KNEE), 1.0 / 2.4) - 0.055
    out = np.where(v <= _SRGB_KNEE, lo, hi)
    return Image(out.astype(np.float32), PixelSpace.SRGB)


def srgb_to_linrgb(img: Image) -> Image:
    """Inverse of linrgb_to_srgb."""
    if img.space is not PixelSpace.SRGB:
        raise ValueError(f"expected SRGB input, got {img.space.name}")
    v = img.data.astype(np.float64)
    knee = 12.92 * _SRGB_KNEE
    lo = v / 12.92
    hi = np.power((np.maximum(v, knee) + 0.055) / 1.055, 2.4)
    out = np.where(v <= knee, lo, hi)
    return Image(out.astype(np.float32), PixelSpace.LINEAR_RGB)


# -- metrics -----------------------------------------------------------------

def psnr(a: Union[Image, np.ndarray], b: Union[Image, np.ndarray], peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, computed in float64.

    Identical inputs give math.inf. Mismatched shapes are an error, not a
    silent broadcast.
    """
    xa = as_array(a).astype(np.float64)
    xb = as_array(b).astype(np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {xb.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((xa - xb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def center_crop(img: Image, height: int, width: int) -> Image:
    """Centered crop with floor'd offsets for odd margins."""
    if height <= 0 or width <= 0:
        raise ValueError("crop size must be positive")
    if height > img.height or width > img.width:
        raise ValueError(
            f"crop {height}x{width} exceeds image {img.height}x{img.width}"
        )
    oy = (img.height - height) // 2
    ox = (img.width - width) // 2
    return Image(img.data[oy : oy + height, ox : ox + width], img.space)


# -- file I/O ----------------------------------------------------------------

def load_image(path, space: "PixelSpace | None" = None) -> Image:
    """Load a PNG (8 or 16 bit) or native .brt raster.

    PNG carries no pixel-space metadata, so the caller must declare one.
    The native format stores its own tag; passing a conflicting space is an
    error rather than a silent reinterpretation.
    """
    path = Path(path)
    if path.suffix == ".brt":
        arr, tag = container.read_image_blob(path)
        stored = PixelSpace(tag)
        if space is not None and PixelSpace(space) is not stored:
            raise ValueError(
                f"file declares {stored.name} but caller asked for {PixelSpace(space).name}"
            )
        return Image(arr, stored)

    if space is None:
        raise ValueError("pixel space must be given when loading non-native rasters")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image file {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 3:
        if raw.shape[2] == 3:
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        else:
            raise ValueError(f"unsupported channel count {raw.shape[2]} in {path}")
    arr = raw.astype(np.float32) / scale
    return Image(arr, space)


def save_image(img: Image, path, bit_depth: int = 16) -> None:
    """Write a .brt (exact) or PNG (quantised, values clipped to [0, 1])."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".brt":
        container.write_image_blob(path, img.data, int(img.space))
        return
    if path.suffix != ".png":
        raise ValueError(f"unsupported output format {path.suffix!r}")
    if bit_depth == 8:
        peak, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        peak, dtype = 65535.0, np.uint16
    else:
        raise ValueError("bit_depth must be 8 or 16")
    q = np.round(np.clip(img.data, 0.0, 1.0) * peak).astype(dtype)
    if q.shape[2] == 1:
        q = q[:, :, 0]
    else:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), q):
        raise IOError(f"failed to write {path}")
