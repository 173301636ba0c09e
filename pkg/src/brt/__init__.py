"""Burst restoration toolkit: forward-model burst fusion with a learned prox."""

from .image import Burst, Image, PixelSpace, center_crop, linrgb_to_srgb, load_image, psnr, save_image
from .warps import AffineTransform, SparseWarp, apply_warp, apply_warp_adjoint, build_warp, invert_transform

__version__ = "0.1.0"
