"""Residual denoising network used as the learned proximal map.

Layout: a 5x5 conv lifts the image into feature space, D residual blocks
(3x3 conv, PReLU, 3x3 conv, PReLU, skip connection) refine it, and a 5x5
conv projects back to a 3-channel residual. The residual is then clipped to
an l2 ball of radius theta_hat = exp(s_t) * sigma * sqrt(N - 1) before being
subtracted from the input, which ties the denoising strength to the noise
level and leaves s_t as a learnable overshoot in log space.

All convolutions use symmetric (reflect-with-repeated-edge) padding so
feature maps keep their spatial size. Forward and backward are written
against the kernel backend directly; backward is exact, including both
branches of the projection and the PReLU slopes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import container
from .image import Image, as_array

__all__ = [
    "NetConfig",
    "ProxNetParams",
    "init_params",
    "param_shapes",
    "pad_symmetric",
    "pad_symmetric_adjoint",
    "project_l2",
    "forward",
    "forward_with_cache",
    "backward",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1

KERNEL_IN = 5
KERNEL_BLOCK = 3
KERNEL_OUT = 5


@dataclass(frozen=True)
class NetConfig:
    """Architecture knobs. Kernel sizes are part of the format and fixed."""

    depth: int = 5
    filters: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.filters < 1:
            raise ValueError("filters must be at least 1")


def param_shapes(cfg: NetConfig) -> "dict[str, tuple]":
    f = cfg.filters
    shapes = {"w_in": (f, 3, KERNEL_IN, KERNEL_IN), "b_in": (f,)}
    for d in range(cfg.depth):
        shapes[f"block{d}.w1"] = (f, f, KERNEL_BLOCK, KERNEL_BLOCK)
        shapes[f"block{d}.b1"] = (f,)
        shapes[f"block{d}.alpha1"] = ()
        shapes[f"block{d}.w2"] = (f, f, KERNEL_BLOCK, KERNEL_BLOCK)
        shapes[f"block{d}.b2"] = (f,)
        shapes[f"block{d}.alpha2"] = ()
    shapes["w_out"] = (3, f, KERNEL_OUT, KERNEL_OUT)
    shapes["b_out"] = (3,)
    return shapes


@dataclass
class ProxNetParams:
    cfg: NetConfig
    tensors: "dict[str, np.ndarray]" = field(repr=False)

    def __post_init__(self):
        expected = param_shapes(self.cfg)
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ValueError(f"parameter name mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ValueError(
                    f"{name}: expected shape {shape}, got {self.tensors[name].shape}"
                )

    def astype(self, dtype) -> "ProxNetParams":
        return ProxNetParams(self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ProxNetParams":
        return ProxNetParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})


def init_params(cfg: NetConfig, rng: np.random.Generator) -> ProxNetParams:
    """Fan-in scaled uniform init for convs, 0.25 for the PReLU slopes."""
    shapes = param_shapes(cfg)
    tensors = {}
    for name, shape in shapes.items():
        head, _, leaf = name.rpartition(".")
        if leaf.startswith("alpha"):
            tensors[name] = np.asarray(0.25, dtype=np.float32)
            continue
        if leaf.startswith("b"):
            # biases share the bound of the conv they belong to
            wname = (head + "." if head else "") + "w" + leaf[1:]
            shape_w = shapes[wname]
        else:
            shape_w = shape
        bound = 1.0 / np.sqrt(shape_w[1] * shape_w[2] * shape_w[3])
        tensors[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
    return ProxNetParams(cfg, tensors)


# -- padding ------------------------------------------------------------------

def pad_symmetric(x: np.ndarray, p: int) -> np.ndarray:
    """Symmetric edge padding of a (C, H, W) tensor."""
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)), mode="symmetric")


def pad_symmetric_adjoint(gp: np.ndarray, p: int) -> np.ndarray:
    """Exact transpose of pad_symmetric: folds mirrored borders back in.

    numpy's symmetric mode mirrors whole edge blocks, so the fold is pure
    slicing. Requires p <= core size, which every conv here satisfies.
    """
    if p == 0:
        return gp

    def fold(g, axis):
        n = g.shape[axis] - 2 * p
        if p > n:
            raise ValueError("padding wider than the unpadded extent")
        idx = lambda a, b: tuple(
            slice(a, b) if ax == axis else slice(None) for ax in range(g.ndim)
        )
        core = g[idx(p, p + n)].copy()
        core[idx(0, p)] += np.flip(g[idx(0, p)], axis=axis)
        core[idx(n - p, n)] += np.flip(g[idx(p + n, p + n + p)], axis=axis)
        return core

    return fold(fold(gp, 1), 2)


# -- layers -------------------------------------------------------------------

def _conv_fwd(x, w, b):
    p = w.shape[2] // 2
    xp = pad_symmetric(x, p)
    y = K.correlate_valid(xp, w) + b[:, None, None]
    return y, xp


def _conv_bwd(xp, w, gy):
    p = w.shape[2] // 2
    gw = K.grad_weights(xp, gy)
    gb = gy.sum(axis=(1, 2))
    gx = pad_symmetric_adjoint(K.grad_input(gy, w), p)
    return gx, gw, gb


def _prelu_fwd(x, alpha):
    return np.where(x > 0, x, alpha * x)


def _prelu_bwd(x, alpha, gy):
    gx = np.where(x > 0, gy, alpha * gy)
    galpha = np.sum(gy * np.where(x > 0, np.zeros((), dtype=x.dtype), x))
    return gx, galpha


def project_l2(r: np.ndarray, theta_hat: float):
    """Scale r onto the l2 ball of radius theta_hat (identity when inside).

    Returns (projected, norm) so backward can reuse the norm.
    """
    nr = float(np.linalg.norm(r.ravel()))
    if nr <= theta_hat:
        return r, nr
    return r * (theta_hat / nr), nr


# -- network ------------------------------------------------------------------

def _to_chw(img) -> np.ndarray:
    arr = as_array(img)
    if arr.shape[2] != 3:
        raise ValueError("denoiser expects 3-channel input")
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def forward_with_cache(params: ProxNetParams, noisy, sigma: float, s_t: float):
    """Run the denoiser, returning (output HWC array, cache for backward)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = params.tensors
    x = _to_chw(noisy)
    cache = {"x": x, "convs": [], "blocks": []}

    h, xp = _conv_fwd(x, t["w_in"], t["b_in"])
    cache["convs"].append(xp)
    for d in range(params.cfg.depth):
        inp = h
        c1, xp1 = _conv_fwd(inp, t[f"block{d}.w1"], t[f"block{d}.b1"])
        a1 = _prelu_fwd(c1, t[f"block{d}.alpha1"])
        c2, xp2 = _conv_fwd(a1, t[f"block{d}.w2"], t[f"block{d}.b2"])
        a2 = _prelu_fwd(c2, t[f"block{d}.alpha2"])
        h = a2 + inp
        cache["blocks"].append((xp1, c1, xp2, c2))
    r, xpo = _conv_fwd(h, t["w_out"], t["b_out"])
    cache["convs"].append(xpo)

    n = x.size
    theta_hat = float(np.exp(s_t) * sigma * np.sqrt(n - 1))
    rp, nr = project_l2(r, theta_hat)
    out = x - rp

    cache.update(r=r, nr=nr, theta_hat=theta_hat, sigma=sigma, s_t=s_t)
    return np.ascontiguousarray(out.transpose(1, 2, 0)), cache


def forward(params: ProxNetParams, noisy, sigma: float, s_t: float):
    """Denoise one image. Image in gives Image out, array in gives array out."""
    out, _ = forward_with_cache(params, noisy, sigma, s_t)
    if isinstance(noisy, Image):
        return Image(out, noisy.space)
    return out


def backward(params: ProxNetParams, cache: dict, upstream):
    """Exact gradients for one forward pass.

    upstream is dL/d(output) in HWC layout. Returns (grads, d_input, d_s)
    where grads maps every parameter name to its gradient, d_input is
    dL/d(noisy input) in HWC, and d_s is the scalar gradient for s_t.
    """
    if cache is None or "r" not in cache:
        raise ValueError("backward needs the cache produced by forward_with_cache")
    t = params.tensors
    g_out = np.ascontiguousarray(as_array(upstream).transpose(2, 0, 1))

    r, nr, theta_hat = cache["r"], cache["nr"], cache["theta_hat"]
    g_rp = -g_out
    if nr <= theta_hat:
        g_r = g_rp
        d_s = 0.0
    else:
        dot = float(np.vdot(r, g_rp).real)
        g_r = (theta_hat / nr) * (g_rp - r * (dot / (nr * nr)))
        # d theta_hat / d s = theta_hat, and d rp / d theta = r / nr
        d_s = (dot / nr) * theta_hat

    grads = {}
    gx, grads["w_out"], grads["b_out"] = _conv_bwd(cache["convs"][1], t["w_out"], g_r)
    for d in reversed(range(params.cfg.depth)):
        xp1, c1, xp2, c2 = cache["blocks"][d]
        g_inp_skip = gx
        ga2, grads[f"block{d}.alpha2"] = _prelu_bwd(c2, t[f"block{d}.alpha2"], gx)
        ga1, grads[f"block{d}.w2"], grads[f"block{d}.b2"] = _conv_bwd(xp2, t[f"block{d}.w2"], ga2)
        gc1, grads[f"block{d}.alpha1"] = _prelu_bwd(c1, t[f"block{d}.alpha1"], ga1)
        gx, grads[f"block{d}.w1"], grads[f"block{d}.b1"] = _conv_bwd(xp1, t[f"block{d}.w1"], gc1)
        gx = gx + g_inp_skip
    gx, grads["w_in"], grads["b_in"] = _conv_bwd(cache["convs"][0], t["w_in"], gx)

    d_input = g_out + gx
    return grads, np.ascontiguousarray(d_input.transpose(1, 2, 0)), float(d_s)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: ProxNetParams, s: np.ndarray, w: np.ndarray, extra: "dict | None" = None,
                    state_tensors: "dict[str, np.ndarray] | None" = None) -> None:
    """Single-file checkpoint: named tensors plus an embedded JSON manifest.

    s and w are the per-iteration solver parameters trained alongside the
    network. state_tensors lets the trainer stash optimizer state for
    exact resume; inference loading ignores it.
    """
    s = np.asarray(s, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if s.shape != w.shape or s.ndim != 1:
        raise ValueError("s and w must be 1-d arrays of equal length")
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net": {"depth": params.cfg.depth, "filters": params.cfg.filters,
                "kernels": [KERNEL_IN, KERNEL_BLOCK, KERNEL_OUT]},
        "iterations": int(len(s)),
        "s": [float(v) for v in s],
        "w": [float(v) for v in w],
    }
    if extra:
        manifest["extra"] = extra
    tensors = {"s": s, "w": w}
    tensors.update({f"net.{k}": v for k, v in params.tensors.items()})
    if state_tensors:
        tensors.update({f"opt.{k}": v for k, v in state_tensors.items()})
    blob = np.frombuffer(json.dumps(manifest).encode("utf-8"), dtype=np.uint8)
    tensors["__manifest__"] = blob
    container.write_named_tensors(path, tensors)


def load_checkpoint(path):
    """Returns (params, s, w, manifest, state_tensors)."""
    tensors = container.read_named_tensors(path)
    if "__manifest__" not in tensors:
        raise ValueError(f"{path}: checkpoint has no manifest")
    manifest = json.loads(tensors.pop("__manifest__").tobytes().decode("utf-8"))
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    cfg = NetConfig(depth=manifest["net"]["depth"], filters=manifest["net"]["filters"])
    s = tensors.pop("s")
    w = tensors.pop("w")
    net = {k[4:]: v for k, v in tensors.items() if k.startswith("net.")}
    state = {k[4:]: v for k, v in tensors.items() if k.startswith("opt.")}
    return ProxNetParams(cfg, net), s, w, manifest, state
