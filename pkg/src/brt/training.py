"""Synthetic burst generation and truncated-backprop training.

Bursts are synthesised by warping a clean image with small rigid motions
(the last frame is the untouched reference), centre-cropping so every frame
keeps real content, then degrading. Training unrolls the solver for K
iterations and backpropagates through truncated chunks of k: after each
chunk the running iterates are detached, the chunk loss gradient is pushed
back through exactly those k iterations, and the optimizer steps. The
network weights, PReLU slopes, the continuation parameters s and the
extrapolation weights w all train jointly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import proxnet
from .cfa import CfaOp, DegradationOp, IdentityOp
from .fidelity import accumulate_gradient, normal_apply
from .image import Burst, Image, PixelSpace, as_array, center_crop, psnr
from .solver import NetworkProx, SolverConfig, init_continuation, initialize_estimate, run
from .warps import AffineTransform, apply_warp, build_warp, rotation_about

__all__ = [
    "GaussianNoise",
    "HeteroskedasticNoise",
    "SyntheticBurstSpec",
    "TrainConfig",
    "TrainSample",
    "TrainState",
    "AmsGrad",
    "op_for_task",
    "required_margin",
    "sample_transform",
    "synthesize_burst",
    "add_noise",
    "l1_loss",
    "optimizer_step",
    "run_chunk",
    "backprop_chunk",
    "tbptt_train",
]


# -- noise models --------------------------------------------------------------

@dataclass(frozen=True)
class GaussianNoise:
    """i.i.d. additive Gaussian noise. Samples are never clipped, so the
    observation model stays exactly y = Hx + n."""

    sigma: float

    def __post_init__(self):
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must be in (0, 1]")

    def apply(self, clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return clean + rng.normal(0.0, self.sigma, clean.shape).astype(clean.dtype)

    @property
    def prox_sigma(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class HeteroskedasticNoise:
    """Signal-dependent Gaussian noise with variance alpha * x + beta^2.

    The prox has no per-pixel noise-level input, so the signal-independent
    floor beta stands in for sigma there.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("noise model is degenerate with alpha = beta = 0")

    def apply(self, clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        var = self.alpha * np.maximum(clean, 0.0) + self.beta * self.beta
        n = rng.standard_normal(clean.shape) * np.sqrt(var)
        return clean + n.astype(clean.dtype)

    @property
    def prox_sigma(self) -> float:
        return self.beta if self.beta > 0 else math.sqrt(self.alpha)


def add_noise(img: Image, noise, rng: np.random.Generator) -> Image:
    """Degrade an image with the given noise model, preserving its space.

    Mosaicked input keeps its zeros: noise is masked to the sampled sites so
    the unsampled entries remain exactly zero.
    """
    noisy = noise.apply(img.data, rng)
    if img.space is PixelSpace.MOSAICKED_LINEAR:
        mask = CfaOp().mask(img.height, img.width)
        noisy = np.where(mask, noisy, img.data)
    return Image(noisy, img.space)


# -- burst synthesis -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticBurstSpec:
    burst_size: int = 8
    crop: int = 128
    max_rotation_deg: float = 2.0
    max_translation: float = 10.0
    task: str = "demosaick"
    flips: bool = True
    color_jitter: bool = True
    interp: str = "bilinear"

    def __post_init__(self):
        if self.burst_size < 1:
            raise ValueError("burst_size must be at least 1")
        if self.crop < 8:
            raise ValueError("crop must be at least 8 px")
        if self.max_rotation_deg < 0 or self.max_translation < 0:
            raise ValueError("motion bounds must be non-negative")
        if self.task not in ("demosaick", "denoise"):
            raise ValueError(f"unknown task {self.task!r}")


def op_for_task(task: str) -> DegradationOp:
    if task == "demosaick":
        return CfaOp()
    if task == "denoise":
        return IdentityOp()
    raise ValueError(f"unknown task {task!r}")


def required_margin(spec: SyntheticBurstSpec) -> int:
    """Border needed around the crop so every warped frame keeps content:
    worst-case translation plus rotation sweep at the crop corner plus one
    pixel of bilinear support."""
    theta = math.radians(spec.max_rotation_deg)
    corner = math.sqrt(2.0) * spec.crop / 2.0
    sweep = 2.0 * corner * math.sin(theta / 2.0)
    return int(math.ceil(spec.max_translation + sweep + 1.0))


def sample_transform(spec: SyntheticBurstSpec, center_xy, rng: np.random.Generator) -> AffineTransform:
    """Rigid motion with rotation about the image centre, in origin form.

    Angles are uniform in +-max_rotation_deg, translations uniform in
    +-max_translation per axis.
    """
    theta = math.radians(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
    dx = rng.uniform(-spec.max_translation, spec.max_translation)
    dy = rng.uniform(-spec.max_translation, spec.max_translation)
    return rotation_about(theta, center_xy, dx, dy)


def _to_crop_coords(t: AffineTransform, offset_xy) -> AffineTransform:
    """Re-express a full-image gather transform in crop coordinates.

    For integer crop offsets the bilinear stencil of the re-expressed
    transform matches the full-image stencil exactly, so oracle warps built
    at crop size reproduce the synthesised frames wherever the stencil stays
    inside the crop.
    """
    o = np.asarray(offset_xy, dtype=np.float64)
    m = t.matrix
    shifted = m[:, :2] @ o + m[:, 2] - o
    return AffineTransform(t.rotation, float(shifted[0]), float(shifted[1]))


def synthesize_burst(gt: Image, spec: SyntheticBurstSpec, noise, rng: np.random.Generator):
    """Make one degraded burst from a clean image.

    Returns (burst, transforms, gt_crop) where transforms are the gather
    motions in crop coordinates (identity for the reference, which is the
    last frame) and gt_crop is the clean target aligned with the reference.
    """
    margin = required_margin(spec)
    need = spec.crop + 2 * margin
    if gt.height < need or gt.width < need:
        raise ValueError(
            f"clean image {gt.height}x{gt.width} too small: need at least "
            f"{need}x{need} for crop {spec.crop} with margin {margin}"
        )
    if gt.space is not PixelSpace.LINEAR_RGB or gt.channels != 3:
        raise ValueError("burst synthesis expects a 3-channel LINEAR_RGB image")

    arr = gt.data
    if spec.flips:
        if rng.random() < 0.5:
            arr = arr[:, ::-1]
        if rng.random() < 0.5:
            arr = arr[::-1]
    if spec.color_jitter:
        gains = rng.uniform(0.8, 1.2, size=3).astype(np.float32)
        arr = np.clip(arr * gains, 0.0, 1.0)
    clean = Image(np.ascontiguousarray(arr), PixelSpace.LINEAR_RGB)

    gh, gw = clean.height, clean.width
    center = ((gw - 1) / 2.0, (gh - 1) / 2.0)
    ox = (gw - spec.crop) // 2
    oy = (gh - spec.crop) // 2

    op = op_for_task(spec.task)
    frames = []
    transforms = []
    for i in range(spec.burst_size):
        if i == spec.burst_size - 1:
            t_full = AffineTransform()
            frame = clean
        else:
            t_full = sample_transform(spec, center, rng)
            frame = apply_warp(build_warp(t_full, (gh, gw), spec.interp), clean)
        frame = center_crop(frame, spec.crop, spec.crop)
        if spec.task == "demosaick":
            frame = Image(op.apply(frame.data), PixelSpace.MOSAICKED_LINEAR)
        frame = add_noise(frame, noise, rng)
        frames.append(frame)
        transforms.append(_to_crop_coords(t_full, (ox, oy)))

    gt_crop = center_crop(clean, spec.crop, spec.crop)
    burst = Burst(tuple(frames), spec.burst_size - 1)
    return burst, transforms, gt_crop


# -- loss and optimizer ----------------------------------------------------------

def l1_loss(x: np.ndarray, target: np.ndarray):
    """Mean absolute error and its subgradient (sign / N)."""
    x = as_array(x)
    target = as_array(target)
    if x.shape != target.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {target.shape}")
    d = x - target
    n = d.size
    return float(np.abs(d).mean()), np.sign(d) / np.asarray(n, dtype=d.dtype)


class AmsGrad:
    """AMSGRAD with bias correction.

    Keeps the elementwise maximum of the second-moment estimate, so the
    effective step size never grows; with the bias correction a constant
    gradient drives steps toward +-lr.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}
        self.vhat = {}

    def step(self, tensors: "dict[str, np.ndarray]", grads: "dict[str, np.ndarray]") -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, x in tensors.items():
            g = np.asarray(grads[name], dtype=np.float32)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
                self.vhat[name] = np.zeros_like(g)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            vh = self.vhat[name] = np.maximum(self.vhat[name], v)
            step = self.lr * (m / c1) / (np.sqrt(vh / c2) + self.eps)
            tensors[name] = (x - step).astype(np.float32)

    def state_tensors(self) -> "dict[str, np.ndarray]":
        out = {"t": np.asarray([self.t], dtype=np.int64)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
            out[f"vhat.{name}"] = self.vhat[name]
        return out

    def load_state(self, state: "dict[str, np.ndarray]") -> None:
        self.t = int(state["t"][0])
        self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v.")}
        self.vhat = {k[5:]: v.copy() for k, v in state.items() if k.startswith("vhat.")}


def optimizer_step(optimizer: AmsGrad, tensors, grads) -> None:
    """Single parameter update; exists mostly so tests can drive the
    optimizer without a training loop."""
    optimizer.step(tensors, grads)


# -- unrolled chunk forward/backward ---------------------------------------------

def run_chunk(net: proxnet.ProxNetParams, s, w, start_t: int, length: int,
              x_prev, x_cur, frames, warps, op, sigma: float, scale: float):
    """Run `length` solver iterations with a tape for backprop.

    start_t indexes into the global schedule (0-based). Returns
    (x_prev_out, x_cur_out, tape).
    """
    tape = []
    x_p, x_c = x_prev, x_cur
    for j in range(length):
        t = start_t + j
        w_t = float(w[t])
        u = x_c + w_t * (x_c - x_p)
        z = accumulate_gradient(u, frames, warps, op)
        v = x_c - scale * z
        out, cache = proxnet.forward_with_cache(net, v, sigma, float(s[t]))
        tape.append({"t": t, "x_p": x_p, "x_c": x_c, "cache": cache})
        x_p, x_c = x_c, out
    return x_p, x_c, tape


def backprop_chunk(net: proxnet.ProxNetParams, s, w, tape, g_final,
                   warps, op, scale: float):
    """Exact reverse pass through one recorded chunk.

    g_final is dL/d(chunk output). Returns a gradient dict covering the
    network tensors plus "s" and "w" (full-length arrays, zero outside the
    chunk). Gradients at the chunk input iterates are discarded: that is
    the truncation.
    """
    grads = {k: np.zeros_like(v) for k, v in net.tensors.items()}
    g_s = np.zeros(len(s), dtype=np.float32)
    g_w = np.zeros(len(w), dtype=np.float32)

    ga = g_final  # dL / d x^{tau+1}
    gb = np.zeros_like(g_final)  # dL / d x^{tau}
    for rec in reversed(tape):
        t = rec["t"]
        w_t = float(w[t])
        net_grads, g_v, d_s = proxnet.backward(net, rec["cache"], ga)
        for k, v in net_grads.items():
            grads[k] += v
        g_s[t] += d_s

        mg = normal_apply(g_v, warps, op)
        diff = rec["x_c"] - rec["x_p"]
        g_w[t] += -scale * float(np.vdot(mg, diff).real)
        # v = x_c - scale * (M u - q), u = (1 + w_t) x_c - w_t x_p
        ga_new = gb + g_v - scale * (1.0 + w_t) * mg
        gb_new = scale * w_t * mg
        ga, gb = ga_new, gb_new

    grads["s"] = g_s
    grads["w"] = g_w
    return grads


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainConfig:
    iterations: int = 10
    chunk: int = 5
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lr_decay_epochs: int = 100
    s_max: float = 0.7
    s_min: float = 0.05
    seed: int = 0
    interp: str = "bilinear"

    def __post_init__(self):
        if self.iterations < 1 or self.chunk < 1:
            raise ValueError("iterations and chunk must be positive")
        if self.iterations % self.chunk != 0:
            raise ValueError("chunk length must divide the iteration count")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class TrainSample:
    burst: Burst
    transforms: list
    gt: Image
    sigma: float


@dataclass
class TrainState:
    net: proxnet.ProxNetParams
    s: np.ndarray
    w: np.ndarray
    optimizer: AmsGrad
    epoch: int = 0
    history: list = field(default_factory=list)


def _sample_warps(sample: TrainSample, interp: str):
    dims = (sample.gt.height, sample.gt.width)
    return [build_warp(t, dims, interp) for t in sample.transforms]


def _validate(state: TrainState, val_samples, op: DegradationOp, interp: str) -> float:
    scores = []
    prox = NetworkProx(state.net)
    for sample in val_samples:
        cfg = SolverConfig(len(state.s), sample.sigma, state.s, state.w, prox)
        out, _ = run(sample.burst, _sample_warps(sample, interp), op, cfg)
        scores.append(psnr(out, sample.gt))
    return float(np.mean(scores)) if scores else float("nan")


def tbptt_train(samples, net_cfg: proxnet.NetConfig, cfg: TrainConfig,
                val_samples=(), op: "DegradationOp | None" = None,
                state: "TrainState | None" = None, on_epoch=None) -> TrainState:
    """Train the prox network (plus s and w) on synthesised bursts.

    Samples carry oracle transforms; warps are rebuilt per use so nothing
    scales with epoch count but time. Shuffling draws from a per-epoch
    seeded stream, which keeps runs reproducible and lets a resumed run
    replay the exact schedule of an uninterrupted one.

    op defaults to identity degradation (denoising); pass CfaOp for
    mosaicked bursts.
    """
    if not samples:
        raise ValueError("no training samples")
    if op is None:
        op = IdentityOp()

    if state is None:
        init_rng = np.random.default_rng([cfg.seed, 0])
        s, w = init_continuation(cfg.iterations, cfg.s_max, cfg.s_min)
        state = TrainState(
            net=proxnet.init_params(net_cfg, init_rng),
            s=s, w=w,
            optimizer=AmsGrad(cfg.lr, cfg.beta1, cfg.beta2),
        )

    n_chunks = cfg.iterations // cfg.chunk
    for epoch in range(state.epoch, cfg.epochs):
        state.optimizer.lr = cfg.lr / (10.0 ** (epoch // cfg.lr_decay_epochs))
        order = np.random.default_rng([cfg.seed, 1000 + epoch]).permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            batch_warps = [_sample_warps(smp, cfg.interp) for smp in batch]
            # iterate states persist across chunks, gradients do not
            states = []
            for smp, bw in zip(batch, batch_warps):
                frames = [f.data for f in smp.burst.frames]
                x0 = np.zeros_like(frames[0])
                x1 = initialize_estimate(smp.burst, op)
                states.append([x0, x1, frames, bw])
            for ci in range(n_chunks):
                acc = None
                for si, smp in enumerate(batch):
                    x_p, x_c, frames, bw = states[si]
                    scale = 1.0 / len(frames)
                    x_p2, x_c2, tape = run_chunk(
                        state.net, state.s, state.w, ci * cfg.chunk, cfg.chunk,
                        x_p, x_c, frames, bw, op, smp.sigma, scale)
                    loss, g = l1_loss(x_c2, smp.gt.data)
                    epoch_losses.append(loss)
                    grads = backprop_chunk(state.net, state.s, state.w, tape, g, bw, op, scale)
                    states[si][0], states[si][1] = x_p2, x_c2
                    if acc is None:
                        acc = grads
                    else:
                        for k in acc:
                            acc[k] += grads[k]
                for k in acc:
                    acc[k] /= len(batch)
                tensors = dict(state.net.tensors)
                tensors["s"] = state.s
                tensors["w"] = state.w
                state.optimizer.step(tensors, acc)
                state.s = tensors.pop("s")
                state.w = tensors.pop("w")
                state.net = proxnet.ProxNetParams(net_cfg, tensors)
        state.epoch = epoch + 1
        record = {
            "epoch": epoch + 1,
            "loss": float(np.mean(epoch_losses)),
            "lr": state.optimizer.lr,
            "val_psnr": _validate(state, val_samples, op, cfg.interp),
        }
        state.history.append(record)
        if on_epoch is not None:
            on_epoch(state, record)
    return state
