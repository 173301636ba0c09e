"""Unrolled solver: schedules, proxes, accumulation order, end-to-end runs."""
import math

import numpy as np
import pytest

from brt.cfa import CfaOp, IdentityOp, apply_degradation
from brt.image import Burst, Image, PixelSpace
from brt.solver import (
    DEFAULT_S_MAX,
    DEFAULT_S_MIN,
    IdentityProx,
    IterationTrace,
    NetworkProx,
    SoftThresholdProx,
    SolverConfig,
    canonical_frame_order,
    init_continuation,
    initialize_estimate,
    run,
    run_with_alignment,
)
from brt.warps import AffineTransform, apply_warp, build_warp

from conftest import make_burst, smooth_texture


def img(arr, space=PixelSpace.LINEAR_RGB):
    return Image(np.asarray(arr, dtype=np.float32), space)


def consistent_burst(n, dims=(64, 64), seed=2, ref_identity=False):
    """Frames generated by the forward model itself: y_i = S_i x, noise-free.

    The fidelity minimum is exactly zero, which makes descent assertions
    meaningful. Returns (burst, warps, x_true).
    """
    rng = np.random.default_rng(seed)
    x_true = img(smooth_texture(dims[0], dims[1], seed=seed))
    frames, warps = [], []
    for i in range(n):
        if ref_identity and i == n - 1:
            t = AffineTransform()
        else:
            t = AffineTransform(
                math.radians(rng.uniform(-1, 1)), *rng.uniform(-3, 3, 2)
            )
        w = build_warp(t, dims)
        frames.append(apply_warp(w, x_true))
        warps.append(w)
    return make_burst(frames), warps, x_true


class TestContinuation:
    def test_s_schedule_is_log_spaced(self):
        s, _ = init_continuation(10)
        assert s.dtype == np.float32
        assert s[0] == pytest.approx(DEFAULT_S_MAX, rel=1e-6)
        assert s[-1] == pytest.approx(DEFAULT_S_MIN, rel=1e-6)
        # independent oracle: s_k = s_max * (s_min / s_max)^(k / (K-1))
        for k in range(10):
            want = 0.7 * math.exp(math.log(0.05 / 0.7) * k / 9.0)
            assert s[k] == pytest.approx(want, rel=1e-5)
        assert np.all(np.diff(s) < 0)

    def test_w_schedule_matches_closed_form(self):
        _, w = init_continuation(10)
        want = [(t - 1.0) / (t + 2.0) for t in range(1, 11)]
        np.testing.assert_allclose(w, want, rtol=1e-6)
        assert w[0] == 0.0

    def test_single_iteration(self):
        s, w = init_continuation(1)
        assert s.tolist() == [pytest.approx(0.7)]
        assert w.tolist() == [0.0]

    def test_custom_endpoints(self):
        s, _ = init_continuation(4, s_max=1.0, s_min=0.125)
        np.testing.assert_allclose(s, [1.0, 0.5, 0.25, 0.125], rtol=1e-6)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            init_continuation(0)
        with pytest.raises(ValueError):
            init_continuation(5, s_max=0.1, s_min=0.2)
        with pytest.raises(ValueError):
            init_continuation(5, s_max=0.1, s_min=0.0)


class TestProxes:
    def test_soft_threshold_values(self):
        p = SoftThresholdProx(0.1)
        v = np.array([-0.3, -0.05, 0.0, 0.02, 0.7], dtype=np.float32)
        out = p.apply(v, sigma=1.0, s_t=0.0)
        np.testing.assert_allclose(out, [-0.2, 0.0, 0.0, 0.0, 0.6], atol=1e-7)
        assert out.dtype == np.float32

    def test_soft_threshold_zero_is_identity(self):
        p = SoftThresholdProx(0.0)
        v = np.array([-1.0, 0.5], dtype=np.float32)
        np.testing.assert_array_equal(p.apply(v, 1.0, 0.0), v)

    def test_soft_threshold_rejects_negative(self):
        with pytest.raises(ValueError):
            SoftThresholdProx(-0.1)

    def test_identity_prox_passthrough(self):
        v = np.ones((2, 2, 3), dtype=np.float32)
        assert IdentityProx().apply(v, 1.0, 0.0) is v

    def test_network_prox_shape_and_bound(self):
        from brt.proxnet import NetConfig, init_params

        params = init_params(NetConfig(depth=1, filters=4), np.random.default_rng(0))
        prox = NetworkProx(params)
        v = np.random.default_rng(1).random((8, 8, 3)).astype(np.float32)
        out = prox.apply(v, sigma=0.1, s_t=-2.0)
        assert out.shape == v.shape
        theta_hat = math.exp(-2.0) * 0.1 * math.sqrt(v.size - 1)
        assert float(np.linalg.norm(out - v)) <= theta_hat * (1 + 1e-5)


class TestSolverConfig:
    def test_default_builds_schedules(self):
        cfg = SolverConfig.default(5, 0.1)
        assert isinstance(cfg.prox, IdentityProx)
        assert cfg.s.shape == (5,) and cfg.w.shape == (5,)
        assert not cfg.lipschitz_safety

    def test_validation(self):
        s, w = init_continuation(3)
        with pytest.raises(ValueError):
            SolverConfig(0, 0.1, s, w, IdentityProx())
        with pytest.raises(ValueError):
            SolverConfig(3, 0.0, s, w, IdentityProx())
        with pytest.raises(ValueError):
            SolverConfig(4, 0.1, s, w, IdentityProx())  # schedule length mismatch


class TestInitialize:
    def test_identity_op_copies_reference(self):
        burst, _, _ = consistent_burst(2)
        x1 = initialize_estimate(burst, IdentityOp())
        np.testing.assert_array_equal(x1, burst.reference.data)
        x1[0, 0, 0] += 1.0
        assert burst.reference.data[0, 0, 0] != x1[0, 0, 0]

    def test_cfa_op_demosaics(self):
        flat = img(np.full((16, 16, 3), 0.25, dtype=np.float32))
        mosaic = apply_degradation(CfaOp(), flat)
        burst = Burst((mosaic,), 0)
        x1 = initialize_estimate(burst, CfaOp())
        assert x1.dtype == np.float32
        np.testing.assert_allclose(x1, 0.25, atol=1e-6)


class TestCanonicalOrder:
    def test_order_keyed_by_content_not_position(self):
        burst, warps, _ = consistent_burst(4, seed=5)
        frames = [f.data for f in burst.frames]
        order = canonical_frame_order(frames, warps)
        ranked = [frames[i].tobytes() for i in order]

        perm = [2, 0, 3, 1]
        p_frames = [frames[i] for i in perm]
        p_warps = [warps[i] for i in perm]
        p_order = canonical_frame_order(p_frames, p_warps)
        p_ranked = [p_frames[i].tobytes() for i in p_order]
        assert ranked == p_ranked


class TestRun:
    def test_warp_count_mismatch(self):
        burst, warps, _ = consistent_burst(3)
        with pytest.raises(ValueError):
            run(burst, warps[:2], IdentityOp(), SolverConfig.default(2, 0.1))

    def test_single_frame_single_iteration_reproduces_observation(self):
        # values straddle [0, 1] so the final clamp is exercised too
        y = np.linspace(-0.2, 1.3, 48, dtype=np.float32).reshape(4, 4, 3)
        burst = make_burst([y])
        warps = [build_warp(AffineTransform(), (4, 4))]
        out, trace = run(burst, warps, IdentityOp(), SolverConfig.default(1, 0.1))
        np.testing.assert_array_equal(out.data, np.clip(y, 0.0, 1.0))
        assert trace.fidelity == [0.0]
        assert trace.grad_norm == [0.0]

    def test_aligned_noise_free_cfa_fidelity_is_zero(self):
        x_true = img(smooth_texture(32, 32, seed=1))
        op = CfaOp()
        frames = tuple(apply_degradation(op, x_true) for _ in range(4))
        burst = Burst(frames, 3)
        warps = [build_warp(AffineTransform(), (32, 32)) for _ in range(4)]
        out, trace = run(burst, warps, op, SolverConfig.default(6, 25 / 255))
        assert trace.fidelity == [0.0] * 6
        assert trace.grad_norm == [0.0] * 6
        assert out.space is PixelSpace.LINEAR_RGB

    def test_misaligned_noise_free_fidelity_decreases(self):
        burst, warps, _ = consistent_burst(4, seed=3)
        out, trace = run(
            burst, warps, IdentityOp(), SolverConfig.default(10, 25 / 255)
        )
        fid = trace.fidelity
        assert fid[0] > 0
        assert fid[-1] < 0.5 * fid[0]
        assert len(fid) == len(trace.grad_norm) == 10
        assert float(out.data.min()) >= 0.0 and float(out.data.max()) <= 1.0

    def test_lipschitz_safety_still_converges(self):
        burst, warps, _ = consistent_burst(4, seed=3)
        _, trace = run(
            burst,
            warps,
            IdentityOp(),
            SolverConfig.default(10, 25 / 255, lipschitz_safety=True),
        )
        assert trace.fidelity[-1] < 0.5 * trace.fidelity[0]

    def test_permutation_of_frames_is_bit_identical(self):
        burst, warps, _ = consistent_burst(5, seed=7)
        cfg = SolverConfig.default(4, 25 / 255)
        out_a, trace_a = run(burst, warps, IdentityOp(), cfg)

        # reference index tracks its frame through the permutation
        perm = [3, 1, 4, 0, 2]
        frames = [burst.frames[i] for i in perm]
        p_burst = Burst(tuple(frames), perm.index(burst.reference_index))
        p_warps = [warps[i] for i in perm]
        out_b, trace_b = run(p_burst, p_warps, IdentityOp(), cfg)

        assert out_a.data.tobytes() == out_b.data.tobytes()
        # iterates are bit-identical; the scalar diagnostics sum per-frame
        # losses in list order, so they only agree to rounding
        np.testing.assert_allclose(trace_a.fidelity, trace_b.fidelity, rtol=1e-12)
        np.testing.assert_allclose(trace_a.grad_norm, trace_b.grad_norm, rtol=1e-12)


class TestTrace:
    def test_csv_round_trip(self, tmp_path):
        trace = IterationTrace(fidelity=[1.5, 0.25], grad_norm=[3.0, 0.125])
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,fidelity,grad_norm"
        assert len(lines) == 3
        row = lines[2].split(",")
        assert row[0] == "2"
        assert float(row[1]) == pytest.approx(0.25, rel=1e-9)
        assert float(row[2]) == pytest.approx(0.125, rel=1e-9)

    def test_defaults(self):
        trace = IterationTrace()
        assert trace.snapshots is None
        assert trace.warnings == []


class TestRunWithAlignment:
    def make_textured_burst(self, n=3, crop=112, seed=9):
        from conftest import make_aligned_pair
        from brt.warps import rotation_about

        rng = np.random.default_rng(seed)
        tex = smooth_texture(crop + 64, crop + 64, seed=seed, cell=8)
        center = (crop + 63) / 2.0
        frames = []
        for _ in range(n - 1):
            obs = rotation_about(
                math.radians(rng.uniform(-1, 1)), (center, center),
                *rng.uniform(-4, 4, 2)
            )
            ref, mov, _ = make_aligned_pair(tex, crop, obs)
            frames.append(mov)
        frames.append(ref)
        return make_burst(frames)

    def test_happy_path(self):
        burst = self.make_textured_burst()
        out, results, trace = run_with_alignment(
            burst, IdentityOp(), SolverConfig.default(5, 25 / 255)
        )
        assert len(results) == len(burst)
        ref_res = results[burst.reference_index]
        assert ref_res.converged and ref_res.final_ecc == 1.0
        assert ref_res.transform == AffineTransform()
        assert all(r.converged for r in results)
        assert trace.warnings == []
        assert out.space is PixelSpace.LINEAR_RGB

    def test_all_frames_unalignable_falls_back_to_reference(self):
        ref = img(smooth_texture(64, 64, seed=11))
        flat = img(np.full((64, 64, 3), 0.5, dtype=np.float32))
        burst = make_burst([flat, flat, ref])
        cfg = SolverConfig.default(3, 25 / 255)
        out, results, trace = run_with_alignment(burst, IdentityOp(), cfg)

        assert [r.converged for r in results] == [False, False, True]
        assert results[0].final_ecc == -1.0
        assert any("excluded 2" in w for w in trace.warnings)
        assert any("single-frame" in w for w in trace.warnings)

        solo = Burst((ref,), 0)
        expect, _ = run(solo, [build_warp(AffineTransform(), (64, 64))], IdentityOp(), cfg)
        np.testing.assert_array_equal(out.data, expect.data)

    def test_partial_failure_shrinks_burst(self):
        burst3 = self.make_textured_burst(n=2, seed=13)
        flat = img(np.full((112, 112, 3), 0.5, dtype=np.float32))
        burst = make_burst([burst3.frames[0], flat, burst3.frames[1]])
        out, results, trace = run_with_alignment(
            burst, IdentityOp(), SolverConfig.default(3, 25 / 255)
        )
        assert results[1].converged is False
        assert any("excluded 1" in w for w in trace.warnings)
        assert not any("single-frame" in w for w in trace.warnings)
