import math

import numpy as np
import pytest

from conftest import dense_warp_oracle
from brt.image import Image, PixelSpace
from brt.warps import (
    AffineTransform,
    SparseWarp,
    apply_warp,
    apply_warp_adjoint,
    build_warp,
    compose,
    identity_transform,
    invert_transform,
    load_warp,
    rotation_about,
    save_warp,
)


def random_transform(rng, max_deg=2.0, max_t=10.0):
    return AffineTransform(
        math.radians(rng.uniform(-max_deg, max_deg)),
        rng.uniform(-max_t, max_t),
        rng.uniform(-max_t, max_t),
    )


class TestTransformAlgebra:
    def test_apply_matches_direct_formula(self):
        t = AffineTransform(0.1, 3.0, -2.0)
        pts = np.array([[0.0, 0.0], [2.0, 5.0], [-1.5, 0.5]])
        c, s = math.cos(0.1), math.sin(0.1)
        expected = np.stack(
            [c * pts[:, 0] - s * pts[:, 1] + 3.0, s * pts[:, 0] + c * pts[:, 1] - 2.0], axis=-1
        )
        np.testing.assert_allclose(t.apply(pts), expected, atol=1e-12)

    def test_compose_equals_sequential_application(self):
        rng = np.random.default_rng(0)
        inner, outer = random_transform(rng), random_transform(rng)
        pts = rng.uniform(-20, 20, (7, 2))
        both = compose(outer, inner).apply(pts)
        seq = outer.apply(inner.apply(pts))
        np.testing.assert_allclose(both, seq, atol=1e-10)

    def test_invert_frozen_case(self):
        # R(-0.1) @ (3, -2): (3cos0.1 - 2sin0.1, -3sin0.1 - 2cos0.1)
        inv = invert_transform(AffineTransform(0.1, 3.0, -2.0))
        assert inv.rotation == pytest.approx(-0.1)
        assert inv.dx == pytest.approx(-(3 * math.cos(0.1) - 2 * math.sin(0.1)), abs=1e-12)
        assert inv.dy == pytest.approx(-(-3 * math.sin(0.1) - 2 * math.cos(0.1)), abs=1e-12)

    def test_invert_round_trip_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t = random_transform(rng)
            pts = rng.uniform(-30, 30, (5, 2))
            back = compose(t, invert_transform(t)).apply(pts)
            np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_rotation_about_fixes_the_pivot(self):
        center = (3.5, 2.5)
        t = rotation_about(0.3, center)
        np.testing.assert_allclose(t.apply(np.array([center])), [center], atol=1e-12)

    def test_rotation_about_with_translation(self):
        t = rotation_about(0.3, (3.5, 2.5), dx=1.0, dy=-2.0)
        np.testing.assert_allclose(t.apply(np.array([[3.5, 2.5]])), [[4.5, 0.5]], atol=1e-12)

    def test_degrees(self):
        assert AffineTransform(math.radians(2.0), 0, 0).degrees == pytest.approx(2.0)

    def test_identity(self):
        t = identity_transform()
        assert (t.rotation, t.dx, t.dy) == (0.0, 0.0, 0.0)


class TestBuildWarp:
    def test_matches_dense_oracle_bilinear(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            t = random_transform(rng, max_deg=4.0, max_t=3.0)
            w = build_warp(t, (8, 6))
            oracle = dense_warp_oracle(t, (8, 6))
            np.testing.assert_allclose(w.matrix.toarray(), oracle, atol=1e-14)

    def test_matches_dense_oracle_nearest(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            t = random_transform(rng, max_deg=4.0, max_t=3.0)
            w = build_warp(t, (8, 6), interp="nearest")
            oracle = dense_warp_oracle(t, (8, 6), interp="nearest")
            np.testing.assert_allclose(w.matrix.toarray(), oracle, atol=0)

    def test_identity_transform_gives_identity_matrix(self):
        w = build_warp(identity_transform(), (5, 7))
        np.testing.assert_array_equal(w.matrix.toarray(), np.eye(35))

    def test_fractional_shift_weights(self):
        # source (1.3, 1.6): (1-.3)(1-.6)=.28, .3*.4=.12, .7*.6=.42, .3*.6=.18
        w = build_warp(AffineTransform(0.0, 0.3, 0.6), (4, 4))
        row = w.matrix.getrow(1 * 4 + 1).toarray().ravel()
        np.testing.assert_allclose(row[[5, 6, 9, 10]], [0.28, 0.12, 0.42, 0.18], atol=1e-12)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)

    def test_interior_rows_sum_to_one(self):
        w = build_warp(AffineTransform(0.02, 0.7, -0.4), (12, 12))
        sums = np.asarray(w.matrix.sum(axis=1)).ravel()
        dropped = np.zeros(144, dtype=bool)
        dropped[w.oob_rows()] = True
        np.testing.assert_allclose(sums[~dropped], 1.0, atol=1e-12)
        np.testing.assert_array_equal(sums[dropped], 0.0)

    def test_fully_out_of_bounds(self):
        w = build_warp(AffineTransform(0.0, 100.0, 0.0), (4, 4))
        assert w.matrix.nnz == 0
        assert len(w.oob_rows()) == 16

    def test_matrix_dtype_is_float64(self):
        w = build_warp(AffineTransform(0.01, 0.5, 0.5), (4, 4))
        assert w.matrix.dtype == np.float64

    def test_bad_interp_rejected(self):
        with pytest.raises(ValueError):
            build_warp(identity_transform(), (4, 4), interp="cubic")


class TestApply:
    def test_adjoint_identity(self):
        rng = np.random.default_rng(4)
        w = build_warp(random_transform(rng), (9, 9))
        x = rng.random((9, 9, 3))
        v = rng.random((9, 9, 3))
        lhs = np.vdot(apply_warp(w, x), v)
        rhs = np.vdot(x, apply_warp_adjoint(w, v))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_gather_convention(self):
        # pure integer shift dx=1: output[y, x] = input[y, x+1]
        img = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
        w = build_warp(AffineTransform(0.0, 1.0, 0.0), (4, 4))
        out = apply_warp(w, img)
        np.testing.assert_array_equal(out[:, :3], img[:, 1:])
        np.testing.assert_array_equal(out[:, 3], 0.0)

    def test_preserves_image_wrapper_and_dtype(self):
        img = Image(np.random.default_rng(5).random((6, 6, 3)).astype(np.float32),
                    PixelSpace.LINEAR_RGB)
        w = build_warp(AffineTransform(0.01, 0.2, -0.3), (6, 6))
        out = apply_warp(w, img)
        assert isinstance(out, Image)
        assert out.space is PixelSpace.LINEAR_RGB
        assert out.data.dtype == np.float32

    def test_dims_mismatch_raises(self):
        w = build_warp(identity_transform(), (4, 4))
        with pytest.raises(ValueError):
            apply_warp(w, np.zeros((5, 4, 3), dtype=np.float32))

    def test_adjoint_matrix_cached_transpose(self):
        w = build_warp(AffineTransform(0.05, 1.5, -2.0), (6, 6))
        diff = w.adjoint_matrix - w.matrix.T
        assert abs(diff).sum() == 0


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        w = build_warp(random_transform(rng), (10, 8), interp="bilinear")
        p = tmp_path / "w.brtw"
        save_warp(w, p)
        back = load_warp(p)
        assert (back.height, back.width, back.interp) == (10, 8, "bilinear")
        assert (back.matrix != w.matrix).nnz == 0

    def test_nearest_tag_preserved(self, tmp_path):
        w = build_warp(AffineTransform(0.0, 0.7, 0.2), (5, 5), interp="nearest")
        p = tmp_path / "n.brtw"
        save_warp(w, p)
        assert load_warp(p).interp == "nearest"
