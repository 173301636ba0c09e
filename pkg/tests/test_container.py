import numpy as np
import pytest
import scipy.sparse as sp

from brt import container


def test_image_blob_round_trip(tmp_path):
    data = np.random.default_rng(0).random((5, 7, 3)).astype(np.float32)
    p = tmp_path / "img.brt"
    container.write_image_blob(p, data, space_tag=1)
    back, tag = container.read_image_blob(p)
    assert tag == 1
    np.testing.assert_array_equal(back, data)


def test_image_blob_rejects_wrong_magic(tmp_path):
    p = tmp_path / "junk.brt"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not a native image"):
        container.read_image_blob(p)


def test_image_blob_rejects_truncation(tmp_path):
    data = np.zeros((4, 4, 3), dtype=np.float32)
    p = tmp_path / "img.brt"
    container.write_image_blob(p, data, space_tag=0)
    whole = p.read_bytes()
    p.write_bytes(whole[:-8])
    with pytest.raises(ValueError, match="truncated"):
        container.read_image_blob(p)


def test_warp_blob_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    dense = sp.random(36, 36, density=0.1, random_state=2, dtype=np.float64)
    m = sp.csr_matrix(dense)
    p = tmp_path / "w.brtw"
    container.write_warp_blob(p, m, interp_tag=0, height=6, width=6)
    back, tag, h, w = container.read_warp_blob(p)
    assert (tag, h, w) == (0, 6, 6)
    assert (back != m).nnz == 0
    assert back.data.dtype == np.float64


def test_named_tensors_round_trip(tmp_path):
    tensors = {
        "w": np.random.default_rng(3).standard_normal((2, 3, 4)).astype(np.float32),
        "idx": np.arange(5, dtype=np.int64),
        "big": np.random.default_rng(4).standard_normal(7).astype(np.float64),
        "blob": np.frombuffer(b"hello", dtype=np.uint8),
    }
    p = tmp_path / "t.brt"
    container.write_named_tensors(p, tensors)
    back = container.read_named_tensors(p)
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        np.testing.assert_array_equal(back[k], tensors[k])


def test_named_tensors_keep_zero_dim_shapes(tmp_path):
    # scalar parameters (PReLU slopes) must survive as 0-d, not (1,)
    p = tmp_path / "s.brt"
    container.write_named_tensors(p, {"alpha": np.asarray(0.25, dtype=np.float32)})
    back = container.read_named_tensors(p)
    assert back["alpha"].shape == ()
    assert back["alpha"] == np.float32(0.25)


def test_named_tensors_reject_unsupported_dtype(tmp_path):
    with pytest.raises(ValueError, match="dtype"):
        container.write_named_tensors(tmp_path / "x.brt", {"a": np.zeros(2, dtype=np.int16)})


def test_named_tensors_reject_wrong_magic(tmp_path):
    p = tmp_path / "x.brt"
    p.write_bytes(b"BRT1" + b"\x00" * 16)
    with pytest.raises(ValueError, match="not a native tensor"):
        container.read_named_tensors(p)
