"""Native binary containers.

Three little-endian formats, all magic-tagged:

  BRT1  dense image raster: u32 h, w, c, u8 space tag, float32 samples
  BRTW  sparse warp matrix:  u8 interp tag, u32 h, w, CSR arrays
  BRTP  named tensor bundle: checkpoint payloads, dtype-tagged

Reads reject wrong magic or truncated payloads rather than guessing.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = b"BRT1"
WARP_MAGIC = b"BRTW"
TENSORS_MAGIC = b"BRTP"

_DTYPE_TAGS = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8}
_TAG_BY_DTYPE = {np.dtype(v): k for k, v in _DTYPE_TAGS.items()}


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


# -- image blobs --------------------------------------------------------------

def write_image_blob(path, data: np.ndarray, space_tag: int) -> None:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError("image blob expects (h, w, c) data")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC)
        f.write(struct.pack("<IIIB", h, w, c, space_tag))
        f.write(arr.tobytes())


def read_image_blob(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != IMAGE_MAGIC:
            raise ValueError(f"{path}: not a native image file")
        h, w, c, tag = struct.unpack("<IIIB", _read_exact(f, 13))
        raw = _read_exact(f, h * w * c * 4)
    arr = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
    return arr, tag


# -- sparse warps --------------------------------------------------------------

def write_warp_blob(path, matrix, interp_tag: int, height: int, width: int) -> None:
    """Serialise a CSR warp. indptr/indices stored as i64, weights as f64."""
    from scipy.sparse import csr_matrix

    m = csr_matrix(matrix)
    indptr = np.asarray(m.indptr, dtype="<i8")
    indices = np.asarray(m.indices, dtype="<i8")
    data = np.asarray(m.data, dtype="<f8")
    with open(path, "wb") as f:
        f.write(WARP_MAGIC)
        f.write(struct.pack("<BIIQ", interp_tag, height, width, len(data)))
        f.write(indptr.tobytes())
        f.write(indices.tobytes())
        f.write(data.tobytes())


def read_warp_blob(path):
    from scipy.sparse import csr_matrix

    with open(path, "rb") as f:
        if _read_exact(f, 4) != WARP_MAGIC:
            raise ValueError(f"{path}: not a native warp file")
        interp_tag, h, w, nnz = struct.unpack("<BIIQ", _read_exact(f, 17))
        n = h * w
        indptr = np.frombuffer(_read_exact(f, 8 * (n + 1)), dtype="<i8")
        indices = np.frombuffer(_read_exact(f, 8 * nnz), dtype="<i8")
        data = np.frombuffer(_read_exact(f, 8 * nnz), dtype="<f8")
    mat = csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(n, n))
    return mat, interp_tag, h, w


# -- named tensor bundles ------------------------------------------------------

def write_named_tensors(path, tensors: "dict[str, np.ndarray]") -> None:
    with open(path, "wb") as f:
        f.write(TENSORS_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            # np.ascontiguousarray would promote 0-d to 1-d; asarray keeps rank
            arr = np.asarray(arr, order="C")
            if arr.dtype not in _TAG_BY_DTYPE:
                raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _TAG_BY_DTYPE[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_named_tensors(path) -> "dict[str, np.ndarray]":
    out = {}
    with open(path, "rb") as f:
        if _read_exact(f, 4) != TENSORS_MAGIC:
            raise ValueError(f"{path}: not a native tensor bundle")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, nlen).decode("utf-8")
            tag, ndim = struct.unpack("<BB", _read_exact(f, 2))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arr = np.frombuffer(_read_exact(f, nbytes), dtype=dtype).reshape(shape)
            out[name] = arr.astype(_DTYPE_TAGS[tag]).copy()
    return out
