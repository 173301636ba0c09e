# Compiled convolution core: im2col in tight C loops feeding one BLAS sgemm
# per call. The numpy fallback computes the identical GEMM through tensordot,
# which re-materialises the window view through generic strided copies; doing
# the gather here is what the extension buys. Column extraction only splits
# independent rows, so results do not depend on the thread count.
import os

import numpy as np

cimport openmp
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport sgemm


def _max_threads():
    raw = os.environ.get("BRT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = openmp.omp_get_max_threads()
    return n


cdef void _im2col(const float[:, :, :] xp, float[:, ::1] col,
                  Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t H, Py_ssize_t W,
                  int nt) noexcept nogil:
    # col[(c, i, j), (y, x)] = xp[c, y + i, x + j]
    cdef Py_ssize_t k, c, i, j, y, x, base
    cdef Py_ssize_t K = col.shape[0]
    for k in prange(K, schedule="static", num_threads=nt):
        c = k // (kh * kw)
        i = (k // kw) % kh
        j = k % kw
        for y in range(H):
            base = y * W
            for x in range(W):
                col[k, base + x] = xp[c, y + i, x + j]


def correlate_valid(const float[:, :, :] xp, const float[:, :, :, :] w):
    cdef Py_ssize_t C = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t H = Hp - kh + 1, W = Wp - kw + 1
    if w.shape[1] != C:
        raise ValueError("weight channel count does not match input")
    if H < 1 or W < 1:
        raise ValueError("kernel larger than input")

    cdef Py_ssize_t K = C * kh * kw, P = H * W
    col_arr = np.empty((K, P), dtype=np.float32)
    cdef float[:, ::1] col = col_arr
    _im2col(xp, col, kh, kw, H, W, _max_threads())

    w2 = np.ascontiguousarray(w, dtype=np.float32).reshape(O, K)
    out_arr = np.empty((O, H, W), dtype=np.float32)
    cdef const float[:, ::1] wv = w2
    cdef float[:, ::1] ov = out_arr.reshape(O, P)
    # row-major out(O,P) = w2(O,K) @ col(K,P); in column-major terms that is
    # out_f(P,O) = col_f(P,K) @ w2_f(K,O), both operands untransposed
    cdef int m = <int> P, n = <int> O, k = <int> K
    cdef float alpha = 1.0, beta = 0.0
    cdef char tn = b'N'
    sgemm(&tn, &tn, &m, &n, &k, &alpha, <float*> &col[0, 0], &m,
          <float*> &wv[0, 0], &k, &beta, &ov[0, 0], &m)
    return out_arr


def grad_weights(const float[:, :, :] xp, const float[:, :, :] gy):
    cdef Py_ssize_t C = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2]
    cdef Py_ssize_t O = gy.shape[0], H = gy.shape[1], W = gy.shape[2]
    cdef Py_ssize_t kh = Hp - H + 1, kw = Wp - W + 1
    if kh < 1 or kw < 1:
        raise ValueError("upstream gradient larger than padded input")

    cdef Py_ssize_t K = C * kh * kw, P = H * W
    col_arr = np.empty((K, P), dtype=np.float32)
    cdef float[:, ::1] col = col_arr
    _im2col(xp, col, kh, kw, H, W, _max_threads())

    gy2 = np.ascontiguousarray(gy, dtype=np.float32).reshape(O, P)
    out_arr = np.empty((O, C, kh, kw), dtype=np.float32)
    cdef const float[:, ::1] gv = gy2
    cdef float[:, ::1] ov = out_arr.reshape(O, K)
    # row-major gw(O,K) = gy(O,P) @ col(K,P)^T; column-major
    # gw_f(K,O) = col_f(P,K)^T @ gy_f(P,O)
    cdef int m = <int> K, n = <int> O, k = <int> P
    cdef float alpha = 1.0, beta = 0.0
    cdef char tt = b'T', tn = b'N'
    sgemm(&tt, &tn, &m, &n, &k, &alpha, <float*> &col[0, 0], &k,
          <float*> &gv[0, 0], &k, &beta, &ov[0, 0], &m)
    return out_arr
