# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent kernels; same contract as ``_pykernels``.

The time loop runs in C without the GIL. Recurrent matmuls go through
BLAS (scipy's cython_blas); gate arithmetic runs over contiguous rows so
the compiler can vectorize it. Single precision row kernels live in
``_cells.h`` with a vectorizable exp; double precision uses libm.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, tanh
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport sgemm, dgemm

cdef extern from "_cells.h" nogil:
    void nms_lstm_row_fwd(float *a, float *cp, float *hp, float *cout, float *hout,
                          Py_ssize_t H, int live)
    void nms_lstm_row_bwd(float *a, float *c, float *cp, float *dhs, float *dh, float *dc,
                          float *dz, Py_ssize_t H)
    void nms_gru_row_fwd(float *zx, float *zh, float *a, float *hp, float *hout,
                         Py_ssize_t H, int live)
    void nms_gru_row_bwd(float *a, float *zh, float *hp, float *dhs, float *dh,
                         float *dzx, float *dzh, Py_ssize_t H)

cnp.import_array()


cdef inline floating _sig(floating x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline floating _tanh(floating x) noexcept nogil:
    return tanh(x)


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       floating *a, int lda, floating *b, int ldb,
                       floating beta, floating *c, int ldc) noexcept nogil:
    # column-major C := op(A) op(B) + beta C
    cdef float one_f = 1.0, beta_f
    cdef double one_d = 1.0, beta_d
    if floating is double:
        beta_d = beta
        dgemm(&ta, &tb, &m, &n, &k, &one_d, a, &lda, b, &ldb, &beta_d, c, &ldc)
    else:
        beta_f = beta
        sgemm(&ta, &tb, &m, &n, &k, &one_f, a, &lda, b, &ldb, &beta_f, c, &ldc)


cdef inline void _rowmm(floating *x, floating *w, floating *out,
                        int B, int K, int N, floating beta) noexcept nogil:
    # row-major out[B,N] = x[B,K] @ w[K,N] + beta*out
    _gemm(c'N', c'N', N, B, K, w, N, x, K, beta, out, N)


cdef inline void _rowmm_wt(floating *d, floating *w, floating *out,
                           int B, int K, int N) noexcept nogil:
    # row-major out[B,K] = d[B,N] @ w[K,N].T
    _gemm(c'T', c'N', K, B, N, w, N, d, N, 0.0, out, K)


cdef inline void _rowmm_tn(floating *x, floating *d, floating *out,
                           int B, int K, int N) noexcept nogil:
    # row-major out[K,N] = x[B,K].T @ d[B,N]
    _gemm(c'N', c'T', N, K, B, d, N, x, K, 0.0, out, N)


# ---------------------------------------------------------------- row kernels
# One batch row, H units. ``a`` holds the G gate pre-activations on entry and
# the activations on exit. float goes to the C versions in _cells.h.

cdef inline void _lstm_row_fwd(floating *a, floating *cp, floating *hp, floating *cout,
                               floating *hout, Py_ssize_t H, bint live) noexcept nogil:
    cdef Py_ssize_t j
    cdef floating i_, f_, g_, o_, c_
    if floating is float:
        nms_lstm_row_fwd(a, cp, hp, cout, hout, H, live)
        return
    for j in range(H):
        i_ = _sig(a[j])
        f_ = _sig(a[H + j])
        g_ = _tanh(a[2 * H + j])
        o_ = _sig(a[3 * H + j])
        a[j] = i_
        a[H + j] = f_
        a[2 * H + j] = g_
        a[3 * H + j] = o_
        c_ = f_ * cp[j] + i_ * g_
        cout[j] = c_
        hout[j] = o_ * _tanh(c_)
    if not live:
        memcpy(cout, cp, H * sizeof(floating))
        memcpy(hout, hp, H * sizeof(floating))


cdef inline void _lstm_row_bwd(floating *a, floating *c, floating *cp, floating *dhs,
                               floating *dh, floating *dc, floating *dz,
                               Py_ssize_t H) noexcept nogil:
    cdef Py_ssize_t j
    cdef floating i_, f_, g_, o_, tc, dct, dhv
    if floating is float:
        nms_lstm_row_bwd(a, c, cp, dhs, dh, dc, dz, H)
        return
    for j in range(H):
        dhv = dh[j] + dhs[j]
        i_ = a[j]
        f_ = a[H + j]
        g_ = a[2 * H + j]
        o_ = a[3 * H + j]
        tc = _tanh(c[j])
        dct = dc[j] + dhv * o_ * (1.0 - tc * tc)
        dz[j] = dct * g_ * i_ * (1.0 - i_)
        dz[H + j] = dct * cp[j] * f_ * (1.0 - f_)
        dz[2 * H + j] = dct * i_ * (1.0 - g_ * g_)
        dz[3 * H + j] = dhv * tc * o_ * (1.0 - o_)
        dc[j] = dct * f_
        dh[j] = 0.0


cdef inline void _gru_row_fwd(floating *zx, floating *zh, floating *a, floating *hp,
                              floating *hout, Py_ssize_t H, bint live) noexcept nogil:
    cdef Py_ssize_t j
    cdef floating r_, u_, n_
    if floating is float:
        nms_gru_row_fwd(zx, zh, a, hp, hout, H, live)
        return
    for j in range(H):
        r_ = _sig(zx[j] + zh[j])
        u_ = _sig(zx[H + j] + zh[H + j])
        n_ = _tanh(zx[2 * H + j] + r_ * zh[2 * H + j])
        a[j] = r_
        a[H + j] = u_
        a[2 * H + j] = n_
        hout[j] = (1.0 - u_) * n_ + u_ * hp[j]
    if not live:
        memcpy(hout, hp, H * sizeof(floating))


cdef inline void _gru_row_bwd(floating *a, floating *zh, floating *hp, floating *dhs,
                              floating *dh, floating *dzx, floating *dzh,
                              Py_ssize_t H) noexcept nogil:
    cdef Py_ssize_t j
    cdef floating r_, u_, n_, dhv, dan, dar, dau
    if floating is float:
        nms_gru_row_bwd(a, zh, hp, dhs, dh, dzx, dzh, H)
        return
    for j in range(H):
        dhv = dh[j] + dhs[j]
        r_ = a[j]
        u_ = a[H + j]
        n_ = a[2 * H + j]
        dan = dhv * (1.0 - u_) * (1.0 - n_ * n_)
        dar = dan * zh[2 * H + j] * r_ * (1.0 - r_)
        dau = dhv * (hp[j] - n_) * u_ * (1.0 - u_)
        dzx[j] = dar
        dzx[H + j] = dau
        dzx[2 * H + j] = dan
        dzh[j] = dar
        dzh[H + j] = dau
        dzh[2 * H + j] = dan * r_
        dh[j] = dhv * u_


cdef inline void _add_rows(floating *dst, floating *src, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        dst[j] += src[j]


# ---------------------------------------------------------------- LSTM

def lstm_forward(floating[:, :, ::1] zx, floating[:, ::1] w_h,
                 floating[:, ::1] h0, floating[:, ::1] c0,
                 unsigned char[:, ::1] mask, bint reverse=False):
    cdef Py_ssize_t T = zx.shape[0], B = zx.shape[1], G = zx.shape[2]
    cdef Py_ssize_t H = G // 4
    dtype = np.float64 if floating is double else np.float32
    acts_a = np.array(zx, dtype=dtype, copy=True)
    cs_a = np.empty((T, B, H), dtype=dtype)
    hs_a = np.empty((T, B, H), dtype=dtype)
    cdef floating[:, :, ::1] acts = acts_a
    cdef floating[:, :, ::1] cs = cs_a
    cdef floating[:, :, ::1] hs = hs_a
    cdef Py_ssize_t k, t, tp, b
    cdef floating *hp
    cdef floating *cp
    if T == 0 or B == 0:
        return acts_a, cs_a, hs_a
    with nogil:
        for k in range(T):
            t = T - 1 - k if reverse else k
            tp = t + 1 if reverse else t - 1
            hp = &h0[0, 0] if k == 0 else &hs[tp, 0, 0]
            cp = &c0[0, 0] if k == 0 else &cs[tp, 0, 0]
            _rowmm(hp, &w_h[0, 0], &acts[t, 0, 0], <int>B, <int>H, <int>G, 1.0)
            for b in range(B):
                _lstm_row_fwd(&acts[t, b, 0], cp + b * H, hp + b * H, &cs[t, b, 0],
                              &hs[t, b, 0], H, mask[t, b])
    return acts_a, cs_a, hs_a


def lstm_backward(floating[:, :, ::1] acts, floating[:, :, ::1] cs,
                  floating[:, :, ::1] hs, floating[:, ::1] w_h,
                  floating[:, ::1] h0, floating[:, ::1] c0,
                  unsigned char[:, ::1] mask, floating[:, :, ::1] dhs,
                  bint reverse=False):
    cdef Py_ssize_t T = acts.shape[0], B = acts.shape[1], G = acts.shape[2]
    cdef Py_ssize_t H = G // 4
    dtype = np.float64 if floating is double else np.float32
    dzx_a = np.zeros((T, B, G), dtype=dtype)
    hprev_a = np.empty((T, B, H), dtype=dtype)
    dwh_a = np.zeros((H, G), dtype=dtype)
    dh_a = np.zeros((B, H), dtype=dtype)
    dc_a = np.zeros((B, H), dtype=dtype)
    dhp_a = np.zeros((B, H), dtype=dtype)
    cdef floating[:, :, ::1] dzx = dzx_a
    cdef floating[:, :, ::1] hprev = hprev_a
    cdef floating[:, ::1] dwh = dwh_a
    cdef floating[:, ::1] dh = dh_a
    cdef floating[:, ::1] dc = dc_a
    cdef floating[:, ::1] dhp = dhp_a
    cdef Py_ssize_t k, t, tp, b
    cdef floating *hp
    cdef floating *cp
    if T == 0 or B == 0:
        return dzx_a, dwh_a, dh_a, dc_a
    with nogil:
        for k in range(T - 1, -1, -1):
            t = T - 1 - k if reverse else k
            tp = t + 1 if reverse else t - 1
            hp = &h0[0, 0] if k == 0 else &hs[tp, 0, 0]
            cp = &c0[0, 0] if k == 0 else &cs[tp, 0, 0]
            memcpy(&hprev[t, 0, 0], hp, B * H * sizeof(floating))
            for b in range(B):
                if mask[t, b]:
                    _lstm_row_bwd(&acts[t, b, 0], &cs[t, b, 0], cp + b * H, &dhs[t, b, 0],
                                  &dh[b, 0], &dc[b, 0], &dzx[t, b, 0], H)
                else:
                    _add_rows(&dh[b, 0], &dhs[t, b, 0], H)
            # dh now holds only the carry of masked rows
            _rowmm_wt(&dzx[t, 0, 0], &w_h[0, 0], &dhp[0, 0], <int>B, <int>H, <int>G)
            _add_rows(&dh[0, 0], &dhp[0, 0], B * H)
        _rowmm_tn(&hprev[0, 0, 0], &dzx[0, 0, 0], &dwh[0, 0], <int>(T * B), <int>H, <int>G)
    return dzx_a, dwh_a, dh_a, dc_a


# ---------------------------------------------------------------- GRU

def gru_forward(floating[:, :, ::1] zx, floating[:, ::1] w_h,
                floating[:, ::1] h0, unsigned char[:, ::1] mask,
                bint reverse=False):
    cdef Py_ssize_t T = zx.shape[0], B = zx.shape[1], G = zx.shape[2]
    cdef Py_ssize_t H = G // 3
    dtype = np.float64 if floating is double else np.float32
    acts_a = np.empty((T, B, G), dtype=dtype)
    zh_a = np.empty((T, B, G), dtype=dtype)
    hs_a = np.empty((T, B, H), dtype=dtype)
    cdef floating[:, :, ::1] acts = acts_a
    cdef floating[:, :, ::1] zh = zh_a
    cdef floating[:, :, ::1] hs = hs_a
    cdef Py_ssize_t k, t, tp, b
    cdef floating *hp
    if T == 0 or B == 0:
        return acts_a, zh_a, hs_a
    with nogil:
        for k in range(T):
            t = T - 1 - k if reverse else k
            tp = t + 1 if reverse else t - 1
            hp = &h0[0, 0] if k == 0 else &hs[tp, 0, 0]
            _rowmm(hp, &w_h[0, 0], &zh[t, 0, 0], <int>B, <int>H, <int>G, 0.0)
            for b in range(B):
                _gru_row_fwd(&zx[t, b, 0], &zh[t, b, 0], &acts[t, b, 0], hp + b * H,
                             &hs[t, b, 0], H, mask[t, b])
    return acts_a, zh_a, hs_a


def gru_backward(floating[:, :, ::1] acts, floating[:, :, ::1] zh,
                 floating[:, :, ::1] hs, floating[:, ::1] w_h,
                 floating[:, ::1] h0, unsigned char[:, ::1] mask,
                 floating[:, :, ::1] dhs, bint reverse=False):
    cdef Py_ssize_t T = acts.shape[0], B = acts.shape[1], G = acts.shape[2]
    cdef Py_ssize_t H = G // 3
    dtype = np.float64 if floating is double else np.float32
    dzx_a = np.zeros((T, B, G), dtype=dtype)
    dzh_a = np.zeros((T, B, G), dtype=dtype)
    hprev_a = np.empty((T, B, H), dtype=dtype)
    dwh_a = np.zeros((H, G), dtype=dtype)
    dh_a = np.zeros((B, H), dtype=dtype)
    dhp_a = np.zeros((B, H), dtype=dtype)
    cdef floating[:, :, ::1] dzx = dzx_a
    cdef floating[:, :, ::1] dzh = dzh_a
    cdef floating[:, :, ::1] hprev = hprev_a
    cdef floating[:, ::1] dwh = dwh_a
    cdef floating[:, ::1] dh = dh_a
    cdef floating[:, ::1] dhp = dhp_a
    cdef Py_ssize_t k, t, tp, b
    cdef floating *hp
    if T == 0 or B == 0:
        return dzx_a, dwh_a, dh_a
    with nogil:
        for k in range(T - 1, -1, -1):
            t = T - 1 - k if reverse else k
            tp = t + 1 if reverse else t - 1
            hp = &h0[0, 0] if k == 0 else &hs[tp, 0, 0]
            memcpy(&hprev[t, 0, 0], hp, B * H * sizeof(floating))
            for b in range(B):
                if mask[t, b]:
                    _gru_row_bwd(&acts[t, b, 0], &zh[t, b, 0], hp + b * H, &dhs[t, b, 0],
                                 &dh[b, 0], &dzx[t, b, 0], &dzh[t, b, 0], H)
                else:
                    _add_rows(&dh[b, 0], &dhs[t, b, 0], H)
            _rowmm_wt(&dzh[t, 0, 0], &w_h[0, 0], &dhp[0, 0], <int>B, <int>H, <int>G)
            _add_rows(&dh[0, 0], &dhp[0, 0], B * H)
        _rowmm_tn(&hprev[0, 0, 0], &dzh[0, 0, 0], &dwh[0, 0], <int>(T * B), <int>H, <int>G)
    return dzx_a, dwh_a, dh_a
