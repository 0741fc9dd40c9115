# cython: language_level=3
"""Compiled gated recurrent kernels.

Same contract as ``_gru_py``: the time loop and all elementwise gate math run
in C, matrix products go straight to BLAS through scipy's cython bindings.
"""
import numpy as np

from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm


cdef inline double _sig(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef void _mm(char ta, char tb, int M, int N, int K, double alpha,
              double* A, int lda, double* B, int ldb, double beta,
              double* C, int ldc) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C
    dgemm(&tb, &ta, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def gru_forward(double[:, :, ::1] xw, double[:, ::1] mask,
                double[:, ::1] h0, double[:, ::1] U):
    cdef int B = xw.shape[0]
    cdef int T = xw.shape[1]
    cdef int H = xw.shape[2] // 3
    cdef int H3 = 3 * H
    hs_a = np.empty((B, T, H))
    zs_a = np.empty((B, T, H))
    rs_a = np.empty((B, T, H))
    ns_a = np.empty((B, T, H))
    a_a = np.empty((B, 2 * H))
    c_a = np.empty((B, H))
    rh_a = np.empty((B, H))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] zs = zs_a
    cdef double[:, :, ::1] rs = rs_a
    cdef double[:, :, ::1] ns = ns_a
    cdef double[:, ::1] a = a_a
    cdef double[:, ::1] c = c_a
    cdef double[:, ::1] rh = rh_a
    cdef int t, b, j, ldh
    cdef double z, r, n, m, hp
    cdef double* hp_ptr
    if B == 0 or T == 0:
        return hs_a, zs_a, rs_a, ns_a
    with nogil:
        for t in range(T):
            if t == 0:
                hp_ptr = &h0[0, 0]
                ldh = H
            else:
                hp_ptr = &hs[0, t - 1, 0]
                ldh = T * H
            _mm(b'N', b'N', B, 2 * H, H, 1.0, hp_ptr, ldh, &U[0, 0], H3,
                0.0, &a[0, 0], 2 * H)
            for b in range(B):
                for j in range(H):
                    hp = hp_ptr[b * ldh + j]
                    z = _sig(xw[b, t, j] + a[b, j])
                    r = _sig(xw[b, t, H + j] + a[b, H + j])
                    zs[b, t, j] = z
                    rs[b, t, j] = r
                    rh[b, j] = r * hp
            _mm(b'N', b'N', B, H, H, 1.0, &rh[0, 0], H, &U[0, 2 * H], H3,
                0.0, &c[0, 0], H)
            for b in range(B):
                m = mask[b, t]
                for j in range(H):
                    hp = hp_ptr[b * ldh + j]
                    n = tanh(xw[b, t, 2 * H + j] + c[b, j])
                    ns[b, t, j] = n
                    z = zs[b, t, j]
                    hs[b, t, j] = m * ((1.0 - z) * n + z * hp) + (1.0 - m) * hp
    return hs_a, zs_a, rs_a, ns_a


def gru_backward(double[:, ::1] mask, double[:, ::1] h0, double[:, ::1] U,
                 double[:, :, ::1] hs, double[:, :, ::1] zs,
                 double[:, :, ::1] rs, double[:, :, ::1] ns,
                 double[:, :, ::1] dhs):
    cdef int B = hs.shape[0]
    cdef int T = hs.shape[1]
    cdef int H = hs.shape[2]
    cdef int H3 = 3 * H
    dpre_a = np.zeros((B, T, H3))
    dU_a = np.zeros((H, H3))
    dh_a = np.zeros((B, H))
    dhp_a = np.empty((B, H))
    drh_a = np.empty((B, H))
    rh_a = np.empty((B, H))
    cdef double[:, :, ::1] dpre = dpre_a
    cdef double[:, ::1] dU = dU_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dhp = dhp_a
    cdef double[:, ::1] drh = drh_a
    cdef double[:, ::1] rh = rh_a
    cdef int t, b, j, ldh, ldp
    cdef double z, r, n, m, hp, dtot, dhn, dn, dz
    cdef double* hp_ptr
    if B == 0 or T == 0:
        return dpre_a, dU_a, dh_a
    ldp = T * H3
    with nogil:
        for t in range(T - 1, -1, -1):
            if t == 0:
                hp_ptr = &h0[0, 0]
                ldh = H
            else:
                hp_ptr = &hs[0, t - 1, 0]
                ldh = T * H
            for b in range(B):
                m = mask[b, t]
                for j in range(H):
                    hp = hp_ptr[b * ldh + j]
                    z = zs[b, t, j]
                    n = ns[b, t, j]
                    dtot = dhs[b, t, j] + dh[b, j]
                    dhn = dtot * m
                    dn = dhn * (1.0 - z)
                    dz = dhn * (hp - n)
                    dhp[b, j] = dtot * (1.0 - m) + dhn * z
                    dpre[b, t, 2 * H + j] = dn * (1.0 - n * n)
                    dpre[b, t, j] = dz * z * (1.0 - z)
                    rh[b, j] = rs[b, t, j] * hp
            # drh = dn_pre @ Un^T
            _mm(b'N', b'T', B, H, H, 1.0, &dpre[0, t, 2 * H], ldp,
                &U[0, 2 * H], H3, 0.0, &drh[0, 0], H)
            # dUn += (r*h)^T dn_pre
            _mm(b'T', b'N', H, H, B, 1.0, &rh[0, 0], H, &dpre[0, t, 2 * H], ldp,
                1.0, &dU[0, 2 * H], H3)
            for b in range(B):
                for j in range(H):
                    hp = hp_ptr[b * ldh + j]
                    r = rs[b, t, j]
                    dhp[b, j] += drh[b, j] * r
                    dpre[b, t, H + j] = drh[b, j] * hp * r * (1.0 - r)
            # dhp += [dz_pre dr_pre] @ Uzr^T
            _mm(b'N', b'T', B, H, 2 * H, 1.0, &dpre[0, t, 0], ldp,
                &U[0, 0], H3, 1.0, &dhp[0, 0], H)
            # dUzr += h^T [dz_pre dr_pre]
            _mm(b'T', b'N', H, 2 * H, B, 1.0, hp_ptr, ldh, &dpre[0, t, 0], ldp,
                1.0, &dU[0, 0], H3)
            for b in range(B):
                for j in range(H):
                    dh[b, j] = dhp[b, j]
    return dpre_a, dU_a, dh_a
