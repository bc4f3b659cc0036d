# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels.  Same contract as ``_fallback``; rows are processed
independently and reductions run in index order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh
from libc.string cimport memcpy

cnp.import_array()


cdef inline void _mlp(const double* x, const double* W1, const double* b1,
                      const double* W2, const double* b2, const double* W3,
                      const double* b3, int m, int H, double sign,
                      double* a1, double* a2, double* y) noexcept nogil:
    # i-outer / j-inner keeps weight reads contiguous; each output still sums in i order
    cdef int i, j
    cdef double xi
    cdef const double* w
    for j in range(H):
        a1[j] = b1[j]
    for i in range(m):
        xi = x[i]
        w = W1 + i * H
        for j in range(H):
            a1[j] = a1[j] + xi * w[j]
    for j in range(H):
        a1[j] = tanh(a1[j])
        a2[j] = b2[j]
    for i in range(H):
        xi = a1[i]
        w = W2 + i * H
        for j in range(H):
            a2[j] = a2[j] + xi * w[j]
    for j in range(H):
        a2[j] = tanh(a2[j])
    for j in range(m):
        y[j] = b3[j]
    for i in range(H):
        xi = a2[i]
        w = W3 + i * m
        for j in range(m):
            y[j] = y[j] + xi * w[j]
    for j in range(m):
        y[j] = sign * y[j]


cdef inline void _mlp_back(const double* x, const double* a1, const double* a2,
                           const double* gk, const double* W1, const double* W2,
                           const double* W3, int m, int H, double sign,
                           double* gW1, double* gb1, double* gW2, double* gb2,
                           double* gW3, double* gb3, double* gy, double* gz2,
                           double* gz1, double* gx) noexcept nogil:
    cdef int i, j
    cdef double acc
    for j in range(m):
        gy[j] = sign * gk[j]
        gb3[j] += gy[j]
    for i in range(H):
        acc = 0.0
        for j in range(m):
            gW3[i * m + j] += a2[i] * gy[j]
            acc = acc + gy[j] * W3[i * m + j]
        gz2[i] = acc * (1.0 - a2[i] * a2[i])
    for j in range(H):
        gb2[j] += gz2[j]
    for i in range(H):
        acc = 0.0
        for j in range(H):
            gW2[i * H + j] += a1[i] * gz2[j]
            acc = acc + gz2[j] * W2[i * H + j]
        gz1[i] = acc * (1.0 - a1[i] * a1[i])
    for j in range(H):
        gb1[j] += gz1[j]
    for i in range(m):
        acc = 0.0
        for j in range(H):
            gW1[i * H + j] += x[i] * gz1[j]
            acc = acc + gz1[j] * W1[i * H + j]
        gx[i] = acc


def rk4_mlp_forward(h0, W1, b1, W2, b2, W3, b3, double dt, int n_steps, active, double sign):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.flatnonzero(active).astype(np.int64)
    cdef int m = W1.shape[0]
    cdef int H = W1.shape[1]
    cdef int nact = idx.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.array(h0, dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW1 = np.ascontiguousarray(W1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] cb1 = np.ascontiguousarray(b1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW2 = np.ascontiguousarray(W2, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] cb2 = np.ascontiguousarray(b2, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW3 = np.ascontiguousarray(W3, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] cb3 = np.ascontiguousarray(b3, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] X = np.empty((nact, n_steps, 4, m))
    cdef cnp.ndarray[double, ndim=4, mode="c"] A1 = np.empty((nact, n_steps, 4, H))
    cdef cnp.ndarray[double, ndim=4, mode="c"] A2 = np.empty((nact, n_steps, 4, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] K = np.empty((4, m))
    cdef double* pX = &X[0, 0, 0, 0] if nact > 0 and n_steps > 0 else NULL
    cdef double* pA1 = &A1[0, 0, 0, 0] if nact > 0 and n_steps > 0 else NULL
    cdef double* pA2 = &A2[0, 0, 0, 0] if nact > 0 and n_steps > 0 else NULL
    cdef double* k = &K[0, 0]
    cdef double* pw1 = &cW1[0, 0]
    cdef double* pb1 = &cb1[0]
    cdef double* pw2 = &cW2[0, 0]
    cdef double* pb2 = &cb2[0]
    cdef double* pw3 = &cW3[0, 0]
    cdef double* pb3 = &cb3[0]
    cdef double* row
    cdef double* xs
    cdef int r, s, q, i
    cdef Py_ssize_t off
    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0
    with nogil:
        for r in range(nact):
            row = &out[idx[r], 0]
            for s in range(n_steps):
                for q in range(4):
                    off = (<Py_ssize_t>r * n_steps + s) * 4 + q
                    xs = pX + off * m
                    if q == 0:
                        memcpy(xs, row, m * sizeof(double))
                    elif q == 3:
                        for i in range(m):
                            xs[i] = row[i] + dt * k[2 * m + i]
                    else:
                        for i in range(m):
                            xs[i] = row[i] + half * k[(q - 1) * m + i]
                    _mlp(xs, pw1, pb1, pw2, pb2, pw3, pb3, m, H, sign,
                         pA1 + off * H, pA2 + off * H, k + q * m)
                for i in range(m):
                    row[i] = row[i] + sixth * (k[i] + 2.0 * k[m + i] + 2.0 * k[2 * m + i] + k[3 * m + i])
    return out, (idx, X, A1, A2)


def rk4_mlp_backward(cache, g, W1, b1, W2, b2, W3, b3, double dt, int n_steps, double sign):
    idx_, X_, A1_, A2_ = cache
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = idx_
    cdef cnp.ndarray[double, ndim=4, mode="c"] X = X_
    cdef cnp.ndarray[double, ndim=4, mode="c"] A1 = A1_
    cdef cnp.ndarray[double, ndim=4, mode="c"] A2 = A2_
    cdef int m = W1.shape[0]
    cdef int H = W1.shape[1]
    cdef int nact = idx.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW1 = np.ascontiguousarray(W1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW2 = np.ascontiguousarray(W2, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cW3 = np.ascontiguousarray(W3, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] gh = np.array(g, dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[double, ndim=2, mode="c"] gW1 = np.zeros((m, H))
    cdef cnp.ndarray[double, ndim=1, mode="c"] gb1 = np.zeros(H)
    cdef cnp.ndarray[double, ndim=2, mode="c"] gW2 = np.zeros((H, H))
    cdef cnp.ndarray[double, ndim=1, mode="c"] gb2 = np.zeros(H)
    cdef cnp.ndarray[double, ndim=2, mode="c"] gW3 = np.zeros((H, m))
    cdef cnp.ndarray[double, ndim=1, mode="c"] gb3 = np.zeros(m)
    cdef cnp.ndarray[double, ndim=2, mode="c"] work = np.zeros((8, max(m, H)))
    cdef double* gk = &work[0, 0]
    cdef double* gx = &work[4, 0]
    cdef double* gxs = &work[5, 0]
    cdef double* gy = &work[6, 0]
    cdef double* gz = &work[7, 0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] work2 = np.zeros((2, H))
    cdef double* gz2 = &work2[0, 0]
    cdef double* gz1 = &work2[1, 0]
    cdef int stride = work.shape[1]
    cdef double* G
    cdef int r, s, q, i
    cdef Py_ssize_t off
    cdef double w
    cdef double[4] coef
    coef[0] = dt / 6.0
    coef[1] = dt / 3.0
    coef[2] = dt / 3.0
    coef[3] = dt / 6.0
    with nogil:
        for r in range(nact):
            G = &gh[idx[r], 0]
            for s in range(n_steps - 1, -1, -1):
                for q in range(4):
                    for i in range(m):
                        gk[q * stride + i] = G[i] * coef[q]
                for i in range(m):
                    gx[i] = G[i]
                for q in range(3, -1, -1):
                    off = (<Py_ssize_t>r * n_steps + s) * 4 + q
                    _mlp_back(&X[0, 0, 0, 0] + off * m, &A1[0, 0, 0, 0] + off * H,
                              &A2[0, 0, 0, 0] + off * H, gk + q * stride,
                              &cW1[0, 0], &cW2[0, 0], &cW3[0, 0], m, H, sign,
                              &gW1[0, 0], &gb1[0], &gW2[0, 0], &gb2[0], &gW3[0, 0], &gb3[0],
                              gy, gz2, gz1, gxs)
                    for i in range(m):
                        gx[i] = gx[i] + gxs[i]
                    if q == 3:
                        w = dt
                    else:
                        w = 0.5 * dt
                    if q > 0:
                        for i in range(m):
                            gk[(q - 1) * stride + i] = gk[(q - 1) * stride + i] + w * gxs[i]
                for i in range(m):
                    G[i] = gx[i]
    return gh, gW1, gb1, gW2, gb2, gW3, gb3


def affine_rollout_forward(A, b, z0, int n):
    cdef cnp.ndarray[double, ndim=3, mode="c"] cA = np.ascontiguousarray(A, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cb = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] cz = np.ascontiguousarray(z0, dtype=np.float64)
    cdef int B = cz.shape[0]
    cdef int d = cz.shape[1]
    cdef cnp.ndarray[double, ndim=3, mode="c"] Z = np.empty((B, n + 1, d))
    cdef int r, j, i, k
    cdef double acc
    with nogil:
        for r in range(B):
            for i in range(d):
                Z[r, 0, i] = cz[r, i]
            for j in range(1, n + 1):
                for i in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc = acc + cA[r, i, k] * Z[r, j - 1, k]
                    Z[r, j, i] = acc + cb[r, i]
    return Z


def affine_rollout_backward(A, Z_, gZ_):
    cdef cnp.ndarray[double, ndim=3, mode="c"] cA = np.ascontiguousarray(A, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] Z = np.ascontiguousarray(Z_, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] gZ = np.ascontiguousarray(gZ_, dtype=np.float64)
    cdef int B = Z.shape[0]
    cdef int n = Z.shape[1] - 1
    cdef int d = Z.shape[2]
    cdef cnp.ndarray[double, ndim=3, mode="c"] gA = np.zeros((B, d, d))
    cdef cnp.ndarray[double, ndim=2, mode="c"] gb = np.zeros((B, d))
    cdef cnp.ndarray[double, ndim=2, mode="c"] lam = np.empty((B, d))
    cdef cnp.ndarray[double, ndim=1, mode="c"] nxt = np.empty(d)
    cdef int r, j, i, k
    cdef double acc
    with nogil:
        for r in range(B):
            for i in range(d):
                lam[r, i] = gZ[r, n, i]
            for j in range(n, 0, -1):
                for i in range(d):
                    gb[r, i] += lam[r, i]
                    for k in range(d):
                        gA[r, i, k] += lam[r, i] * Z[r, j - 1, k]
                for k in range(d):
                    acc = 0.0
                    for i in range(d):
                        acc = acc + cA[r, i, k] * lam[r, i]
                    nxt[k] = gZ[r, j - 1, k] + acc
                for k in range(d):
                    lam[r, k] = nxt[k]
    return gA, gb, lam
