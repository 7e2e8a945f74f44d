# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from scipy.linalg.cython_lapack cimport dgesvd

cnp.import_array()


def prioritized_gram_schmidt(J, double threshold):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Va = np.array(J, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t p = Va.shape[0], m = Va.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] La = np.zeros((p, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Qa = np.zeros((p, m))
    cdef cnp.ndarray[cnp.int8_t, ndim=1] acc = np.zeros(p, dtype=np.int8)
    cdef double[:, ::1] V = Va
    cdef double[:, ::1] L = La
    cdef double[:, ::1] Q = Qa
    cdef Py_ssize_t i, j, a, c
    cdef double s, nrm
    for j in range(p):
        for a in range(j):
            if acc[a]:
                s = 0.0
                for c in range(m):
                    s += V[j, c] * Q[a, c]
                L[j, a] += s
                for c in range(m):
                    V[j, c] -= s * Q[a, c]
        s = 0.0
        for c in range(m):
            s += V[j, c] * V[j, c]
        nrm = sqrt(s)
        if nrm > threshold:
            L[j, j] = nrm
            for c in range(m):
                Q[j, c] = V[j, c] / nrm
            acc[j] = 1
            for i in range(j + 1, p):
                s = 0.0
                for c in range(m):
                    s += V[i, c] * Q[j, c]
                L[i, j] = s
                for c in range(m):
                    V[i, c] -= s * Q[j, c]
    return La, Qa, acc


def unipotent_block_solve(T, blocks, rhs):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Ta = np.ascontiguousarray(T, dtype=np.float64)
    rhs_arr = np.asarray(rhs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Xa = np.array(rhs_arr.reshape(rhs_arr.shape[0], -1), copy=True, order="C")
    cdef double[:, ::1] Tm = Ta
    cdef double[:, ::1] X = Xa
    cdef Py_ssize_t nb = len(blocks)
    cdef Py_ssize_t bi, lo, hi, r, c, q
    cdef double s
    cdef Py_ssize_t ncol = Xa.shape[1]
    for bi in range(1, nb - 1):
        lo = blocks[bi]
        hi = blocks[bi + 1]
        for r in range(lo, hi):
            for c in range(ncol):
                s = 0.0
                for q in range(lo):
                    s += Tm[r, q] * X[q, c]
                X[r, c] -= s
    return Xa.reshape(rhs_arr.shape)


cdef void _gs(double[:, ::1] V, double[:, ::1] L, double[:, ::1] Q, signed char[::1] acc,
              double threshold) noexcept nogil:
    cdef Py_ssize_t p = V.shape[0], m = V.shape[1]
    cdef Py_ssize_t i, j, a, c
    cdef double s, nrm
    for j in range(p):
        for a in range(j):
            if acc[a]:
                s = 0.0
                for c in range(m):
                    s += V[j, c] * Q[a, c]
                L[j, a] += s
                for c in range(m):
                    V[j, c] -= s * Q[a, c]
        s = 0.0
        for c in range(m):
            s += V[j, c] * V[j, c]
        nrm = sqrt(s)
        if nrm > threshold:
            L[j, j] = nrm
            for c in range(m):
                Q[j, c] = V[j, c] / nrm
            acc[j] = 1
            for i in range(j + 1, p):
                s = 0.0
                for c in range(m):
                    s += V[i, c] * Q[j, c]
                L[i, j] = s
                for c in range(m):
                    V[i, c] -= s * Q[j, c]


def canonical_stage(J, dims, d, u_f, double lambda_max, double eps_sing, overrides,
                    double rel_tol, double abs_tol):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Va = np.array(J, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t p = Va.shape[0], m = Va.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] dims_a = np.asarray(dims, dtype=np.int64)
    cdef Py_ssize_t k = dims_a.shape[0]
    cdef double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef double[::1] uf = np.ascontiguousarray(u_f, dtype=np.float64)
    cdef double[::1] ov = np.ascontiguousarray(overrides, dtype=np.float64)
    cdef double[:, ::1] V = Va
    cdef cnp.ndarray[cnp.float64_t, ndim=2] La = np.zeros((p, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Qa = np.zeros((p, m))
    cdef cnp.ndarray[cnp.int8_t, ndim=1] acc_a = np.zeros(p, dtype=np.int8)
    cdef double[:, ::1] L = La
    cdef double[:, ::1] Q = Qa
    cdef signed char[::1] acc = acc_a
    cdef cnp.ndarray[cnp.float64_t, ndim=2] parts_a = np.zeros((k + 1, m))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_a = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] res_a = np.zeros(p)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ranks_a = np.zeros(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam_a = np.zeros(k)
    cdef double[:, ::1] parts = parts_a
    cdef double[::1] u = u_a
    cdef double[::1] res = res_a
    cdef long long[::1] ranks = ranks_a
    cdef double[::1] lam = lam_a
    # scratch for LAPACK (column-major)
    cdef int lwork = 8 * (p + m) + 64
    cdef Py_ssize_t pp = p * p + 1, p1 = p + 1
    cdef double[::1] scratch = np.zeros(3 * pp + 4 * p1 + lwork)
    cdef double[::1] Amat = scratch[:pp]
    cdef double[::1] U = scratch[pp:2 * pp]
    cdef double[::1] VT = scratch[2 * pp:3 * pp]
    cdef double[::1] S = scratch[3 * pp:3 * pp + p1]
    cdef double[::1] r = scratch[3 * pp + p1:3 * pp + 2 * p1]
    cdef double[::1] y = scratch[3 * pp + 2 * p1:3 * pp + 3 * p1]
    cdef double[::1] coef = scratch[3 * pp + 3 * p1:3 * pp + 4 * p1]
    cdef double[::1] work = scratch[3 * pp + 4 * p1:]
    cdef long long[::1] idx_buf = np.zeros(p1 + k + 1, dtype=np.int64)
    cdef long long[::1] col_of = idx_buf[:p1]
    cdef long long[::1] row0 = idx_buf[p1:]
    cdef Py_ssize_t i, j, a, b, c, l, ri, nr, idx
    cdef int M_, N_, LDA, LDU, LDVT, info
    cdef char jobu = b'S'
    cdef char jobvt = b'A'
    cdef double s, frob = 0.0, threshold, smin, lm, cut, fac

    if dims_a.sum() != p or dv.shape[0] != p or uf.shape[0] != m or ov.shape[0] != k:
        raise ValueError("inconsistent dimensions")
    for i in range(k):
        row0[i + 1] = row0[i] + dims_a[i]
    for a in range(p):
        for c in range(m):
            frob += V[a, c] * V[a, c]
    threshold = rel_tol * sqrt(frob)
    if threshold < abs_tol:
        threshold = abs_tol
    _gs(V, L, Q, acc, threshold)

    for i in range(k):
        # accepted rows of task i are the columns of L_ii
        nr = 0
        for a in range(row0[i], row0[i + 1]):
            if acc[a]:
                col_of[nr] = a
                nr += 1
        ranks[i] = nr
        M_ = <int>(row0[i + 1] - row0[i])
        # r = d_i - sum_{j<i} L_ij Q_j u_j
        for a in range(M_):
            s = dv[row0[i] + a]
            for b in range(row0[i]):
                if acc[b]:
                    s -= L[row0[i] + a, b] * coef[b]
            r[a] = s
        if nr < M_:
            smin = 0.0
        if nr > 0:
            N_ = <int>nr
            for a in range(M_):
                for b in range(nr):
                    Amat[a + b * M_] = L[row0[i] + a, col_of[b]]
            LDA = M_
            LDU = M_
            LDVT = N_
            dgesvd(&jobu, &jobvt, &M_, &N_, &Amat[0], &LDA, &S[0], &U[0], &LDU,
                   &VT[0], &LDVT, &work[0], &lwork, &info)
            if info != 0:
                raise np.linalg.LinAlgError("SVD did not converge")
            if nr == M_:
                smin = S[nr - 1]
        if ov[i] == ov[i]:
            lm = ov[i]
        else:
            s = 1.0 - (smin / eps_sing) * (smin / eps_sing)
            lm = lambda_max * sqrt(s) if s > 0 else 0.0
        lam[i] = lm
        for c in range(m):
            parts[i, c] = 0.0
        if nr > 0 and lm != INFINITY:
            cut = rel_tol * S[0]
            if cut < abs_tol:
                cut = abs_tol
            # y = V diag(f) U^T r
            for b in range(nr):
                y[b] = 0.0
            for l in range(nr):
                if lm == 0.0:
                    if S[l] <= cut:
                        continue
                    fac = 1.0 / S[l]
                else:
                    fac = S[l] / (S[l] * S[l] + lm * lm)
                s = 0.0
                for a in range(M_):
                    s += U[a + l * M_] * r[a]
                s *= fac
                for b in range(nr):
                    y[b] += VT[l + b * nr] * s
            for b in range(nr):
                for c in range(m):
                    parts[i, c] += Q[col_of[b], c] * y[b]
        for b in range(nr):
            s = 0.0
            for c in range(m):
                s += Q[col_of[b], c] * parts[i, c]
            coef[col_of[b]] = s

    # free component: u_f minus its projection on the accepted rows
    for c in range(m):
        parts[k, c] = uf[c]
    for b in range(p):
        if acc[b]:
            s = 0.0
            for c in range(m):
                s += Q[b, c] * uf[c]
            for c in range(m):
                parts[k, c] -= s * Q[b, c]

    for a in range(p):
        s = dv[a]
        for b in range(a + 1):
            if acc[b]:
                s -= L[a, b] * coef[b]
        res[a] = s
    for i in range(k + 1):
        for c in range(m):
            u[c] += parts[i, c]
    return u_a, parts_a, res_a, ranks_a, lam_a
