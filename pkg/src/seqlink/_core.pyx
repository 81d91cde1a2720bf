# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: windowed coherence, EMI inverse iteration, per-pixel ADMM.

Semantics match ``seqlink._fallback``; see that module for the reference.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport (
    dpotrf, dpotri, dpocon, dlansy, zgetrf, zgetrs, zpotrf,
)

from seqlink._fallback import normalize_coherence

# keep in sync with seqlink._fallback
cdef enum:
    _OK = 0
    _INVERSION_FAILED = 1
    _NOT_CONVERGED = 2

cnp.import_array()

ctypedef double complex cplx


def estimate_coherence(slc, shp, rows, cols, int threads=1):
    cdef cplx[:, :, ::1] z = np.ascontiguousarray(slc, dtype=np.complex128)
    cdef cnp.uint8_t[:, :, :, ::1] mask = np.ascontiguousarray(shp, dtype=np.uint8)
    cdef cnp.int64_t[::1] rr = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] cc = np.ascontiguousarray(cols, dtype=np.int64)
    cdef Py_ssize_t nd = z.shape[0], nrows = z.shape[1], ncols = z.shape[2]
    cdef Py_ssize_t wy = mask.shape[2], wx = mask.shape[3]
    cdef Py_ssize_t hy = wy // 2, hx = wx // 2
    cdef Py_ssize_t npix = rr.shape[0]
    out = np.zeros((npix, nd, nd), dtype=np.complex128)
    looks_arr = np.zeros(npix, dtype=np.int64)
    cdef cplx[:, :, ::1] acc = out
    cdef cnp.int64_t[::1] looks = looks_arr
    cdef Py_ssize_t p, i, j, dy, dx, r, c
    cdef cplx zi
    cdef cnp.int64_t cnt
    for p in prange(npix, nogil=True, num_threads=threads, schedule="static"):
        cnt = 0
        for dy in range(wy):
            r = rr[p] + dy - hy
            if r < 0 or r >= nrows:
                continue
            for dx in range(wx):
                c = cc[p] + dx - hx
                if c < 0 or c >= ncols:
                    continue
                if not mask[rr[p], cc[p], dy, dx]:
                    continue
                cnt = cnt + 1
                for i in range(nd):
                    zi = z[i, r, c]
                    for j in range(i, nd):
                        acc[p, i, j] = acc[p, i, j] + zi * z[j, r, c].conjugate()
        looks[p] = cnt
        for i in range(nd):
            for j in range(i + 1, nd):
                acc[p, j, i] = acc[p, i, j].conjugate()
    return normalize_coherence(out, looks_arr)


cdef int _invert_magnitude(cplx* coh, double* g, int n, double beta, double cond_limit,
                           double* work, int* iwork) noexcept nogil:
    """Fill ``g`` with inv(|coh| + beta I); return 0 on success."""
    cdef int i, j, info = 0
    cdef double anorm, rcond, v
    cdef char uplo = b'L'
    cdef char norm1 = b'1'
    for i in range(n):
        for j in range(n):
            v = sqrt(coh[i * n + j].real * coh[i * n + j].real + coh[i * n + j].imag * coh[i * n + j].imag)
            if i == j:
                v = v + beta
            if v != v:
                return 1
            g[i + j * n] = v
    anorm = dlansy(&norm1, &uplo, &n, g, &n, work)
    dpotrf(&uplo, &n, g, &n, &info)
    if info != 0:
        return 1
    dpocon(&uplo, &n, g, &n, &anorm, &rcond, work, iwork, &info)
    if info != 0 or rcond <= 0 or 1.0 / rcond > cond_limit:
        return 1
    dpotri(&uplo, &n, g, &n, &info)
    if info != 0:
        return 1
    for j in range(n):
        for i in range(j + 1, n):
            g[j + i * n] = g[i + j * n]
    for i in range(n * n):
        if g[i] != g[i]:
            return 1
    return 0


cdef int _factor(cplx* b, cplx* lu, int* ipiv, int n, double mu) noexcept nogil:
    cdef int i, j, info = 0
    for j in range(n):
        for i in range(n):
            lu[i + j * n] = b[i + j * n]
        lu[j + j * n] = lu[j + j * n] - mu
    zgetrf(&n, &n, lu, &n, ipiv, &info)
    return info


cdef void _polish(cplx* b, cplx* lu, int* ipiv, cplx* x, cplx* y, cplx* by, int n, double rq,
                  double* lam_out) noexcept nogil:
    """One solve shifted just below the converged Rayleigh quotient."""
    cdef int i, j, info = 0, one = 1
    cdef char trans = b'N'
    cdef double nrm, lam
    cdef double mu = rq - 1e-9 * (fabs(rq) if fabs(rq) > 1.0 else 1.0)
    cdef cplx s
    if _factor(b, lu, ipiv, n, mu) != 0:
        return
    for i in range(n):
        y[i] = x[i]
    zgetrs(&trans, &n, &one, lu, &n, ipiv, y, &n, &info)
    nrm = 0.0
    for i in range(n):
        nrm = nrm + y[i].real * y[i].real + y[i].imag * y[i].imag
    nrm = sqrt(nrm)
    if info != 0 or not (nrm > 0) or nrm != nrm or nrm > 1e300:
        return
    lam = 0.0
    for i in range(n):
        y[i] = y[i] / nrm
    for i in range(n):
        s = 0.0
        for j in range(n):
            s = s + b[i + j * n] * y[j]
        by[i] = s
        lam = lam + (y[i].conjugate() * s).real
    for i in range(n):
        x[i] = y[i]
    lam_out[0] = lam


cdef int _inverse_iteration(cplx* b, cplx* lu, int* ipiv, cplx* x, cplx* y, cplx* by,
                            int n, double mu, int max_iter, double tol, bint update_shift,
                            double* lam_out, int* iters_out) noexcept nogil:
    """Shifted inverse iteration on a Hermitian matrix stored column-major.

    Returns 1 when the eigenvector angle change drops below ``tol``.
    """
    cdef int i, j, it, info = 0, one = 1
    cdef char trans = b'N'
    cdef double nrm, change, rq, res, new_mu
    cdef cplx dot, s
    for i in range(n):
        x[i] = 1.0 / sqrt(<double>n)
    if _factor(b, lu, ipiv, n, mu) > 0:
        mu = mu - 1e-12
        _factor(b, lu, ipiv, n, mu)
    for it in range(1, max_iter + 1):
        for i in range(n):
            y[i] = x[i]
        zgetrs(&trans, &n, &one, lu, &n, ipiv, y, &n, &info)
        nrm = 0.0
        for i in range(n):
            nrm = nrm + y[i].real * y[i].real + y[i].imag * y[i].imag
        nrm = sqrt(nrm)
        if not (nrm > 0) or nrm != nrm:
            iters_out[0] = it
            return 0
        dot = 0.0
        for i in range(n):
            y[i] = y[i] / nrm
            dot = dot + x[i].conjugate() * y[i]
        change = 0.0
        for i in range(n):
            s = y[i] - dot * x[i]
            change = change + s.real * s.real + s.imag * s.imag
        change = sqrt(change)
        rq = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s = s + b[i + j * n] * y[j]
            by[i] = s
            rq = rq + (y[i].conjugate() * s).real
        for i in range(n):
            x[i] = y[i]
        lam_out[0] = rq
        iters_out[0] = it
        if change < tol:
            _polish(b, lu, ipiv, x, y, by, n, rq, lam_out)
            iters_out[0] = it + 1
            return 1
        if update_shift:
            res = 0.0
            for i in range(n):
                s = by[i] - rq * y[i]
                res = res + s.real * s.real + s.imag * s.imag
            new_mu = rq - sqrt(res)
            if fabs(new_mu - mu) > 1e-3:
                mu = new_mu
                if _factor(b, lu, ipiv, n, mu) > 0:
                    mu = mu - 1e-12
                    _factor(b, lu, ipiv, n, mu)
    return 0


cdef bint _is_smallest(cplx* b, cplx* work, int n, double lam) noexcept nogil:
    cdef int i, j, info = 0
    cdef char uplo = b'L'
    cdef double delta = 1e-9 * (fabs(lam) if fabs(lam) > 1.0 else 1.0)
    for j in range(n):
        for i in range(n):
            work[i + j * n] = b[i + j * n]
        work[j + j * n] = work[j + j * n] - (lam - delta)
    zpotrf(&uplo, &n, work, &n, &info)
    return info == 0


def emi_batch(coh, double shift0=0.99, int max_iter=100, double cond_limit=1e12,
              double beta=0.0, double tol=1e-10, int threads=1):
    cdef cplx[:, :, ::1] c = np.ascontiguousarray(coh, dtype=np.complex128)
    cdef Py_ssize_t npix = c.shape[0]
    cdef int n = <int>c.shape[1]
    vec_arr = np.zeros((npix, n), dtype=np.complex128)
    lam_arr = np.full(npix, np.nan)
    it_arr = np.zeros(npix, dtype=np.int64)
    st_arr = np.full(npix, _INVERSION_FAILED, dtype=np.int8)
    cdef cplx[:, ::1] vec = vec_arr
    cdef double[::1] lam = lam_arr
    cdef cnp.int64_t[::1] its = it_arr
    cdef cnp.int8_t[::1] st = st_arr
    cdef Py_ssize_t p
    cdef int i, j, ok, it1, it2
    cdef double rq, lower, rowsum, d
    cdef double* g
    cdef double* dwork
    cdef int* iwork
    cdef int* ipiv
    cdef cplx* b
    cdef cplx* lu
    cdef cplx* x
    cdef cplx* y
    cdef cplx* by
    for p in prange(npix, nogil=True, num_threads=threads, schedule="dynamic"):
        g = <double*>malloc(n * n * sizeof(double))
        dwork = <double*>malloc(3 * n * sizeof(double))
        iwork = <int*>malloc(n * sizeof(int))
        ipiv = <int*>malloc(n * sizeof(int))
        b = <cplx*>malloc(n * n * sizeof(cplx))
        lu = <cplx*>malloc(n * n * sizeof(cplx))
        x = <cplx*>malloc(n * sizeof(cplx))
        y = <cplx*>malloc(n * sizeof(cplx))
        by = <cplx*>malloc(n * sizeof(cplx))
        if _invert_magnitude(&c[p, 0, 0], g, n, beta, cond_limit, dwork, iwork) == 0:
            for j in range(n):
                for i in range(n):
                    # column-major, Hermitian-symmetrized
                    b[i + j * n] = 0.5 * (g[i + j * n] * c[p, i, j]
                                          + (g[j + i * n] * c[p, j, i]).conjugate())
            it1 = 0
            it2 = 0
            rq = 0.0
            ok = _inverse_iteration(b, lu, ipiv, x, y, by, n, shift0, max_iter, tol, True, &rq, &it1)
            if not ok or not _is_smallest(b, lu, n, rq):
                lower = 1e300
                for i in range(n):
                    d = b[i + i * n].real
                    rowsum = 0.0
                    for j in range(n):
                        if j != i:
                            rowsum = rowsum + sqrt(b[i + j * n].real * b[i + j * n].real
                                                   + b[i + j * n].imag * b[i + j * n].imag)
                    if d - rowsum < lower:
                        lower = d - rowsum
                ok = _inverse_iteration(b, lu, ipiv, x, y, by, n, lower - 1e-6, max_iter, tol,
                                        False, &rq, &it2)
            for i in range(n):
                vec[p, i] = x[i]
            lam[p] = rq
            its[p] = it1 + it2
            st[p] = _OK if ok else _NOT_CONVERGED
        free(g); free(dwork); free(iwork); free(ipiv)
        free(b); free(lu); free(x); free(y); free(by)
    return vec_arr, lam_arr, it_arr, st_arr


cdef void _chol_solve(double* l, double* v, int n) noexcept nogil:
    """Solve (L L^T) v = v in place; ``l`` row-major lower triangular."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = v[i]
        for k in range(i):
            s = s - l[i * n + k] * v[k]
        v[i] = s / l[i * n + i]
    for i in range(n - 1, -1, -1):
        s = v[i]
        for k in range(i + 1, n):
            s = s - l[k * n + i] * v[k]
        v[i] = s / l[i * n + i]


def admm_l1_batch(a, chol, b, double rho=1.0, int max_iter=1000, double tol_abs=1e-6,
                  double tol_rel=1e-4, bint warm_start=True):
    """Per-pixel ADMM in scan order; ``warm_start`` seeds (z, u) from the previous pixel."""
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] L = np.ascontiguousarray(chol, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(np.atleast_2d(b), dtype=np.float64)
    cdef int m = <int>A.shape[0], n = <int>A.shape[1]
    cdef Py_ssize_t npix = B.shape[0]
    x_arr = np.zeros((npix, n))
    it_arr = np.zeros(npix, dtype=np.int64)
    cdef double[:, ::1] X = x_arr
    cdef cnp.int64_t[::1] its = it_arr
    cdef double[::1] z = np.zeros(m)
    cdef double[::1] u = np.zeros(m)
    cdef double[::1] zold = np.zeros(m)
    cdef double[::1] ax = np.zeros(m)
    cdef double[::1] t = np.zeros(m)
    cdef double[::1] xv = np.zeros(n)
    cdef double[::1] tn = np.zeros(n)
    cdef double kappa = 1.0 / rho
    cdef double sqm = sqrt(<double>m), sqn = sqrt(<double>n)
    cdef double r2, s2, nax, nz, nb, nu, v, eps_pri, eps_dual
    cdef Py_ssize_t p
    cdef int i, k, it
    with nogil:
        for p in range(npix):
            if not warm_start or p == 0:
                for i in range(m):
                    z[i] = 0.0
                    u[i] = 0.0
            for it in range(1, max_iter + 1):
                for k in range(n):
                    v = 0.0
                    for i in range(m):
                        v = v + A[i, k] * (B[p, i] + z[i] - u[i])
                    xv[k] = v
                _chol_solve(&L[0, 0], &xv[0], n)
                r2 = 0.0
                nax = 0.0
                nz = 0.0
                nb = 0.0
                for i in range(m):
                    v = 0.0
                    for k in range(n):
                        v = v + A[i, k] * xv[k]
                    ax[i] = v
                    zold[i] = z[i]
                    v = ax[i] - B[p, i] + u[i]
                    if v > kappa:
                        z[i] = v - kappa
                    elif v < -kappa:
                        z[i] = v + kappa
                    else:
                        z[i] = 0.0
                    u[i] = u[i] + ax[i] - B[p, i] - z[i]
                    v = ax[i] - B[p, i] - z[i]
                    r2 = r2 + v * v
                    nax = nax + ax[i] * ax[i]
                    nz = nz + z[i] * z[i]
                    nb = nb + B[p, i] * B[p, i]
                s2 = 0.0
                nu = 0.0
                for k in range(n):
                    v = 0.0
                    for i in range(m):
                        v = v + A[i, k] * (z[i] - zold[i])
                    s2 = s2 + v * v
                    v = 0.0
                    for i in range(m):
                        v = v + A[i, k] * u[i]
                    nu = nu + v * v
                eps_pri = sqm * tol_abs + tol_rel * sqrt(max(nax, max(nz, nb)))
                eps_dual = sqn * tol_abs + tol_rel * rho * sqrt(nu)
                if sqrt(r2) < eps_pri and rho * sqrt(s2) < eps_dual:
                    break
            for k in range(n):
                X[p, k] = xv[k]
            its[p] = it
    return x_arr, it_arr
