"""Pure numpy implementations of the hot kernels.

These mirror ``_core.pyx`` one-for-one. They vectorize across pixels instead
of looping, so they are usable (if slower) when the extension is not built.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

# status codes shared with the compiled core
EMI_OK = 0
EMI_INVERSION_FAILED = 1
EMI_NOT_CONVERGED = 2

_CHUNK = 4096


def estimate_coherence(slc, shp, rows, cols):
    """Normalized sample coherence at the given pixels.

    Parameters
    ----------
    slc : ndarray, shape (N, R, C), complex
    shp : ndarray, shape (R, C, wy, wx), bool
        Neighborhood masks centered on each pixel.
    rows, cols : ndarray of int, shape (P,)

    Returns
    -------
    coh : ndarray, shape (P, N, N), complex128
    looks : ndarray, shape (P,), int64
    valid : ndarray, shape (P,), bool
    """
    nd, nrows, ncols = slc.shape
    wy, wx = shp.shape[2], shp.shape[3]
    hy, hx = wy // 2, wx // 2
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    npix = rows.size
    coh = np.zeros((npix, nd, nd), dtype=np.complex128)
    looks = np.zeros(npix, dtype=np.int64)
    for start in range(0, npix, _CHUNK):
        sl = slice(start, start + _CHUNK)
        r0, c0 = rows[sl], cols[sl]
        acc = np.zeros((r0.size, nd, nd), dtype=np.complex128)
        cnt = np.zeros(r0.size, dtype=np.int64)
        for dy in range(-hy, hy + 1):
            rr = r0 + dy
            for dx in range(-hx, hx + 1):
                cc = c0 + dx
                inside = (rr >= 0) & (rr < nrows) & (cc >= 0) & (cc < ncols)
                m = inside.copy()
                m[inside] = shp[r0[inside], c0[inside], dy + hy, dx + hx]
                if not m.any():
                    continue
                z = slc[:, rr[m], cc[m]].T.astype(np.complex128)
                acc[m] += z[:, :, None] * z[:, None, :].conj()
                cnt[m] += 1
        coh[sl] = acc
        looks[sl] = cnt
    return normalize_coherence(coh, looks)


def normalize_coherence(cov, looks):
    """Scale covariance matrices to unit diagonal; zero-power dates stay zero."""
    power = np.real(np.einsum("pii->pi", cov))
    valid = np.all(power > 0, axis=1) & (looks > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(power > 0, 1.0 / np.sqrt(np.where(power > 0, power, 1.0)), 0.0)
    coh = cov * inv[:, :, None] * inv[:, None, :]
    idx = np.arange(cov.shape[1])
    coh[:, idx, idx] = np.where(power > 0, 1.0, 0.0)
    return coh, looks, valid


def _invert_magnitude(gmag, cond_limit):
    """Invert each real symmetric matrix; flag non-PD or ill-conditioned ones."""
    w, v = np.linalg.eigh(gmag)
    ok = np.all(np.isfinite(w), axis=1) & (w[:, 0] > 0)
    safe_w = np.where(ok[:, None], w, 1.0)
    inv = np.einsum("pij,pj,pkj->pik", v, 1.0 / safe_w, v)
    norm_a = np.abs(gmag).sum(axis=1).max(axis=1)
    norm_inv = np.abs(inv).sum(axis=1).max(axis=1)
    cond = norm_a * norm_inv
    ok &= np.isfinite(cond) & (cond <= cond_limit) & np.all(np.isfinite(inv), axis=(1, 2))
    return inv, ok


def _solve_shifted(b, mu, x):
    nd = b.shape[-1]
    mat = b - mu[:, None, None] * np.eye(nd)
    try:
        return np.linalg.solve(mat, x[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # exact singularity only happens when mu hits an eigenvalue
        return np.linalg.solve(mat - 1e-12 * np.eye(nd), x[..., None])[..., 0]


def _inverse_iteration(b, mu0, max_iter, tol, update_shift):
    npix, nd, _ = b.shape
    x = np.full((npix, nd), 1.0 / np.sqrt(nd), dtype=np.complex128)
    mu = mu0.copy()
    lam = np.zeros(npix)
    iters = np.zeros(npix, dtype=np.int64)
    done = np.zeros(npix, dtype=bool)
    active = np.arange(npix)
    for _ in range(max_iter):
        if active.size == 0:
            break
        xa = x[active]
        ba = b[active]
        y = _solve_shifted(ba, mu[active], xa)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        c = np.einsum("pi,pi->p", xa.conj(), y)
        change = np.linalg.norm(y - c[:, None] * xa, axis=1)
        by = np.einsum("pij,pj->pi", ba, y)
        rq = np.real(np.einsum("pi,pi->p", y.conj(), by))
        x[active] = y
        lam[active] = rq
        iters[active] += 1
        conv = change < tol
        done[active[conv]] = True
        if update_shift:
            res = np.linalg.norm(by - rq[:, None] * y, axis=1)
            new_mu = rq - res
            move = np.abs(new_mu - mu[active]) > 1e-3
            mu[active[move]] = new_mu[move]
        if conv.any():
            fin = active[conv]
            x[fin], lam[fin] = _polish(ba[conv], rq[conv], y[conv])
            iters[fin] += 1
        active = active[~conv]
    return x, lam, iters, done


def _polish(b, rq, x):
    """One solve shifted just below the converged Rayleigh quotient."""
    mu = rq - 1e-9 * np.maximum(1.0, np.abs(rq))
    y = _solve_shifted(b, mu, x)
    nrm = np.linalg.norm(y, axis=1, keepdims=True)
    good = (np.isfinite(nrm) & (nrm > 0))[:, 0]
    y = np.where(good[:, None], y / np.where(good[:, None], nrm, 1.0), x)
    lam = np.real(np.einsum("pi,pij,pj->p", y.conj(), b, y))
    return y, lam


def _is_smallest(b, lam):
    nd = b.shape[-1]
    delta = 1e-9 * np.maximum(1.0, np.abs(lam))
    w = np.linalg.eigvalsh(b - (lam - delta)[:, None, None] * np.eye(nd))
    return w[:, 0] > 0


def emi_batch(coh, shift0=0.99, max_iter=100, cond_limit=1e12, beta=0.0, tol=1e-10):
    """EMI phase linking for a batch of coherence matrices.

    Returns the (unreferenced, not yet unit-normalized) eigenvector of
    ``inv(|C|) o C`` with the smallest eigenvalue, the eigenvalue, the number
    of linear solves and a status code per pixel.
    """
    coh = np.asarray(coh, dtype=np.complex128)
    npix, nd, _ = coh.shape
    vec = np.zeros((npix, nd), dtype=np.complex128)
    lam = np.full(npix, np.nan)
    iters = np.zeros(npix, dtype=np.int64)
    status = np.full(npix, EMI_INVERSION_FAILED, dtype=np.int8)
    for start in range(0, npix, _CHUNK):
        sl = slice(start, min(start + _CHUNK, npix))
        c = coh[sl]
        gmag = np.abs(c) + beta * np.eye(nd)
        ginv, ok = _invert_magnitude(gmag, cond_limit)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            continue
        b = ginv[idx] * c[idx]
        b = 0.5 * (b + np.conj(np.swapaxes(b, 1, 2)))
        mu0 = np.full(idx.size, shift0)
        x, rq, it, conv = _inverse_iteration(b, mu0, max_iter, tol, True)
        good = conv & _is_smallest(b, rq)
        bad = np.flatnonzero(~good)
        if bad.size:
            # restart below the Gershgorin bound so the nearest eigenvalue is the smallest
            bb = b[bad]
            diag = np.real(np.einsum("pii->pi", bb))
            off = np.abs(bb).sum(axis=2) - np.abs(diag)
            lower = (diag - off).min(axis=1) - 1e-6
            x2, rq2, it2, conv2 = _inverse_iteration(bb, lower, max_iter, tol, False)
            x[bad], rq[bad], conv[bad] = x2, rq2, conv2
            it[bad] += it2
        sub = np.arange(sl.start, sl.stop)[idx]
        vec[sub] = x
        lam[sub] = rq
        iters[sub] = it
        status[sub] = np.where(conv, EMI_OK, EMI_NOT_CONVERGED)
    return vec, lam, iters, status


def admm_l1_batch(a, chol, b, rho=1.0, max_iter=1000, tol_abs=1e-6, tol_rel=1e-4):
    """Scaled-form ADMM for ``min ||A x - b||_1`` over many right-hand sides.

    ``chol`` is the lower Cholesky factor of ``A.T @ A``. Pixels are solved
    together with cold starts; each pixel freezes once it meets its own
    stopping criterion.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    npix, m = b.shape
    n = a.shape[1]
    x = np.zeros((npix, n))
    z = np.zeros((npix, m))
    u = np.zeros((npix, m))
    iters = np.zeros(npix, dtype=np.int64)
    kappa = 1.0 / rho
    active = np.arange(npix)
    sqm, sqn = np.sqrt(m), np.sqrt(n)
    for _ in range(max_iter):
        if active.size == 0:
            break
        ba, za, ua = b[active], z[active], u[active]
        rhs = (ba + za - ua) @ a
        xa = sla.cho_solve((chol, True), rhs.T).T
        ax = xa @ a.T
        v = ax - ba + ua
        znew = np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)
        unew = ua + ax - ba - znew
        r = np.linalg.norm(ax - ba - znew, axis=1)
        s = rho * np.linalg.norm((znew - za) @ a, axis=1)
        eps_pri = sqm * tol_abs + tol_rel * np.maximum.reduce(
            [np.linalg.norm(ax, axis=1), np.linalg.norm(znew, axis=1), np.linalg.norm(ba, axis=1)]
        )
        eps_dual = sqn * tol_abs + tol_rel * rho * np.linalg.norm(unew @ a, axis=1)
        x[active], z[active], u[active] = xa, znew, unew
        iters[active] += 1
        active = active[~((r < eps_pri) & (s < eps_dual))]
    return x, iters
