"""Network inversion to per-date phase, residual masks and velocity fitting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from seqlink import _backend
from seqlink.network import TWO_PI, IfgNetwork, UnwrappedStack
from seqlink.sim import DAYS_PER_YEAR


class L1Problem:
    """``min_x ||A x - b||_1`` for many ``b`` sharing one incidence matrix.

    The Cholesky factor of ``A.T @ A`` is computed once here and reused for
    every pixel; a rank-deficient ``A`` is rejected at construction.
    """

    def __init__(self, incidence, rho: float = 1.0, max_iter: int = 1000,
                 tol_abs: float = 1e-6, tol_rel: float = 1e-4):
        a = np.ascontiguousarray(incidence, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] == 0:
            raise ValueError(f"incidence must be 2D with at least one column, got {a.shape}")
        if not rho > 0:
            raise ValueError("rho must be positive")
        try:
            chol = sla.cholesky(a.T @ a, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("incidence matrix is rank deficient (disconnected network)") from exc
        if np.linalg.matrix_rank(a) < a.shape[1]:
            raise ValueError("incidence matrix is rank deficient (disconnected network)")
        self.a = a
        self.chol = np.ascontiguousarray(chol)
        self.rho = float(rho)
        self.max_iter = int(max_iter)
        self.tol_abs = float(tol_abs)
        self.tol_rel = float(tol_rel)

    @property
    def shape(self):
        return self.a.shape

    def solve_l1(self, b, warm_start: bool = True):
        """Returns ``(x, residuals, iterations)`` for ``b`` of shape (P, m) or (m,)."""
        b = np.asarray(b, dtype=np.float64)
        single = b.ndim == 1
        b2 = np.ascontiguousarray(np.atleast_2d(b))
        x, iters = _backend.admm_l1_batch(self.a, self.chol, b2, self.rho, self.max_iter,
                                          self.tol_abs, self.tol_rel, warm_start)
        res = b2 - x @ self.a.T
        if single:
            return x[0], res[0], int(iters[0])
        return x, res, iters

    def solve_lsq(self, b):
        b = np.asarray(b, dtype=np.float64)
        single = b.ndim == 1
        b2 = np.atleast_2d(b)
        x = sla.cho_solve((self.chol, True), (b2 @ self.a).T).T
        return x[0] if single else x


def admm_l1(problem: L1Problem, b):
    return problem.solve_l1(b)


def lsq_baseline(a, b):
    return L1Problem(a).solve_lsq(b)


def spatial_reference(unw: UnwrappedStack, pixel) -> UnwrappedStack:
    """Subtract the reference pixel's value from every pixel of each pair."""
    r, c = pixel
    ref = unw.unwrapped[:, r, c]
    if not np.all(np.isfinite(ref)) or np.any(unw.components[:, r, c] == 0):
        raise ValueError(f"reference pixel {pixel} is masked in at least one pair")
    return UnwrappedStack(unw.unwrapped - ref[:, None, None], unw.components, unw.quality, unw.injected)


def mask_unwrap_errors(residuals, tol: float = 0.5):
    """Flag residuals far from every ``2 pi k`` and residuals near a nonzero ``2 pi k``.

    Returns ``(non_integer, nonzero_integer)`` boolean arrays.
    """
    r = np.asarray(residuals, dtype=np.float64)
    k = np.round(r / TWO_PI)
    dist = np.abs(r - TWO_PI * k)
    non_integer = dist > tol
    return non_integer, (~non_integer) & (k != 0)


def fit_velocity(phase, dates, valid=None):
    """Per-pixel OLS slope of phase against time in rad/yr.

    ``phase`` is (N, rows, cols). Pixels with fewer than two valid epochs
    are NaN. Returns ``(velocity, ok_mask)``.
    """
    ph = np.asarray(phase, dtype=np.float64)
    t = (np.asarray(dates, dtype=np.float64) - dates[0]) / DAYS_PER_YEAR
    if ph.shape[0] != t.size:
        raise ValueError("one date per phase layer required")
    if valid is None:
        valid = np.isfinite(ph)
    w = valid.astype(np.float64)
    y = np.where(valid, ph, 0.0)
    tt = t.reshape((-1,) + (1,) * (ph.ndim - 1))
    n = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tm = (w * tt).sum(axis=0) / n
        ym = (w * y).sum(axis=0) / n
        sxy = (w * (tt - tm) * (y - ym)).sum(axis=0)
        sxx = (w * (tt - tm) ** 2).sum(axis=0)
        vel = sxy / sxx
    ok = (n >= 2) & (sxx > 0)
    return np.where(ok, vel, np.nan), ok


def rad_to_mm(values, wavelength_mm: float = 55.47):
    return np.asarray(values) * wavelength_mm / (4.0 * np.pi)


@dataclass
class TimeSeries:
    phases: np.ndarray  # (N, rows, cols), date 0 identically zero
    residuals: np.ndarray  # (N_ifg, rows, cols)
    non_integer: np.ndarray
    nonzero_integer: np.ndarray
    dates: np.ndarray
    reference_pixel: tuple[int, int] | None = None
    iterations: np.ndarray | None = None


def invert_network(unw: UnwrappedStack, net: IfgNetwork, method: str = "l1", rho=1.0,
                   max_iter=1000, tol_abs=1e-6, tol_rel=1e-4, mask_tol=0.5,
                   reference_pixel=None) -> TimeSeries:
    """Solve every pixel's network; date 0 of ``net`` is fixed at zero."""
    data = np.asarray(unw.unwrapped, dtype=np.float64)
    m, rows, cols = data.shape
    if m != len(net):
        raise ValueError("one unwrapped raster per network pair required")
    prob = L1Problem(net.incidence, rho, max_iter, tol_abs, tol_rel)
    b = data.reshape(m, -1).T
    finite = np.all(np.isfinite(b), axis=1)
    x = np.full((b.shape[0], prob.shape[1]), np.nan)
    iters = np.zeros(b.shape[0], dtype=np.int64)
    if method == "l1":
        xs, _, it = prob.solve_l1(np.ascontiguousarray(b[finite]))
        x[finite], iters[finite] = xs, it
    elif method == "lsq":
        x[finite] = prob.solve_lsq(b[finite])
    else:
        raise ValueError(f"unknown inversion method {method!r}")
    res = (b - x @ prob.a.T).T.reshape(m, rows, cols)
    phases = np.concatenate([np.zeros((1, rows, cols)), x.T.reshape(-1, rows, cols)])
    non_int, nz_int = mask_unwrap_errors(res, mask_tol)
    return TimeSeries(phases, res, non_int, nz_int, np.asarray(net.dates), reference_pixel,
                      iters.reshape(rows, cols))
