"""Synthetic SLC stacks with known truth, and the Cramer-Rao bound used to score them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from seqlink.stack import SlcStack

DAYS_PER_YEAR = 365.25
PSD_TOL = 1e-10


@dataclass(frozen=True)
class CoherenceModel:
    """Exponentially decaying temporal correlation.

    ``rho(t) = (rho0 - rho_inf) * exp(-t / tau) + rho_inf`` with ``tau`` in days.
    """

    rho0: float = 1.0
    rho_inf: float = 0.0
    tau: float = 60.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("rho0", "rho_inf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def rho(self, dt):
        dt = np.abs(np.asarray(dt, dtype=np.float64))
        return (self.rho0 - self.rho_inf) * np.exp(-dt / self.tau) + self.rho_inf


def correlation_matrix(model: CoherenceModel, dates) -> np.ndarray:
    dates = np.asarray(dates, dtype=np.float64)
    if dates.size == 0:
        raise ValueError("dates must be nonempty")
    if np.any(np.diff(dates) <= 0):
        raise ValueError("dates must be strictly increasing")
    corr = model.rho(dates[:, None] - dates[None, :])
    np.fill_diagonal(corr, 1.0)
    return corr


def psd_sqrt(corr: np.ndarray) -> np.ndarray:
    """A factor ``F`` with ``F @ F.T == corr`` after symmetrizing and clipping.

    Cholesky when it succeeds, otherwise the eigen square root with
    eigenvalues below ``PSD_TOL`` set to zero.
    """
    corr = np.asarray(corr, dtype=np.float64)
    corr = 0.5 * (corr + corr.T)
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(corr)
        if w.min() < -PSD_TOL * max(1.0, w.max()):
            raise ValueError(f"correlation matrix is not PSD (min eigenvalue {w.min():.3g})")
        w = np.where(w < PSD_TOL, 0.0, w)
        return v * np.sqrt(w)


def sample_ccg(corr, true_phase, rng_seed, size=None) -> np.ndarray:
    """Draw circular complex Gaussian vectors with correlation ``corr``.

    Returns shape ``(N,)``, or ``(N, *size)`` when ``size`` is given. Each
    component has unit average power and carries ``exp(1j * true_phase)``.
    """
    corr = np.asarray(corr, dtype=np.float64)
    phase = np.asarray(true_phase, dtype=np.float64)
    nd = corr.shape[0]
    if corr.shape != (nd, nd) or phase.shape[0] != nd:
        raise ValueError(f"corr {corr.shape} and truePhase {phase.shape} disagree")
    factor = psd_sqrt(corr)
    rng = np.random.default_rng(rng_seed)
    shape = (nd,) if size is None else (nd, *np.atleast_1d(size))
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    w = np.tensordot(factor, noise, axes=(1, 0))
    extra = (1,) * (w.ndim - phase.ndim)
    return w * np.exp(1j * phase).reshape(phase.shape + extra)


@dataclass
class TruthScene:
    """Per-date true phase (radians, referenced to the first date).

    ``rate`` is the deformation rate map in rad/yr and ``troposphere`` the
    raw per-date tropospheric screens before referencing.
    """

    shape: tuple[int, int]
    dates: np.ndarray
    phase: np.ndarray
    rate: np.ndarray
    troposphere: np.ndarray


def gaussian_bowl(shape, sigma=None) -> np.ndarray:
    """Unit-peak Gaussian profile centered on pixel ``(rows // 2, cols // 2)``."""
    rows, cols = shape
    if sigma is None:
        sigma = cols / 6.0
    r = np.arange(rows) - rows // 2
    c = np.arange(cols) - cols // 2
    return np.exp(-(r[:, None] ** 2 + c[None, :] ** 2) / (2.0 * sigma**2))


def turbulent_screen(shape, std, corr_len, rng) -> np.ndarray:
    """Smooth Gaussian random field with spatial std ``std``."""
    if std == 0:
        return np.zeros(shape)
    white = rng.standard_normal(shape)
    field = ndimage.gaussian_filter(white, sigma=corr_len, mode="wrap")
    field -= field.mean()
    return field * (std / field.std())


def build_truth_scene(
    shape,
    dates,
    bowl_rate_rad_per_year: float,
    troposphere_std: float,
    rng_seed: int,
    tropo_corr_len: float | None = None,
    bowl_sigma: float | None = None,
) -> TruthScene:
    rows, cols = (int(s) for s in shape)
    if rows <= 0 or cols <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    dates = np.asarray(dates, dtype=np.float64)
    if np.any(np.diff(dates) <= 0):
        raise ValueError("dates must be strictly increasing")
    if tropo_corr_len is None:
        tropo_corr_len = cols / 4.0
    rng = np.random.default_rng(rng_seed)
    rate = bowl_rate_rad_per_year * gaussian_bowl((rows, cols), bowl_sigma)
    years = (dates - dates[0]) / DAYS_PER_YEAR
    tropo = np.stack(
        [turbulent_screen((rows, cols), troposphere_std, tropo_corr_len, rng) for _ in dates]
    )
    phase = rate[None] * years[:, None, None] + (tropo - tropo[:1])
    return TruthScene((rows, cols), dates, phase, rate, tropo)


def simulate_stack(truth: TruthScene, model: CoherenceModel, rng_seed: int) -> SlcStack:
    """SLC layers whose per-pixel statistics follow ``model`` around ``truth``."""
    corr = correlation_matrix(model, truth.dates)
    factor = psd_sqrt(corr)
    rows, cols = truth.shape
    nd = truth.dates.size
    rng = np.random.default_rng(rng_seed)
    noise = (rng.standard_normal((nd, rows * cols)) + 1j * rng.standard_normal((nd, rows * cols))) / np.sqrt(2)
    w = (factor @ noise).reshape(nd, rows, cols)
    layers = (w * np.exp(1j * truth.phase)).astype(np.complex64)
    return SlcStack(truth.dates.copy(), layers)


def regular_dates(count: int, spacing_days: float = 12.0, start: float = 0.0) -> np.ndarray:
    return start + spacing_days * np.arange(count, dtype=np.float64)


def crlb_phase_std(gamma, looks: int, reference: int = 0) -> np.ndarray:
    """Per-date phase standard deviation lower bound (radians).

    Uses the Fisher information ``2 L (gamma o inv(gamma) - I)`` with the
    reference date's row and column removed. Raises ``LinAlgError`` when
    ``gamma`` is singular. A perfectly coherent ``gamma`` returns zeros.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    nd = gamma.shape[0]
    if looks < 1:
        raise ValueError("looks must be >= 1")
    out = np.zeros(nd)
    if np.allclose(gamma, 1.0):
        return out
    inv = np.linalg.inv(gamma)
    if not np.all(np.isfinite(inv)) or np.linalg.cond(gamma) > 1e14:
        raise np.linalg.LinAlgError("coherence matrix is singular")
    fisher = 2.0 * looks * (gamma * inv - np.eye(nd))
    keep = np.delete(np.arange(nd), reference)
    cov = np.linalg.pinv(fisher[np.ix_(keep, keep)])
    out[keep] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return out
