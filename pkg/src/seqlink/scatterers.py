"""Amplitude statistics, persistent-scatterer selection and GLRT neighborhoods."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

VAR_FLOOR = 1e-12
NEG_VAR_TOL = 1e-12


@dataclass(frozen=True)
class AmpStats:
    """Per-pixel amplitude mean, population variance and sample weight."""

    mean: np.ndarray
    var: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        weight = np.broadcast_to(np.asarray(self.weight, dtype=np.float64), mean.shape)
        # rounding in the merge can leave tiny negatives relative to mean**2
        tol = NEG_VAR_TOL * np.maximum(1.0, mean**2)
        if np.any(var < -tol):
            raise ValueError(f"negative amplitude variance {var.min():.3g}")
        if np.any(weight <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", np.where(var < 0, 0.0, var))
        object.__setattr__(self, "weight", np.array(weight))

    @property
    def shape(self):
        return self.mean.shape


def amp_stats_from_stack(layers, date_subset=None) -> AmpStats:
    """Mean and population variance of ``|layers|`` over the chosen dates."""
    layers = np.asarray(layers)
    if date_subset is not None:
        date_subset = np.atleast_1d(np.asarray(date_subset))
        if date_subset.size == 0:
            raise ValueError("date subset is empty")
        layers = layers[date_subset]
    if layers.shape[0] == 0:
        raise ValueError("date subset is empty")
    amp = np.abs(layers).astype(np.float64)
    return AmpStats(amp.mean(axis=0), amp.var(axis=0), np.full(amp.shape[1:], float(amp.shape[0])))


def merge_amp_stats(parts, weighting: str = "equal", decay: float = 0.5) -> AmpStats:
    """Combine group statistics; ``parts`` is ordered oldest first.

    With ``weighting="exponential"`` part ``i`` of ``K`` has its weight
    scaled by ``decay ** (K - 1 - i)``.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one AmpStats")
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise ValueError("AmpStats shapes differ")
    k = len(parts)
    if weighting == "equal":
        scale = np.ones(k)
    elif weighting == "exponential":
        if not 0.0 < decay <= 1.0:
            raise ValueError(f"decay must lie in (0, 1], got {decay}")
        scale = decay ** (k - 1 - np.arange(k, dtype=np.float64))
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    if k == 1:
        return parts[0]
    w = np.stack([p.weight * s for p, s in zip(parts, scale)])
    mu = np.stack([p.mean for p in parts])
    var = np.stack([p.var for p in parts])
    wsum = w.sum(axis=0)
    mean = (w * mu).sum(axis=0) / wsum
    # sum w (var + mu^2) / sum w - mean^2, written around the new mean
    new_var = (w * (var + (mu - mean) ** 2)).sum(axis=0) / wsum
    return AmpStats(mean, new_var, wsum)


@dataclass
class PsMask:
    mask: np.ndarray
    dispersion: np.ndarray


def select_ps(stats: AmpStats, threshold: float = 0.2) -> PsMask:
    """Amplitude dispersion ``std / mean``; PS where it falls below ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        disp = np.where(stats.mean > 0, np.sqrt(stats.var) / stats.mean, np.inf)
    return PsMask(disp < threshold, disp)


@dataclass
class ShpMap:
    """Accepted neighbors per pixel.

    ``mask[r, c, dy + hy, dx + hx]`` is True when pixel ``(r + dy, c + dx)``
    is homogeneous with ``(r, c)``; ``count`` is the number of looks L.
    """

    mask: np.ndarray
    count: np.ndarray
    threshold: float = np.nan

    @property
    def half_extent(self):
        return self.mask.shape[2] // 2, self.mask.shape[3] // 2


def glrt_statistic(mean_c, var_c, mean_n, var_n):
    var_c = np.maximum(var_c, VAR_FLOOR)
    var_n = np.maximum(var_n, VAR_FLOOR)
    pooled = 0.5 * (var_c + var_n) + 0.25 * (mean_c - mean_n) ** 2
    return np.log(pooled) - 0.5 * np.log(var_c) - 0.5 * np.log(var_n)


@lru_cache(maxsize=64)
def glrt_threshold(n_samples: int, alpha: float, n_trials: int = 20000, seed: int = 0) -> float:
    """(1 - alpha) quantile of the statistic between two same-distribution samples.

    Both groups are ``n_samples`` Rayleigh amplitudes; the statistic is scale
    invariant so the Rayleigh scale does not matter.
    """
    n = max(int(round(n_samples)), 2)
    rng = np.random.default_rng(seed)

    def draw():
        z = rng.standard_normal((n_trials, n)) + 1j * rng.standard_normal((n_trials, n))
        a = np.abs(z)
        return a.mean(axis=1), a.var(axis=1)

    m1, v1 = draw()
    m2, v2 = draw()
    return float(np.quantile(glrt_statistic(m1, v1, m2, v2), 1.0 - alpha))


def glrt_shp(stats: AmpStats, half_extent=(5, 7), alpha: float = 0.05, seed: int = 0) -> ShpMap:
    """Statistically homogeneous neighbors from amplitude means and variances."""
    hy, hx = (int(h) for h in half_extent)
    n_eff = float(np.median(stats.weight))
    if n_eff < 2:
        raise ValueError("GLRT needs at least 2 equivalent samples")
    thresh = glrt_threshold(int(round(n_eff)), float(alpha), seed=seed)
    rows, cols = stats.shape
    mask = np.zeros((rows, cols, 2 * hy + 1, 2 * hx + 1), dtype=bool)
    pad_m = np.pad(stats.mean, ((hy, hy), (hx, hx)), constant_values=np.nan)
    pad_v = np.pad(stats.var, ((hy, hy), (hx, hx)), constant_values=np.nan)
    for dy in range(-hy, hy + 1):
        for dx in range(-hx, hx + 1):
            mn = pad_m[hy + dy : hy + dy + rows, hx + dx : hx + dx + cols]
            vn = pad_v[hy + dy : hy + dy + rows, hx + dx : hx + dx + cols]
            with np.errstate(invalid="ignore"):
                t = glrt_statistic(stats.mean, stats.var, mn, vn)
                mask[:, :, dy + hy, dx + hx] = t <= thresh
    mask[:, :, hy, hx] = True
    return ShpMap(mask, mask.sum(axis=(2, 3)), thresh)


def full_window_shp(shape, half_extent) -> ShpMap:
    """Rectangular neighborhoods (no test), clipped at the raster edge."""
    hy, hx = half_extent
    rows, cols = shape
    mask = np.ones((rows, cols, 2 * hy + 1, 2 * hx + 1), dtype=bool)
    r = np.arange(rows)[:, None] + np.arange(-hy, hy + 1)[None]
    c = np.arange(cols)[:, None] + np.arange(-hx, hx + 1)[None]
    mask &= ((r >= 0) & (r < rows))[:, None, :, None]
    mask &= ((c >= 0) & (c < cols))[None, :, None, :]
    return ShpMap(mask, mask.sum(axis=(2, 3)))
