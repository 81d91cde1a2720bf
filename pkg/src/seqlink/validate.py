"""Synthetic RMSE study, VA2-style residual analysis and forward/historical consistency."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from seqlink import sequential as sq
from seqlink.inversion import L1Problem, fit_velocity, rad_to_mm, spatial_reference
from seqlink.network import (
    build_nearest3,
    forward_subset,
    oracle_unwrap,
    reform_interferograms,
    wrap,
)
from seqlink.scatterers import ShpMap
from seqlink.sim import CoherenceModel, TruthScene, correlation_matrix, crlb_phase_std
from seqlink.stack import SlcStack

ESTIMATORS = ("nrtSequential", "datumAdjusted", "multilooked", "noiseFloor", "crlb")


def rmse_per_date(estimate, truth) -> np.ndarray:
    """RMS of the wrapped error per date after removing its circular spatial mean."""
    err = wrap(np.asarray(estimate) - np.asarray(truth))
    axes = tuple(range(1, err.ndim))
    bias = np.angle(np.exp(1j * err).mean(axis=axes, keepdims=True))
    return np.sqrt(np.mean(wrap(err - bias) ** 2, axis=axes))


def multilooked_phase(layers, shp: ShpMap, reference: int = 0) -> np.ndarray:
    """``angle(sum z_d conj(z_ref))`` over each pixel's SHP neighbors, all dates."""
    z = np.asarray(layers, dtype=np.complex128)
    ifg = z * z[reference].conj()
    nd, rows, cols = z.shape
    hy, hx = shp.half_extent
    pad = np.pad(ifg, ((0, 0), (hy, hy), (hx, hx)))
    acc = np.zeros_like(ifg)
    for dy in range(-hy, hy + 1):
        for dx in range(-hx, hx + 1):
            m = shp.mask[:, :, dy + hy, dx + hx]
            if m.any():
                acc += m[None] * pad[:, hy + dy : hy + dy + rows, hx + dx : hx + dx + cols]
    return np.angle(acc)


@dataclass
class RmseCurves:
    dates: np.ndarray
    curves: dict[str, np.ndarray]
    looks: float = np.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "estimator", "rmse_rad"])
            for name in ESTIMATORS:
                if name in self.curves:
                    for d, v in zip(self.dates, self.curves[name]):
                        w.writerow([f"{d:g}", name, f"{v:.6g}"])


def rmse_study(stack: SlcStack, truth: TruthScene, model: CoherenceModel, size: int = 15,
               max_compressed: int = 6, params: sq.LinkParams | None = None,
               include_datum: bool = True) -> RmseCurves:
    """Score the sequential estimator and its baselines against the simulator truth."""
    params = params or sq.LinkParams()
    if tuple(params.decimation) != (1, 1):
        raise ValueError("the RMSE study runs at full resolution")
    res = sq.run_sequential(stack, size, max_compressed, params)
    curves = {"nrtSequential": rmse_per_date(res.full_phase, truth.phase)}
    if include_datum:
        datum, _ = sq.datum_adjusted(stack, size, params)
        curves["datumAdjusted"] = rmse_per_date(datum, truth.phase)
    stats = sq.amp_stats_from_stack(stack.layers)
    shp = sq.neighborhoods(stats, params)
    curves["multilooked"] = rmse_per_date(multilooked_phase(stack.layers, shp), truth.phase)
    single = np.angle(stack.layers * np.conj(stack.layers[:1]))
    curves["noiseFloor"] = rmse_per_date(single, truth.phase)
    looks = float(np.mean(shp.count))
    gamma = correlation_matrix(model, stack.dates)
    curves["crlb"] = crlb_phase_std(gamma, max(1, int(round(looks))))
    return RmseCurves(np.asarray(stack.dates), curves, looks)


@dataclass
class ResidualReport:
    bin_edges: np.ndarray  # km
    count: np.ndarray
    frac_below: np.ndarray
    passed: np.ndarray
    threshold_mm_yr: float
    pairs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def populated(self) -> np.ndarray:
        return self.count > 0

    @property
    def overall(self) -> bool:
        return bool(self.populated.any() and np.all(self.passed[self.populated]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_km", "count", "frac_below", "pass"])
            for lo, n, f, p in zip(self.bin_edges[:-1], self.count, self.frac_below, self.passed):
                frac = f"{f:.6g}" if n else ""
                w.writerow([f"{lo:g}", int(n), frac, "PASS" if p else ("FAIL" if n else "EMPTY")])
            w.writerow(["overall", int(self.count.sum()), "", "PASS" if self.overall else "FAIL"])


def _sample_pairs(n_points: int, samples: int, rng):
    if n_points * (n_points - 1) // 2 <= samples:
        i, j = np.triu_indices(n_points, k=1)
        return i, j
    i = rng.integers(0, n_points, samples)
    j = rng.integers(0, n_points - 1, samples)
    j = j + (j >= i)  # never pair a point with itself
    return i, j


def residual_report(x_km, y_km, vel_mm_yr, samples: int = 100_000, max_distance_km: float = 50.0,
                    threshold_mm_yr: float = 5.0, seed: int = 0, bin_km: float = 5.0) -> ResidualReport:
    """Binned pass/fail statistics of pairwise velocity differences.

    Pairs are drawn uniformly (all pairs when there are few points) and
    those farther apart than ``max_distance_km`` are rejected and redrawn.
    A bin passes when at least 68% of its differences are below the
    threshold.
    """
    x = np.asarray(x_km, dtype=np.float64).ravel()
    y = np.asarray(y_km, dtype=np.float64).ravel()
    v = np.asarray(vel_mm_yr, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("need at least two valid points")
    rng = np.random.default_rng(seed)
    edges = np.arange(0.0, max_distance_km + bin_km, bin_km)
    edges = edges[edges <= max_distance_km + 1e-9]
    if edges[-1] < max_distance_km:
        edges = np.append(edges, max_distance_km)
    dist_all, diff_all = [], []
    exhaustive = v.size * (v.size - 1) // 2 <= samples
    kept, attempts = 0, 0
    while kept < samples and attempts < 50:
        i, j = _sample_pairs(v.size, samples, rng)
        d = np.hypot(x[i] - x[j], y[i] - y[j])
        ok = d <= max_distance_km
        take = min(int(ok.sum()), samples - kept)
        dist_all.append(d[ok][:take])
        diff_all.append(np.abs(v[i] - v[j])[ok][:take])
        kept += take
        attempts += 1
        if exhaustive:
            break
    dist = np.concatenate(dist_all)
    diff = np.concatenate(diff_all)
    which = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, edges.size - 2)
    nb = edges.size - 1
    count = np.bincount(which, minlength=nb)
    below = np.bincount(which, weights=(diff < threshold_mm_yr).astype(float), minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(count > 0, below / np.maximum(count, 1), np.nan)
    passed = (count > 0) & (frac >= 0.68)
    return ResidualReport(edges, count, frac, passed, threshold_mm_yr, int(dist.size))


def va2_residuals(velocity, mask=None, pixel_spacing_m: float = 30.0, samples: int = 100_000,
                  max_distance_km: float = 50.0, threshold_mm_yr: float = 5.0, seed: int = 0,
                  wavelength_mm: float = 55.47, bin_km: float = 5.0, units: str = "rad/yr") -> ResidualReport:
    """Residual analysis on a velocity raster (rad/yr by default, or mm/yr)."""
    vel = np.asarray(velocity, dtype=np.float64)
    good = np.isfinite(vel) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(vel))
    rr, cc = np.nonzero(good)
    v = vel[rr, cc]
    if units == "rad/yr":
        v = rad_to_mm(v, wavelength_mm)
    elif units != "mm/yr":
        raise ValueError(f"unknown velocity units {units!r}")
    km = pixel_spacing_m / 1000.0
    return residual_report(cc * km, rr * km, v, samples, max_distance_km, threshold_mm_yr, seed, bin_km)


def read_point_series(path):
    """Read ``station_id,x,y,date,los_mm`` rows into per-station arrays."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"station_id", "x", "y", "date", "los_mm"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"point series file needs columns {sorted(need)}")
        for rec in reader:
            rows.setdefault(rec["station_id"], []).append(
                (float(rec["x"]), float(rec["y"]), float(rec["date"]), float(rec["los_mm"]))
            )
    return {k: np.array(v) for k, v in rows.items()}


def point_series_report(path, samples: int = 100_000, max_distance_km: float = 50.0,
                        threshold_mm_yr: float = 5.0, seed: int = 0, bin_km: float = 5.0,
                        coords_in_m: bool = True) -> ResidualReport:
    """Double-difference report from externally supplied point time series (dates in days)."""
    series = read_point_series(path)
    xs, ys, vs = [], [], []
    for name in sorted(series):
        arr = series[name][np.argsort(series[name][:, 2])]
        if arr.shape[0] < 2:
            continue
        v, ok = fit_velocity(arr[:, 3:4], arr[:, 2])
        if ok[0]:
            xs.append(arr[0, 0])
            ys.append(arr[0, 1])
            vs.append(float(v[0]))
    scale = 1e-3 if coords_in_m else 1.0
    return residual_report(np.array(xs) * scale, np.array(ys) * scale, np.array(vs), samples,
                           max_distance_km, threshold_mm_yr, seed, bin_km)


@dataclass
class Consistency:
    dates: np.ndarray  # global date indices with forward products
    max_option1: np.ndarray
    rms_option1: np.ndarray
    max_option2: np.ndarray
    rms_option2: np.ndarray
    max_option1_vs_2: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date_index", "max_rad_option1", "rms_rad_option1", "max_rad_option2",
                        "rms_rad_option2", "max_rad_option1_vs_2"])
            for row in zip(self.dates, self.max_option1, self.rms_option1, self.max_option2,
                           self.rms_option2, self.max_option1_vs_2):
                w.writerow([int(row[0])] + [f"{v:.6g}" for v in row[1:]])


def _unwrap_invert(linked, truth_phase, net, ref_pixel, unwrap_kw, inv_kw):
    wrapped = reform_interferograms(linked, net)
    gi = net.date_index
    i = np.array([gi[p[0]] for p in net.pairs])
    k = np.array([gi[p[1]] for p in net.pairs])
    keys = list(zip(i.tolist(), k.tolist()))
    unw = oracle_unwrap(wrapped, truth_phase[k] - truth_phase[i], pair_keys=keys, **unwrap_kw)
    unw = spatial_reference(unw, ref_pixel)
    prob = L1Problem(net.incidence, **inv_kw)
    m, rows, cols = wrapped.shape
    x, _, _ = prob.solve_l1(np.ascontiguousarray(unw.unwrapped.reshape(m, -1).T))
    return x.T.reshape(-1, rows, cols)


def forward_vs_historical(linked_phase, dates, truth_phase, ref_pixel, newest_count: int = 4,
                          error_fraction: float = 0.0, region_size: int = 10, seed: int = 0,
                          rho: float = 1.0, max_iter: int = 1000, tol_abs: float = 1e-6,
                          tol_rel: float = 1e-4):
    """Compare the full-network inversion with date-by-date forward-subset inversions.

    Both use the same linked phases and the same per-pair unwrapping. The
    forward archive starts from the historical solution of the first
    ``newest_count`` dates. Option 1 chains increments relative to the
    previous date; option 2 adds the archived value at the subset's first
    date. Returns ``(Consistency, historical, option1, option2)``.
    """
    linked = np.asarray(linked_phase)
    nd = linked.shape[0]
    if nd <= newest_count:
        raise ValueError("need more dates than newest_count for a forward run")
    unwrap_kw = dict(error_fraction=error_fraction, region_size=region_size, seed=seed)
    inv_kw = dict(rho=rho, max_iter=max_iter, tol_abs=tol_abs, tol_rel=tol_rel)
    full = build_nearest3(dates)
    x = _unwrap_invert(linked, truth_phase, full, ref_pixel, unwrap_kw, inv_kw)
    hist = np.concatenate([np.zeros((1,) + linked.shape[1:]), x])
    opt1 = hist.copy()
    opt2 = hist.copy()
    opt1[newest_count:] = np.nan
    opt2[newest_count:] = np.nan
    for d in range(newest_count, nd):
        net = forward_subset(build_nearest3(dates[: d + 1]), newest_count)
        first = d - newest_count + 1
        xs = _unwrap_invert(linked[first : d + 1], truth_phase, net, ref_pixel, unwrap_kw, inv_kw)
        rel = np.concatenate([np.zeros((1,) + linked.shape[1:]), xs])  # relative to `first`
        opt1[d] = opt1[d - 1] + (rel[-1] - rel[-2])
        opt2[d] = opt2[first] + rel[-1]
    sl = slice(newest_count, nd)
    axes = (1, 2)
    d1 = opt1[sl] - hist[sl]
    d2 = opt2[sl] - hist[sl]
    rep = Consistency(
        np.arange(newest_count, nd),
        np.abs(d1).max(axis=axes),
        np.sqrt(np.mean(d1**2, axis=axes)),
        np.abs(d2).max(axis=axes),
        np.sqrt(np.mean(d2**2, axis=axes)),
        np.abs(opt1[sl] - opt2[sl]).max(axis=axes),
    )
    return rep, hist, opt1, opt2
