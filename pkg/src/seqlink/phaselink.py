"""Per-pixel phase linking, quality metrics and compressed SLCs.

Coherence convention: ``C[m, n] = mean(z_m * conj(z_n))``, so for
``z = a * exp(1j * phi)`` the entry carries ``phi_m - phi_n`` and the linked
vector ``zeta`` carries ``phi`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from seqlink import _backend
from seqlink._fallback import normalize_coherence
from seqlink.scatterers import AmpStats, PsMask, ShpMap, amp_stats_from_stack
from seqlink.stack import CompressedSlc, LayerKind


class Method(IntEnum):
    EMI = 0
    EVD_FALLBACK = 1
    INVALID = 255


@dataclass
class SampleCoherence:
    matrix: np.ndarray
    looks: int
    valid: bool = True


@dataclass
class PhaseLinkResult:
    zeta: np.ndarray
    temporal_coherence: float
    eigenvalue: float
    method: Method
    reference_index: int
    phase_similarity: float = np.nan
    degenerate: bool = False


@dataclass
class LinkedBatch:
    """Vectorized phase-linking output for many pixels."""

    zeta: np.ndarray  # (P, N) unit modulus, referenced
    eigenvalue: np.ndarray
    method: np.ndarray  # uint8 Method codes
    iterations: np.ndarray
    temporal_coherence: np.ndarray
    looks: np.ndarray


def sample_coherence(layers, shp: ShpMap, rows, cols, threads=1):
    """Batched normalized sample coherence; returns (matrices, looks, valid)."""
    return _backend.estimate_coherence(layers, shp.mask, rows, cols, threads=threads)


def sample_coherence_at(layers, pixel, shp: ShpMap) -> SampleCoherence:
    coh, looks, valid = sample_coherence(layers, shp, [pixel[0]], [pixel[1]])
    return SampleCoherence(coh[0], int(looks[0]), bool(valid[0]))


def coherence_from_samples(samples) -> SampleCoherence:
    """Normalized coherence from explicit samples, shape (N, L)."""
    z = np.asarray(samples, dtype=np.complex128)
    if z.ndim == 1:
        z = z[:, None]
    cov = (z @ z.conj().T) / z.shape[1]
    coh, looks, valid = normalize_coherence(cov[None], np.array([z.shape[1]]))
    return SampleCoherence(coh[0], int(looks[0]), bool(valid[0]))


def reference(zeta, index: int):
    """Rotate so ``zeta[..., index] == 1`` and force unit modulus."""
    zeta = np.asarray(zeta, dtype=np.complex128)
    mag = np.abs(zeta)
    unit = np.where(mag > 0, zeta / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    ref = unit[..., index : index + 1]
    out = unit * ref.conj()
    out[..., index] = 1.0
    return out


def evd_batch(coh, max_iter: int = 1000, tol: float = 1e-10):
    """Principal eigenvectors by power iteration; also flags degenerate leading eigenspaces.

    Returns (vectors, eigenvalues, degenerate).
    """
    coh = np.asarray(coh, dtype=np.complex128)
    npix, nd, _ = coh.shape
    x = np.full((npix, nd), 1.0 / np.sqrt(nd), dtype=np.complex128)
    active = np.arange(npix)
    for _ in range(max_iter):
        if active.size == 0:
            break
        xa = x[active]
        y = np.einsum("pij,pj->pi", coh[active], xa)
        nrm = np.linalg.norm(y, axis=1, keepdims=True)
        y = np.where(nrm > 0, y / np.where(nrm > 0, nrm, 1.0), xa)
        c = np.einsum("pi,pi->p", xa.conj(), y)
        change = np.linalg.norm(y - c[:, None] * xa, axis=1)
        x[active] = y
        active = active[change >= tol]
    w, v = np.linalg.eigh(coh)
    if active.size:
        # slow power iteration (tiny gap): take the exact eigenvector instead
        x[active] = v[active, :, -1]
    lam = np.real(np.einsum("pi,pij,pj->p", x.conj(), coh, x))
    degenerate = (w[:, -1] - w[:, -2]) < 1e-12 if nd > 1 else np.zeros(npix, dtype=bool)
    return x, lam, degenerate


def link_batch(coh, valid=None, reference_index: int = 0, shift0=0.99, max_iter=100,
               cond_limit=1e12, beta=0.0, threads=1, looks=None) -> LinkedBatch:
    """EMI for every pixel, with EVD where EMI cannot be used."""
    coh = np.asarray(coh, dtype=np.complex128)
    npix, nd, _ = coh.shape
    if valid is None:
        valid = np.ones(npix, dtype=bool)
    method = np.full(npix, Method.INVALID, dtype=np.uint8)
    zeta = np.ones((npix, nd), dtype=np.complex128)
    lam = np.full(npix, np.nan)
    iters = np.zeros(npix, dtype=np.int64)
    vidx = np.flatnonzero(valid)
    if vidx.size:
        vec, lv, it, status = _backend.emi_batch(coh[vidx], shift0, max_iter, cond_limit, beta,
                                                 threads=threads)
        ok = status == _backend.EMI_OK
        zeta[vidx[ok]] = vec[ok]
        lam[vidx[ok]] = lv[ok]
        iters[vidx] = it
        method[vidx[ok]] = Method.EMI
        fb = vidx[~ok]
        if fb.size:
            v2, l2, _ = evd_batch(coh[fb])
            zeta[fb] = v2
            lam[fb] = l2
            method[fb] = Method.EVD_FALLBACK
    zeta = reference(zeta, reference_index)
    tcoh = temporal_coherence(coh, zeta)
    tcoh[~valid] = np.nan
    if looks is None:
        looks = np.zeros(npix, dtype=np.int64)
    return LinkedBatch(zeta, lam, method, iters, tcoh, np.asarray(looks))


def emi_solve(coh: SampleCoherence, reference_index: int = 0, **kw) -> PhaseLinkResult:
    if not coh.valid:
        raise ValueError("invalid coherence matrix (zero-power date)")
    if coh.matrix.shape[0] < 2:
        raise ValueError("phase linking needs N >= 2")
    out = link_batch(coh.matrix[None], reference_index=reference_index, **kw)
    return PhaseLinkResult(out.zeta[0], float(out.temporal_coherence[0]), float(out.eigenvalue[0]),
                           Method(out.method[0]), reference_index)


def evd_solve(coh: SampleCoherence, reference_index: int = 0) -> PhaseLinkResult:
    if not coh.valid:
        raise ValueError("invalid coherence matrix (zero-power date)")
    vec, lam, degen = evd_batch(coh.matrix[None])
    zeta = reference(vec, reference_index)
    tcoh = temporal_coherence(coh.matrix[None], zeta)
    return PhaseLinkResult(zeta[0], float(tcoh[0]), float(lam[0]), Method.EVD_FALLBACK,
                           reference_index, degenerate=bool(degen[0]))


def temporal_coherence(coh, zeta) -> np.ndarray:
    """Fit between observed coherence phases and the linked phases, in [0, 1]."""
    coh = np.asarray(coh)
    zeta = np.asarray(zeta)
    single = coh.ndim == 2
    if single:
        coh, zeta = coh[None], zeta[None]
    nd = coh.shape[1]
    iu = np.triu_indices(nd, k=1)
    obs = coh[:, iu[0], iu[1]]
    mag = np.abs(obs)
    obs_unit = np.where(mag > 0, obs / np.where(mag > 0, mag, 1.0), 0.0)
    model = zeta[:, iu[0]] * zeta[:, iu[1]].conj()
    model = model / np.abs(model)
    terms = obs_unit * model.conj()
    # divide by the summed term moduli (each 1 up to rounding, 0 for empty
    # observations) so a single interferogram gives exactly 1
    size = np.abs(terms)
    total = size.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.abs(terms.sum(axis=1)) / total * (np.count_nonzero(size, axis=1) / terms.shape[1])
    out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
    return out[0] if single else out


def disk_offsets(radius_px: int):
    r = int(radius_px)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = (dy**2 + dx**2 <= r * r) & ~((dy == 0) & (dx == 0))
    return dy[keep], dx[keep]


def similarity_radius_px(radius_m: float, spacing_m: float) -> int:
    return int(np.ceil(radius_m / spacing_m))


def phase_similarity(ifg_phase, radius_px: int) -> np.ndarray:
    """Median cosine similarity of each pixel's interferogram phases with its neighbors.

    ``ifg_phase`` has shape (N_ifg, rows, cols). NaN pixels are ignored;
    the lower median is used for even neighbor counts. Pixels with no valid
    neighbor return NaN.
    """
    ph = np.asarray(ifg_phase, dtype=np.float64)
    n_ifg, rows, cols = ph.shape
    unit = np.exp(1j * ph)
    dys, dxs = disk_offsets(radius_px)
    r = int(radius_px)
    pad = np.pad(unit, ((0, 0), (r, r), (r, r)), constant_values=np.nan)
    sims = np.empty((dys.size, rows, cols))
    for k, (dy, dx) in enumerate(zip(dys, dxs)):
        nb = pad[:, r + dy : r + dy + rows, r + dx : r + dx + cols]
        sims[k] = np.real(np.mean(unit * nb.conj(), axis=0))
    return lower_median(sims, axis=0)


def phase_similarity_at(ifg_phase, pixel, radius_px: int) -> float:
    ph = np.asarray(ifg_phase, dtype=np.float64)
    r0, c0 = pixel
    _, rows, cols = ph.shape
    dys, dxs = disk_offsets(radius_px)
    rr, cc = r0 + dys, c0 + dxs
    keep = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    if not keep.any():
        raise ValueError("no neighbors inside the similarity window")
    center = ph[:, r0, c0][:, None]
    s = np.mean(np.cos(center - ph[:, rr[keep], cc[keep]]), axis=0)
    return float(lower_median(s[:, None], axis=0)[0])


def lower_median(a, axis=0):
    a = np.sort(np.asarray(a, dtype=np.float64), axis=axis)  # NaNs sort last
    a = np.moveaxis(a, axis, 0)
    count = np.sum(np.isfinite(a), axis=0)
    idx = np.clip((count - 1) // 2, 0, a.shape[0] - 1)
    out = np.take_along_axis(a, idx[None], axis=0)[0]
    return np.where(count > 0, out, np.nan)


def compress_slc(real_layers, zeta, ref_label: int, first: int, last: int, date: float) -> CompressedSlc:
    """Project real SLCs onto the linked phases: ``sum_i conj(zeta_i) z_i``.

    ``zeta`` has shape (N_real, rows, cols) matching ``real_layers``.
    """
    real_layers = np.asarray(real_layers)
    zeta = np.asarray(zeta)
    if real_layers.shape != zeta.shape:
        raise ValueError("zeta must match the real layers")
    dtype = np.result_type(real_layers.dtype, np.complex64)
    data = np.sum(zeta.conj() * real_layers, axis=0).astype(dtype)
    stats = amp_stats_from_stack(real_layers)
    return CompressedSlc(data, LayerKind.compressed_slc(ref_label, first, last), date, stats)


def regrid_outputs(ps_phase, ds_phase, ps: PsMask, decimation=(1, 1)) -> np.ndarray:
    """Phase on the output grid from full-resolution PS and decimated DS phases.

    ``ps_phase``: (N, rows, cols) wrapped phase at full resolution.
    ``ds_phase``: (N, rows // dy, cols // dx), one value per output pixel
    (taken at the footprint center). Within each footprint: no PS -> DS
    value; otherwise the PS with lowest dispersion, ties in row-major order.
    """
    dy, dx = (int(d) for d in decimation)
    if dy < 1 or dx < 1:
        raise ValueError("decimation factors must be >= 1")
    ps_phase = np.asarray(ps_phase)
    ds_phase = np.asarray(ds_phase)
    nd, rows, cols = ps_phase.shape
    orow, ocol = rows // dy, cols // dx
    if ds_phase.shape[1:] != (orow, ocol):
        raise ValueError(f"DS grid {ds_phase.shape[1:]} does not match {(orow, ocol)}")
    disp = np.where(ps.mask, ps.dispersion, np.inf)[: orow * dy, : ocol * dx]
    # (orow, ocol, dy*dx) blocks in row-major order within each footprint
    blocks = disp.reshape(orow, dy, ocol, dx).transpose(0, 2, 1, 3).reshape(orow, ocol, dy * dx)
    best = np.argmin(blocks, axis=2)  # first minimum wins ties
    has_ps = np.isfinite(np.take_along_axis(blocks, best[..., None], axis=2)[..., 0])
    out = ds_phase.copy()
    if has_ps.any():
        br, bc = np.nonzero(has_ps)
        k = best[br, bc]
        fr, fc = br * dy + k // dx, bc * dx + k % dx
        out[:, br, bc] = ps_phase[:, fr, fc]
    return out


def ds_grid(shape, decimation):
    """Full-resolution (rows, cols) of the footprint centers of the output grid."""
    dy, dx = decimation
    orow, ocol = shape[0] // dy, shape[1] // dx
    r = np.arange(orow) * dy + dy // 2
    c = np.arange(ocol) * dx + dx // 2
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return rr.ravel(), cc.ravel(), (orow, ocol)


def upsample_nearest(grid_values, shape, decimation):
    """Repeat each output-grid value over its footprint; edge remainder uses the last footprint."""
    dy, dx = decimation
    rows, cols = shape
    ri = np.minimum(np.arange(rows) // dy, grid_values.shape[-2] - 1)
    ci = np.minimum(np.arange(cols) // dx, grid_values.shape[-1] - 1)
    return grid_values[..., ri[:, None], ci[None, :]]


def ps_phases(layers, reference_index: int) -> np.ndarray:
    """Single-reference unit phasors for every pixel: ``z_i conj(z_ref) / |.|``."""
    z = np.asarray(layers, dtype=np.complex128)
    x = z * z[reference_index].conj()
    mag = np.abs(x)
    return np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 1.0)


def batch_amp_stats(real_layers) -> AmpStats:
    return amp_stats_from_stack(real_layers)
