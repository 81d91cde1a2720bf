"""Mini-stack batching with compressed SLCs, plus the datum-adjusted baseline."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from seqlink import phaselink as pl
from seqlink.network import build_nearest3, reform_interferograms, wrap
from seqlink.scatterers import (
    AmpStats,
    amp_stats_from_stack,
    full_window_shp,
    glrt_shp,
    merge_amp_stats,
    select_ps,
)
from seqlink.stack import CompressedSlc, SlcStack

logger = logging.getLogger(__name__)

FIRST_DATE = "first-date"
LAST_PER_MINISTACK = "last-per-ministack"
SCHEMES = (FIRST_DATE, LAST_PER_MINISTACK)


@dataclass
class LinkParams:
    """Processing knobs shared by every mini-stack."""

    ps_threshold: float = 0.2
    shp_method: str = "glrt"  # or "rect"
    shp_half_extent: tuple[int, int] = (5, 7)
    shp_alpha: float = 0.05
    weighting: str = "equal"
    decay: float = 0.5
    shift0: float = 0.99
    max_iter: int = 100
    cond_limit: float = 1e12
    beta: float = 0.0
    decimation: tuple[int, int] = (1, 1)
    similarity_radius_px: int = 7
    compute_similarity: bool = True
    use_ps: bool = True
    threads: int = 1


@dataclass(frozen=True)
class BatchPlan:
    """One mini-stack: which compressed SLCs and real dates it holds.

    ``compressed`` lists source-batch indices of the compressed SLCs, oldest
    first; ``reference`` is the position of the reference layer within the
    assembled mini-stack ``[compressed..., real...]``.
    """

    index: int
    compressed: tuple[int, ...]
    real: tuple[int, ...]
    reference: int

    @property
    def size(self) -> int:
        return len(self.compressed) + len(self.real)


@dataclass(frozen=True)
class MiniStackPlan:
    size: int
    max_compressed: int
    scheme: str
    batches: tuple[BatchPlan, ...]


def plan_ministacks(n_dates: int, size: int, max_compressed: int, scheme: str = FIRST_DATE) -> MiniStackPlan:
    """Split ``n_dates`` into consecutive mini-stacks of ``size`` real dates.

    A trailing partial mini-stack is kept. Every batch after the first is
    referenced to the most recent compressed SLC; the scheme only decides
    which date that compressed SLC carries.
    """
    if n_dates < 2:
        raise ValueError("need at least 2 dates")
    if size < 2:
        raise ValueError("mini-stack size must be >= 2")
    if max_compressed < 1:
        raise ValueError("max_compressed must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown reference scheme {scheme!r}")
    batches = []
    for b in range(int(np.ceil(n_dates / size))):
        real = tuple(range(b * size, min((b + 1) * size, n_dates)))
        comp = tuple(range(max(0, b - max_compressed), b))
        ref = len(comp) - 1 if comp else 0
        batches.append(BatchPlan(b, comp, real, ref))
    return MiniStackPlan(size, max_compressed, scheme, tuple(batches))


@dataclass
class BatchOutput:
    """Products of one mini-stack on the output grid.

    ``phase`` holds the wrapped linked phase of the batch's real dates
    relative to global date ``relative_to``; ``full_phase`` is the same
    data chained back to date 0.
    """

    index: int
    dates: np.ndarray  # global real-date indices
    phase: np.ndarray
    full_phase: np.ndarray
    relative_to: int
    temporal_coherence: np.ndarray
    phase_similarity: np.ndarray
    method: np.ndarray
    eigenvalue: np.ndarray
    looks: np.ndarray
    ps_mask: np.ndarray
    compressed: CompressedSlc


@dataclass
class SequentialState:
    """Everything a later batch needs from earlier ones.

    ``compressed`` maps source-batch index to its compressed SLC (at most
    ``max_compressed`` entries from completed batches). A trailing partial
    batch is never committed, so new dates can extend it later.
    """

    size: int
    max_compressed: int
    scheme: str
    compressed: dict[int, CompressedSlc] = field(default_factory=dict)
    amp_parts: list[AmpStats] = field(default_factory=list)
    completed: int = 0
    chain: np.ndarray | None = None  # full phase of the last real date of the last completed batch
    log: list[dict] = field(default_factory=list)

    def copy(self) -> "SequentialState":
        return copy.deepcopy(self)


def new_state(size: int, max_compressed: int, scheme: str = FIRST_DATE) -> SequentialState:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown reference scheme {scheme!r}")
    return SequentialState(int(size), int(max_compressed), scheme)


@dataclass
class MiniStackLink:
    zeta_full: np.ndarray  # (N, rows, cols) unit phasors, full resolution
    out_phase: np.ndarray  # (N, orow, ocol)
    temporal_coherence: np.ndarray
    method: np.ndarray
    eigenvalue: np.ndarray
    looks: np.ndarray
    ps_mask: np.ndarray


def neighborhoods(stats: AmpStats, params: LinkParams):
    if params.shp_method == "glrt":
        return glrt_shp(stats, params.shp_half_extent, params.shp_alpha)
    if params.shp_method == "rect":
        return full_window_shp(stats.shape, params.shp_half_extent)
    raise ValueError(f"unknown SHP method {params.shp_method!r}")


def link_ministack(layers, reference: int, stats: AmpStats, params: LinkParams) -> MiniStackLink:
    """Phase link one assembled mini-stack (DS on the decimated grid, PS at full resolution)."""
    layers = np.asarray(layers)
    nd, rows, cols = layers.shape
    dec = tuple(int(d) for d in params.decimation)
    ps = select_ps(stats, params.ps_threshold)
    if not params.use_ps:
        ps.mask[:] = False
    shp = neighborhoods(stats, params)
    rr, cc, oshape = pl.ds_grid((rows, cols), dec)
    coh, looks, valid = pl.sample_coherence(layers, shp, rr, cc, threads=params.threads)
    linked = pl.link_batch(coh, valid, reference, params.shift0, params.max_iter, params.cond_limit,
                           params.beta, params.threads, looks)
    ds_zeta = linked.zeta.T.reshape(nd, *oshape)
    ps_zeta = pl.ps_phases(layers, reference)
    zeta_full = pl.upsample_nearest(ds_zeta, (rows, cols), dec)
    zeta_full = np.where(ps.mask[None], ps_zeta, zeta_full)
    out_phase = pl.regrid_outputs(np.angle(ps_zeta), np.angle(ds_zeta), ps, dec)
    return MiniStackLink(
        zeta_full,
        out_phase,
        linked.temporal_coherence.reshape(oshape),
        linked.method.reshape(oshape),
        linked.eigenvalue.reshape(oshape),
        np.asarray(looks).reshape(oshape),
        ps.mask.copy(),
    )


def similarity_raster(phase, radius_px: int) -> np.ndarray:
    """Phase cosine similarity over the nearest-3 interferograms of ``phase`` (N, r, c)."""
    if phase.shape[0] < 2:
        return np.full(phase.shape[1:], np.nan)
    net = build_nearest3(np.arange(phase.shape[0], dtype=float))
    return pl.phase_similarity(reform_interferograms(phase, net), radius_px)


def run_batch(state: SequentialState, real: SlcStack, entry: BatchPlan, params: LinkParams):
    """Process one mini-stack and return ``(new_state, output)``.

    ``real`` holds exactly the real SLCs of ``entry``. The input state is
    never modified. A batch with fewer than ``state.size`` real dates is
    treated as pending: its outputs are returned but it is not committed.
    """
    if len(real) != len(entry.real):
        raise ValueError("real SLC count does not match the plan entry")
    missing = [b for b in entry.compressed if b not in state.compressed]
    if missing:
        raise KeyError(f"compressed SLCs from batches {missing} are not in the state")
    if entry.index != state.completed:
        raise ValueError(f"state expects batch {state.completed}, got {entry.index}")
    comps = [state.compressed[b] for b in entry.compressed]
    n_comp = len(comps)
    dtype = np.result_type(real.layers.dtype, np.complex64)
    if comps:
        layers = np.concatenate([np.stack([c.data for c in comps]).astype(dtype), real.layers])
    else:
        layers = np.asarray(real.layers, dtype=dtype)

    batch_stats = amp_stats_from_stack(real.layers)
    merged = merge_amp_stats(state.amp_parts + [batch_stats], params.weighting, params.decay)
    link = link_ministack(layers, entry.reference, merged, params)

    real_phase = link.out_phase[n_comp:]
    zeta_real = link.zeta_full[n_comp:]
    first, last = entry.real[0], entry.real[-1]
    if state.scheme == FIRST_DATE:
        ref_label = 0
    else:
        ref_label = last
        zeta_real = zeta_real * zeta_real[-1:].conj()
    dates = real.dates
    comp = pl.compress_slc(real.layers, zeta_real, ref_label, first, last, float(np.mean(dates)))

    if entry.index == 0 or state.scheme == FIRST_DATE:
        relative_to = 0
        full = real_phase
    else:
        relative_to = entry.real[0] - 1
        full = wrap(real_phase + state.chain[None])
    sim = (similarity_raster(full, params.similarity_radius_px) if params.compute_similarity
           else np.full(full.shape[1:], np.nan))

    out = BatchOutput(entry.index, np.asarray(entry.real), real_phase, full, relative_to,
                      link.temporal_coherence, sim, link.method, link.eigenvalue, link.looks,
                      link.ps_mask, comp)
    new = state.copy()
    if len(entry.real) == state.size:
        new.compressed[entry.index] = comp
        for b in sorted(new.compressed)[: -state.max_compressed]:
            del new.compressed[b]
        new.amp_parts.append(batch_stats)
        new.completed += 1
        new.chain = full[-1].copy()
        new.log.append({
            "batch": entry.index,
            "real": [int(i) for i in entry.real],
            "compressed": [int(b) for b in entry.compressed],
            "reference": int(entry.reference),
            "ps": int(link.ps_mask.sum()),
            "evdFallback": int(np.count_nonzero(link.method == pl.Method.EVD_FALLBACK)),
        })
    logger.info("batch %d: %d compressed + %d real, reference layer %d", entry.index, n_comp,
                len(entry.real), entry.reference)
    return new, out


@dataclass
class SequentialResult:
    state: SequentialState
    outputs: list[BatchOutput]

    @property
    def full_phase(self) -> np.ndarray:
        """Wrapped phase of every real date relative to date 0, output grid."""
        return np.concatenate([o.full_phase for o in self.outputs])


def run_sequential(stack: SlcStack, size: int, max_compressed: int, params: LinkParams | None = None,
                   scheme: str = FIRST_DATE, state: SequentialState | None = None,
                   on_batch=None) -> SequentialResult:
    """Run every batch of the plan; completed batches already in ``state`` are skipped."""
    params = params or LinkParams()
    plan = plan_ministacks(len(stack), size, max_compressed, scheme)
    state = state or new_state(size, max_compressed, scheme)
    outputs = []
    for entry in plan.batches:
        if entry.index < state.completed:
            continue
        idx = np.asarray(entry.real)
        state, out = run_batch(state, stack.subset(idx), entry, params)
        outputs.append(out)
        if on_batch is not None:
            on_batch(state, out)
    return SequentialResult(state, outputs)


def daisy_chain(outputs) -> np.ndarray:
    """Chain batch outputs relative to each previous batch's last date back to date 0."""
    chained = []
    offset = None
    for o in outputs:
        ph = o.phase if offset is None else wrap(o.phase + offset[None])
        chained.append(ph)
        offset = ph[-1]
    return np.concatenate(chained)


def datum_adjusted(stack: SlcStack, size: int, params: LinkParams | None = None,
                   stats: AmpStats | None = None):
    """Independent mini-stacks aligned by phase linking their compressed SLCs.

    Each batch is linked on its own real SLCs with its first date as
    reference. The compressed SLCs (each carrying its batch's first-date
    phase) are then linked together to get one offset per batch. Returns
    ``(phase (N, orow, ocol), offsets (B, orow, ocol))``.
    """
    params = params or LinkParams()
    plan = plan_ministacks(len(stack), size, 1)
    parts, comps = [], []
    for entry in plan.batches:
        sub = stack.subset(np.asarray(entry.real))
        bstats = amp_stats_from_stack(sub.layers)
        link = link_ministack(sub.layers, 0, bstats, params)
        parts.append(link.out_phase)
        kappa = pl.compress_slc(sub.layers, link.zeta_full, entry.real[0], entry.real[0],
                                entry.real[-1], float(np.mean(sub.dates)))
        comps.append(kappa.data)
    if len(parts) == 1:
        return parts[0], np.zeros((1,) + parts[0].shape[1:])
    if stats is None:
        stats = amp_stats_from_stack(stack.layers)
    second = link_ministack(np.stack(comps), 0, stats, params)
    offsets = second.out_phase
    adjusted = [wrap(p + off[None]) for p, off in zip(parts, offsets)]
    return np.concatenate(adjusted), offsets
