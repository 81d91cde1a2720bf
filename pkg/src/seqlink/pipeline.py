"""End-to-end historical and forward processing on in-memory arrays."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from seqlink import phaselink as pl
from seqlink import sequential as sq
from seqlink.config import link_params
from seqlink.errors import DataError, NumericalError
from seqlink.inversion import TimeSeries, fit_velocity, invert_network, spatial_reference
from seqlink.network import (
    IfgNetwork,
    build_nearest3,
    common_components,
    forward_subset,
    oracle_unwrap,
    reform_interferograms,
    select_reference_pixel,
    spatial_unwrap_stack,
)
from seqlink.stack import SlcStack

logger = logging.getLogger(__name__)


def to_output_grid(rasters, decimation):
    """Sample full-resolution rasters (..., rows, cols) at the output-grid footprint centers."""
    rasters = np.asarray(rasters)
    rr, cc, oshape = pl.ds_grid(rasters.shape[-2:], decimation)
    return rasters[..., rr, cc].reshape(rasters.shape[:-2] + oshape)


def pair_indices(net: IfgNetwork):
    gi = net.date_index
    return [(int(gi[i]), int(gi[k])) for i, k in net.pairs]


def unwrap_pairs(linked, net: IfgNetwork, cfg: dict, truth_grid=None, quality=None):
    """Re-form and unwrap the pairs of ``net`` from linked phases over its dates."""
    wrapped = reform_interferograms(linked, net)
    ucfg = cfg["unwrap"]
    if ucfg["method"] == "oracle":
        if truth_grid is None:
            raise DataError("the oracle unwrapper needs truth phase layers")
        keys = pair_indices(net)
        truth_diff = np.stack([truth_grid[k] - truth_grid[i] for i, k in keys])
        return oracle_unwrap(wrapped, truth_diff, ucfg["errorFraction"], ucfg["regionSize"],
                             seed=ucfg["seed"], quality=quality, pair_keys=keys)
    if quality is None:
        quality = np.ones(wrapped.shape[1:])
    return spatial_unwrap_stack(wrapped, quality, ucfg["qualityThreshold"])


def _invert(unw, net, cfg, ref) -> TimeSeries:
    inv = cfg["inv"]
    try:
        unw = spatial_reference(unw, ref)
        return invert_network(unw, net, inv["method"], inv["rho"], inv["maxIter"], inv["tolAbs"],
                              inv["tolRel"], inv["maskTol"], ref)
    except ValueError as exc:
        raise NumericalError(str(exc)) from exc


@dataclass
class HistoricalProducts:
    dates: np.ndarray
    linked: np.ndarray  # wrapped, relative to date 0, output grid
    temporal_coherence: np.ndarray
    phase_similarity: np.ndarray
    method: np.ndarray  # (batches, orow, ocol)
    network: IfgNetwork
    series: TimeSeries
    velocity: np.ndarray
    reference_pixel: tuple[int, int]
    state: sq.SequentialState
    outputs: list


def quality_layers(linked, outputs, params: sq.LinkParams):
    tcoh = np.nanmin(np.stack([o.temporal_coherence for o in outputs]), axis=0)
    sim = sq.similarity_raster(linked, params.similarity_radius_px)
    return tcoh, sim


def historical(stack: SlcStack, cfg: dict, truth_phase=None, state: sq.SequentialState | None = None,
               previous_outputs=None, on_batch=None) -> HistoricalProducts:
    """Sequential phase linking followed by nearest-3 unwrapping and inversion.

    ``state``/``previous_outputs`` resume a run: batches already committed
    in ``state`` are skipped and their outputs taken from ``previous_outputs``.
    """
    params = link_params(cfg)
    seq = cfg["sequential"]
    res = sq.run_sequential(stack, seq["miniStackSize"], seq["maxCompressed"], params, seq["scheme"],
                            state=state, on_batch=on_batch)
    outputs = list(previous_outputs or []) + res.outputs
    if len(outputs) != len(sq.plan_ministacks(len(stack), seq["miniStackSize"], 1).batches):
        raise DataError("resumed state does not match the archived batch outputs")
    linked = np.concatenate([o.full_phase for o in outputs])
    tcoh, sim = quality_layers(linked, outputs, params)
    truth_grid = None if truth_phase is None else to_output_grid(truth_phase, params.decimation)
    net = build_nearest3(stack.dates)
    unw = unwrap_pairs(linked, net, cfg, truth_grid, quality=sim)
    comps = common_components(unw.components)
    try:
        ref = select_reference_pixel(tcoh, comps, cfg["reference"]["threshold"])
    except ValueError as exc:
        raise NumericalError(str(exc)) from exc
    ts = _invert(unw, net, cfg, ref)
    vel, _ = fit_velocity(ts.phases, stack.dates)
    method = np.stack([o.method for o in outputs])
    return HistoricalProducts(np.asarray(stack.dates), linked, tcoh, sim, method, net, ts, vel, ref,
                              res.state, outputs)


@dataclass
class ForwardProduct:
    date_index: int
    option: int
    product: np.ndarray  # displacement phase of the new date relative to ``reference_index``
    reference_index: int
    displacement: np.ndarray  # new date relative to date 0
    pairs: list[tuple[int, int]]
    linked: np.ndarray  # refreshed linked phases of the current batch's dates
    batch_dates: np.ndarray
    state: sq.SequentialState


def forward_step(state: sq.SequentialState, batch_real: SlcStack, archive_linked, archive_disp, dates,
                 cfg: dict, ref_pixel, truth_phase=None) -> ForwardProduct:
    """Ingest the newest date (the last layer of ``batch_real``).

    ``batch_real`` holds every real SLC of the current, not yet committed
    mini-stack; ``archive_linked``/``archive_disp`` cover all earlier dates.
    ``truth_phase`` (full resolution, every date) is needed by the oracle
    unwrapper only.
    """
    params = link_params(cfg)
    seq, fwd = cfg["sequential"], cfg["forward"]
    n_new = len(dates) - 1
    plan = sq.plan_ministacks(n_new + 1, seq["miniStackSize"], seq["maxCompressed"], seq["scheme"])
    entry = plan.batches[-1]
    if entry.index != state.completed or len(entry.real) != len(batch_real):
        raise DataError("state and archive disagree about the current mini-stack")
    new_state, out = sq.run_batch(state, batch_real, entry, params)
    first_batch = entry.real[0]
    linked = np.concatenate([np.asarray(archive_linked)[:first_batch], out.full_phase])
    count = fwd["newestCount"]
    net = forward_subset(build_nearest3(dates), count)
    lo = n_new - net.n_dates + 1
    truth_grid = None if truth_phase is None else to_output_grid(truth_phase, params.decimation)
    quality = sq.similarity_raster(linked[lo:], params.similarity_radius_px)
    unw = unwrap_pairs(linked[lo:], net, cfg, truth_grid, quality)
    ts = _invert(unw, net, cfg, ref_pixel)
    rel = ts.phases  # relative to date `lo`
    archive_disp = np.asarray(archive_disp)
    if fwd["outputOption"] == 1:
        product = rel[-1] - rel[-2]
        ref_index = n_new - 1
        disp = archive_disp[n_new - 1] + product
    else:
        product = rel[-1]
        ref_index = lo
        disp = archive_disp[lo] + product
    return ForwardProduct(n_new, fwd["outputOption"], product, ref_index, disp, pair_indices(net),
                          out.full_phase, np.asarray(entry.real), new_state)
