"""Command-line entry points: simulate, historical, forward, validate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from seqlink import __version__, pipeline, sim
from seqlink import sequential as sq
from seqlink import validate as va
from seqlink.config import config_hash, link_params, load_config
from seqlink.errors import ConfigError, DataError, NumericalError
from seqlink.inversion import fit_velocity, rad_to_mm
from seqlink.stack import SlcStack
from seqlink.store import RasterStore, has_state, load_state, save_state

logger = logging.getLogger("seqlink")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
REQUIRED_FOR_VALIDATE = ("velocity", "temporal_coherence", "phase_similarity")


def _provenance(cfg, command):
    return {"configHash": config_hash(cfg), "seed": cfg["sim"]["seed"], "command": command,
            "version": __version__}


def _dates(cfg):
    d = cfg["sim"]["dates"]
    return sim.regular_dates(d["count"], d["spacingDays"], d["start"])


def _model(cfg):
    s = cfg["sim"]
    try:
        return sim.CoherenceModel(s["rho0"], s["rhoInf"], s["tauDays"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(cfg, args, command):
    s = cfg["sim"]
    model = _model(cfg)
    dates = _dates(cfg)
    truth = sim.build_truth_scene(s["shape"], dates, s["bowlRateRadYr"], s["tropoStd"], s["seed"],
                                  s["tropoCorrLen"], s["bowlSigma"])
    stack = sim.simulate_stack(truth, model, s["seed"] + 1)
    out = RasterStore(args.out, create=True)
    prov = _provenance(cfg, command)
    out.write_stack("slc", stack, prov, dtype="complex64")
    for i, (d, ph) in enumerate(zip(dates, truth.phase)):
        out.write(f"truth_phase_{i:03d}", ph, date=d, units="rad", provenance=prov, dtype="float64")
    out.write("truth_rate", truth.rate, units="rad/yr", provenance=prov, dtype="float64")
    out.write_manifest({"command": command, "config": cfg, "configHash": config_hash(cfg), "kind": "simulation",
                        "dates": dates.tolist()})
    logger.info("wrote %d dates of %s rasters to %s", len(dates), tuple(s["shape"]), args.out)


def _read_input(path, count=None):
    store = RasterStore(path)
    stack = store.read_stack("slc", count)
    truth = None
    if store.stack_names("truth_phase"):
        truth, _ = store.read_series("truth_phase", count)
    return store, stack, truth


def _write_batch(out: RasterStore, o: sq.BatchOutput, dates, prov):
    for j, gi in enumerate(o.dates):
        out.write(f"linked_{gi:03d}", o.full_phase[j], date=dates[gi], units="rad", provenance=prov,
                  dtype="float64")
    b = o.index
    out.write(f"batch_{b:03d}_temporal_coherence", o.temporal_coherence, provenance=prov, dtype="float32")
    out.write(f"batch_{b:03d}_method", o.method, provenance=prov, dtype="uint8")
    out.write(f"batch_{b:03d}_looks", o.looks, provenance=prov, dtype="int32")


def _load_batch(out: RasterStore, entry: sq.BatchPlan):
    full = np.stack([out.read(f"linked_{gi:03d}") for gi in entry.real])
    return SimpleNamespace(index=entry.index, dates=np.asarray(entry.real), full_phase=full,
                           temporal_coherence=out.read(f"batch_{entry.index:03d}_temporal_coherence").astype(float),
                           method=out.read(f"batch_{entry.index:03d}_method"))


def _state_dir(cfg, out_dir):
    return Path(cfg["sequential"]["stateDir"] or Path(out_dir) / "state")


def cmd_historical(cfg, args, command):
    _, stack, truth = _read_input(args.input, args.count)
    out = RasterStore(args.out, create=True)
    prov = _provenance(cfg, command)
    sdir = _state_dir(cfg, args.out)
    seq = cfg["sequential"]
    state, previous = None, []
    if has_state(sdir) and not args.restart:
        state = load_state(sdir)
        if (state.size, state.max_compressed, state.scheme) != (seq["miniStackSize"], seq["maxCompressed"],
                                                                seq["scheme"]):
            raise DataError(f"state in {sdir} was made with different sequential settings; use --restart")
        plan = sq.plan_ministacks(len(stack), seq["miniStackSize"], seq["maxCompressed"], seq["scheme"])
        previous = [_load_batch(out, e) for e in plan.batches[: state.completed]]
        logger.info("resuming after %d completed batches", state.completed)

    def on_batch(new_state, o):
        _write_batch(out, o, stack.dates, prov)
        save_state(sdir, new_state, prov)

    prod = pipeline.historical(stack, cfg, truth, state, previous, on_batch)
    _write_products(out, prod, cfg, prov)
    out.write_manifest({"command": command, "config": cfg, "configHash": config_hash(cfg), "kind": "products",
                        "input": str(Path(args.input).resolve()), "dates": stack.dates.tolist(),
                        "referencePixel": list(prod.reference_pixel), "stateDir": str(sdir),
                        "pairs": pipeline.pair_indices(prod.network), "batchesRun": [b["batch"] for b in prod.state.log]})
    logger.info("historical products for %d dates written to %s", len(stack), args.out)


def _write_products(out: RasterStore, prod: pipeline.HistoricalProducts, cfg, prov):
    wl = cfg["validate"]["wavelengthMm"]
    for i, d in enumerate(prod.dates):
        out.write(f"displacement_{i:03d}", prod.series.phases[i], date=d, units="rad", provenance=prov,
                  dtype="float64")
    for p, (i, k) in enumerate(pipeline.pair_indices(prod.network)):
        flags = prod.series.non_integer[p].astype(np.uint8) | (prod.series.nonzero_integer[p].astype(np.uint8) << 1)
        out.write(f"residual_mask_{p:03d}", flags, provenance=prov, dtype="uint8", extra={"pair": [i, k]})
    out.write("velocity", prod.velocity, units="rad/yr", provenance=prov, dtype="float64")
    out.write("velocity_mm", rad_to_mm(prod.velocity, wl), units="mm/yr", provenance=prov, dtype="float32")
    out.write("temporal_coherence", prod.temporal_coherence, provenance=prov, dtype="float32")
    out.write("phase_similarity", prod.phase_similarity, provenance=prov, dtype="float32")


def cmd_forward(cfg, args, command):
    products = RasterStore(args.products)
    man = products.manifest()
    if not man:
        raise DataError(f"{args.products} has no product manifest; run `seqlink historical` first")
    sdir = Path(man.get("stateDir") or _state_dir(cfg, args.products))
    state = load_state(sdir)
    seq = cfg["sequential"]
    if (state.size, state.max_compressed, state.scheme) != (seq["miniStackSize"], seq["maxCompressed"],
                                                            seq["scheme"]):
        raise DataError("config sequential settings differ from the persisted state")
    src = RasterStore(args.input)
    all_names = src.stack_names("slc")
    linked, _ = products.read_series("linked")
    disp, dates = products.read_series("displacement")
    n_have = disp.shape[0]
    if linked.shape[0] != n_have:
        raise DataError("linked and displacement archives have different lengths")
    n_target = len(all_names) if args.count is None else min(len(all_names), n_have + args.count)
    if n_target <= n_have:
        raise DataError(f"no new SLCs in {args.input} beyond the {n_have} archived dates")
    ref = tuple(man["referencePixel"])
    prov = _provenance(cfg, command)
    truth = None
    if cfg["unwrap"]["method"] == "oracle":
        truth, _ = src.read_series("truth_phase", n_target)
    log = man.get("forward", [])
    dates = list(dates)
    for n in range(n_have, n_target):
        layer, head = src.read(all_names[n], with_header=True)
        dates.append(head["date"])
        first = state.completed * state.size
        batch = src.read_stack("slc", n + 1).subset(np.arange(first, n + 1))
        fp = pipeline.forward_step(state, batch, linked, disp, np.array(dates), cfg, ref, truth)
        state = fp.state
        linked = np.concatenate([linked[:first], fp.linked])
        disp = np.concatenate([disp, fp.displacement[None]])
        for j, gi in enumerate(fp.batch_dates):
            products.write(f"linked_{gi:03d}", fp.linked[j], date=dates[gi], units="rad", provenance=prov,
                           dtype="float64")
        products.write(f"displacement_{n:03d}", fp.displacement, date=dates[n], units="rad", provenance=prov,
                       dtype="float64")
        products.write(f"forward_{n:03d}", fp.product, date=dates[n], units="rad", provenance=prov,
                       dtype="float64", extra={"option": fp.option, "referenceIndex": fp.reference_index,
                                               "pairs": fp.pairs})
        save_state(sdir, state, prov)
        log.append({"date": n, "option": fp.option, "referenceIndex": fp.reference_index, "pairs": fp.pairs})
        logger.info("forward date %d: %d pairs, reference date %d", n, len(fp.pairs), fp.reference_index)
    vel, _ = fit_velocity(disp, np.array(dates))
    products.write("velocity", vel, units="rad/yr", provenance=prov, dtype="float64")
    products.write("velocity_mm", rad_to_mm(vel, cfg["validate"]["wavelengthMm"]), units="mm/yr",
                   provenance=prov, dtype="float32")
    man["forward"] = log
    man["dates"] = [float(d) for d in dates]
    products.write_manifest(man)


def cmd_validate(cfg, args, command):
    products = RasterStore(args.products)
    missing = [n for n in REQUIRED_FOR_VALIDATE if not products.has(n)]
    if missing:
        raise DataError("missing product layers: " + ", ".join(missing))
    out = RasterStore(args.out or args.products, create=True)
    v = cfg["validate"]
    vel = products.read("velocity")
    spacing = cfg["grid"]["spacingMeters"] * max(cfg["phaselink"]["decimation"])
    rep = va.va2_residuals(vel, None, spacing, v["va2Samples"], v["maxDistanceKm"], v["thresholdMmYr"],
                           v["seed"], v["wavelengthMm"], v["binKm"])
    rep.to_csv(out.root / "va2_report.csv")
    logger.info("VA2 overall: %s", "PASS" if rep.overall else "FAIL")
    if args.input:
        _, stack, truth = _read_input(args.input)
        if truth is None:
            raise DataError(f"{args.input} has no truth_phase layers")
        seq = cfg["sequential"]
        params = link_params(cfg)
        params.decimation = (1, 1)
        curves = va.rmse_study(stack, SimpleNamespace(phase=truth), _model(cfg), seq["miniStackSize"],
                               seq["maxCompressed"], params)
        curves.to_csv(out.root / "rmse_curves.csv")
        linked, dates = products.read_series("linked")
        man = products.manifest()
        n = linked.shape[0]
        tgrid = pipeline.to_output_grid(truth[:n], cfg["phaselink"]["decimation"])
        u, inv, fwd = cfg["unwrap"], cfg["inv"], cfg["forward"]
        if n > fwd["newestCount"]:
            cons, *_ = va.forward_vs_historical(linked, dates, tgrid, tuple(man["referencePixel"]),
                                                fwd["newestCount"], u["errorFraction"], u["regionSize"],
                                                u["seed"], inv["rho"], inv["maxIter"], inv["tolAbs"],
                                                inv["tolRel"])
            cons.to_csv(out.root / "consistency.csv")


def build_parser():
    p = argparse.ArgumentParser(prog="seqlink", description=__doc__)
    p.add_argument("--config", help="JSON pipeline configuration")
    p.add_argument("--threads", type=int, help="worker threads (overrides runtime.threads)")
    p.add_argument("--seed", type=int, help="simulation seed (overrides sim.seed)")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=f"seqlink {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="write a synthetic SLC stack and its truth")
    s.add_argument("--out", required=True)
    h = sub.add_parser("historical", help="process a stored stack from scratch or resume")
    h.add_argument("--input", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--count", type=int, help="use only the first COUNT dates")
    h.add_argument("--restart", action="store_true", help="ignore persisted state")
    f = sub.add_parser("forward", help="ingest new SLCs into an existing product archive")
    f.add_argument("--input", required=True, help="store holding the new SLC layers (and earlier ones)")
    f.add_argument("--products", required=True)
    f.add_argument("--count", type=int, help="ingest at most COUNT new dates")
    v = sub.add_parser("validate", help="write VA2, RMSE and consistency reports")
    v.add_argument("--products", required=True)
    v.add_argument("--input", help="simulation store; enables RMSE and consistency reports")
    v.add_argument("--out", help="report directory (default: the product directory)")
    return p


COMMANDS = {"simulate": cmd_simulate, "historical": cmd_historical, "forward": cmd_forward,
            "validate": cmd_validate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg["runtime"]["threads"] = args.threads
        if args.seed is not None:
            cfg["sim"]["seed"] = args.seed
        command = ["seqlink"] + argv
        rc = COMMANDS[args.command](cfg, args, command)
        return EXIT_OK if rc is None else rc
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
