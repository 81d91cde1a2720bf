"""The ten acceptance criteria, each at its stated tolerance.

Every check records a PASS/FAIL line that the terminal summary prints per
criterion. Checks that cannot be met are kept at full strength and marked
as strict expected failures; the decisions ledger explains each one.
"""
import numpy as np
import pytest

from seqlink import inversion as inv
from seqlink import network as nw
from seqlink import phaselink as pl
from seqlink import pipeline
from seqlink import scatterers as sc
from seqlink import sequential as sq
from seqlink import sim
from seqlink import validate as va
from seqlink.config import validate_config
from seqlink.network import wrap

import oracles
from conftest import noiseless_stack, record_acceptance


def check(number, label, passed, detail=""):
    record_acceptance(number, label, passed, detail)
    assert passed, f"criterion {number} {label}: {detail}"


# 1. RMSE curves on the reference simulation scene -------------------------------------------

@pytest.fixture(scope="module")
def rmse_curves():
    dates = sim.regular_dates(60, 12.0)
    model = sim.CoherenceModel(1.0, 0.0, 60.0)
    truth = sim.build_truth_scene((200, 200), dates, 5.0, 0.3, 1)
    stack = sim.simulate_stack(truth, model, 2)
    params = sq.LinkParams(shp_method="rect", shp_half_extent=(5, 7), compute_similarity=False, threads=8)
    return va.rmse_study(stack, truth, model, 15, 6, params)


def test_c1a_sequential_beats_multilooked(rmse_curves):
    c = rmse_curves.curves
    days = rmse_curves.dates - rmse_curves.dates[0]
    sel = days > 36
    ratio = c["multilooked"][sel] / c["nrtSequential"][sel]
    check(1, "1a", bool(np.all(c["nrtSequential"][sel] <= c["multilooked"][sel])),
          f"min multilooked/sequential {ratio.min():.3f}, looks {rmse_curves.looks:.0f}")


def test_c1b_sequential_near_crlb(rmse_curves):
    c = rmse_curves.curves
    late = slice(15, None)
    ratio = c["nrtSequential"][late] / c["crlb"][late]
    check(1, "1b", bool(np.all(ratio <= 1.5)), f"max sequential/CRLB {ratio.max():.3f}")


@pytest.mark.xfail(strict=True, reason="the compressed-SLC datum link decorrelates across mini-stacks; "
                                        "the baseline is roughly twice the sequential RMSE")
def test_c1c_datum_adjusted_comparable(rmse_curves):
    c = rmse_curves.curves
    seq, datum = c["nrtSequential"][1:], c["datumAdjusted"][1:]
    rel = np.abs(seq - datum) / np.maximum(seq, datum)
    check(1, "1c", bool(np.all(rel <= 0.2)), f"max relative difference {rel.max():.2f}")


# 2. temporal coherence of two-date mini-stacks ---------------------------------------

def test_c2_two_date_temporal_coherence_is_one(rng):
    z = rng.normal(size=(2000, 2, 9)) + 1j * rng.normal(size=(2000, 2, 9))
    z[:, 1] += rng.uniform(0, 2, (2000, 1)) * z[:, 0]
    cov = z @ np.conj(np.swapaxes(z, 1, 2))
    coh = cov / np.sqrt(np.einsum("pii->pi", cov).real[:, :, None] * np.einsum("pii->pi", cov).real[:, None, :])
    out = pl.link_batch(coh)
    batch_ok = bool(np.all(out.temporal_coherence == 1.0))

    truth = sim.build_truth_scene((30, 30), sim.regular_dates(8), 5.0, 0.3, 0)
    stack = sim.simulate_stack(truth, sim.CoherenceModel(0.8, 0.1, 60.0), 1)
    res = sq.run_sequential(stack, 2, 3, sq.LinkParams(shp_method="rect", shp_half_extent=(2, 2)))
    first = res.outputs[0].temporal_coherence
    check(2, "gamma_t == 1", batch_ok and bool(np.all(first == 1.0)),
          f"{np.count_nonzero(out.temporal_coherence != 1.0)} random matrices and "
          f"{np.count_nonzero(first != 1.0)} pipeline pixels differ from 1")


# 3. network sizes ----------------------------------------------------------------------

def test_c3_network_counts():
    full = nw.build_nearest3(np.arange(15) * 12.0)
    sub = nw.forward_subset(full, 4)
    check(3, "pair counts", len(full) == 39 and len(sub) == 6, f"{len(full)} and {len(sub)} pairs")


# 4. L1 robustness against a brute-force integer-ambiguity oracle ----------------------

def _l1_trial(seed, exactly_one=False):
    rng = np.random.default_rng([4, seed])
    n = int(rng.integers(5, 9))
    a = oracles.incidence(oracles.nearest_pairs(n), n)
    m = a.shape[0]
    x_true = rng.uniform(-10, 10, n - 1)
    cap = m // 4
    count = 1 if exactly_one else int(rng.integers(0, cap + 1))
    k = np.zeros(m)
    rows = rng.choice(m, count, replace=False)
    k[rows] = rng.choice([-1.0, 1.0], count)
    return n, a, x_true, a @ x_true + 2 * np.pi * k, rows, cap


@pytest.fixture(scope="module")
def l1_trials():
    out = []
    for seed in range(500):
        n, a, x_true, b, rows, cap = _l1_trial(seed)
        # full enumeration up to N = 6; larger networks enumerate up to the injected error budget
        x_or, _, _ = oracles.integer_ambiguity_solve(a, b, None if n <= 6 else cap)
        x_l1, _, _ = inv.admm_l1(inv.L1Problem(a), b)
        obj = lambda x: np.abs(a @ x - b).sum()  # noqa: E731
        out.append((np.abs(x_l1 - x_or).max(), obj(x_l1) - obj(x_or)))
    return np.array(out)


@pytest.mark.xfail(strict=True, reason="about 8% of trials have a non-unique L1 optimum; ADMM returns an "
                                        "interior point of the optimal segment, pi away from the oracle")
def test_c4a_l1_matches_oracle(l1_trials):
    frac = np.mean(l1_trials[:, 0] < 1e-3)
    check(4, "4a oracle match", frac >= 0.95, f"{frac:.1%} of 500 trials within 1e-3")


def test_c4a_l1_objective_matches_oracle(l1_trials):
    # supporting evidence for 4a: every mismatch is an L1 tie, not a worse solution
    worse = l1_trials[:, 1].max()
    check(4, "4a' L1 objective", worse < 1e-3, f"max objective excess over oracle {worse:.1e}")


def test_c4b_l1_beats_lsq_on_single_error():
    wins = 0
    for seed in range(500):
        _, a, x_true, b, rows, _ = _l1_trial(10_000 + seed, exactly_one=True)
        x_l1, _, _ = inv.admm_l1(inv.L1Problem(a), b)
        x_ls = inv.lsq_baseline(a, b)
        full_true = np.concatenate([[0.0], x_true])
        full_l1 = np.concatenate([[0.0], x_l1])
        full_ls = np.concatenate([[0.0], x_ls])
        pair = oracles.nearest_pairs(a.shape[1] + 1)[int(rows[0])]
        err_l1 = np.abs(full_l1 - full_true)[list(pair)].max()
        err_ls = np.abs(full_ls - full_true)[list(pair)].max()
        wins += err_l1 < err_ls
    check(4, "4b beats lsq", wins / 500 >= 0.99, f"{wins}/500 single-error trials")


# 5. amplitude statistics merge ---------------------------------------------------------

def test_c5_merge_equals_single_pass():
    rng = np.random.default_rng(55)
    amps = np.abs(rng.normal(size=(30, 6, 7)) + 1j * rng.normal(size=(30, 6, 7))) * rng.uniform(0.5, 50, (1, 6, 7))
    mean_ref, var_ref = oracles.single_pass_stats(amps)
    worst = 0.0
    for _ in range(1000):
        labels = rng.integers(0, rng.integers(1, 31), 30)
        groups = [np.flatnonzero(labels == g) for g in np.unique(labels)]
        rng.shuffle(groups)
        merged = sc.merge_amp_stats([sc.amp_stats_from_stack(amps, g) for g in groups])
        worst = max(worst, np.max(np.abs(merged.mean - mean_ref) / np.abs(mean_ref)),
                    np.max(np.abs(merged.var - var_ref) / np.abs(var_ref)))
    check(5, "merge", worst <= 1e-9, f"max relative error {worst:.1e} over 1000 partitions")


# 6. compressed-SLC referencing on noiseless input ----------------------------------------

def test_c6_referencing_schemes():
    stack, truth = noiseless_stack((30, 30), 45)
    params = sq.LinkParams(shp_method="rect", shp_half_extent=(0, 0))
    first = sq.run_sequential(stack, 15, 6, params, sq.FIRST_DATE)
    err_first = max(np.abs(wrap(o.phase - (truth.phase[o.dates] - truth.phase[0]))).max()
                    for o in first.outputs)
    relative_ok = all(o.relative_to == 0 for o in first.outputs)
    last = sq.run_sequential(stack, 15, 6, params, sq.LAST_PER_MINISTACK)
    chained = sq.daisy_chain(last.outputs)
    err_last = np.abs(wrap(chained - truth.phase)).max()
    err_between = np.abs(wrap(chained - first.full_phase)).max()
    check(6, "referencing", relative_ok and max(err_first, err_last, err_between) < 1e-9,
          f"first-date {err_first:.1e}, daisy chain {err_last:.1e}, between schemes {err_between:.1e} rad")


# 7. forward versus historical ----------------------------------------------------------

def test_c7_forward_matches_historical():
    dates = sim.regular_dates(20)
    truth = sim.build_truth_scene((40, 40), dates, 5.0, 0.3, 1)
    worst = 0.0
    for model in (sim.CoherenceModel(1.0, 0.0, 60.0), sim.CoherenceModel(1.0, 0.5, 60.0)):
        stack = sim.simulate_stack(truth, model, 2)
        res = sq.run_sequential(stack, 5, 2, sq.LinkParams(shp_method="rect", shp_half_extent=(5, 7),
                                                           use_ps=False))
        rep, *_ = va.forward_vs_historical(res.full_phase, dates, truth.phase, (20, 20))
        worst = max(worst, rep.max_option1.max(), rep.max_option2.max())
    rep, *_ = va.forward_vs_historical(wrap(truth.phase), dates, truth.phase, (20, 20))
    worst = max(worst, rep.max_option1.max(), rep.max_option2.max())
    check(7, "consistency", worst < 1e-6, f"max discrepancy {worst:.1e} rad")


# 8. VA2 harness ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def flat_products():
    stack, truth = noiseless_stack((200, 200), 30, bowl_rate=0.0, tropo_std=0.0, seed=8)
    cfg = validate_config({"shp": {"method": "rect", "window": [0, 0]},
                           "sequential": {"miniStackSize": 15, "maxCompressed": 6}})
    return pipeline.historical(stack, cfg, truth.phase)


def test_c8a_va2_zero_deformation_passes(flat_products):
    rep = va.va2_residuals(flat_products.velocity)
    frac = rep.frac_below[rep.populated]
    check(8, "8a zero field", rep.overall and bool(np.all(frac == 1.0)),
          f"{rep.populated.sum()} populated bins, min fraction {frac.min():.3f}")


def test_c8b_va2_step_fails(flat_products):
    vel_mm = inv.rad_to_mm(flat_products.velocity)
    vel_mm[:, vel_mm.shape[1] // 2 :] += 10.0
    rep = va.va2_residuals(vel_mm, units="mm/yr")
    failing = int(np.sum(rep.populated & ~rep.passed))
    check(8, "8b 10 mm/yr step", failing >= 1, f"{failing} failing bins")


# 9. EMI correctness ------------------------------------------------------------------

def test_c9a_two_date_closed_form(rng):
    worst = 0.0
    for seed in range(300):
        corr = sim.correlation_matrix(sim.CoherenceModel(rng.uniform(0.2, 1.0), 0.0, 60.0), [0.0, 12.0])
        s = sim.sample_ccg(corr, [0.0, rng.uniform(-3, 3)], seed, size=int(rng.integers(3, 60)))
        coh = pl.coherence_from_samples(s)
        res = pl.emi_solve(coh)
        worst = max(worst, abs(wrap(np.angle(res.zeta[1]) - np.angle(coh.matrix[1, 0]))))
    check(9, "9a N=2", worst <= 1e-12, f"max angle error {worst:.1e} rad")


def test_c9b_rank_one_recovery(rng):
    worst = 0.0
    for n in range(2, 31):
        phase = rng.uniform(-np.pi, np.pi, n)
        v = np.exp(1j * phase)
        for matrix in (np.outer(v, v.conj()),
                       v[:, None] * sim.correlation_matrix(sim.CoherenceModel(1.0, 0.1, 60.0),
                                                           sim.regular_dates(n)) * v.conj()[None]):
            res = pl.emi_solve(pl.SampleCoherence(matrix, 1))
            worst = max(worst, np.abs(wrap(np.angle(res.zeta) - (phase - phase[0]))).max())
    check(9, "9b rank one", worst <= 1e-9, f"max phase error {worst:.1e} rad")


def test_c9c_eigenvalue_bound(rng):
    lowest = np.inf
    for _ in range(300):
        n = int(rng.integers(2, 31))
        model = sim.CoherenceModel(rng.uniform(0.3, 1.0), 0.0, rng.uniform(10, 200))
        model = sim.CoherenceModel(model.rho0, rng.uniform(0, model.rho0 * 0.9), model.tau)
        dates = np.cumsum(rng.uniform(6, 24, n))
        v = np.exp(1j * rng.uniform(-np.pi, np.pi, n))
        sigma = v[:, None] * sim.correlation_matrix(model, dates) * v.conj()[None]
        res = pl.emi_solve(pl.SampleCoherence(sigma, 1))
        if res.method == pl.Method.EMI:
            lowest = min(lowest, res.eigenvalue)
    check(9, "9c lambda_min", lowest >= 1 - 1e-6, f"smallest eigenvalue {lowest:.9f}")


# 10. velocity recovery -----------------------------------------------------------------

def test_c10_velocity_peak():
    stack, truth = noiseless_stack((200, 200), 60, bowl_rate=5.0, tropo_std=0.0, seed=10)
    cfg = validate_config({"shp": {"method": "rect", "window": [0, 0]},
                           "sequential": {"miniStackSize": 15, "maxCompressed": 6}})
    prod = pipeline.historical(stack, cfg, truth.phase)
    r, c = prod.reference_pixel
    expected = truth.rate - truth.rate[r, c]
    err = np.abs(prod.velocity - expected).max()
    peak = np.unravel_index(np.argmax(truth.rate), truth.rate.shape)
    recovered = prod.velocity[peak] + truth.rate[r, c]
    check(10, "peak rate", err < 1e-6 and abs(recovered - 5.0) < 1e-6 and abs(truth.rate.max() - 5.0) < 1e-12,
          f"peak {recovered:.9f} rad/yr, max field error {err:.1e}")
