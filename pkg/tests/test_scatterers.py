import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqlink import scatterers as sc

import oracles

FROZEN = json.loads((Path(__file__).parent / "data" / "oracle_values.json").read_text())


def test_stats_constant_amplitude():
    s = sc.amp_stats_from_stack(np.full((10, 3, 3), 2.5 + 0j))
    assert np.all(s.mean == 2.5) and np.all(s.var == 0) and np.all(s.weight == 10)


def test_stats_two_values():
    s = sc.amp_stats_from_stack(np.array([[[2.0]], [[4.0j]]]))
    ref = FROZEN["single_pass_stats"]
    assert s.mean[0, 0] == ref["mean"][0] == 3.0
    assert s.var[0, 0] == ref["var"][0] == 1.0


def test_stats_single_date():
    s = sc.amp_stats_from_stack(np.ones((1, 2, 2)))
    assert np.all(s.var == 0) and np.all(s.weight == 1)


def test_stats_empty_subset():
    with pytest.raises(ValueError):
        sc.amp_stats_from_stack(np.ones((3, 2, 2)), [])


def test_merge_two_parts():
    a = sc.AmpStats(np.array([2.0]), np.array([0.0]), np.array([1.0]))
    b = sc.AmpStats(np.array([4.0]), np.array([0.0]), np.array([1.0]))
    m = sc.merge_amp_stats([a, b])
    assert m.mean[0] == 3.0 and m.var[0] == 1.0 and m.weight[0] == 2.0


@pytest.mark.parametrize("weighting", ["equal", "exponential"])
def test_merge_single_part_identity(weighting):
    a = sc.AmpStats(np.array([2.0, 1.0]), np.array([0.5, 0.1]), np.array([3.0, 3.0]))
    m = sc.merge_amp_stats([a], weighting)
    assert np.array_equal(m.mean, a.mean) and np.array_equal(m.var, a.var)


def test_merge_equals_single_pass_30_dates(rng):
    amps = rng.rayleigh(1.0, (30, 6, 5)) + 0.5
    parts = [sc.amp_stats_from_stack(amps[i : i + 15]) for i in (0, 15)]
    m = sc.merge_amp_stats(parts)
    mean, var = oracles.single_pass_stats(amps)
    assert np.allclose(m.mean, mean, rtol=1e-9, atol=0)
    assert np.allclose(m.var, var, rtol=1e-9, atol=0)


def test_merge_exponential_weights():
    parts = [sc.AmpStats(np.array([float(v)]), np.array([0.0]), np.array([1.0])) for v in (1, 2, 3)]
    m = sc.merge_amp_stats(parts, "exponential", 0.5)
    w = np.array([0.25, 0.5, 1.0])
    assert m.mean[0] == pytest.approx(np.dot(w, [1, 2, 3]) / w.sum(), rel=1e-14)
    assert m.weight[0] == pytest.approx(1.75)


def test_merge_errors():
    a = sc.AmpStats(np.ones(2), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        sc.merge_amp_stats([])
    with pytest.raises(ValueError):
        sc.merge_amp_stats([a, sc.AmpStats(np.ones(3), np.zeros(3), np.ones(3))])
    with pytest.raises(ValueError):
        sc.AmpStats(np.ones(2), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        sc.AmpStats(np.ones(2), -np.ones(2), np.ones(2))


def test_tiny_negative_variance_clipped():
    s = sc.AmpStats(np.ones(2), np.array([-1e-14, 0.1]), np.ones(2))
    assert s.var[0] == 0.0


@given(perm_seed=st.integers(0, 2**32 - 1))
def test_merge_order_insensitive(perm_seed):
    rng = np.random.default_rng(perm_seed)
    amps = rng.random((12, 4)) * 3
    cuts = np.sort(rng.choice(np.arange(1, 12), size=3, replace=False))
    parts = [sc.amp_stats_from_stack(chunk) for chunk in np.split(amps, cuts)]
    a = sc.merge_amp_stats(parts)
    b = sc.merge_amp_stats(parts[::-1])
    c = sc.merge_amp_stats([sc.merge_amp_stats(parts[:2]), sc.merge_amp_stats(parts[2:])])
    for other in (b, c):
        assert np.allclose(a.mean, other.mean, rtol=1e-12)
        assert np.allclose(a.var, other.var, rtol=1e-10, atol=1e-14)


def test_ps_zero_variance():
    m = sc.select_ps(sc.AmpStats(np.array([3.0]), np.array([0.0]), np.array([5.0])), 1e-6)
    assert m.mask[0] and m.dispersion[0] == 0.0


def test_ps_zero_mean_not_selected():
    m = sc.select_ps(sc.AmpStats(np.array([0.0]), np.array([0.0]), np.array([5.0])), 10.0)
    assert not m.mask[0] and np.isinf(m.dispersion[0])


def test_ps_threshold_positive():
    with pytest.raises(ValueError):
        sc.select_ps(sc.AmpStats(np.ones(1), np.zeros(1), np.ones(1)), 0.0)


def test_ps_point_target_vs_clutter(rng):
    trials, dates = 10_000, 30
    target = np.abs(10 + rng.normal(0, 1, (dates, trials)) + 1j * rng.normal(0, 1, (dates, trials)))
    clutter = rng.rayleigh(1.0, (dates, trials))
    pt = sc.select_ps(sc.amp_stats_from_stack(target), 0.2).mask
    cl = sc.select_ps(sc.amp_stats_from_stack(clutter), 0.2).mask
    assert pt.mean() > 0.99
    assert 1 - cl.mean() > 0.9
    # Rayleigh dispersion sqrt(4/pi - 1)
    disp = sc.select_ps(sc.amp_stats_from_stack(clutter), 0.2).dispersion
    assert np.median(disp) == pytest.approx(FROZEN["rayleigh_dispersion"], abs=0.03)


@given(t1=st.floats(0.01, 2), t2=st.floats(0.01, 2), seed=st.integers(0, 1000))
def test_ps_monotone_in_threshold(t1, t2, seed):
    rng = np.random.default_rng(seed)
    s = sc.AmpStats(rng.random(50) + 0.1, rng.random(50) * 0.2, np.full(50, 10.0))
    lo, hi = sorted((t1, t2))
    assert np.all(sc.select_ps(s, lo).mask <= sc.select_ps(s, hi).mask)


def test_glrt_identical_stats_accepted():
    s = sc.AmpStats(np.full((5, 5), 2.0), np.full((5, 5), 0.3), np.full((5, 5), 15.0))
    shp = sc.glrt_shp(s, (2, 2), 0.05)
    assert np.array_equal(shp.mask, sc.full_window_shp((5, 5), (2, 2)).mask)
    assert sc.glrt_statistic(2.0, 0.3, 2.0, 0.3) == 0.0


def test_glrt_homogeneous_acceptance(rng):
    n = 15
    amps = rng.rayleigh(1.0, (n, 120, 120))
    s = sc.amp_stats_from_stack(amps)
    shp = sc.glrt_shp(s, (3, 3), 0.05)
    inner = shp.mask[10:-10, 10:-10].copy()
    inner[:, :, 3, 3] = False
    rate = inner.sum() / (inner.shape[0] * inner.shape[1] * 48)
    assert rate == pytest.approx(0.95, abs=0.02)


def test_glrt_boundary_rejection(rng):
    n = 15
    mean = np.where(np.arange(40)[None, :] < 20, 1.0, 2.0) * np.ones((40, 1))
    amps = mean[None] + rng.normal(0, 0.1, (n, 40, 40))
    s = sc.amp_stats_from_stack(amps)
    shp = sc.glrt_shp(s, (0, 3), 0.05)
    # centers just left of the boundary looking right across it
    cross = shp.mask[:, 17:20, 0, :]
    cols = np.arange(17, 20)[:, None] + np.arange(-3, 4)[None]
    across = cols >= 20
    assert cross[:, across].mean() < 0.05


def test_glrt_symmetric(rng):
    s = sc.amp_stats_from_stack(rng.rayleigh(1.0, (10, 30, 30)) * (1 + np.arange(30) / 30))
    shp = sc.glrt_shp(s, (2, 3), 0.05)
    hy, hx = 2, 3
    for dy in range(-hy, hy + 1):
        for dx in range(-hx, hx + 1):
            a = shp.mask[hy : 30 - hy, hx : 30 - hx, dy + hy, dx + hx]
            b = shp.mask[hy + dy : 30 - hy + dy, hx + dx : 30 - hx + dx, hy - dy, hx - dx]
            assert np.array_equal(a, b)


def test_glrt_window_confined_and_self_included(rng):
    s = sc.amp_stats_from_stack(rng.rayleigh(1.0, (10, 12, 12)))
    shp = sc.glrt_shp(s, (2, 4), 0.05)
    assert shp.mask.shape == (12, 12, 5, 9)
    assert shp.mask[:, :, 2, 4].all()
    assert shp.count.min() >= 1
    assert shp.half_extent == (2, 4)
    # nothing accepted outside the raster
    assert not shp.mask[0, 0, :2].any() and not shp.mask[0, 0, :, :4].any()


def test_glrt_needs_two_samples():
    with pytest.raises(ValueError):
        sc.glrt_shp(sc.AmpStats(np.ones((3, 3)), np.zeros((3, 3)), np.ones((3, 3))), (1, 1))


def test_glrt_zero_variance_floor():
    s = sc.AmpStats(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]]), np.full((1, 2), 5.0))
    shp = sc.glrt_shp(s, (0, 1), 0.05)
    assert shp.mask[0, 0, 0, 2]


def test_full_window_edges():
    shp = sc.full_window_shp((5, 6), (1, 2))
    assert shp.count[2, 3] == 15
    assert shp.count[0, 0] == 2 * 3
