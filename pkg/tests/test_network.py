import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqlink import network as nw

import oracles


def test_nearest3_counts():
    assert len(nw.build_nearest3(np.arange(15.0))) == 39
    assert len(nw.build_nearest3(np.arange(4.0))) == 6
    assert len(nw.build_nearest3(np.arange(2.0))) == 1


@pytest.mark.parametrize("n", range(4, 51))
def test_nearest3_formula(n):
    net = nw.build_nearest3(np.arange(float(n)))
    assert len(net) == 3 * n - 6
    assert net.pairs == oracles.nearest_pairs(n)


@given(n=st.integers(2, 40), q=st.integers(1, 6))
def test_nearest_q_count(n, q):
    net = nw.build_nearest(np.arange(float(n)), q)
    qq = min(q, n - 1)
    assert len(net) == qq * n - qq * (qq + 1) // 2
    assert np.linalg.matrix_rank(net.incidence) == n - 1


def test_incidence_layout():
    net = nw.build_nearest3(np.arange(5.0))
    assert np.array_equal(net.incidence, oracles.incidence(net.pairs, 5))
    row = net.pairs.index((1, 3))
    assert net.incidence[row].tolist() == [-1, 0, 1, 0]


def test_single_date_rejected():
    with pytest.raises(ValueError):
        nw.build_nearest3([0.0])


def test_forward_subset():
    net = nw.build_nearest3(np.arange(15.0))
    sub = nw.forward_subset(net, 4)
    assert len(sub) == 6
    assert sub.date_index.tolist() == [11, 12, 13, 14]
    assert nw.forward_subset(net, 15) is net
    two = nw.forward_subset(net, 2)
    assert len(two) == 1 and two.date_index.tolist() == [13, 14]
    with pytest.raises(ValueError):
        nw.forward_subset(net, 1)


def test_forward_subset_disconnected():
    net = nw.build_nearest(np.arange(10.0), 1)
    sparse = nw.IfgNetwork(net.dates, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 9)],
                           net.date_index)
    with pytest.raises(ValueError):
        nw.forward_subset(sparse, 3)


def test_reform_self_pair_zero(rng):
    ph = rng.uniform(-10, 10, (3, 4, 4))
    net = nw.IfgNetwork(np.arange(3.0), [(1, 1)], np.arange(3))
    assert not nw.reform_interferograms(ph, net).any()


@given(seed=st.integers(0, 10_000))
def test_reform_triplet_closure(seed):
    rng = np.random.default_rng(seed)
    ph = rng.uniform(-50, 50, (6, 3, 3))
    net = nw.build_nearest3(np.arange(6.0))
    w = nw.reform_interferograms(ph, net)
    idx = {p: j for j, p in enumerate(net.pairs)}
    for i, k, m in [(0, 1, 2), (1, 2, 3), (2, 4, 5), (0, 2, 3)]:
        closure = w[idx[(i, k)]] + w[idx[(k, m)]] - w[idx[(i, m)]]
        assert np.abs(nw.wrap(closure)).max() < 1e-12


def test_reform_pair_equals_difference(rng):
    ph = nw.wrap(rng.uniform(-3, 3, (12, 2, 2)))
    net = nw.build_nearest3(np.arange(12.0))
    w = nw.reform_interferograms(ph, net)
    j = net.pairs.index((7, 8))
    assert np.allclose(w[j], nw.wrap(ph[8] - ph[7]))


def test_wrap_range():
    v = nw.wrap(np.array([np.pi, -np.pi, 3 * np.pi, 0.5]))
    assert np.allclose(v, [np.pi, np.pi, np.pi, 0.5])


def _truth_pairs(rng, n_ifg=4, shape=(30, 30)):
    truth = rng.uniform(-20, 20, (n_ifg,) + shape)
    wrapped = nw.wrap(truth + rng.normal(0, 0.3, truth.shape))
    return truth, wrapped


def test_oracle_zero_errors(rng):
    truth, wrapped = _truth_pairs(rng)
    u = nw.oracle_unwrap(wrapped, truth)
    assert np.abs(u.unwrapped - truth).max() < np.pi
    k = (u.unwrapped - wrapped) / (2 * np.pi)
    assert np.abs(k - np.round(k)).max() < 1e-6
    assert np.all(u.components == 1) and not u.injected.any()


def test_oracle_injected_regions(rng):
    truth, wrapped = _truth_pairs(rng)
    clean = nw.oracle_unwrap(wrapped, truth)
    dirty = nw.oracle_unwrap(wrapped, truth, 0.1, 5, seed=3)
    diff = dirty.unwrapped - clean.unwrapped
    flagged = dirty.injected != 0
    assert np.allclose(diff[flagged] / (2 * np.pi), dirty.injected[flagged])
    assert np.all(np.abs(np.abs(diff[flagged]) - 2 * np.pi) < 1e-9)
    assert not diff[~flagged].any()
    recovered = np.round(diff / (2 * np.pi)).astype(int)
    assert np.array_equal(recovered, dirty.injected)
    for p in range(truth.shape[0]):
        assert flagged[p].mean() >= 0.1
        assert np.all(dirty.components[p][flagged[p]] >= 2)
        assert np.all(dirty.components[p][~flagged[p]] == 1)


def test_oracle_pair_keys_stable(rng):
    truth, wrapped = _truth_pairs(rng, 3)
    a = nw.oracle_unwrap(wrapped, truth, 0.1, 4, seed=1, pair_keys=[(0, 1), (0, 2), (1, 2)])
    b = nw.oracle_unwrap(wrapped[1:], truth[1:], 0.1, 4, seed=1, pair_keys=[(0, 2), (1, 2)])
    assert np.array_equal(a.injected[1:], b.injected)


def test_spatial_ramp_exact():
    rr, cc = np.mgrid[0:40, 0:50]
    ramp = 0.4 * rr + 0.9 * cc
    unw, comps = nw.spatial_unwrap(nw.wrap(ramp), np.ones(ramp.shape))
    d = unw - ramp
    assert np.abs(d - d[0, 0]).max() < 1e-9
    assert np.all(comps == 1)


def test_spatial_two_components():
    q = np.ones((20, 30))
    q[:, 14:16] = 0.0
    ph = np.zeros((20, 30))
    unw, comps = nw.spatial_unwrap(ph, q, threshold=0.5)
    assert set(np.unique(comps)) == {0, 1, 2}
    assert np.all(comps[:, 14:16] == 0)


def test_spatial_all_below_threshold():
    unw, comps = nw.spatial_unwrap(np.zeros((4, 4)), np.zeros((4, 4)), 0.5)
    assert not comps.any()


def test_spatial_bowl_scene():
    from seqlink import sim

    t = sim.build_truth_scene((200, 200), np.array([0.0, sim.DAYS_PER_YEAR * 4]), 5.0, 0.3, 2)
    truth = t.phase[1]
    gy, gx = np.gradient(truth)
    assert max(np.abs(gy).max(), np.abs(gx).max()) < np.pi
    unw, _ = nw.spatial_unwrap(nw.wrap(truth), np.ones(truth.shape))
    d = unw - truth
    assert np.sqrt(np.mean((d - d.mean()) ** 2)) < 0.1


@given(seed=st.integers(0, 1000))
def test_spatial_integer_offsets(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-np.pi, np.pi, (8, 9))
    q = rng.random((8, 9))
    unw, _ = nw.spatial_unwrap(w, q, 0.2)
    k = (unw - w) / (2 * np.pi)
    assert np.abs(k - np.round(k)).max() < 1e-6


def test_spatial_too_small():
    with pytest.raises(ValueError):
        nw.spatial_unwrap(np.zeros((1, 5)), np.ones((1, 5)))


def test_common_components():
    a = np.ones((6, 6), int)
    b = np.ones((6, 6), int)
    b[:, 3:] = 2
    a[0, 0] = 0
    comps = nw.common_components(np.stack([a, b]))
    assert comps[0, 0] == 0
    assert len(np.unique(comps[comps > 0])) == 2


def test_reference_center():
    ref = nw.select_reference_pixel(np.ones((5, 5)), np.ones((5, 5), int))
    assert ref == (2, 2)
    ref = nw.select_reference_pixel(np.ones((4, 4)), np.ones((4, 4), int))
    assert ref == (1, 1)  # row-major first of the four equidistant pixels


def test_reference_largest_component():
    comps = np.zeros((10, 15), int)
    comps[:, :10] = 2  # 100 pixels
    comps[:5, 10:] = 1  # 25 pixels
    comps[5:, 10:] = 3  # 25 pixels
    r, c = nw.select_reference_pixel(np.ones(comps.shape), comps)
    assert comps[r, c] == 2


def test_reference_single_pixel():
    t = np.zeros((6, 6))
    t[4, 1] = 0.99
    assert nw.select_reference_pixel(t, np.ones((6, 6), int)) == (4, 1)


def test_reference_none_passing():
    with pytest.raises(ValueError, match="lower"):
        nw.select_reference_pixel(np.full((3, 3), 0.5), np.ones((3, 3), int))
