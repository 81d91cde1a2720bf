"""Interferogram networks, unwrapping back ends and reference-pixel selection."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

TWO_PI = 2.0 * np.pi


def wrap(phase):
    """Wrap to (-pi, pi]."""
    out = np.angle(np.exp(1j * np.asarray(phase)))
    return np.where(out == -np.pi, np.pi, out)


@dataclass
class IfgNetwork:
    """Pairs of date indices ``(i, k)``, ``i < k``, over ``dates``.

    ``incidence`` maps date phases relative to ``dates[0]`` (columns for
    dates 1..N-1) to pair differences ``phi_k - phi_i``.
    """

    dates: np.ndarray
    pairs: list[tuple[int, int]]
    date_index: np.ndarray  # global index of each local date

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def incidence(self) -> np.ndarray:
        return incidence_matrix(self.pairs, self.n_dates)

    def __len__(self) -> int:
        return len(self.pairs)


def incidence_matrix(pairs, n_dates: int) -> np.ndarray:
    a = np.zeros((len(pairs), n_dates - 1))
    for row, (i, k) in enumerate(pairs):
        if k > 0:
            a[row, k - 1] += 1.0
        if i > 0:
            a[row, i - 1] -= 1.0
    return a


def build_nearest(dates, q: int = 3, date_index=None) -> IfgNetwork:
    dates = np.asarray(dates, dtype=np.float64)
    n = dates.size
    if n < 2:
        raise ValueError("a network needs at least 2 dates")
    pairs = [(i, k) for i in range(n) for k in range(i + 1, min(i + q, n - 1) + 1)]
    if date_index is None:
        date_index = np.arange(n)
    return IfgNetwork(dates, pairs, np.asarray(date_index))


def build_nearest3(dates, date_index=None) -> IfgNetwork:
    return build_nearest(dates, 3, date_index)


def is_connected(pairs, n_dates: int) -> bool:
    if n_dates == 1:
        return True
    a = incidence_matrix(pairs, n_dates)
    return a.shape[0] >= n_dates - 1 and np.linalg.matrix_rank(a) == n_dates - 1


def forward_subset(net: IfgNetwork, newest_count: int) -> IfgNetwork:
    """Pairs whose two dates are both among the ``newest_count`` latest dates."""
    if newest_count < 2:
        raise ValueError("newest_count must be >= 2")
    n = net.n_dates
    if newest_count >= n:
        return net
    first = n - newest_count
    pairs = [(i - first, k - first) for i, k in net.pairs if i >= first]
    if not is_connected(pairs, newest_count):
        raise ValueError(f"subset of the newest {newest_count} dates is disconnected")
    return IfgNetwork(net.dates[first:], pairs, net.date_index[first:])


def reform_interferograms(linked_phase, net: IfgNetwork) -> np.ndarray:
    """Wrapped ``phi_k - phi_i`` for each pair; ``linked_phase`` is (N, rows, cols)."""
    ph = np.asarray(linked_phase)
    if ph.shape[0] != net.n_dates:
        raise ValueError("one phase raster per network date required")
    i = np.array([p[0] for p in net.pairs])
    k = np.array([p[1] for p in net.pairs])
    return wrap(ph[k] - ph[i])


@dataclass
class UnwrappedStack:
    unwrapped: np.ndarray  # (N_ifg, rows, cols)
    components: np.ndarray  # int32, 0 = not unwrapped
    quality: np.ndarray
    injected: np.ndarray | None = None  # integer 2pi multiples added (oracle only)


def oracle_unwrap(wrapped, truth_diff, error_fraction: float = 0.0, region_size: int = 10,
                  k_choices=(-1, 1), seed: int = 0, quality=None, pair_keys=None) -> UnwrappedStack:
    """Unwrap with knowledge of the truth, then inject ``2 pi k`` patches.

    Square patches of side ``region_size`` are dropped at random until at
    least ``error_fraction`` of each pair's pixels is covered. Patch ``j``
    gets component label ``j + 2``; clean pixels have label 1. Each pair
    draws from its own generator seeded by ``(seed, *pair_keys[p])`` so the
    same pair gets the same errors in any network; keys default to the
    pair position.
    """
    wrapped = np.asarray(wrapped, dtype=np.float64)
    truth_diff = np.asarray(truth_diff, dtype=np.float64)
    if wrapped.shape != truth_diff.shape:
        raise ValueError("wrapped and truth shapes differ")
    if not 0.0 <= error_fraction < 1.0:
        raise ValueError("error_fraction must lie in [0, 1)")
    base = truth_diff + wrap(wrapped - truth_diff)
    n_ifg, rows, cols = wrapped.shape
    injected = np.zeros(wrapped.shape, dtype=np.int32)
    comps = np.ones(wrapped.shape, dtype=np.int32)
    if pair_keys is None:
        pair_keys = [(p,) for p in range(n_ifg)]
    if len(pair_keys) != n_ifg:
        raise ValueError("one key per pair required")
    if error_fraction > 0:
        size = max(1, min(int(region_size), rows, cols))
        target = int(np.ceil(error_fraction * rows * cols))
        for p in range(n_ifg):
            rng = np.random.default_rng([int(seed), *(int(v) for v in np.atleast_1d(pair_keys[p]))])
            label = 2
            while np.count_nonzero(injected[p]) < target:
                r0 = rng.integers(0, rows - size + 1)
                c0 = rng.integers(0, cols - size + 1)
                k = int(rng.choice(k_choices))
                injected[p, r0 : r0 + size, c0 : c0 + size] = k
                comps[p, r0 : r0 + size, c0 : c0 + size] = label
                label += 1
            comps[p][injected[p] == 0] = 1
    if quality is None:
        quality = np.ones(wrapped.shape)
    return UnwrappedStack(base + TWO_PI * injected, comps, np.asarray(quality), injected)


def spatial_unwrap(wrapped, quality, threshold: float = 0.0):
    """Quality-guided flood fill on one wrapped raster.

    Each region of 4-connected pixels with quality >= ``threshold`` is
    integrated from its best pixel, always expanding the highest-quality
    frontier pixel next. Returns ``(unwrapped, components)``; pixels below
    the threshold keep their wrapped value and component 0.
    """
    wrapped = np.asarray(wrapped, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64)
    if wrapped.ndim != 2 or min(wrapped.shape) < 2:
        raise ValueError("raster must be at least 2x2")
    rows, cols = wrapped.shape
    good = np.isfinite(quality) & (quality >= threshold) & np.isfinite(wrapped)
    out = wrapped.copy()
    comps = np.zeros((rows, cols), dtype=np.int32)
    done = ~good
    q_flat = np.where(good, quality, -np.inf).ravel()
    order = np.argsort(-q_flat, kind="stable")
    label = 0
    w = wrapped
    for seed_idx in order:
        if not np.isfinite(q_flat[seed_idx]):
            break
        r, c = divmod(int(seed_idx), cols)
        if done[r, c]:
            continue
        label += 1
        done[r, c] = True
        comps[r, c] = label
        heap = []

        def push(rr, cc, pr, pc):
            heapq.heappush(heap, (-quality[rr, cc], rr * cols + cc, pr, pc))

        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < rows and 0 <= cc < cols and not done[rr, cc]:
                push(rr, cc, r, c)
        while heap:
            _, idx, pr, pc = heapq.heappop(heap)
            rr, cc = divmod(idx, cols)
            if done[rr, cc]:
                continue
            done[rr, cc] = True
            comps[rr, cc] = label
            out[rr, cc] = out[pr, pc] + wrap(w[rr, cc] - w[pr, pc])
            for nr, nc in ((rr - 1, cc), (rr + 1, cc), (rr, cc - 1), (rr, cc + 1)):
                if 0 <= nr < rows and 0 <= nc < cols and not done[nr, nc]:
                    push(nr, nc, rr, cc)
    return out, comps


def spatial_unwrap_stack(wrapped, quality, threshold: float = 0.0) -> UnwrappedStack:
    wrapped = np.asarray(wrapped)
    quality = np.broadcast_to(np.asarray(quality), wrapped.shape)
    unw = np.empty(wrapped.shape)
    comps = np.empty(wrapped.shape, dtype=np.int32)
    for p in range(wrapped.shape[0]):
        unw[p], comps[p] = spatial_unwrap(wrapped[p], quality[p], threshold)
    return UnwrappedStack(unw, comps, np.array(quality))


def common_components(components) -> np.ndarray:
    """4-connected regions whose component labels agree across every pair.

    Pixels with label 0 in any pair get 0. Output labels start at 1.
    """
    comps = np.asarray(components)
    if comps.ndim == 2:
        comps = comps[None]
    valid = np.all(comps > 0, axis=0)
    flat = comps.reshape(comps.shape[0], -1).T
    _, key = np.unique(flat, axis=0, return_inverse=True)
    key = key.reshape(comps.shape[1:])
    out = np.zeros(comps.shape[1:], dtype=np.int32)
    nxt = 1
    for k in np.unique(key[valid]):
        lab, n = ndimage.label(valid & (key == k))
        out[lab > 0] = lab[lab > 0] + nxt - 1
        nxt += n
    return out


def select_reference_pixel(tcoh, components, threshold: float = 0.95):
    """Pixel nearest the centroid of the high-coherence part of the largest component.

    ``components`` is a 2D label raster (0 = invalid). Components are ranked
    by size (ties: smaller label) and the first one containing pixels with
    ``tcoh > threshold`` is used.
    """
    tcoh = np.asarray(tcoh)
    comps = np.asarray(components)
    passing = (tcoh > threshold) & (comps > 0)
    if not passing.any():
        raise ValueError(f"no pixel has temporal coherence above {threshold}; lower reference.threshold")
    labels, sizes = np.unique(comps[comps > 0], return_counts=True)
    for lab in labels[np.lexsort((labels, -sizes))]:
        cand = passing & (comps == lab)
        if cand.any():
            break
    rr, cc = np.nonzero(cand)  # row-major order
    d2 = (rr - rr.mean()) ** 2 + (cc - cc.mean()) ** 2
    j = int(np.argmin(d2))
    return int(rr[j]), int(cc[j])
