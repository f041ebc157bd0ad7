"""Compiled binary64 loops for long orbits.

Every kernel applies the lattice update in difference form

    y_i = f_i + c * sum_{j in N(i)} (f_j - f_i)

which is algebraically (I + cA) f but leaves states on the diagonal exactly
on the diagonal. Kernels report failures through an integer error code
instead of raising: 0 ok, 1 coordinate escaped [0, 1].

Doubling-type maps shift one binary digit out per step, so a finite
mantissa runs dry and every orbit ends on a dyadic rational. Kernels that
take ``dither_seed >= 0`` add a common random offset of about one ulp to all
coordinates after each step. The offset lies along the diagonal, so it
refills the low digits of the synchronous component without touching the
transverse difference.
"""
from __future__ import annotations

import numpy as np
from numba import njit

CLAMP_TOL = 1e-12

METRIC_PAIRWISE_MAX = 0
METRIC_EUCLIDEAN = 1


@njit(cache=True)
def _branch(x, lo, hi, loc, hic):
    for b in range(lo.size):
        if (x > lo[b] or (loc[b] and x == lo[b])) and (x < hi[b] or (hic[b] and x == hi[b])):
            return b
    return -1


@njit(cache=True)
def _step(x, y, f, cell, c, nbr, lo, hi, loc, hic, slope, icpt):
    n = x.size
    for i in range(n):
        b = _branch(x[i], lo, hi, loc, hic)
        if b < 0:
            return 1
        cell[i] = b
        v = slope[b] * x[i] + icpt[b]
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        f[i] = v
    for i in range(n):
        acc = 0.0
        for k in range(nbr.shape[1]):
            acc += f[nbr[i, k]] - f[i]
        v = f[i] + c * acc
        if v < 0.0:
            if v < -CLAMP_TOL:
                return 1
            v = 0.0
        elif v > 1.0:
            if v > 1.0 + CLAMP_TOL:
                return 1
            v = 1.0
        y[i] = v
    return 0


DITHER_SCALE = 2.0**-52


@njit(cache=True)
def _dither(x):
    eta = (np.random.random() - 0.5) * DITHER_SCALE
    for i in range(x.size):
        v = x[i] + eta
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        x[i] = v


@njit(cache=True)
def _seed(dither_seed):
    if dither_seed >= 0:
        np.random.seed(dither_seed)


@njit(cache=True)
def _distance(x, metric):
    if metric == METRIC_PAIRWISE_MAX:
        lo = x[0]
        hi = x[0]
        for i in range(1, x.size):
            if x[i] < lo:
                lo = x[i]
            if x[i] > hi:
                hi = x[i]
        return hi - lo
    mean = 0.0
    for i in range(x.size):
        mean += x[i]
    mean /= x.size
    acc = 0.0
    for i in range(x.size):
        acc += (x[i] - mean) ** 2
    return np.sqrt(acc)


@njit(cache=True)
def orbit_kernel(x0, steps, sample_every, c, nbr, lo, hi, loc, hic, slope, icpt, metric, dither_seed):
    n = x0.size
    m = steps // sample_every + 1
    states = np.empty((m, n))
    dists = np.empty(m)
    cells = np.empty((m, n), dtype=np.int64)
    x = x0.copy()
    y = np.empty(n)
    f = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    _seed(dither_seed)
    for i in range(n):
        cell[i] = _branch(x[i], lo, hi, loc, hic)
    states[0] = x
    dists[0] = _distance(x, metric)
    cells[0] = cell
    r = 1
    for t in range(1, steps + 1):
        err = _step(x, y, f, cell, c, nbr, lo, hi, loc, hic, slope, icpt)
        if err != 0:
            return states[:r], dists[:r], cells[:r], t
        x, y = y, x
        if dither_seed >= 0:
            _dither(x)
        if t % sample_every == 0:
            states[r] = x
            dists[r] = _distance(x, metric)
            for i in range(n):
                cells[r, i] = _branch(x[i], lo, hi, loc, hic)
            r += 1
    return states, dists, cells, 0


@njit(cache=True)
def regime_kernel(x0, horizon, transient, tail, c, nbr, lo, hi, loc, hic, slope, icpt,
                  metric, eps_enter, r0, dither_seed):
    """Online statistics for regime classification.

    Returns (cycles, entries, min_d, max_d, tail_max, final_d, err_step).
    A cycle is an entry below eps_enter followed later by an exit to >= r0;
    only steps after ``transient`` count.
    """
    n = x0.size
    x = x0.copy()
    y = np.empty(n)
    f = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    _seed(dither_seed)
    cycles = 0
    entries = 0
    inside = False
    min_d = np.inf
    max_d = 0.0
    tail_max = 0.0
    d = _distance(x, metric)
    for t in range(1, horizon + 1):
        err = _step(x, y, f, cell, c, nbr, lo, hi, loc, hic, slope, icpt)
        if err != 0:
            return cycles, entries, min_d, max_d, tail_max, d, t
        x, y = y, x
        if dither_seed >= 0:
            _dither(x)
        d = _distance(x, metric)
        if t > horizon - tail and d > tail_max:
            tail_max = d
        if t <= transient:
            continue
        if d < min_d:
            min_d = d
        if d > max_d:
            max_d = d
        if not inside:
            if d < eps_enter:
                inside = True
                entries += 1
        elif d >= r0:
            inside = False
            cycles += 1
    return cycles, entries, min_d, max_d, tail_max, d, 0


@njit(cache=True)
def density_kernel(x0, steps, burn_in, bins, c, nbr, lo, hi, loc, hic, slope, icpt, dither_seed):
    """Occupation counts of (x_1, x_2) on a bins x bins grid, row = x_2 bin."""
    n = x0.size
    x = x0.copy()
    y = np.empty(n)
    f = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    _seed(dither_seed)
    counts = np.zeros((bins, bins), dtype=np.int64)
    for t in range(1, burn_in + steps + 1):
        err = _step(x, y, f, cell, c, nbr, lo, hi, loc, hic, slope, icpt)
        if err != 0:
            return counts, t
        x, y = y, x
        if dither_seed >= 0:
            _dither(x)
        if t > burn_in:
            i = min(int(x[0] * bins), bins - 1)
            j = min(int(x[1] * bins), bins - 1)
            counts[j, i] += 1
    return counts, 0


@njit(cache=True)
def escape_kernel(x0, outer, max_steps, c, nbr, lo, hi, loc, hic, slope, icpt, metric, dither_seed):
    """Steps until the distance to the diagonal exceeds ``outer`` (-1 if never)."""
    n = x0.size
    x = x0.copy()
    y = np.empty(n)
    f = np.empty(n)
    cell = np.empty(n, dtype=np.int64)
    _seed(dither_seed)
    for t in range(1, max_steps + 1):
        err = _step(x, y, f, cell, c, nbr, lo, hi, loc, hic, slope, icpt)
        if err != 0:
            return -2
        x, y = y, x
        if dither_seed >= 0:
            _dither(x)
        if _distance(x, metric) > outer:
            return t
    return -1
