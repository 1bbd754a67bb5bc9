"""Numba kernels for walk sampling.

A step law is handed to the kernels as a flat "table" tuple::

    (steps, thresh, alias, is_tail, shift, tail_k, alpha, bound)

``steps`` is an (E, d) int64 array, ``thresh``/``alias`` form a Vose alias
table over the E entries (E a power of two, padded with zero-mass rows) and
``shift = 64 - log2(E)``.  A word ``w`` selects entry ``e = w >> shift`` and
keeps it when the low ``shift`` bits are below ``thresh[e]``, otherwise it
moves to ``alias[e]``.  Rows flagged in ``is_tail`` stand for the whole
tail ``{k >= tail_k}`` of a power law along ``steps[e]``; the magnitude is
then drawn by rejection from a continuous Pareto envelope.

Every sample ``j`` owns the stream ``child_key(base_key, j)``; step ``t``
reads word ``t - 1`` of it and tail magnitudes read the sub-stream
``child_key(key, TAIL_STREAM)``.  Results never depend on how samples are
batched.
"""

import math

import numba as nb
import numpy as np

from ._rng import GOLDEN, child_key, mix64, popcount64, rand_word, word_to_unit
from .scenery import SITE_SALT, _zigzag, site_value, site_value_1d, word_to_value

# Largest tail magnitude that is ever produced; larger proposals are rejected.
TAIL_CAP = 2.0**52

_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TWO = np.uint64(2)
_THREE = np.uint64(3)
TAIL_STREAM = np.uint64(0x7A11)


@nb.njit(cache=True, nogil=True)
def build_alias(p):
    """Vose alias table; ``p`` must have power-of-two length and sum to 1."""
    n = p.shape[0]
    prob = np.zeros(n, dtype=np.float64)
    alias = np.arange(n).astype(np.int64)
    scaled = p * n
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    while nl > 0:
        nl -= 1
        prob[large[nl]] = 1.0
    while ns > 0:
        ns -= 1
        prob[small[ns]] = 1.0
    return prob, alias


@nb.njit(cache=True, nogil=True)
def _tail_magnitude(tkey, tctr, tail_k, alpha, bound):
    """Exact draw from P(k) proportional to k^-(1+alpha), k >= tail_k."""
    s = 1.0 + alpha
    while True:
        u1 = 1.0 - word_to_unit(rand_word(tkey, tctr))
        u2 = word_to_unit(rand_word(tkey, tctr + _ONE))
        tctr += np.uint64(2)
        y = tail_k * u1 ** (-1.0 / alpha)
        if y >= TAIL_CAP:
            continue
        k = math.floor(y)
        # P(floor(Y) = k) is proportional to k^-alpha - (k+1)^-alpha.
        cell = -math.expm1(-alpha * math.log1p(1.0 / k))
        ratio = alpha * k ** (-s) / (k ** (-alpha) * cell)
        if u2 * bound <= ratio:
            return np.int64(k), tctr


def alias_thresholds(prob, shift):
    """Integer keep-thresholds for :func:`build_alias` probabilities."""
    scale = float(2**shift)
    return np.minimum(np.floor(prob * scale), scale).astype(np.uint64)


@nb.njit(cache=True, nogil=True)
def tail_key(key):
    return child_key(key, TAIL_STREAM)


@nb.njit(cache=True, nogil=True)
def increments(tab, key, n, d):
    """Increments X_1..X_n of the stream ``key`` as an (n, d) array.

    Step ``t`` is chosen by ``word(key, t - 1)``; tail magnitudes come from
    the separate stream ``tail_key(key)`` in order of use.  Keeping the main
    counter equal to the step index makes consecutive words independent of
    earlier outcomes, which lets the CPU overlap them.  The alias lookup is
    written out in each kernel on purpose: as a separate jitted call it
    costs about three times as much per step.
    """
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    tkey = tail_key(key)
    tctr = _ZERO
    out = np.empty((n, d), dtype=np.int64)
    for t in range(n):
        w = rand_word(key, np.uint64(t))
        e = np.int64(w >> sh)
        if (w & mask) >= thresh[e]:
            e = alias[e]
        k = np.int64(1)
        if is_tail[e]:
            k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
        for i in range(d):
            out[t, i] = steps[e, i] * k
    return out


@nb.njit(cache=True, nogil=True)
def positions(tab, key, n, d):
    out = increments(tab, key, n, d)
    for t in range(1, n):
        for i in range(d):
            out[t, i] += out[t - 1, i]
    return out


@nb.njit(cache=True, nogil=True)
def rwrs_grid_1d(tab, base_key, ids, n, horizons, field_key, law, window, window_lo):
    """Z at each horizon (sorted, within 1..n) for every sample id, d = 1.

    Sites inside ``[window_lo, window_lo + len(window))`` read omega from
    ``window``; the caller guarantees it holds exactly the field values there.
    """
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    m = ids.shape[0]
    nh = horizons.shape[0]
    out = np.zeros((m, nh), dtype=np.float64)
    wlen = window.shape[0]
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        tkey = tail_key(key)
        tctr = _ZERO
        z = 0.0
        h = 0
        while h < nh and horizons[h] <= 0:
            h += 1
        x = np.int64(0)
        for t in range(1, n + 1):
            w = rand_word(key, np.uint64(t - 1))
            e = np.int64(w >> sh)
            if (w & mask) >= thresh[e]:
                e = alias[e]
            dx = steps[e, 0]
            if is_tail[e]:
                k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
                dx *= k
            x += dx
            off = x - window_lo
            if off >= 0 and off < wlen:
                z += window[off]
            else:
                z += site_value_1d(field_key, law, x)
            while h < nh and horizons[h] == t:
                out[j, h] = z
                h += 1
    return out


@nb.njit(cache=True, nogil=True)
def rwrs_grid(tab, base_key, ids, n, d, horizons, field_key, law):
    """Z at each horizon for every sample id, any d (see :func:`rwrs_grid_1d`)."""
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    m = ids.shape[0]
    nh = horizons.shape[0]
    out = np.zeros((m, nh), dtype=np.float64)
    pos = np.zeros(d, dtype=np.int64)
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        tkey = tail_key(key)
        tctr = _ZERO
        z = 0.0
        h = 0
        while h < nh and horizons[h] <= 0:
            h += 1
        for i in range(d):
            pos[i] = 0
        for t in range(1, n + 1):
            w = rand_word(key, np.uint64(t - 1))
            e = np.int64(w >> sh)
            if (w & mask) >= thresh[e]:
                e = alias[e]
            k = np.int64(1)
            if is_tail[e]:
                k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
            for i in range(d):
                pos[i] += steps[e, i] * k
            z += site_value(field_key, law, pos)
            while h < nh and horizons[h] == t:
                out[j, h] = z
                h += 1
    return out


@nb.njit(cache=True, nogil=True)
def rwrs_grid_small(tab, base_key, ids, n, d, horizons, field_key, law):
    """:func:`rwrs_grid` for d in {2, 3}, with coordinates held in registers."""
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    m = ids.shape[0]
    nh = horizons.shape[0]
    out = np.zeros((m, nh), dtype=np.float64)
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        tkey = tail_key(key)
        tctr = _ZERO
        z = 0.0
        h = 0
        while h < nh and horizons[h] <= 0:
            h += 1
        x0 = np.int64(0)
        x1 = np.int64(0)
        x2 = np.int64(0)
        for t in range(1, n + 1):
            w = rand_word(key, np.uint64(t - 1))
            e = np.int64(w >> sh)
            if (w & mask) >= thresh[e]:
                e = alias[e]
            k = np.int64(1)
            if is_tail[e]:
                k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
            x0 += steps[e, 0] * k
            x1 += steps[e, 1] * k
            hs = mix64(field_key ^ (_zigzag(x0) * GOLDEN + SITE_SALT))
            hs = mix64(hs ^ (_zigzag(x1) * GOLDEN + SITE_SALT))
            if d == 3:
                x2 += steps[e, 2] * k
                hs = mix64(hs ^ (_zigzag(x2) * GOLDEN + SITE_SALT))
            z += word_to_value(hs, law)
            while h < nh and horizons[h] == t:
                out[j, h] = z
                h += 1
    return out


@nb.njit(cache=True, nogil=True)
def first_return_1d(tab, base_key, ids, horizon):
    """First k in 1..horizon with S_k = 0, or horizon + 1 if none (d = 1)."""
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    m = ids.shape[0]
    out = np.empty(m, dtype=np.int64)
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        tkey = tail_key(key)
        tctr = _ZERO
        hit = horizon + 1
        x = np.int64(0)
        for t in range(1, horizon + 1):
            w = rand_word(key, np.uint64(t - 1))
            e = np.int64(w >> sh)
            if (w & mask) >= thresh[e]:
                e = alias[e]
            dx = steps[e, 0]
            if is_tail[e]:
                k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
                dx *= k
            x += dx
            if x == 0:
                hit = t
                break
        out[j] = hit
    return out


@nb.njit(cache=True, nogil=True)
def first_return(tab, base_key, ids, horizon, d):
    """Any-d form of :func:`first_return_1d`."""
    steps, thresh, alias, is_tail, shift, tail_k, alpha, bound = tab
    sh = np.uint64(shift)
    mask = (_ONE << sh) - _ONE
    m = ids.shape[0]
    out = np.empty(m, dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        tkey = tail_key(key)
        tctr = _ZERO
        hit = horizon + 1
        for i in range(d):
            pos[i] = 0
        for t in range(1, horizon + 1):
            w = rand_word(key, np.uint64(t - 1))
            e = np.int64(w >> sh)
            if (w & mask) >= thresh[e]:
                e = alias[e]
            k = np.int64(1)
            if is_tail[e]:
                k, tctr = _tail_magnitude(tkey, tctr, tail_k, alpha, bound)
            at_zero = True
            for i in range(d):
                pos[i] += steps[e, i] * k
                if pos[i] != 0:
                    at_zero = False
            if at_zero:
                hit = t
                break
        out[j] = hit
    return out


@nb.njit(cache=True, nogil=True)
def _lowest_bits(v, r):
    out = _ZERO
    for _ in range(r):
        low = v & (~v + _ONE)
        out |= low
        v ^= low
    return out


@nb.njit(cache=True, nogil=True)
def simple_walk_first_return(d, base_key, ids, horizon):
    """First return times of the simple walk on Z^d (``d <= 8``).

    From a site at l1-distance L >= 2 the walk cannot be back at the origin
    within L - 1 steps, so those steps are added in bulk.  The bulk sum is
    exact: 64 steps at a time, each step reads ``nb`` axis bits (rejecting
    axis values >= d) and one sign bit, and per-axis displacements are
    popcounts.  Single steps near the origin use one word each.
    """
    nbits = 0
    while (1 << nbits) < d:
        nbits += 1
    m = ids.shape[0]
    out = np.empty(m, dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    axis_words = np.zeros(8, dtype=np.uint64)
    masks = np.zeros(8, dtype=np.uint64)
    full = ~_ZERO
    for j in range(m):
        key = child_key(base_key, np.uint64(ids[j]))
        ctr = _ZERO
        for i in range(d):
            pos[i] = 0
        t = 0
        hit = horizon + 1
        while t < horizon:
            dist = 0
            for i in range(d):
                dist += abs(pos[i])
            if dist <= 1:
                while True:
                    w = rand_word(key, ctr)
                    ctr += _ONE
                    a = np.int64(w >> np.uint64(60)) & ((1 << nbits) - 1) if nbits > 0 else 0
                    if a < d:
                        break
                if w & _ONE:
                    pos[a] += 1
                else:
                    pos[a] -= 1
                t += 1
                back = True
                for i in range(d):
                    if pos[i] != 0:
                        back = False
                if back:
                    hit = t
                    break
                continue
            remaining = min(dist - 1, horizon - t)
            t += remaining
            while d == 3 and remaining > 0:
                # Same words and masks as the generic loop, kept in registers.
                w0 = rand_word(key, ctr)
                w1 = rand_word(key, ctr + _ONE)
                sign = rand_word(key, ctr + _TWO)
                ctr += _THREE
                m0 = ~w0 & ~w1
                m1 = w0 & ~w1
                m2 = ~w0 & w1
                valid = m0 | m1 | m2
                cnt = np.int64(popcount64(valid))
                if cnt > remaining:
                    valid = _lowest_bits(valid, remaining)
                    cnt = remaining
                    m0 &= valid
                    m1 &= valid
                    m2 &= valid
                pos[0] += 2 * np.int64(popcount64(m0 & sign)) - np.int64(popcount64(m0))
                pos[1] += 2 * np.int64(popcount64(m1 & sign)) - np.int64(popcount64(m1))
                pos[2] += 2 * np.int64(popcount64(m2 & sign)) - np.int64(popcount64(m2))
                remaining -= cnt
            while remaining > 0:
                for b in range(nbits):
                    axis_words[b] = rand_word(key, ctr)
                    ctr += _ONE
                sign = rand_word(key, ctr)
                ctr += _ONE
                valid = _ZERO
                for a in range(d):
                    mk = full
                    for b in range(nbits):
                        if (a >> b) & 1:
                            mk &= axis_words[b]
                        else:
                            mk &= ~axis_words[b]
                    masks[a] = mk
                    valid |= mk
                cnt = np.int64(popcount64(valid))
                if cnt > remaining:
                    valid = _lowest_bits(valid, remaining)
                    cnt = remaining
                for a in range(d):
                    mk = masks[a] & valid
                    up = np.int64(popcount64(mk & sign))
                    pos[a] += 2 * up - np.int64(popcount64(mk))
                remaining -= cnt
        out[j] = hit
    return out
