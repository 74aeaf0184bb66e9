"""Numba kernels: counter-based Philox4x32-10 stream and the gap-process loops.

The winner drawn at step ``n`` of trial ``t`` is a pure function of
``(seed, t, n)``; no generator state is carried between calls, so trials can
be split across threads in any way without changing a single draw.
"""

import numba as nb
import numpy as np

_MASK = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT = np.uint64(32)
_TWO32 = np.uint64(1 << 32)

_jit = {"nogil": True, "cache": True}


@nb.njit(**_jit)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox4x32 rounds. All arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & _MASK, lo1, (hi0 ^ c3 ^ k1) & _MASK, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@nb.njit(**_jit)
def _bounded(x, m):
    # Lemire multiply-shift with rejection; returns -1 when x must be rejected.
    prod = x * m
    low = prod & _MASK
    if low < m:
        threshold = (_TWO32 - m) % m
        if low < threshold:
            return -1
    return np.int64(prod >> _SHIFT)


@nb.njit(**_jit)
def draw_winner(seed, trial, step, m):
    """0-based winner index in [0, m) for the given counter.

    Four 32-bit words are available per counter; each is tried in turn under
    Lemire's rejection rule, so the draw is exactly uniform unless all four
    are rejected (probability below (m / 2**32)**4), in which case the last
    word is reduced modulo m.
    """
    s = np.uint64(seed)
    t = np.uint64(trial)
    n = np.uint64(step)
    mm = np.uint64(m)
    w0, w1, w2, w3 = philox4x32(n & _MASK, n >> _SHIFT, t & _MASK, t >> _SHIFT,
                                s & _MASK, s >> _SHIFT)
    r = _bounded(w0, mm)
    if r >= 0:
        return r
    r = _bounded(w1, mm)
    if r >= 0:
        return r
    r = _bounded(w2, mm)
    if r >= 0:
        return r
    r = _bounded(w3, mm)
    if r >= 0:
        return r
    return np.int64(w3 % mm)


@nb.njit(**_jit)
def simulate_trials(gaps0, m, seed, trial_start, count, horizon, pair):
    """Run ``count`` trials starting at trial index ``trial_start``.

    ``pair < 0`` stops at the first zero of any gap (T); otherwise stops when
    gap ``pair`` or ``pair + 1`` (0-based) hits zero (T_{i,i+1}).

    Returns (steps, absorbed, hit, final_gaps) with ``hit`` 0-based or -1.
    """
    d = m - 1
    steps = np.empty(count, dtype=np.int64)
    absorbed = np.zeros(count, dtype=np.bool_)
    hit = np.full(count, -1, dtype=np.int64)
    final = np.empty((count, d), dtype=np.int64)
    g = np.empty(d, dtype=np.int64)
    for j in range(count):
        t = trial_start + j
        for q in range(d):
            g[q] = gaps0[q]
        n = 0
        while n < horizon:
            w = draw_winner(seed, t, n, m)
            n += 1
            if w > 0:
                g[w - 1] += 1
            if w < d:
                g[w] -= 1
                if g[w] == 0 and (pair < 0 or w == pair or w == pair + 1):
                    absorbed[j] = True
                    hit[j] = w
                    break
        steps[j] = n
        for q in range(d):
            final[j, q] = g[q]
    return steps, absorbed, hit, final


@nb.njit(**_jit)
def pair_waiting_sums(m, pair, n_gaps, seed, trial_start, count):
    """Per trial, the number of steps until ``n_gaps`` moves of the pair.

    Slots ``pair`` and ``pair + 1`` (0-based) move exactly when the 0-based
    winner lies in {pair, pair + 1, pair + 2}.
    """
    out = np.empty(count, dtype=np.int64)
    for j in range(count):
        t = trial_start + j
        n = 0
        moves = 0
        while moves < n_gaps:
            w = draw_winner(seed, t, n, m)
            n += 1
            if pair <= w <= pair + 2:
                moves += 1
        out[j] = n
    return out


@nb.njit(**_jit)
def lattice_residual(v, nbr, const, rhs, m):
    """max_j |v_j - rhs_j - (const_j + sum_k v[nbr_jk]) / m| over interior states."""
    worst = 0.0
    for j in range(v.shape[0]):
        s = const[j]
        for k in range(nbr.shape[1]):
            t = nbr[j, k]
            if t >= 0:
                s += v[t]
        r = abs(v[j] - rhs[j] - s / m)
        if r > worst:
            worst = r
    return worst


@nb.njit(**_jit)
def gauss_seidel(v, nbr, const, rhs, m, omega, max_sweeps, tol, check_every):
    """In-place lexicographic Gauss-Seidel sweeps; returns (sweeps, residual).

    ``tol`` is compared against ``residual / max(1, max|v|)``.
    """
    sweeps = 0
    res = lattice_residual(v, nbr, const, rhs, m)
    while sweeps < max_sweeps:
        scale = max(1.0, np.max(np.abs(v)))
        if res <= tol * scale:
            break
        for _ in range(check_every):
            for j in range(v.shape[0]):
                s = const[j]
                for k in range(nbr.shape[1]):
                    t = nbr[j, k]
                    if t >= 0:
                        s += v[t]
                v[j] += omega * (rhs[j] + s / m - v[j])
            sweeps += 1
        res = lattice_residual(v, nbr, const, rhs, m)
    return sweeps, res
