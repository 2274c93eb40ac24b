"""Compiled inner loops.

Everything here works on plain numpy arrays and scalars so that the public
modules can stay readable. Orbits of the doubling map are held as 64-bit
integer windows into a stream of fair random bits. LSV orbits are float64
iterates whose right branch ``2x - 1``, which drops the lowest mantissa bit,
refills it with a fresh bit at 2^-53 (exact in float64). Without the refill
every float orbit falls onto one attracting cycle of about 1e8 steps.
Each chain carries its own xorshift64 state in ``rs``, updated in place.
"""
import numba as nb
import numpy as np

_ONE = np.uint64(1)
_U63 = np.uint64(63)
_LOW = 2.0 ** -53


@nb.njit(cache=True, inline="always")
def _xorshift(s):
    s ^= s << np.uint64(13)
    s ^= s >> np.uint64(7)
    s ^= s << np.uint64(17)
    return s


@nb.njit(cache=True, inline="always")
def _lsv_step(x, c, alpha, rs, k):
    if x < 0.5:
        return x * (1.0 + c * x ** alpha)
    s = _xorshift(rs[k])
    rs[k] = s
    return 2.0 * x - 1.0 + _LOW * np.float64(s >> _U63)


@nb.njit(cache=True)
def lsv_orbit(x0, n, alpha, rs):
    """``n`` iterates from ``x0``; takes n - 1 steps, so chunks can resume at out[-1]."""
    out = np.empty(n, dtype=np.float64)
    c = 2.0 ** alpha
    out[0] = x0
    for i in range(1, n):
        out[i] = _lsv_step(out[i - 1], c, alpha, rs, 0)
    return out


@nb.njit(cache=True)
def lsv_advance(xs, nsteps, alpha, rs):
    """Iterate every chain in ``xs`` in place ``nsteps`` times."""
    c = 2.0 ** alpha
    m = xs.shape[0]
    for _ in range(nsteps):
        for k in range(m):
            x = xs[k]
            xs[k] = _lsv_step(x, c, alpha, rs, k)


@nb.njit(cache=True)
def lsv_histogram(xs, nsteps, alpha, nbins, counts, rs):
    """Accumulate a uniform-bin histogram of ``nsteps`` iterates per chain."""
    c = 2.0 ** alpha
    m = xs.shape[0]
    for _ in range(nsteps):
        for k in range(m):
            x = xs[k]
            j = int(x * nbins)
            if j >= nbins:
                j = nbins - 1
            counts[j] += 1
            xs[k] = _lsv_step(x, c, alpha, rs, k)


@nb.njit(cache=True)
def lsv_scan(xs, start, nsteps, alpha, lo, hi, out_pos, out_x, counts, rs):
    """Run chains in lock-step and record iterates falling in any [lo, hi).

    ``out_pos[k, :counts[k]]`` receives orbit indices (offset by ``start``)
    and ``out_x`` the matching points. Returns the number of steps taken,
    which is short of ``nsteps`` when some chain's buffer filled up.
    """
    c = 2.0 ** alpha
    m = xs.shape[0]
    ni = lo.shape[0]
    cap = out_pos.shape[1]
    for i in range(nsteps):
        full = False
        for k in range(m):
            x = xs[k]
            for j in range(ni):
                if x >= lo[j] and x < hi[j]:
                    ck = counts[k]
                    out_pos[k, ck] = start + i
                    out_x[k, ck] = x
                    counts[k] = ck + 1
                    if ck + 1 >= cap:
                        full = True
                    break
            xs[k] = _lsv_step(x, c, alpha, rs, k)
        if full:
            return i + 1
    return nsteps


@nb.njit(cache=True)
def doubling_scan(words, s, first_word, limit, start, lo, hi, out_pos, out_s, count):
    """Scan doubling-map states for membership in integer intervals.

    The state ``s`` is the current 64-bit window; each step shifts in the next
    bit of ``words`` (most significant bit first). States with
    ``lo[j] < s < hi[j]`` for some j are recorded. Stops after ``limit``
    states, at the end of ``words``, or when fewer than 64 buffer slots
    remain after a whole word. Returns (s, states scanned, next word, count).
    """
    ni = lo.shape[0]
    cap = out_pos.shape[0]
    done = 0
    w = first_word
    nw = words.shape[0]
    while w < nw and done < limit:
        word = words[w]
        b = 63
        while b >= 0 and done < limit:
            for j in range(ni):
                if s > lo[j] and s < hi[j]:
                    out_pos[count] = start + done
                    out_s[count] = s
                    count += 1
                    break
            s = (s << _ONE) | ((word >> np.uint64(b)) & _ONE)
            done += 1
            b -= 1
        if b >= 0:
            # stopped inside a word: caller must not resume this stream
            return s, done, -1, count
        w += 1
        if cap - count < 64:
            break
    return s, done, w, count


@nb.njit(cache=True)
def doubling_top32_checksum(s, words, nsteps):
    """Step the shift register ``nsteps`` times and sum the top 32 bits."""
    total = np.uint64(0)
    done = 0
    w = 0
    while done < nsteps:
        word = words[w]
        b = 63
        while b >= 0 and done < nsteps:
            total += s >> np.uint64(32)
            s = (s << _ONE) | ((word >> np.uint64(b)) & _ONE)
            done += 1
            b -= 1
        w += 1
    return total, s


@nb.njit(cache=True)
def runs_reverse_chain(pos, q):
    """For sorted exceedance positions, count the chained successors of each.

    ``chain[i]`` is the number of later exceedances reachable from ``pos[i]``
    through consecutive gaps of at most ``q``; ``last[i]`` is the index of the
    final exceedance of that chain.
    """
    m = pos.shape[0]
    chain = np.zeros(m, dtype=np.int64)
    last = np.empty(m, dtype=np.int64)
    if m == 0:
        return chain, last
    last[m - 1] = m - 1
    for i in range(m - 2, -1, -1):
        if pos[i + 1] - pos[i] <= q:
            chain[i] = chain[i + 1] + 1
            last[i] = last[i + 1]
        else:
            last[i] = i
    return chain, last


@nb.njit(cache=True)
def window_hits(starts, pos, lag_lo, lag_hi):
    """Count exceedances at lags lag_lo..lag_hi after each start."""
    out = np.zeros(starts.shape[0], dtype=np.int64)
    m = pos.shape[0]
    j = 0
    for i in range(starts.shape[0]):
        a = starts[i] + lag_lo
        b = starts[i] + lag_hi
        while j < m and pos[j] < a:
            j += 1
        k = j
        while k < m and pos[k] <= b:
            k += 1
        out[i] = k - j
    return out
