from fractions import Fraction

import mpmath
import numpy as np
import pytest

from rareclusters import _kernels, analytic, dynamics, processes
from rareclusters.catalog import ExampleId, periodic_lsv
from rareclusters.dynamics import (BitReservoir, DoublingMap, DoublingState, LSVMap,
                                   doubling_windows, lsv_periodic_point, lsv_preimage_left,
                                   orbit, windows_to_float)
from rareclusters.errors import ConfigError, DomainError
from rareclusters.observables import LogDistSingle
from rareclusters.processes import DynamicalProcess


def test_windows_truncate_to_53_bits():
    s = np.array([2 ** 64 - 1, 1 << 63, (1 << 11) - 1, 3 << 11], dtype=np.uint64)
    out = windows_to_float(s)
    assert out[0] == 1 - 2.0 ** -53
    assert out[0] < 1.0
    assert out[1] == 0.5
    assert out[2] == 0.0
    assert out[3] == 3 * 2.0 ** -53


def test_doubling_windows_match_big_integer_shift():
    rng = np.random.default_rng(1)
    words = rng.integers(0, 2 ** 63, size=5, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    first = 0xDEADBEEF12345678
    big = first
    for w in words:
        big = (big << 64) | int(w)
    total_bits = 64 * (len(words) + 1)
    win = doubling_windows(first, words, 64 * len(words))
    for i in range(len(win)):
        expect = (big >> (total_bits - 64 - i)) & (2 ** 64 - 1)
        assert int(win[i]) == expect


def test_state_step_shifts_in_reservoir_bits():
    rng = np.random.default_rng(7)
    ref = np.random.default_rng(7).bit_generator.random_raw(3)
    st = DoublingState(0, BitReservoir(rng))
    for _ in range(64):
        st.step()
    assert st.frac == int(ref[0])
    assert st.value == (int(ref[0]) >> 11) * 2.0 ** -53


def test_fraction_step_is_exact():
    x = Fraction(1, 3)
    assert dynamics.step(DoublingMap(), x) == Fraction(2, 3)
    assert dynamics.step(DoublingMap(), Fraction(2, 3)) == Fraction(1, 3)


def test_orbit_bit_budget_is_exact():
    # two orbits of 100 + 50 steps consume the same bits as one of 150
    rng_a = np.random.default_rng(3)
    st = DoublingState.from_value(0.25, BitReservoir(rng_a))
    a = np.concatenate([orbit(DoublingMap(), st, 100), orbit(DoublingMap(), st, 50)])
    rng_b = np.random.default_rng(3)
    b = orbit(DoublingMap(), DoublingState.from_value(0.25, BitReservoir(rng_b)), 150)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("chunk", [64, 640, 1 << 12])
def test_iter_points_concatenates_to_dense_orbit(chunk):
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    dense = proc.points(5000, np.random.default_rng(11))
    parts = list(proc.iter_points(5000, np.random.default_rng(11), chunk=chunk))
    np.testing.assert_array_equal(np.concatenate(parts), dense)


def test_lsv_iter_points_matches_dense():
    proc = DynamicalProcess(LSVMap(0.3), LogDistSingle(0.7), burn_in=100)
    dense = proc.points(3000, np.random.default_rng(5))
    parts = np.concatenate(list(proc.iter_points(3000, np.random.default_rng(5), chunk=1000)))
    np.testing.assert_allclose(parts, dense, rtol=0, atol=0)


@pytest.mark.parametrize("word_chunk,buffer", [(4, 8), (64, 1 << 10)])
def test_doubling_scan_agrees_with_dense_values(monkeypatch, word_chunk, buffer):
    # small chunks and buffers force every refill path
    monkeypatch.setattr(processes, "_WORD_CHUNK", word_chunk)
    monkeypatch.setattr(processes, "_BUFFER", buffer)
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    length, u = 40_000, 3.0
    vals = proc.values(length, np.random.default_rng(21))
    cand = proc.scan(length, u, np.random.default_rng(21))
    pos = np.flatnonzero(vals > u)
    np.testing.assert_array_equal(cand.positions, pos)
    np.testing.assert_array_equal(cand.values, vals[pos])


def test_lsv_scan_agrees_with_dense_values():
    proc = DynamicalProcess(LSVMap(0.2), LogDistSingle(0.75), burn_in=500)
    length, u = 30_000, 3.0
    rngs = [np.random.default_rng(s) for s in range(3)]
    cands = proc.scan_many(length, u, rngs)
    for s, cand in enumerate(cands):
        vals = proc.values(length, np.random.default_rng(s))
        pos = np.flatnonzero(vals > u)
        np.testing.assert_array_equal(cand.positions, pos)
        np.testing.assert_allclose(cand.values, vals[pos])


def test_lsv_orbit_follows_the_map_up_to_one_low_bit():
    lsv = LSVMap(0.2)
    xs = orbit(lsv, 0.3, 5000, np.random.default_rng(4))
    gap = xs[1:] - lsv.step(xs[:-1])
    right = xs[:-1] >= 0.5
    # compiled and numpy pow may differ in the last place
    assert np.all(np.abs(gap[~right]) <= 2 * np.spacing(xs[1:][~right]))
    assert set(np.unique(gap[right] / 2.0 ** -53)) == {0.0, 1.0}


def test_lsv_orbits_from_one_point_separate_with_the_seed():
    lsv = LSVMap(0.2)
    a = orbit(lsv, 0.3, 400, np.random.default_rng(1))
    b = orbit(lsv, 0.3, 400, np.random.default_rng(2))
    assert a[0] == b[0]
    assert np.max(np.abs(a[-50:] - b[-50:])) > 0.1


def test_lsv_orbit_requires_rng():
    with pytest.raises(DomainError):
        orbit(LSVMap(0.2), 0.3, 10)


@pytest.mark.slow
def test_deep_visits_to_zero_are_not_replayed():
    # plain float iteration sends every chain onto one cycle of ~1e8 steps,
    # so two chains would share bit-identical entry points below 1e-7
    rng = np.random.default_rng(11)
    xs, rs = rng.random(2), dynamics.lsv_noise_state(rng, 2)
    _kernels.lsv_advance(xs, 10_000, 0.2, rs)
    cap = 1 << 14
    pos, pts = np.empty((2, cap), np.int64), np.empty((2, cap))
    counts = np.zeros(2, np.int64)
    done = _kernels.lsv_scan(xs, 0, 300_000_000, 0.2, np.array([0.0]), np.array([1e-7]),
                             pos, pts, counts, rs)
    assert done == 300_000_000
    entries = []
    for k in range(2):
        p, x = pos[k, :counts[k]], pts[k, :counts[k]]
        entries.append(x[np.r_[True, np.diff(p) > 1]])
    both = np.concatenate(entries)
    assert len(both) >= 10
    assert len(np.unique(both)) == len(both)


def test_lsv_step_matches_high_precision():
    lsv = LSVMap(0.5)
    xs = np.array([1e-9, 0.01, 0.2, 0.4999, 0.5, 0.75, 1.0])
    got = lsv.step(xs)
    mpmath.mp.dps = 40
    for x, y in zip(xs, got):
        xm = mpmath.mpf(float(x))
        ref = xm * (1 + mpmath.sqrt(2) * mpmath.sqrt(xm)) if x < 0.5 else 2 * xm - 1
        assert abs(y - float(ref)) <= 2 * np.spacing(float(ref))


@pytest.mark.parametrize("alpha", [0.05, 0.2, 0.5, 0.9])
def test_left_preimage_round_trip(alpha):
    lsv = LSVMap(alpha)
    # the left branch maps [0, 1/2) onto [0, 1)
    y = np.linspace(0, 1, 1001)[:-1]
    x = lsv_preimage_left(lsv, y)
    assert np.all((x >= 0) & (x < 0.5))
    assert np.max(np.abs(lsv.step(x) - y)) < 1e-12


def test_preimage_rejects_out_of_range():
    with pytest.raises(DomainError):
        lsv_preimage_left(LSVMap(0.2), 1.5)


def test_periodic_point_and_gamma():
    lsv = LSVMap(0.2)
    z = lsv_periodic_point(lsv, 2)
    assert 0.5 <= z < 0.75
    assert abs(dynamics.iterate_exact(lsv, z, 2) - z) < 1e-13
    g = analytic.gamma_for(periodic_lsv(0.2, 2))
    assert g == pytest.approx(4.234047, abs=1e-6)
    h = 1e-6
    fd = (dynamics.iterate_exact(lsv, z + h, 2) - dynamics.iterate_exact(lsv, z - h, 2)) / (2 * h)
    assert abs(fd - g) / g < 1e-6


def test_preperiodic_point_enters_period_two_orbit():
    lsv = LSVMap(0.2)
    zeta = dynamics.lsv_preperiodic_point(lsv)
    xi = dynamics.lsv_period2_left_point(lsv)
    assert dynamics.iterate_exact(lsv, zeta, 2) == pytest.approx(xi, abs=1e-12)
    assert abs(dynamics.iterate_exact(lsv, zeta, 4) - zeta) > 0.01


def test_alpha_outside_mixing_range_rejected():
    with pytest.raises((DomainError, ConfigError)):
        ExampleId("smith_lsv", 0.3)


def test_mma_sparse_sampler_matches_dense_law():
    # exceedance counts of the sparse sampler vs the dense generator
    u, length, reps = 0.99, 2000, 400
    rng = np.random.default_rng(0)
    dense = [int((dynamics.mma_generate(None, length, rng) > u).sum()) for _ in range(reps)]
    sparse = [len(dynamics.mma_exceedances(None, length, u, rng)[0]) for _ in range(reps)]
    expected = length * (1 - u ** 2)
    for sample in (dense, sparse):
        assert abs(np.mean(sample) - expected) < 4 * np.std(sample) / np.sqrt(reps)


def test_mma_exceedance_positions_pair_up():
    pos, val = dynamics.mma_exceedances(None, 10_000, 0.999, np.random.default_rng(2))
    # each large Y appears at two positions two apart, except at the edges
    inner = pos[(pos >= 2) & (pos < 9998)]
    partners = set(inner.tolist())
    assert all((p + 2 in partners) or (p - 2 in partners) for p in inner)


def test_sample_invariant_doubling_returns_state():
    x = dynamics.sample_invariant(DoublingMap(), np.random.default_rng(0))
    assert isinstance(x, DoublingState)
