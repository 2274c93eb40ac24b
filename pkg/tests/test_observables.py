import math

import numpy as np
import pytest

from rareclusters.catalog import DOUBLING13, DOUBLING_MIX, MMA, ExampleId, smith_lsv
from rareclusters.errors import (ConfigError, DomainError, GeometryError,
                                 UnsupportedExampleError)
from rareclusters.dynamics import DoublingMap
from rareclusters.observables import (Bounded, LogDistPiecewise, LogDistSingle, MixIndifferent,
                                      NegLog, Pareto, exceedance_geometry, g_from_dict,
                                      observable_from_dict, threshold_analytic,
                                      threshold_empirical)
from rareclusters.processes import DynamicalProcess
from rareclusters.repp import inverse_threshold


@pytest.mark.parametrize("g,rtol", [(NegLog(), 1e-12), (Pareto(2.0), 1e-12),
                                    (Bounded(2.0, 1.5), 1e-6)])  # c - s^(1/a) cancels
def test_g_inverse_round_trip(g, rtol):
    s = np.geomspace(1e-12, 0.5, 50)
    np.testing.assert_allclose(g.inverse(g(s)), s, rtol=rtol)


def test_g_serialisation_round_trip():
    for g in (NegLog(), Pareto(3.0), Bounded(2.0, 0.5)):
        assert g_from_dict(g.to_dict()) == g


def test_pareto_rejects_bad_index():
    with pytest.raises(DomainError):
        Pareto(-1.0)


def test_observable_rejects_points_outside_unit_interval():
    with pytest.raises(DomainError):
        LogDistSingle()(1.5)


def test_single_maximum_exceedance_interval_measure():
    obs = LogDistSingle(1 / 3)
    u = threshold_analytic(DOUBLING13, 1000, 1.0)
    (lo, hi), = obs.exceedance_intervals(u)
    assert hi - lo == pytest.approx(1 / 1000)
    assert obs(np.array([1 / 3 + 0.4e-3])) > u > obs(np.array([1 / 3 + 0.6e-3]))


def test_piecewise_observable_uses_nearest_side():
    obs = LogDistPiecewise()
    assert obs(0.3) == pytest.approx(-math.log(1 / 30))
    assert obs(0.7) == pytest.approx(-math.log(5 / 7 - 0.7))
    np.testing.assert_array_equal(obs.source_of(np.array([0.1, 0.9])), [1, 2])


def test_doubling_mix_threshold_and_geometry():
    n = 10_000
    u = threshold_analytic(DOUBLING_MIX, n, 1.0)
    ivs = exceedance_geometry(DOUBLING_MIX, u)
    total = sum(b - a for a, b in ivs)
    assert total == pytest.approx(1 / n)


def test_geometry_rejects_large_radius():
    with pytest.raises(GeometryError):
        exceedance_geometry(DOUBLING_MIX, 1.0)
    with pytest.raises(UnsupportedExampleError):
        exceedance_geometry(MMA, 1.0)


def test_mma_threshold_has_the_right_tail():
    n, tau = 1000, 2.0
    u = threshold_analytic(MMA, n, tau)
    assert n * (1 - u ** 2) == pytest.approx(tau)


@pytest.mark.parametrize("example", [MMA, DOUBLING13, DOUBLING_MIX, smith_lsv(0.2)])
def test_inverse_threshold_undoes_threshold(example):
    n = 5000
    for tau in (0.3, 1.0, 7.5):
        u = threshold_analytic(example, n, tau)
        assert inverse_threshold(example, u, n) == pytest.approx(tau, rel=1e-10)


def test_threshold_rejects_bad_frequency():
    with pytest.raises(DomainError):
        threshold_analytic(DOUBLING13, 10, 20.0)
    with pytest.raises(DomainError):
        threshold_analytic(DOUBLING13, 10, 0.0)


def test_empirical_threshold_close_to_analytic():
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    n = 1000
    sch = threshold_empirical(proc, n, 1.0, calib_len=400_000, rng=np.random.default_rng(4))
    exact = threshold_analytic(DOUBLING13, n, 1.0)
    # 400 expected exceedances: relative tail error ~ 5%
    assert abs(sch.u_n - exact) < 0.2
    k = round(400_000 / n)
    assert sch.tail.survival(sch.u_n) * sch.calib_len == pytest.approx(k, abs=1)


def test_empirical_threshold_needs_enough_tail():
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    with pytest.raises(Exception) as info:
        threshold_empirical(proc, 1000, 1.0, calib_len=10_000)
    assert info.type.__name__ == "CalibrationError"


def test_mix_indifferent_validates_geometry():
    with pytest.raises(GeometryError):
        MixIndifferent(0.2, 1.0, 1.0, 0.97, delta=0.05)
    with pytest.raises(ConfigError):
        MixIndifferent(0.2, 1.0, 1.0, 0.7, "periodic", None)


def test_mix_indifferent_intervals_match_level_sets():
    obs = MixIndifferent(0.2, 0.8, 1.2, 0.7, delta=0.05)
    u = 8.0
    (a0, b0), (a2, b2) = obs.exceedance_intervals(u)
    eps = 1e-9
    assert obs(b0 - eps) > u > obs(b0 + eps)
    assert obs(b2 - eps) > u > obs(b2 + eps)
    assert obs(a2 + eps) > u > obs(a2 - eps)


def test_observable_dict_round_trip():
    for obs in (LogDistSingle(0.4, Pareto(2.0), 2.0), LogDistPiecewise(),
                MixIndifferent(0.2, 0.8, 1.2, 0.7, "periodic", 2)):
        assert observable_from_dict(obs.to_dict()) == obs


def test_example_parse():
    assert ExampleId.parse("periodic_lsv:0.1:3") == ExampleId("periodic_lsv", 0.1, 3)
    with pytest.raises(ConfigError):
        ExampleId.parse("doubling13:2")
    with pytest.raises(ConfigError):
        ExampleId.parse("tent")


def test_published_thresholds():
    assert threshold_analytic(DOUBLING13, 100, 1.0) == pytest.approx(math.log(200), rel=1e-15)
    assert threshold_analytic(DOUBLING_MIX, 100, 1.0) == pytest.approx(math.log(400), rel=1e-15)
    obs = MixIndifferent(0.2, 0.8, 1.2, 0.7)
    assert threshold_analytic(obs, 100, 2.0) == pytest.approx(-math.log(0.01), rel=1e-15)


def test_thresholds_increase_with_n():
    for target in (MMA, DOUBLING13, DOUBLING_MIX, smith_lsv(0.2)):
        us = [threshold_analytic(target, n, 1.0) for n in (10, 100, 1000, 10_000)]
        assert all(a < b for a, b in zip(us, us[1:]))


@pytest.mark.parametrize("g", [NegLog(), Pareto(2.0), Bounded(2.0, 1.5)])
def test_g_of_inverse_is_identity(g):
    z = g(np.random.default_rng(0).uniform(1e-8, 0.5, 1000))
    np.testing.assert_allclose(g(g.inverse(z)), z, rtol=0, atol=1e-12 * max(1.0, np.abs(z).max()))


def test_exceedance_counts_have_mean_tau():
    # 300 fresh orbits of length n: count above u_n(tau) averages tau
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    n, tau = 1000, 2.0
    u = threshold_analytic(DOUBLING13, n, tau)
    rng = np.random.default_rng(9)
    counts = [int((proc.values(n, rng) > u).sum()) for _ in range(300)]
    assert abs(np.mean(counts) - tau) <= 3 * math.sqrt(tau / 300)


def test_geometry_length_times_n_is_tau():
    for n in (100, 10_000, 10 ** 6):
        (a, b), = exceedance_geometry(DOUBLING13, threshold_analytic(DOUBLING13, n, 1.5))
        # b - a cancels digits of two numbers near 1/3
        rel = 8 * np.finfo(float).eps * b / (b - a)
        assert (b - a) * n == pytest.approx(1.5, rel=rel)


@pytest.mark.slow
def test_empirical_threshold_within_two_percent():
    # 20000 calibration exceedances: relative sampling error about 0.7%
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    n = 10_000
    sch = threshold_empirical(proc, n, 1.0, calib_len=2 * 10 ** 8, rng=np.random.default_rng(10))
    p = 2 * math.exp(-sch.u_n)  # exact Lebesgue measure of the exceedance interval
    assert abs(p * n - 1.0) < 0.02


def test_empirical_threshold_is_seeded():
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    a = threshold_empirical(proc, 1000, 1.0, rng=np.random.default_rng(10))
    b = threshold_empirical(proc, 1000, 1.0, rng=np.random.default_rng(10))
    assert a.u_n == b.u_n
