from fractions import Fraction

import numpy as np
import pytest

from rareclusters import analytic
from rareclusters.catalog import (DOUBLING13, DOUBLING_MIX, MMA, ExampleId, periodic_lsv,
                                  smith_lsv)
from rareclusters.errors import GeometryError, UnsupportedExampleError

PERIODIC = periodic_lsv(0.2, 2)


@pytest.mark.parametrize("example,theta,mean", [
    (MMA, 0.5, 2.0),
    (DOUBLING13, 0.75, 4 / 3),
    (DOUBLING_MIX, 13 / 16, 16 / 13),
    (smith_lsv(0.2), 0.5, 1.0),
])
def test_published_constants(example, theta, mean):
    assert analytic.theta(example) == theta
    assert analytic.mean_cluster_size(example) == pytest.approx(mean, rel=1e-15)
    assert analytic.pi_normalisation(example) == pytest.approx(1.0, abs=1e-12)
    assert analytic.mean_from_pmf(example) == pytest.approx(mean, rel=1e-12)


def test_periodic_constants_follow_gamma():
    g = analytic.gamma_for(PERIODIC)
    assert analytic.theta(PERIODIC) == pytest.approx(0.5 * (1 - 1 / g), rel=1e-14)
    assert analytic.mean_cluster_size(PERIODIC) == pytest.approx(1 / (1 - 1 / g), rel=1e-14)
    assert analytic.pi(PERIODIC, 1) == pytest.approx(1 - 1 / g)


@pytest.mark.parametrize("example,equal", [
    (MMA, True), (DOUBLING13, True), (DOUBLING_MIX, True),
    (smith_lsv(0.2), False), (PERIODIC, False),
])
def test_extremal_index_versus_reciprocal_mean(example, equal):
    d = analytic.ei_discrepancy(example)
    assert d.equal is equal
    assert (abs(d.theta_inverse - d.mean_pi) < 1e-12) == equal


def test_mix_law_from_interval_measures():
    # independent route: pi(k) = (Q(k-1) - Q(k)) / Q(0) from the exact measures
    n, tau = 10 ** 6, 1.0
    q = [analytic.Qk_measure_doubling(DOUBLING_MIX, n, tau, k) for k in range(40)]
    pi = [(q[k - 1] - q[k]) / q[0] for k in range(1, 40)]
    for k, p in enumerate(pi, start=1):
        assert analytic.pi(DOUBLING_MIX, k) == pytest.approx(p, rel=1e-10, abs=1e-300)
    theta = q[0] / analytic.exceedance_measure_doubling(DOUBLING_MIX, n, tau)
    assert theta == pytest.approx(13 / 16, rel=1e-12)
    mean = sum(k * p for k, p in enumerate(pi, start=1))
    assert mean == pytest.approx(16 / 13, rel=1e-9)


def test_single_maximum_law_is_geometric_three_quarters():
    q = [analytic.Qk_measure_doubling(DOUBLING13, 1000, 1.0, k) for k in range(4)]
    assert q[0] / analytic.exceedance_measure_doubling(DOUBLING13, 1000, 1.0) == 0.75
    assert [(q[k - 1] - q[k]) / q[0] for k in (1, 2, 3)] == pytest.approx(
        [0.75, 0.75 * 0.25, 0.75 * 0.25 ** 2])


def test_interval_measures_need_small_radius():
    with pytest.raises(GeometryError):
        analytic.Qk_measure_doubling(DOUBLING13, 10, 1.0, 0)
    with pytest.raises(UnsupportedExampleError):
        analytic.Qk_measure_doubling(MMA, 1000, 1.0, 0)


def test_limit_family_and_table():
    spec = analytic.limit_family(DOUBLING13, 2.0)
    assert spec.intensity == 1.5
    rows = analytic.table(kappa_max=5)
    assert [r["example"] for r in rows][:3] == ["mma", "doubling13", "doubling_mix"]
    assert "gamma" in rows[-1]


def test_finite_theta_exponent():
    f = analytic.finite_theta_asymptotics(smith_lsv(0.2), 1000)
    assert f.correction_exponent == pytest.approx(0.25)
    with pytest.raises(UnsupportedExampleError):
        analytic.finite_theta_asymptotics(DOUBLING13, 1000)


def test_corrupted_oracle_is_scoped():
    with analytic.corrupted_oracle("doubling13", 0.70):
        assert analytic.theta(DOUBLING13) == 0.70
        assert analytic.ei_discrepancy(DOUBLING13).equal is False
    assert analytic.theta(DOUBLING13) == 0.75


def test_mix_first_size_probability():
    assert analytic.pi(DOUBLING_MIX, 1) == pytest.approx(85 / 104, rel=1e-14)


def test_mix_constants_are_exact_fractions():
    th, mean = analytic._exact(DOUBLING_MIX)
    assert th == Fraction(13, 16) and mean == Fraction(16, 13)
    assert np.isclose(float(th * mean), 1.0)


@pytest.mark.parametrize("example", [smith_lsv(0.2), PERIODIC, smith_lsv(0.1)])
def test_counterexamples_lose_half_the_mean(example):
    assert 2 * analytic.mean_cluster_size(example) == pytest.approx(1 / analytic.theta(example),
                                                                    rel=1e-14)


@pytest.mark.parametrize("example", [MMA, DOUBLING13, DOUBLING_MIX, smith_lsv(0.15), PERIODIC])
def test_example_key_parses_back(example):
    assert ExampleId.parse(example.key()) == example
