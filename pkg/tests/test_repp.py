import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy import stats

from rareclusters.clustering import BinarySeries
from rareclusters.errors import DomainError, InsufficientDataError
from rareclusters.multiplicity import (CompoundPoissonSpec, Degenerate, Geometric, MixGeometric,
                                       multiplicity_from_dict, panjer_count_law)
from rareclusters.repp import (MarkedPointSet2D, PointProcess1D, build_N2_n, build_N_n,
                               chisquare_pooled, compound_poisson_window_counts, gof_counts,
                               gof_sizes, mass_balance, points_svg, project_H_tau,
                               read_points2d_csv, read_process1d_csv, simulate_compound_poisson,
                               simulate_limit_N2_periodic, simulate_limit_N2_poisson,
                               source_balance, write_points2d_csv, write_process1d_csv)

LAWS = [Degenerate(2), Geometric(0.75), MixGeometric((6 / 13, 7 / 13), (0.75, 0.875))]


@pytest.mark.parametrize("mult", LAWS)
def test_count_law_matches_panjer(mult):
    spec = CompoundPoissonSpec(0.6, 1.5, mult)
    law = spec.count_law(1e-12)
    ref = panjer_count_law(spec, len(law) - 1)
    np.testing.assert_allclose(law, ref, atol=1e-12)
    assert law[0] == pytest.approx(math.exp(-0.9))


def test_count_law_of_degenerate_one_is_poisson():
    spec = CompoundPoissonSpec(0.5, 2.0, Degenerate(1))
    law = spec.count_law(1e-12)
    np.testing.assert_allclose(law, stats.poisson.pmf(np.arange(len(law)), 1.0), atol=1e-14)


@pytest.mark.parametrize("mult", LAWS)
def test_multiplicity_pmf_sums_to_one_and_samples(mult):
    k = np.arange(1, 400)
    assert mult.pmf(k).sum() == pytest.approx(1.0, abs=1e-12)
    assert (k * mult.pmf(k)).sum() == pytest.approx(mult.mean, rel=1e-10)
    draws = mult.sample(20_000, np.random.default_rng(0))
    assert abs(draws.mean() - mult.mean) <= 5 * draws.std() / math.sqrt(len(draws))
    assert multiplicity_from_dict(mult.to_dict()) == mult


def test_window_counts_follow_count_law():
    spec = CompoundPoissonSpec(0.75, 1.0, Geometric(0.75))
    counts = compound_poisson_window_counts(spec, 50_000, np.random.default_rng(1))
    rep = gof_counts(counts, spec)
    assert rep.p_value > 0.001
    assert abs(rep.zero_observed - rep.zero_expected) < 4 * rep.zero_se


def test_simulated_process_has_poisson_event_counts():
    spec = CompoundPoissonSpec(0.5, 1.0, Degenerate(2))
    pp = simulate_compound_poisson(spec, 20_000.0, np.random.default_rng(2))
    assert np.all(pp.mult == 2)
    assert abs(len(pp) - 10_000) < 4 * 100


def test_periodic_piles_project_to_geometric_clusters():
    pts = simulate_limit_N2_periodic(0.75, 4.0, 20_000.0, 1.0, np.random.default_rng(3))
    proj = project_H_tau(pts, 1.0)
    assert gof_sizes(proj.mult, Geometric(0.75)).p_value > 0.001
    # base points have intensity theta
    assert abs(len(proj) / 20_000 - 0.75) < 0.03


def test_poisson_limit_strip_intensity():
    pts = simulate_limit_N2_poisson(0.5, 4000.0, 3.0, np.random.default_rng(4))
    assert abs(len(pts) / (4000 * 3) - 0.5) < 0.02
    assert pts.y.max() <= 3.0


def test_projection_of_data_equals_raw_count():
    rng = np.random.default_rng(5)
    n = 500
    vals = rng.random(20 * n)
    u = 1 - 2.0 / n
    raw = build_N_n(vals, u, n)
    pts = build_N2_n(vals, lambda v: n * (1 - v), n, 10.0)
    # heights strictly below 2 are exactly the exceedances of u
    assert project_H_tau(pts, 2.0).total_mass == raw.total_mass


def test_declustered_process_keeps_mass():
    b = BinarySeries.from_string("0110 1000 0011 1000 0")
    dec = build_N_n(b, 0.0, 4, q=2, declustered=True)
    assert dec.mult.tolist() == [3, 3]
    assert dec.total_mass == b.n_exceed


def test_unit_window_counts():
    pp = PointProcess1D(np.array([0.1, 0.5, 1.2, 2.9]), np.array([1, 2, 3, 1]), 3.5)
    assert pp.unit_window_counts().tolist() == [3, 3, 1]
    assert pp.mass_in(0.0, 1.0) == 3


def test_containers_validate():
    with pytest.raises(DomainError):
        PointProcess1D(np.array([0.5, 0.2]), np.array([1, 1]), 1.0)
    with pytest.raises(DomainError):
        MarkedPointSet2D(np.array([0.1]), np.array([5.0]), 1.0, 2.0)
    with pytest.raises(DomainError):
        project_H_tau(MarkedPointSet2D(np.array([0.1]), np.array([0.5]), 1.0, 1.0), 2.0)


def test_chisquare_pooled_matches_scipy_when_no_pooling():
    rng = np.random.default_rng(6)
    pmf = np.array([0.2, 0.3, 0.5])
    data = rng.choice(3, size=2000, p=pmf)
    rep = chisquare_pooled(data, pmf)
    ref = stats.chisquare(np.bincount(data, minlength=3), 2000 * pmf)
    assert rep.statistic == pytest.approx(ref.statistic)
    assert rep.p_value == pytest.approx(ref.pvalue)


def test_chisquare_edge_cases():
    # impossible values reject outright
    assert chisquare_pooled(np.array([1, 1, 2, 3]), np.array([0.0, 1.0]), 0).p_value == 0.0
    # a one-point law matched by all observations
    rep = gof_sizes(np.ones(50, dtype=int), Degenerate(1))
    assert rep.p_value == 1.0 and rep.dof == 0
    with pytest.raises(InsufficientDataError):
        chisquare_pooled(np.array([], dtype=int), np.array([1.0]))
    with pytest.raises(InsufficientDataError):
        gof_counts(np.zeros(10, dtype=int), CompoundPoissonSpec(0.5, 1.0, Degenerate(1)))


def test_mass_balance_by_first_label():
    b = BinarySeries.from_string("1101 0000 0110 0000")
    src = np.array([1, 2, 2, 2, 1])
    mb = source_balance(b, src, 2)
    assert mb.mass == {"zeta1": 2, "zeta2": 3, "other": 0}
    assert mb.clusters == {"zeta1": 1, "zeta2": 1, "other": 0}
    assert mb.split["zeta1"] == pytest.approx(0.4)
    assert mb.zeta1_cluster_ratio == pytest.approx(0.2)
    pts = MarkedPointSet2D(b.positions / 4, np.full(5, 0.5), 4.0, 1.0, src, b.positions, 4)
    assert mass_balance(pts, 1.0, 2).mass == mb.mass


def test_csv_round_trip(tmp_path):
    pts = simulate_limit_N2_periodic(0.75, 4.0, 5.0, 3.0, np.random.default_rng(7))
    pts = MarkedPointSet2D(pts.t, pts.y, pts.horizon, pts.y_max, np.ones(len(pts), np.int8))
    write_points2d_csv(tmp_path / "p.csv", pts)
    back = read_points2d_csv(tmp_path / "p.csv", 5.0, 3.0)
    np.testing.assert_array_equal(back.t, pts.t)
    np.testing.assert_array_equal(back.y, pts.y)
    np.testing.assert_array_equal(back.source, pts.source)
    pp = project_H_tau(pts, 1.0)
    write_process1d_csv(tmp_path / "q.csv", pp)
    back1 = read_process1d_csv(tmp_path / "q.csv", 5.0)
    np.testing.assert_array_equal(back1.times, pp.times)
    np.testing.assert_array_equal(back1.mult, pp.mult)
    assert (tmp_path / "q.csv").read_text().startswith("# schema-version: 1\n")


def test_svg_is_well_formed(tmp_path):
    pts = simulate_limit_N2_periodic(0.75, 4.0, 5.0, 3.0, np.random.default_rng(8))
    text = points_svg(pts, 1.0, tmp_path / "p.svg", caption={"example": "doubling13"})
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}circle")) == len(pts)
    assert "<!-- example: doubling13 -->" in text
    log_text = points_svg(pts, 1.0, log_y=True)
    ET.fromstring(log_text)
