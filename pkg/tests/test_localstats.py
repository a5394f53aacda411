import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmt_transport import ensemble as en
from rmt_transport import equilibrium as eq
from rmt_transport import localstats as ls


@pytest.fixture(scope="module")
def semicircle():
    return eq.solve_onecut(eq.quadratic_potential(0.5), 2)


def test_ks_hand_values():
    assert ls.ks_distance([1, 2], [1.5, 2.5]) == pytest.approx(0.5)
    assert ls.ks_distance([1, 2, 3], [1, 2, 3]) == 0
    assert ls.ks_distance([0, 1], [5, 6]) == 1


def test_ks_rejects_empty():
    with pytest.raises(ValueError):
        ls.ks_distance([], [1.0])


def test_smallest_gap_law_median():
    cdf = ls.smallest_gap_cdf(1)
    assert cdf(math.log(2) ** (1 / 3)) == pytest.approx(0.5, abs=1e-14)
    assert math.log(2) ** (1 / 3) == pytest.approx(0.8850, abs=1e-4)
    # p = 2: 1 - (1 + x^3) e^{-x^3}
    assert ls.smallest_gap_cdf(2)(1.0) == pytest.approx(1 - 2 / math.e, abs=1e-14)


def test_smallest_gap_prefactor():
    # int_{-1}^{1} (4 - x^2)^2 dx = 406/15
    assert ls.smallest_gap_prefactor(-1, 1) == pytest.approx(406 / 15 / (144 * math.pi ** 2), rel=1e-13)
    assert ls.smallest_gap_prefactor(-1, 1) == pytest.approx(0.0190446299, rel=1e-8)


def test_smallest_gap_beta_guard():
    cfgs = en.sample_gve(20, 1, 2, 0)
    with pytest.raises(ValueError):
        ls.smallest_gaps(cfgs, 0, (-1, 1), beta=1)


def test_classical_locations(semicircle):
    g = ls.classical_locations(4)
    assert g[1] == pytest.approx(0, abs=1e-12)  # gamma_{2/4} is the median
    assert g[-1] == pytest.approx(2)
    assert g[0] == pytest.approx(-0.80794551, abs=1e-8)


def test_rigidity_cases(semicircle):
    N = 100
    gam = ls.classical_locations(N)
    ok, slack = ls.rigidity_check(en.EigenConfig(gam[None, :], 2), semicircle, 0.4)
    assert ok and slack > 0
    ok, _ = ls.rigidity_check(en.EigenConfig(gam[None, :] + 1.0, 2), semicircle, 0.4)
    assert not ok
    with pytest.raises(ValueError):
        ls.rigidity_check(en.EigenConfig(gam[None, :], 2), semicircle, 0.7)


def test_bulk_window_guard():
    cfgs = en.sample_gve(50, 2, 1, 0)
    with pytest.raises(ValueError):
        ls.rescaled_bulk_gaps(cfgs, 0, (1, 25))


def test_bulk_gaps_rescaling():
    cfgs = en.sample_gve(50, 2, 2, 0)
    plain = ls.rescaled_bulk_gaps(cfgs, 0, (10, 40))
    halved = ls.rescaled_bulk_gaps(cfgs, 0, (10, 40), Rprime=lambda x: 2 + 0 * x)
    assert np.allclose(halved.gaps, plain.gaps / 2)
    assert plain.gaps.size == 60


def test_edge_scale_covariance():
    cfgs = en.sample_gve(40, 2, 3, 1)
    base = ls.edge_fluctuations(cfgs, 0, "left", 2)
    assert np.allclose(ls.edge_fluctuations(cfgs, 0, "left", 2, scale=1.7), 1.7 * base)
    right = ls.edge_fluctuations(cfgs, 0, "right", 1, center=2.0)
    assert np.allclose(right[:, 0], 40 ** (2 / 3) * (np.array([c.lambdas[0, -1] for c in cfgs]) - 2))
    with pytest.raises(ValueError):
        ls.edge_fluctuations(cfgs, 0, m=11)


def test_zero_test_function_correlation():
    cfgs = en.sample_gve(60, 2, 2, 3)
    f = lambda u: np.zeros(len(u))
    assert ls.averaged_correlation(cfgs, 0, 0.0, 2, f, 3.0) == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_correlation_symmetrisation_invariant(seed):
    # the sum runs over all ordered tuples, so f and its symmetrisation agree
    cfgs = en.sample_gve(40, 2, 1, seed)
    bump = lambda v: np.where(np.abs(v) < 2, (4 - v * v) ** 2, 0.0)
    f = lambda u: bump(u[:, 0]) * bump(u[:, 1]) * (1 + u[:, 0])
    g = lambda u: 0.5 * (f(u) + f(u[:, ::-1]))
    a = ls.averaged_correlation(cfgs, 0, 0.3, 2, f, 2.0)
    b = ls.averaged_correlation(cfgs, 0, 0.3, 2, g, 2.0)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_correlation_order_of_configs():
    cfgs = en.sample_gve(40, 2, 3, 8)
    f = lambda u: np.exp(-np.sum(u * u, axis=1))
    a = ls.averaged_correlation(cfgs, 0, -0.5, 2, f, 6.0)
    b = ls.averaged_correlation(cfgs[::-1], 0, -0.5, 2, f, 6.0)
    assert a == pytest.approx(b, rel=1e-13)


def test_gue_halves_agree():
    cfgs = en.sample_gve(200, 2, 100, 12)
    A = ls.rescaled_bulk_gaps(cfgs[:50], 0, (40, 160))
    B = ls.rescaled_bulk_gaps(cfgs[50:], 0, (40, 160))
    assert A.gaps.size == B.gaps.size == 6000
    assert ls.ks_distance(A.gaps, B.gaps) < 0.03


def test_report_summary():
    rep = ls.StatReport("x", [1.0, 2.0, 3.0], 0.02, 0.05)
    assert rep.passed
    assert rep.summary()["n"] == 3
    with pytest.raises(ValueError):
        ls.StatReport("x", [1.0], 1.5)


def test_histogram_csv():
    lines = ls.histogram_csv(np.arange(10), bins=5).splitlines()
    assert lines[0] == "left,right,count" and len(lines) == 6
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == 10
