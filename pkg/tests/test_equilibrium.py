import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from rmt_transport import equilibrium as eq


@pytest.fixture(scope="module")
def semicircle():
    return eq.solve_onecut(eq.quadratic_potential(0.5), 2)


def semicircle_cdf(x):
    return 0.5 + x * math.sqrt(4 - x * x) / (4 * math.pi) + math.asin(x / 2) / math.pi


def quartic_edge(t):
    # symmetric support [-b, b]: (1/2pi) int x W'(x)/sqrt(b^2-x^2) dx = 1 for beta = 2
    def cond(b):
        val, _ = integrate.quad(lambda x: x * (x + 4 * t * x ** 3), -b, b, weight="alg",
                                wvar=(-0.5, -0.5))
        return val / (2 * math.pi) - 1.0
    return optimize.brentq(cond, 0.5, 3.0, xtol=1e-14)


def test_semicircle(semicircle):
    assert semicircle.a_end == pytest.approx(-2, abs=1e-10)
    assert semicircle.b_end == pytest.approx(2, abs=1e-10)
    assert semicircle.density(0.0) == pytest.approx(1 / math.pi, abs=1e-8)
    assert semicircle.mass() == pytest.approx(1, abs=1e-12)


def test_goe_convention():
    mu = eq.solve_onecut(eq.polynomial_potential([0, 0, 0.25]), 1)
    assert (mu.a_end, mu.b_end) == pytest.approx((-2, 2), abs=1e-10)


def test_quartic_endpoints():
    t = 0.01
    mu = eq.solve_onecut(eq.polynomial_potential([0, 0, 0.5, 0, t]), 2)
    b = quartic_edge(t)
    assert mu.b_end == pytest.approx(b, abs=1e-10)
    assert mu.a_end == pytest.approx(-b, abs=1e-10)
    # closed form of the same conditions: 3 t b^4/4 + b^2/4 = 1
    assert 3 * t * b ** 4 / 4 + b * b / 4 == pytest.approx(1, abs=1e-12)


def test_nonconvex_rejected():
    with pytest.raises(eq.NotOneCutError):
        eq.solve_onecut(eq.polynomial_potential([0, 0, -0.5, 0, 0.1]), 2)


def test_correction_zero_is_plain_solve(semicircle):
    zero = eq.polynomial_potential([0.0])
    mu, its = eq.self_consistent(eq.quadratic_potential(0.5), lambda m: zero)
    assert mu.b_end == pytest.approx(semicircle.b_end, abs=1e-12)


@pytest.mark.parametrize("eps", [-0.05, 0.02, 0.05])
def test_linear_correction_shifts(eps):
    shift = eq.polynomial_potential([0.0, eps])
    mu, its = eq.self_consistent(eq.quadratic_potential(0.5), lambda m: shift)
    assert (mu.a_end, mu.b_end) == pytest.approx((-2 + eps, 2 + eps), abs=1e-10)
    assert its <= 30


def test_mean_field_correction_converges():
    # interaction 0.05 mu(x^2)^2/2 gives W_eff = x^2/2 - 0.05 m2 x^2 with m2 = 1/(1 - 0.1 ...)
    corr = eq.product_correction(0.05, [(0.5, [0, 0, 1], [0, 0, 1])])
    mu, its = eq.self_consistent(eq.quadratic_potential(0.5), corr)
    m2 = mu.moment(2)
    # semicircle of variance m2 for W_eff = (1/2 - 0.05 m2) x^2
    assert m2 == pytest.approx(1 / (1 - 0.1 * m2), rel=1e-8)
    assert mu.b_end == pytest.approx(2 * math.sqrt(m2), rel=1e-8)


def test_stieltjes(semicircle):
    val, _ = integrate.quad(lambda x: math.sqrt(4 - x * x) / (2 * math.pi) / (3 - x), -2, 2)
    assert eq.stieltjes(semicircle, 3.0).real == pytest.approx(val, abs=1e-10)
    assert val == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-10)
    assert abs(eq.stieltjes(semicircle, 0.7j).real) < 1e-12
    z = 1e4
    assert z * eq.stieltjes(semicircle, z).real == pytest.approx(1, abs=1e-6)


def test_stieltjes_rejects_support(semicircle):
    with pytest.raises(ValueError):
        eq.stieltjes(semicircle, 0.5)


def test_quantiles(semicircle):
    q = eq.quantiles(semicircle, [0.5, 0.25])
    assert q[0] == pytest.approx(0, abs=1e-12)
    oracle = optimize.brentq(lambda x: semicircle_cdf(x) - 0.25, -2, 2, xtol=1e-14)
    assert q[1] == pytest.approx(oracle, abs=1e-10)
    assert q[1] == pytest.approx(-0.80794551, abs=1e-8)


def test_quantiles_monotone(semicircle):
    qs = np.sort(np.random.default_rng(0).uniform(0.001, 0.999, 100))
    assert np.all(np.diff(eq.quantiles(semicircle, qs)) > 0)


def test_quantiles_reject_bounds(semicircle):
    with pytest.raises(ValueError):
        eq.quantiles(semicircle, [0.0])


@settings(max_examples=12, deadline=None)
@given(st.floats(-0.05, 0.05), st.floats(0.0, 0.05))
def test_perturbed_family_properties(a3, a4):
    W = eq.polynomial_potential([0, 0, 0.5, a3, a4])
    mu = eq.solve_onecut(W, 2, M=3.0)  # the cubic term is convex only on a bounded window
    for side in ("left", "right"):
        assert 0.45 <= eq.edge_exponent(mu, side) <= 0.55
    assert eq.stationarity_residual(mu) < 1e-6
    assert -3 < mu.a_end < mu.b_end < 3
    assert mu.mass() == pytest.approx(1, abs=1e-10)


def test_exports(semicircle):
    data = json.loads(semicircle.to_json())
    assert data["a"] == pytest.approx(-2)
    lines = semicircle.to_csv().splitlines()
    assert lines[0] == "x,rho" and len(lines) == 513
