import numpy as np
import pytest

from rmt_transport import equilibrium as eq
from rmt_transport import masterop as mo


@pytest.fixture(scope="module")
def op():
    mu = eq.solve_onecut(eq.quadratic_potential(0.5), 2)
    return mo.MasterOperator.from_measure(mu)


@pytest.fixture(scope="module")
def quartic_op():
    mu = eq.solve_onecut(eq.polynomial_potential([0, 0.1, 0.5, 0, 0.02]), 2)
    return mo.MasterOperator.from_measure(mu)


def smooth_family(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = rng.normal(size=4)
        w = rng.uniform(0.2, 1.2, size=2)
        ph = rng.uniform(0, np.pi)
        f = (lambda x, c=c, w=w, ph=ph: c[0] * np.sin(w[0] * x + ph) + c[1] * np.cos(w[1] * x)
             + c[2] * x + c[3] * np.tanh(0.5 * x))
        fp = (lambda x, c=c, w=w, ph=ph: c[0] * w[0] * np.cos(w[0] * x + ph) - c[1] * w[1] * np.sin(w[1] * x)
              + c[2] + 0.5 * c[3] / np.cosh(0.5 * x) ** 2)
        out.append((f, fp))
    return out


def test_apply_constant(op):
    x = op.nodes
    got = op.apply_at(lambda y: np.ones_like(y), x, lambda y: np.zeros_like(y))
    assert np.max(np.abs(got - x)) < 1e-12


def test_apply_identity(op):
    x = op.nodes
    got = op.apply_at(lambda y: y, x, lambda y: np.ones_like(y))
    assert np.max(np.abs(got - (x * x - 2))) < 1e-10


def test_apply_linear(op):
    (f, fp), (g, gp) = smooth_family(2, 1)
    x = op.nodes
    alpha = 0.7
    lhs = op.apply_at(lambda y: alpha * f(y) + g(y), x, lambda y: alpha * fp(y) + gp(y))
    rhs = alpha * op.apply_at(f, x, fp) + op.apply_at(g, x, gp)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_invert_quadratic(op):
    psi, c = op.invert(lambda x: x * x - 2)
    x = op.nodes
    assert np.max(np.abs(psi(x) - x)) < 1e-9
    assert abs(c) < 1e-12


@pytest.mark.parametrize("which", ["semicircle", "quartic"])
def test_round_trip_family(which, op, quartic_op):
    o = op if which == "semicircle" else quartic_op
    x = o.nodes
    worst = 0.0
    for f, fp in smooth_family(50, 2):
        g = mo.GridFunction(o.lo, o.hi, o.apply_at(f, x, fp))
        psi, c = o.invert(g)
        # apply(invert(g)) = g + c
        back = o.apply_at(psi, x, psi.deriv)
        worst = max(worst, np.max(np.abs(back - g(x) - c)))
    assert worst < 1e-8


def test_inverse_is_unique(op):
    f, fp = smooth_family(1, 3)[0]
    x = op.nodes
    g = mo.GridFunction(op.lo, op.hi, op.apply_at(f, x, fp))
    psi, c = op.invert(g)
    assert np.max(np.abs(psi(x) - f(x))) < 1e-8
    assert abs(c) < 1e-8


def test_grid_refinement(quartic_op):
    mu = quartic_op.mu
    coarse = mo.MasterOperator.from_measure(mu, 128)
    fine = mo.MasterOperator.from_measure(mu, 256)
    g = lambda x: np.sin(x) + 0.3 * x ** 2
    p1, _ = coarse.invert(g)
    p2, _ = fine.invert(g)
    xs = np.linspace(coarse.lo, coarse.hi, 401)
    assert np.max(np.abs(p1(xs) - p2(xs))) < 1e-7


def test_stability_constant_reported(op):
    fam = [f for f, _ in smooth_family(20, 4)]
    C = mo.stability_constant(op, fam)
    assert 0 < C < np.inf


def kernel(eps):
    return lambda y, x: eps * np.cos(x) * np.sin(y)


def test_coupled_without_coupling_is_independent(op, quartic_op):
    ops = [op, quartic_op]
    g = [lambda x: np.sin(x), lambda x: x ** 2]
    none = [[None, None], [None, None]]
    for t, K in ((0.5, none), (0.0, [[kernel(0.01)] * 2] * 2)):
        psis, cs, info = mo.solve_coupled(ops, K, t, g)
        for k in range(2):
            p, c = ops[k].invert(g[k])
            assert np.allclose(psis[k].values, p.values) and cs[k] == c
        assert info["iterations"] == 0


def test_coupled_fixed_point(op, quartic_op):
    ops = [op, quartic_op]
    K = [[kernel(0.01)] * 2 for _ in range(2)]
    g = [lambda x: np.sin(x), lambda x: x ** 2 - 0.5 * x]
    psis, cs, info = mo.solve_coupled(ops, K, 1.0, g)
    assert info["iterations"] <= 25
    assert info["ratio"] < 0.5
    assert mo.coupled_residual(ops, K, 1.0, g, psis, cs) < 1e-8


def test_grid_function_ops():
    f = mo.GridFunction.from_callable(np.sin, -1, 1, 64)
    x = np.linspace(-1, 1, 11)
    assert np.allclose(f(x), np.sin(x), atol=1e-13)
    assert np.allclose(f.deriv(x), np.cos(x), atol=1e-10)
    assert np.allclose((f * 2 - f)(x), np.sin(x), atol=1e-13)
    assert f.tail() < 1e-13


def test_grid_function_2d():
    xs = mo.cheb_nodes(-1, 2, 32)
    ys = mo.cheb_nodes(0, 1, 32)
    vals = np.sin(xs)[:, None] * np.exp(ys)[None, :]
    F = mo.GridFunction2D(-1, 2, 0, 1, vals)
    x, y = np.array([0.3, 1.1]), np.array([0.2, 0.9])
    assert np.allclose(F.outer(x, y), np.sin(x)[:, None] * np.exp(y)[None, :], atol=1e-12)
    assert np.allclose(F.outer(x, y, dx=1), np.cos(x)[:, None] * np.exp(y)[None, :], atol=1e-9)
