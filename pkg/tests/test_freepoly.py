import warnings

import numpy as np
import pytest
from scipy import optimize

from rmt_transport import freepoly as fp
from rmt_transport import ncalg as nc

SYM = nc.poly_in_x({("x1", "x2"): 0.5, ("x2", "x1"): 0.5}, 2)
SQUARE = nc.poly_in_x({("x1", "x1"): 1.0}, 1)


def sym_edge_oracle(eps):
    """Right edge of x1 + eps (x1 x2 + x2 x1)/2 from a hand-built 3x3 pencil:
    the real Dyson solution G(x) together with a singular Jacobian."""
    A0 = np.zeros((3, 3))
    A0[1, 2] = A0[2, 1] = -2 / eps
    A1 = np.zeros((3, 3))
    A1[0, 0] = A1[0, 1] = A1[1, 0] = 1
    A2 = np.zeros((3, 3))
    A2[0, 2] = A2[2, 0] = 1

    def F(G, x):
        return G @ (np.diag([x, 0, 0]) - A0 - A1 @ G @ A1 - A2 @ G @ A2) - np.eye(3)

    def smin(G):
        J = np.eye(9) - sum(np.kron(G @ A, (A @ G).T) for A in (A1, A2))
        return np.linalg.svd(J, compute_uv=False)[-1]

    G = np.linalg.inv(np.diag([10.0, 0, 0]) - A0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for x in np.linspace(10, 2.1, 80):
            G = optimize.fsolve(lambda g: F(g.reshape(3, 3), x).ravel(), G.ravel(), xtol=1e-13).reshape(3, 3)
        v = optimize.fsolve(lambda v: np.append(F(v[:9].reshape(3, 3), v[9]).ravel(), smin(v[:9].reshape(3, 3))),
                            np.append(G.ravel(), 2.1), xtol=1e-13)
    return v[9]


def test_zero_eps_is_semicircle():
    mu, _ = fp.polynomial_law(SYM, 0, 0.0, 2)
    assert (mu.a_end, mu.b_end) == pytest.approx((-2, 2), abs=1e-9)


def test_sym_edges():
    mu, _ = fp.polynomial_law(SYM, 0, 0.05, 2)
    oracle = sym_edge_oracle(0.05)
    assert oracle == pytest.approx(2.0062043059, abs=1e-9)
    assert mu.b_end == pytest.approx(oracle, abs=1e-9)
    # the law is symmetric under x1 -> -x1
    assert mu.a_end == pytest.approx(-oracle, abs=1e-9)


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
def test_sym_second_moment(eps):
    # tau((x1 + eps s)^2) = 1 + eps^2 tau(s^2), s = (x1 x2 + x2 x1)/2, tau(s^2) = 1/2
    mu, _ = fp.polynomial_law(SYM, 0, eps, 2)
    assert mu.mass() == pytest.approx(1, abs=1e-8)
    assert mu.moment(2) == pytest.approx(1 + eps * eps / 2, abs=1e-8)


def test_square_is_pushforward():
    # x -> x + 0.1 x^2 is increasing on [-2, 2]
    mu, _ = fp.polynomial_law(SQUARE, 0, 0.1, 1)
    assert (mu.a_end, mu.b_end) == pytest.approx((-1.6, 2.4), abs=1e-9)
    assert mu.moment(1) == pytest.approx(0.1, abs=1e-8)


def test_degree_three_rejected():
    with pytest.raises(fp.LinearizationError):
        fp.polynomial_law(nc.poly_in_x({("x1", "x1", "x1"): 1.0}, 1), 0, 0.1, 1)


def test_quadratic_coefficients():
    c, alpha, B = fp.quadratic_coefficients(SYM, 2)
    assert c == 0 and np.all(alpha == 0)
    assert np.allclose(B, [[0, 0.5], [0.5, 0]])
