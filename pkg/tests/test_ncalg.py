import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmt_transport import ncalg as nc

A1, A2, B1 = nc.A_BASE + 1, nc.A_BASE + 2, nc.B_BASE + 1

letters = st.sampled_from([1, -1, 2, -2, A1, A2])
words = st.lists(letters, max_size=6).map(tuple)


def P(text, d=2, m=1):
    return nc.NCPoly.from_text(text, d, m)


def random_poly(rng, n_terms=20, d=2, max_len=5):
    alphabet = [1, -1, 2, -2, A1, A2]
    terms = {}
    for _ in range(n_terms):
        w = tuple(rng.choice(alphabet, size=rng.integers(0, max_len + 1)).tolist())
        terms[w] = complex(rng.normal(), rng.normal())
    return nc.NCPoly(terms, d)


def test_unitary_cancels():
    p = nc.mul(P("1 u1"), P("1 u1^"))
    assert p == nc.NCPoly.one(2, 1)


def test_product_of_letters():
    p = nc.mul(P("1 a1"), P("1 b1"))
    assert p.terms == {(A1, B1): 1}


def test_no_reduction_without_adjacent_pair():
    p = nc.mul(P("1 u1 a1"), P("1 u1^"))
    (w,) = p.terms
    assert w == (1, A1, -1) and nc.deg_u(w) == 2


def test_adjoint_examples():
    assert nc.adjoint(P("1j u1 a1")) == P("-1j a1 u1^")
    assert nc.adjoint(P("1 a1 b1 a2")) == P("1 a2 b1 a1")


def test_adjoint_involution():
    p = random_poly(np.random.default_rng(0))
    assert nc.adjoint(nc.adjoint(p)) == p


def test_norm_examples():
    assert nc.norm_xi_zeta(P("2 u1 a1 u1^"), 2, 3) == pytest.approx(24)
    assert nc.norm_xi_zeta(nc.NCPoly.one(2), 5, 7) == 1


def test_norm_rejects_small_parameters():
    with pytest.raises(ValueError):
        nc.norm_xi_zeta(P("1 a1"), 0.5, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_norm_triangle(seed):
    rng = np.random.default_rng(seed)
    p, q = random_poly(rng, 5), random_poly(rng, 5)
    assert nc.norm_xi_zeta(p + q, 3, 2) <= nc.norm_xi_zeta(p, 3, 2) + nc.norm_xi_zeta(q, 3, 2) + 1e-12


def test_nc_derivative_of_x1():
    got = nc.nc_derivative(P("1 u1 a1 u1^"), 1)
    want = nc.NCPoly({((1,), (A1, -1)): 1, ((1, A1), (-1,)): -1}, 2, 1, 2)
    assert got == want


def test_nc_derivative_without_u():
    assert nc.nc_derivative(P("1 a1 b1"), 1).terms == {}


@settings(max_examples=60, deadline=None)
@given(words, words)
def test_leibniz(w1, w2):
    # d(pq) = d(p).(1 x q) + (p x 1).d(q), expanded term by term
    p, q = nc.NCPoly({w1: 1}, 2), nc.NCPoly({w2: 1}, 2)
    lhs = nc.nc_derivative(nc.mul(p, q), 1)
    t = {}
    w1r, w2r = nc.reduce_word(w1), nc.reduce_word(w2)
    for (l, r), c in nc.nc_derivative(p, 1).terms.items():
        k = (l, nc.reduce_word(r + w2r))
        t[k] = t.get(k, 0) + c
    for (l, r), c in nc.nc_derivative(q, 1).terms.items():
        k = (nc.reduce_word(w1r + l), r)
        t[k] = t.get(k, 0) + c
    assert lhs == nc.NCPoly(t, 2, 0, 2)


def test_cyclic_derivative_example():
    got = nc.cyclic_derivative(P("1 u1 a1 u1^ a2"), 1)
    assert got == P("1 a1 u1^ a2 u1\n-1 u1^ a2 u1 a1")
    assert nc.cyclic_derivative(P("1 a1"), 1).terms == {}


def test_cyclic_derivative_is_flip_of_derivative():
    p = random_poly(np.random.default_rng(1))
    for i in (1, 2):
        assert nc.cyclic_derivative(p, i) == nc.flip_multiply(nc.nc_derivative(p, i))


def test_laplacian_of_letter_vanishes():
    assert nc.reduced_laplacian(P("1 a1"), 1).terms == {}


@pytest.mark.parametrize("text", ["1 u1 a1 u1^", "1 u1 a1 u1^ u1 a1 u1^", "1 u1 a1 u1^ u2 a2 u2^ u1 a1 u1^"])
def test_laplacian_forms_agree_on_trace_classes(text):
    p = P(text)
    four = nc.trace_class_tensor(nc.reduced_laplacian(p, 1))
    ident = nc.trace_class_tensor(nc.reduced_laplacian(p, 1, form="identity"))
    keys = set(four) | set(ident)
    assert all(abs(four.get(k, 0) - ident.get(k, 0)) < 1e-12 for k in keys)


def test_laplacian_lowers_degree():
    p = P("1 u1 a1 u1^ u1 a1 u1^ u2 a2 u2^")
    for i in (1, 2):
        for (l, r), _ in nc.reduced_laplacian(p, i).terms.items():
            assert nc.deg_u(l) < 6 and nc.deg_u(r) < 6


def test_degree_ops():
    x1 = P("1 u1 a1 u1^")
    assert nc.degree_op(x1) == x1.scale(2)
    assert nc.proj_ab(P("1 a1 b1\n1 u1 u2")) == P("1 a1 b1")
    p = nc.proj_perp(random_poly(np.random.default_rng(2)))
    assert nc.inverse_degree_op(nc.degree_op(p)).is_close(p)


def test_inverse_degree_rejects_ab_words():
    with pytest.raises(nc.DegreeError):
        nc.inverse_degree_op(P("1 a1"))


@settings(max_examples=100, deadline=None)
@given(st.lists(letters, max_size=10))
def test_reduction_confluent(ws):
    # reducing any split separately and then the concatenation gives the same word
    k = len(ws) // 2
    left, right = nc.reduce_word(ws[:k]), nc.reduce_word(ws[k:])
    assert nc.reduce_word(left + right) == nc.reduce_word(ws)


@settings(max_examples=100, deadline=None)
@given(words)
def test_cyclic_key_rotation_invariant(w):
    w = nc.reduce_word(w)
    if len(w) > 1:
        assert nc.cyclic_key(w) == nc.cyclic_key(nc.reduce_word(w[1:] + w[:1]))


def test_text_round_trip():
    p = random_poly(np.random.default_rng(3), 8)
    assert nc.NCPoly.from_text(p.to_text(), 2).is_close(p)
    q = nc.tensor(P("1 u1 a1 u1^"), P("0.5 a2"))
    assert nc.NCPoly.from_text(q.to_text(), 2, 1) == q


def test_alphabet_checked():
    with pytest.raises(nc.AlphabetError):
        P("1 u3", d=2)


def test_poly_in_x_matches_words():
    p = nc.poly_in_x({("x1", "x2"): 0.5, ("x2", "x1"): 0.5}, 2)
    assert nc.is_self_adjoint(p)
    assert p.terms[nc.x_word(1) + nc.x_word(2)] == 0.5


def test_matrix_evaluation_of_x_word():
    rng = np.random.default_rng(4)
    U = [np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0] for _ in range(2)]
    A = [np.diag(rng.normal(size=4)) for _ in range(2)]
    got = nc.evaluate_word_on_matrices(nc.x_word(1, 2), U, A)
    X = U[0] @ A[0] @ U[0].conj().T
    assert np.allclose(got, X @ X)


def test_semicircle_moments():
    assert [nc.semicircle_moment(k) for k in range(7)] == [1, 0, 1, 0, 2, 0, 5]
    assert nc.semicircle_moment(4, 0.25) == pytest.approx(2 / 16)
