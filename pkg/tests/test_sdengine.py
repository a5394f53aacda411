import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmt_transport import ncalg as nc
from rmt_transport import sdengine as sd

A1 = nc.A_BASE + 1


def semicircle_state(var=0.25, d=2):
    return nc.ab_state_from_moments([lambda k, v=var: nc.semicircle_moment(k, v)] * d)


def X(*mono, coeff=1.0, d=2):
    return nc.poly_in_x({tuple(mono): coeff}, d)


SYM = nc.poly_in_x({("x1", "x2"): 0.5, ("x2", "x1"): 0.5}, 2)
ZERO = nc.NCPoly.zero(2)


def problem(V=ZERO, beta=2, a=0.0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sd.SmallnessWarning)
        return sd.SDProblem(V, beta, a, semicircle_state(), **kw)


# ----------------------------------------------------------------- smallness


def test_delta_for_zero_potential():
    assert sd.smallness_delta(ZERO, 9.0) == pytest.approx(1.0)


def test_delta_hand_value_beta1():
    t = 0.01
    V = nc.NCPoly.from_text(f"{t} u1 a1 u1^ b1", 1, 1)
    assert sd.smallness_delta(V, 9.0, 1.0, beta=1) == pytest.approx(1 + 324 * t)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.5, 20), st.floats(0.1, 5))
def test_delta_monotonicity_in_xi(xi, step):
    # the Laplacian part 8/(xi-1) decreases, the potential part grows like xi^deg
    assert sd.smallness_delta(ZERO, xi + step) < sd.smallness_delta(ZERO, xi)
    part = lambda x: sd.smallness_delta(SYM, x) - 8 / (x - 1)
    assert part(xi + step) >= part(xi)


def test_failed_certificate_warns_and_strict_raises():
    with pytest.warns(sd.SmallnessWarning):
        sd.SDProblem(SYM, 2, 1.0, semicircle_state())
    with pytest.raises(ValueError):
        sd.SDProblem(SYM, 2, 1.0, semicircle_state(), strict=True)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem(X("x1", "x2"))  # not self-adjoint
    with pytest.raises(ValueError):
        problem(beta=3)


# ----------------------------------------------------------------- operators


def test_T_vanishes_without_matching_decomposition():
    p = nc.NCPoly.from_text("1 u1 a1", 2)
    assert sd.master_ops_apply("T", p, semicircle_state()).terms == {}


def test_P_vanishes_for_zero_potential():
    p = X("x1", "x2")
    assert sd.master_ops_apply("P", p, semicircle_state(), ZERO).terms == {}


def test_T_bound():
    rng = np.random.default_rng(0)
    # tau_0 with letters of norm <= 1 (variance 1/4) has |tau(w)| <= 1 on words
    tau = sd.tau10_form(problem(), 0)
    xi = 9.0
    for _ in range(10):
        mono = tuple(rng.choice(["x1", "x2"], size=rng.integers(1, 5)).tolist())
        p = nc.proj_perp(nc.poly_in_x({mono: 1.0}, 2))
        if not p.terms:
            continue
        Tp = sd.master_ops_apply("T", p, tau)
        assert nc.norm_xi_zeta(Tp, xi, 1) < 8 / (xi - 1) * nc.norm_xi_zeta(p, xi, 1)


# ----------------------------------------------------------------- series


def test_tau0_values():
    tau1 = nc.ab_state_from_moments([lambda k: 0.7 ** k] * 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sd.SmallnessWarning)
        prob = sd.SDProblem(ZERO, 2, 0.0, tau1)
    sol = sd.solve_tau10(prob, 0, [(1,), nc.x_word(1) + (A1,)])
    assert sol.tau10.word((1,)) == 0
    assert sol.tau10.word(nc.cyclic_key(nc.x_word(1) + (A1,))) == pytest.approx(0.49)


def test_tau0_free_product_moment():
    # free semicirculars of variance 1/4: tau(x1 x2 x1 x2) = 0, tau(x1^2 x2^2) = 1/16
    sol = sd.solve_tau10(problem(), 0, [nc.monomial_to_word(["x1", "x2", "x1", "x2"]),
                                        nc.monomial_to_word(["x1", "x1", "x2", "x2"])])
    vals = [sol.tau10.word(w) for w in sol.words]
    assert vals == pytest.approx([0.0, 1 / 16], abs=1e-14)


def test_zero_potential_has_no_higher_orders():
    prob = problem(ZERO, a=0.1, D_max=4, n_max=3)
    sol = sd.solve_tau10(prob)
    assert all(n == 0 for n in sol.norms[1:])


def test_catalan_bound_with_reported_D():
    prob = problem(SYM, a=0.02, D_max=4, n_max=6)
    sol = sd.solve_tau10(prob)
    for n in range(1, len(sol.norms)):
        assert sol.norms[n] <= sd.catalan(n) * sol.D_fit ** n * (1 + 1e-12)
    assert sd.catalan(3) == 5


def test_first_order_matches_finite_difference():
    # d/da tau^{aV}(x1 x2) at a = 0 from the series against a numerical derivative
    w = nc.cyclic_key(nc.monomial_to_word(["x1", "x2"]))
    sol = sd.solve_tau10(problem(SYM, a=0.0, D_max=6, n_max=4), words=[w])
    h = 1e-4
    plus = sd.solve_tau10(problem(SYM, a=h, D_max=6, n_max=4), words=[w]).tau10.word(w)
    minus = sd.solve_tau10(problem(SYM, a=-h, D_max=6, n_max=4), words=[w]).tau10.word(w)
    assert (plus - minus).real / (2 * h) == pytest.approx(sol.tau10_series[1].word(w).real, rel=1e-6)


def test_gaussian_exact_mean():
    # for the Gaussian coupled model the interaction only rescales covariances;
    # with a1, a2 semicircular of variance 1/(1-a^2): tau(x1 x2) = a/(1-a^2)
    a = 0.03
    s = 1.0 / (1 - a * a)
    tau1 = nc.ab_state_from_moments([lambda k: nc.semicircle_moment(k, s)] * 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sd.SmallnessWarning)
        prob = sd.SDProblem(SYM, 2, a, tau1, D_max=16, n_max=6)
    w = nc.cyclic_key(nc.monomial_to_word(["x1", "x2"]))
    sol = sd.solve_tau10(prob, words=[w])
    assert sol.tau10.word(w).real == pytest.approx(a / (1 - a * a), rel=1e-8)
    assert sol.tau10_series[1].word(w).real == pytest.approx(s ** 2, rel=1e-12)
    assert sol.tau10_series[3].word(w).real == pytest.approx(-s ** 4, rel=1e-9)


def test_truncation_too_low_changes_third_order():
    # order 3 needs words of deg_U 8; a lower cutoff gives a different coefficient
    w = nc.cyclic_key(nc.monomial_to_word(["x1", "x2"]))
    lo = sd.solve_tau10(problem(SYM, a=0.03, D_max=6, n_max=3), words=[w]).tau10_series[3].word(w)
    hi = sd.solve_tau10(problem(SYM, a=0.03, D_max=8, n_max=3), words=[w]).tau10_series[3].word(w)
    assert abs(lo - hi) > 1e-3


def test_solution_json_round_trip():
    import json
    sol = sd.solve_tau10(problem(SYM, a=0.02, D_max=4, n_max=2))
    out = json.loads(sol.to_json())
    assert out["n_max"] == 2 and out["status"] == "ok"


# ----------------------------------------------------------------- Psi


def test_psi_identity_when_operators_vanish():
    g = nc.NCPoly.from_text("1 u1 a1", 2)
    x, info = sd.invert_psi(problem(), g)
    assert x.is_close(g)


def test_psi_round_trip():
    prob = problem(SYM, a=0.03, D_max=6, n_max=6)
    op = sd.PsiOperator(prob)
    g = {nc.cyclic_key(nc.monomial_to_word(["x1", "x2", "x2"])): 1.0,
         nc.cyclic_key(nc.monomial_to_word(["x1", "x2"])): -0.5}
    x, info = op.invert(g)
    back = op.apply(x)
    g = op._clean(g)
    diff = max(abs(back.get(w, 0) - g.get(w, 0)) for w in set(back) | set(g))
    assert diff < 1e-9
    norms = info["norms"]
    ratios = [b / a for a, b in zip(norms, norms[1:]) if a > 1e-14]
    assert max(ratios) <= prob.delta


# ----------------------------------------------------------------- corrections


X1X2 = X("x1", "x2")
W4 = X("x1", "x2", "x1", "x2")


def test_tau11_vanishes_for_beta2():
    assert sd.Corrections(problem(SYM, a=0.02, D_max=4)).tau11(W4) == 0


def test_tau20_haar_covariance():
    assert sd.Corrections(problem(D_max=6)).tau20(X1X2, X1X2).real == pytest.approx(0.0625, abs=1e-12)


@pytest.mark.parametrize("beta,t11,t12", [(2, 0.0, -0.0625), (1, 0.0625, -0.1875)])
def test_weingarten_corrections(beta, t11, t12):
    c = sd.Corrections(problem(beta=beta, D_max=8))
    assert c.tau11(W4).real == pytest.approx(t11, abs=1e-12)
    assert c.tau12(W4).real == pytest.approx(t12, abs=1e-12)


def test_tau20_with_interaction():
    c = sd.Corrections(problem(SYM, a=0.03, D_max=6))
    assert c.tau20(X1X2, SYM).real == pytest.approx(0.06254221, abs=1e-8)


def test_tau20_rank2_potential():
    V = nc.tensor(SYM, SYM)
    c = sd.Corrections(problem(V, a=0.05, D_max=8))
    got = c.tau20(SYM, SYM).real
    assert got == pytest.approx(0.0628930818, abs=1e-9)
    # mean-field closed form for this potential
    assert got == pytest.approx(0.0625 / (1 - 2 * 0.05 * 0.0625), rel=1e-6)


# ----------------------------------------------------------------- free energy


def test_free_energy_zero_coupling():
    assert sd.free_energy(problem(SYM, a=0.0))[0] == (0.0, 0.0, 0.0)


def test_free_energy_sign_symmetry():
    (f_plus, *_), _ = sd.free_energy(problem(SYM.scale(-1), a=0.02, D_max=4, n_max=4), nodes=4)
    (f_minus, *_), _ = sd.free_energy(problem(SYM, a=-0.02, D_max=4, n_max=4), nodes=4)
    assert f_plus == pytest.approx(f_minus, rel=1e-10)


def test_free_energy_small_coupling():
    a = 0.01
    (F0, _, _), _ = sd.free_energy(problem(SYM, a=a, D_max=4, n_max=4), nodes=6)
    w = nc.cyclic_key(nc.monomial_to_word(["x1", "x2"]))
    sol = sd.solve_tau10(problem(SYM, a=0.0, D_max=4, n_max=4), words=[w])
    # f_0^u = tau^{uV}(V) = u tau_1(V) + O(u^2), and tau_0(V) = 0 here
    assert F0 == pytest.approx(a * a / 2 * sol.tau10_series[1].word(w).real, rel=1e-2)
