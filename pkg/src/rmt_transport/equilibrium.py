"""One-cut equilibrium measures of convex log-gases.

Convention.  The eigenvalue density is proportional to

    prod_{i<j} |l_i - l_j|^beta  exp(-N sum_i W(l_i)),

so the equilibrium measure is stationary for W(x) - beta * int log|x-y| dmu(y),
i.e. W'(x) = beta * PV int rho(y)/(x-y) dy on the support.  Writing
U = W'/beta (half of W'_beta := 2W'/beta), the two one-cut endpoint
conditions read

    (1/pi) int_a^b U(s) / sqrt((s-a)(b-s)) ds = 0,
    (1/pi) int_a^b s U(s) / sqrt((s-a)(b-s)) ds = 1,

and the density is rho(x) = d(x) sqrt((x-a)(b-x)) with

    d(x) = (1/pi^2) int_a^b (U(x)-U(s)) / ((x-s) sqrt((s-a)(b-s))) ds.

With beta = 2 and W = x^2/2 this gives the semicircle on [-2, 2].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import optimize

CHEB_DEGREE = 64
CHEB_MAX_DEGREE = 1024
CHEB_TAIL_TOL = 1e-12
N_QUAD = 256
ENDPOINT_TOL = 1e-10
CONVEXITY_SAMPLES = 512


class NotOneCutError(ValueError):
    """The input does not produce a one-cut measure with square-root edges."""


class EndpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Potential:
    """W with its first two derivatives; c0 is the convexity floor on [-M, M]."""
    eval: Callable
    d1: Callable
    d2: Callable
    c0: float = 0.0

    def check_convex(self, M: float):
        xs = np.linspace(-M, M, CONVEXITY_SAMPLES)
        w2 = np.asarray(self.d2(xs), dtype=float) * np.ones_like(xs)
        if np.min(w2) < self.c0 or np.min(w2) <= 0:
            raise NotOneCutError(f"potential not uniformly convex on [-{M}, {M}] "
                                 f"(min W'' = {np.min(w2):.3g})")

    def __sub__(self, other: "Potential") -> "Potential":
        return Potential(lambda x: self.eval(x) - other.eval(x),
                         lambda x: self.d1(x) - other.d1(x),
                         lambda x: self.d2(x) - other.d2(x))


def polynomial_potential(coeffs, c0: float | None = None) -> Potential:
    """W(x) = sum_k coeffs[k] x^k."""
    p = np.polynomial.Polynomial(coeffs)
    p1, p2 = p.deriv(), p.deriv(2)
    return Potential(p, p1, p2, 0.0 if c0 is None else c0)


def quadratic_potential(scale: float = 0.5) -> Potential:
    return polynomial_potential([0.0, 0.0, scale], c0=2 * scale)


@dataclass(frozen=True)
class EquilibriumMeasure:
    a_end: float
    b_end: float
    dcoef: np.ndarray
    beta: int
    potential: Potential | None = None

    @property
    def center(self):
        return 0.5 * (self.a_end + self.b_end)

    @property
    def radius(self):
        return 0.5 * (self.b_end - self.a_end)

    def _t(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.radius

    def d(self, x):
        return C.chebval(self._t(x), self.dcoef)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        t = self._t(x)
        inside = np.abs(t) < 1
        root = np.sqrt(np.clip((x - self.a_end) * (self.b_end - x), 0.0, None))
        return np.where(inside, C.chebval(t, self.dcoef) * root, 0.0)

    def cdf(self, x):
        """Closed-form integral of the Chebyshev series against sin^2."""
        x = np.asarray(x, dtype=float)
        t = np.clip(self._t(x), -1.0, 1.0)
        phi = np.arccos(-t)  # x = c - r cos(phi)
        c = self.dcoef * (-1.0) ** np.arange(len(self.dcoef))

        def S(m):
            return phi if m == 0 else np.sin(m * phi) / m

        acc = np.zeros_like(phi)
        for k, ck in enumerate(c):
            if ck == 0:
                continue
            acc += ck * 0.5 * (S(k) - 0.5 * (S(k + 2) + S(abs(k - 2))))
        return self.radius ** 2 * acc

    def mass(self) -> float:
        return float(self.cdf(self.b_end))

    def moment(self, k: int, n: int = 200) -> float:
        th = (np.arange(n) + 0.5) * np.pi / n
        s = self.center + self.radius * np.cos(th)
        w = np.pi / n * self.radius ** 2 * np.sin(th) ** 2
        return float(np.sum(w * self.d(s) * s ** k))

    def u_coefficients(self) -> np.ndarray:
        """d expanded in Chebyshev polynomials of the second kind."""
        c = self.dcoef
        e = np.zeros(len(c))
        for n, cn in enumerate(c):
            if n == 0:
                e[0] += cn
            elif n == 1:
                e[1] += cn / 2
            else:
                e[n] += cn / 2
                e[n - 2] -= cn / 2
        return e

    def hilbert(self, x):
        """PV int rho(y)/(x-y) dy for real x (Stieltjes transform off the support)."""
        x = np.asarray(x, dtype=float)
        t = self._t(x)
        e = self.u_coefficients()
        out = np.empty_like(t)
        inside = np.abs(t) <= 1
        # Re (t - sqrt(t^2-1))^{n+1} = T_{n+1}(t) on [-1, 1]
        out[inside] = C.chebval(t[inside], np.concatenate([[0.0], e]))
        w = _outer_w(t[~inside].astype(complex))
        out[~inside] = np.real(_power_series(w, e))
        return np.pi * self.radius * out

    def to_json(self) -> str:
        return json.dumps({"a": self.a_end, "b": self.b_end, "beta": self.beta,
                           "dcoef": [float(v) for v in self.dcoef]}, indent=2)

    def to_csv(self, n: int = 512) -> str:
        xs = np.linspace(self.a_end, self.b_end, n)
        rho = self.density(xs)
        lines = ["x,rho"] + [f"{x:.17g},{r:.17g}" for x, r in zip(xs, rho)]
        return "\n".join(lines) + "\n"


def _outer_w(t):
    """t - sqrt(t^2 - 1) with the branch that decays at infinity."""
    return 1.0 / (t + np.sqrt(t - 1) * np.sqrt(t + 1))


def _power_series(w, e):
    acc = np.zeros_like(w)
    p = w.copy()
    for en in e:
        acc = acc + en * p
        p = p * w
    return acc


# --------------------------------------------------------------- solver


def _gauss_cheb(n=N_QUAD):
    th = (np.arange(n) + 0.5) * np.pi / n
    return np.cos(th)


def _conditions(U, U1, c, r, nodes):
    s = c + r * nodes
    u = U(s)
    F = np.array([np.mean(u), np.mean(s * u) - 1.0])
    u1 = U1(s)
    J = np.array([[np.mean(u1), np.mean(u1 * nodes)],
                  [np.mean(u + s * u1), np.mean(nodes * u + s * u1 * nodes)]])
    return F, J


def _endpoints_newton(U, U1, c, r, nodes, tol, max_iter=60):
    best = np.inf
    for _ in range(max_iter):
        F, J = _conditions(U, U1, c, r, nodes)
        err = np.max(np.abs(F))
        # keep polishing past tol until round-off stalls
        if err < tol and (err < 1e-15 or err >= 0.5 * best):
            return c, r
        best = min(best, err)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while r + lam * step[1] <= 0 and lam > 1e-6:
            lam /= 2
        c, r = c + lam * step[0], r + lam * step[1]
        if not (np.isfinite(c) and np.isfinite(r)):
            break
    raise EndpointError("Newton on endpoints did not converge")


def _endpoints_bisect(U, nodes, M, tol):
    # for fixed r the first condition is increasing in c (U increasing)
    def c_of_r(r):
        f = lambda c: np.mean(U(c + r * nodes))
        return optimize.brentq(f, -M, M, xtol=1e-15)

    def g(r):
        c = c_of_r(r)
        s = c + r * nodes
        return np.mean(s * U(s)) - 1.0

    r = optimize.brentq(g, 1e-6, 2 * M, xtol=1e-15)
    return c_of_r(r), r


def _d_values(U, U1, c, r, xs, nodes):
    s = c + r * nodes
    us = U(s)
    out = np.empty(len(xs))
    for j, x in enumerate(xs):
        diff = x - s
        close = np.abs(diff) < 1e-12
        q = np.where(close, U1(np.where(close, s, x)), (U(x) - us) / np.where(close, 1.0, diff))
        out[j] = np.mean(q) / np.pi
    return out


def _fit_d(U, U1, c, r, nodes, degree=CHEB_DEGREE):
    while True:
        t = C.chebpts1(degree + 1)
        vals = _d_values(U, U1, c, r, c + r * t, nodes)
        coef = C.chebfit(t, vals, degree)
        tail = np.max(np.abs(coef[-4:]))
        if tail < CHEB_TAIL_TOL * max(1.0, np.max(np.abs(coef))) or degree >= CHEB_MAX_DEGREE:
            break
        degree *= 2
    # drop trailing round-off
    keep = len(coef)
    while keep > 1 and abs(coef[keep - 1]) < 1e-16:
        keep -= 1
    return coef[:keep]


def solve_onecut(W: Potential, beta: int = 2, M: float = 10.0, check_convexity: bool = True,
                 tol: float = ENDPOINT_TOL) -> EquilibriumMeasure:
    """Equilibrium measure of W for the beta log-gas, support inside (-M, M)."""
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    if check_convexity:
        W.check_convex(M)
    U = lambda x: np.asarray(W.d1(x), dtype=float) / beta + 0 * x
    U1 = lambda x: np.asarray(W.d2(x), dtype=float) / beta + 0 * x
    nodes = _gauss_cheb()
    # start from the quadratic approximation at the minimiser of W
    try:
        x0 = optimize.brentq(U, -M, M)
    except ValueError:
        x0 = 0.0
    k = max(float(U1(np.array([x0]))[0]), 1e-3)
    c, r = x0, 2.0 / math.sqrt(k)
    try:
        c, r = _endpoints_newton(U, U1, c, r, nodes, tol)
    except EndpointError:
        c, r = _endpoints_bisect(U, nodes, M, tol)
    F, _ = _conditions(U, U1, c, r, nodes)
    if np.max(np.abs(F)) >= tol:
        raise EndpointError(f"endpoint residual {np.max(np.abs(F)):.3g}")
    a, b = c - r, c + r
    if not (-M < a < b < M):
        raise NotOneCutError(f"support [{a:.6g}, {b:.6g}] not inside (-{M}, {M})")
    coef = _fit_d(U, U1, c, r, nodes)
    mu = EquilibriumMeasure(a, b, coef, beta, W)
    t = C.chebpts2(257)
    if np.min(C.chebval(t, coef)) <= 0:
        raise NotOneCutError("negative discriminant inside the support")
    return mu


def self_consistent(W: Potential, correction: Callable, beta: int = 2, M: float = 10.0,
                    damping: float = 0.5, tol: float = 1e-9, max_iter: int = 200):
    """Fixed point of mu -> solve_onecut(W - correction(mu)).

    correction maps a measure to a Potential (the derivative of the
    interaction functional at delta_x).  Damping mixes the effective
    potentials of consecutive iterates.  Returns (measure, iterations).
    """
    mu = solve_onecut(W, beta, M)
    corr = correction(mu)
    for it in range(1, max_iter + 1):
        W_eff = W - corr
        new = solve_onecut(W_eff, beta, M)
        change = max(abs(new.a_end - mu.a_end), abs(new.b_end - mu.b_end))
        mu = new
        if change < tol:
            return mu, it
        nxt = correction(mu)
        corr = _mix(corr, nxt, damping)
    raise EndpointError(f"self-consistent iteration did not converge in {max_iter} steps")


def self_consistent_system(Ws, correction: Callable, beta: int = 2, M: float = 10.0,
                           damping: float = 0.5, tol: float = 1e-9, max_iter: int = 200):
    """Joint fixed point for d measures: mu_k = solve_onecut(W_k - corr_k(mus)).

    correction maps the list of measures to a list of Potentials.
    Returns (measures, iterations)."""
    mus = [solve_onecut(W, beta, M) for W in Ws]
    corr = correction(mus)
    for it in range(1, max_iter + 1):
        new = [solve_onecut(W - c, beta, M) for W, c in zip(Ws, corr)]
        change = max(max(abs(n.a_end - m.a_end), abs(n.b_end - m.b_end)) for n, m in zip(new, mus))
        mus = new
        if change < tol:
            return mus, it
        corr = [_mix(o, n, damping) for o, n in zip(corr, correction(mus))]
    raise EndpointError(f"self-consistent iteration did not converge in {max_iter} steps")


def _mix(old: Potential, new: Potential, damping: float) -> Potential:
    w = 1.0 - damping
    return Potential(lambda x: damping * old.eval(x) + w * new.eval(x),
                     lambda x: damping * old.d1(x) + w * new.d1(x),
                     lambda x: damping * old.d2(x) + w * new.d2(x))


def product_correction(a: float, terms) -> Callable:
    """Correction for a rank-2 interaction a * sum c f(x) (x) g(x) of
    single-matrix polynomials: its derivative at delta_x is
    a * sum c [f(x) mu(g) + mu(f) g(x)].  terms: list of (c, f_coeffs, g_coeffs)."""
    polys = [(c, np.polynomial.Polynomial(f), np.polynomial.Polynomial(g)) for c, f, g in terms]

    def corr(mu: EquilibriumMeasure) -> Potential:
        comb = np.polynomial.Polynomial([0.0])
        for c, f, g in polys:
            mf = sum(fc * mu.moment(k) for k, fc in enumerate(f.coef))
            mg = sum(gc * mu.moment(k) for k, gc in enumerate(g.coef))
            comb = comb + c * (mg * f + mf * g)
        comb = a * comb
        return Potential(comb, comb.deriv(), comb.deriv(2))

    return corr


def stieltjes(mu: EquilibriumMeasure, z) -> complex:
    """G(z) = int dmu(x)/(z-x) off the support."""
    z = np.asarray(z, dtype=complex)
    t = (z - mu.center) / mu.radius
    dist = np.where((z.real >= mu.a_end) & (z.real <= mu.b_end), np.abs(z.imag),
                    np.minimum(np.abs(z - mu.a_end), np.abs(z - mu.b_end)))
    if np.any(dist <= 1e-12):
        raise ValueError("z lies on the support")
    w = _outer_w(t)
    out = np.pi * mu.radius * _power_series(w, mu.u_coefficients())
    return out if out.ndim else complex(out)


def quantiles(mu: EquilibriumMeasure, fractions) -> np.ndarray:
    """gamma_q with mu((-inf, gamma_q]) = q."""
    qs = np.atleast_1d(np.asarray(fractions, dtype=float))
    if np.any((qs <= 0) | (qs >= 1)):
        raise ValueError("fractions must lie strictly inside (0, 1)")
    mass = mu.mass()
    out = np.empty(len(qs))
    for i, q in enumerate(qs):
        out[i] = optimize.brentq(lambda x: float(mu.cdf(x)) / mass - q, mu.a_end, mu.b_end,
                                 xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return out


def edge_exponent(mu: EquilibriumMeasure, side: str = "left", window: float = 0.05,
                  n: int = 40) -> float:
    """Least-squares slope of log rho against log(distance to the edge)."""
    L = mu.b_end - mu.a_end
    dist = np.geomspace(1e-6 * L, window * L, n)
    x = mu.a_end + dist if side == "left" else mu.b_end - dist
    slope, _ = np.polyfit(np.log(dist), np.log(mu.density(x)), 1)
    return float(slope)


def stationarity_residual(mu: EquilibriumMeasure, W_eff: Potential | None = None,
                          n: int = 64) -> float:
    """sup over interior points of |W_eff'(x) - beta * PV int rho/(x-y)|."""
    W_eff = W_eff or mu.potential
    t = np.cos((np.arange(n) + 0.5) * np.pi / n) * 0.98
    x = mu.center + mu.radius * t
    return float(np.max(np.abs(np.asarray(W_eff.d1(x)) - mu.beta * mu.hilbert(x))))
