"""Flow maps between eigenvalue laws.

Two layers live here.  Monotone maps between one-cut measures are built by
quantile matching, CDF_dst(T(x)) = CDF_src(x), with T' = rho_src/rho_dst(T)
as derivative data for a cubic Hermite interpolant.  The particle-level map
is the time-1 flow of the vector field y0 + (y1 + zeta)/N interpolating the
reference law (t = 0) and the interacting law (t = 1), where the interaction
is a finite sum of products of linear statistics

    F(mu_1, .., mu_d) = a * sum_j c_j prod_i mu_{k_ij}(P_ij).

For such F the Taylor kernels f_{k,0}, f_{kl,0}, f_{klm,0} are separable
polynomials, so every source term of the three-tier system is explicit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import chebyshev as C
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline

from .equilibrium import (EquilibriumMeasure, Potential, quantiles, self_consistent_system,
                          solve_onecut)
from .masterop import (GridFunction, GridFunction2D, MasterOperator, cheb_nodes,
                       coupled_residual, solve_coupled)
from .ensemble import EigenConfig

T_NODES = 8
N_GRID_FIELDS = 64
FLOW_STEPS = 64
MAP_NODES = 1025
PUSHFORWARD_TOL = 1e-8
RESIDUAL_TOL = 1e-7
C1_CAP = 1e6


class FlowError(RuntimeError):
    pass


# ----------------------------------------------------------------- kernels


class Separable:
    """f(x_1, .., x_r) = sum c prod_i P_i(x_i) with numpy Polynomials."""

    def __init__(self, terms=None, arity: int = 1):
        self.terms = list(terms or [])
        self.arity = arity

    def __call__(self, *xs):
        out = 0.0
        for c, ps in self.terms:
            v = c
            for p, x in zip(ps, xs):
                v = v * p(x)
            out = out + v
        if np.isscalar(out) or np.ndim(out) == 0:
            shape = np.broadcast(*[np.asarray(x) for x in xs]).shape
            return np.full(shape, float(out)) if shape else float(out)
        return out

    def partial(self, slot: int) -> "Separable":
        terms = []
        for c, ps in self.terms:
            dp = ps[slot].deriv()
            if dp.degree() == 0 and dp.coef[0] == 0:
                continue
            terms.append((c, tuple(dp if i == slot else p for i, p in enumerate(ps))))
        return Separable(terms, self.arity)

    def integrate_slot(self, slot: int, weights: Callable) -> "Separable":
        """Replace slot by the number weights(P) for each factor P."""
        terms = []
        for c, ps in self.terms:
            w = weights(ps[slot])
            if w == 0:
                continue
            terms.append((c * w, tuple(p for i, p in enumerate(ps) if i != slot)))
        return Separable(terms, self.arity - 1)

    def is_zero(self) -> bool:
        return not self.terms


def _poly_moment(mu: EquilibriumMeasure, p: Polynomial) -> float:
    return float(sum(c * mu.moment(k) for k, c in enumerate(p.coef)))


class ProductInteraction:
    """F = scale * sum_j c_j prod_i mu_{k_ij}(P_ij).

    terms: list of (c, [(k, coeffs), ...]) with k a 0-based matrix index and
    coeffs the monomial coefficients of P.  The Taylor kernels are

        f_k(x)        = D_k F at delta_x
        f_kl(x, y)    = (1/2) D_k D_l F
        f_klm(x,y,z)  = (1/6) D_k D_l D_m F
    """

    def __init__(self, d: int, terms, scale: float = 1.0):
        self.d = d
        self.scale = float(scale)
        self.terms = [(float(c), [(int(k), Polynomial(np.asarray(p, dtype=float))) for k, p in fac])
                      for c, fac in terms]
        for _, fac in self.terms:
            for k, _ in fac:
                if not 0 <= k < d:
                    raise ValueError(f"matrix index {k} out of range for d={d}")

    def scaled(self, s: float) -> "ProductInteraction":
        out = ProductInteraction(self.d, [], self.scale * s)
        out.terms = self.terms
        return out

    def is_zero(self) -> bool:
        return self.scale == 0 or not self.terms

    def value(self, mus) -> float:
        tot = 0.0
        for c, fac in self.terms:
            tot += c * math.prod(_poly_moment(mus[k], p) for k, p in fac)
        return self.scale * tot

    def _derivative(self, idx: tuple, mus) -> Separable:
        # sum over ordered choices of distinct factors matching idx
        out = []
        r = len(idx)
        for c, fac in self.terms:
            for choice in itertools.permutations(range(len(fac)), r):
                if any(fac[j][0] != k for j, k in zip(choice, idx)):
                    continue
                rest = math.prod(_poly_moment(mus[fac[j][0]], fac[j][1])
                                 for j in range(len(fac)) if j not in choice)
                coef = self.scale * c * rest / math.factorial(r)
                if coef != 0:
                    out.append((coef, tuple(fac[j][1] for j in choice)))
        return Separable(out, r)

    def first(self, k: int, mus) -> Separable:
        return self._derivative((k,), mus)

    def second(self, k: int, l: int, mus) -> Separable:
        return self._derivative((k, l), mus)

    def third(self, k: int, l: int, m: int, mus) -> Separable:
        return self._derivative((k, l, m), mus)

    def correction(self, t: float) -> Callable:
        """mus -> [t f_k as a Potential], for the self-consistent solver."""
        def corr(mus):
            out = []
            for k in range(self.d):
                f = self.first(k, mus)
                p = Polynomial([0.0])
                for c, (q,) in f.terms:
                    p = p + c * q
                p = t * p
                out.append(Potential(p, p.deriv(), p.deriv(2)))
            return out
        return corr


@dataclass
class TransportProblem:
    """d confining potentials W_k, an interaction F_0 and an optional 1/N
    interaction F_1 (both ProductInteraction)."""
    Ws: list
    interaction: ProductInteraction
    beta: int = 2
    interaction1: ProductInteraction | None = None
    M: float = 10.0

    @property
    def d(self):
        return len(self.Ws)


# ----------------------------------------------------------------- fields


def t_nodes(n: int = T_NODES) -> np.ndarray:
    """Chebyshev points of the second kind on [0, 1], ascending."""
    return 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / (n - 1))


def lagrange_weights(t: float, nodes: np.ndarray) -> np.ndarray:
    """Barycentric Lagrange weights for Chebyshev points of the second kind."""
    n = len(nodes)
    hit = np.isclose(t, nodes, rtol=0, atol=1e-15)
    if np.any(hit):
        w = np.zeros(n)
        w[np.argmax(hit)] = 1.0
        return w
    bw = (-1.0) ** np.arange(n)
    bw[0] *= 0.5
    bw[-1] *= 0.5
    q = bw / (t - nodes)
    return q / q.sum()


@dataclass
class NodeFields:
    t: float
    mus: list
    ops: list
    y0: list
    y1: list
    z: list          # z[k][l]: GridFunction2D, x in the k grid, y in the l grid
    zbar: list       # zbar[k][l](x) = int z_kl(x, y) dmu_l(y)
    constants: dict
    residuals: dict


@dataclass
class TransportFields:
    problem: TransportProblem
    nodes: np.ndarray
    data: list
    info: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.problem.d

    @property
    def target(self) -> list:
        return self.data[-1].mus

    @property
    def reference(self) -> list:
        return self.data[0].mus

    def __post_init__(self):
        # all nodes share the grid interval of each matrix, so time
        # interpolation acts directly on Chebyshev coefficients
        d = self.d
        self._box = [(self.data[0].ops[k].lo, self.data[0].ops[k].hi) for k in range(d)]
        self._y0 = [np.array([nd.y0[k].coef for nd in self.data]) for k in range(d)]
        self._y1 = [np.array([nd.y1[k].coef for nd in self.data]) for k in range(d)]
        self._zb = [[np.array([nd.zbar[k][l].coef for nd in self.data]) for l in range(d)]
                    for k in range(d)]
        self._z = [[np.array([nd.z[k][l].coef for nd in self.data]) for l in range(d)]
                   for k in range(d)]
        self._cache = {}

    def interval(self, k: int) -> tuple:
        return self._box[k]

    def _w(self, t):
        key = float(t)
        if key not in self._cache:
            self._cache = {key: lagrange_weights(t, self.nodes)}
        return self._cache[key]

    def _s(self, k, x):
        lo, hi = self._box[k]
        return (2 * np.asarray(x, dtype=float) - lo - hi) / (hi - lo)

    def _scale(self, k):
        lo, hi = self._box[k]
        return 2.0 / (hi - lo)

    def y0(self, k, t, x):
        return C.chebval(self._s(k, x), self._w(t) @ self._y0[k])

    def y0_prime(self, k, t, x):
        return C.chebval(self._s(k, x), C.chebder(self._w(t) @ self._y0[k])) * self._scale(k)

    def y1(self, k, t, x):
        return C.chebval(self._s(k, x), self._w(t) @ self._y1[k])

    def zbar(self, k, l, t, x):
        return C.chebval(self._s(k, x), self._w(t) @ self._zb[k][l])

    def z_matrices(self, k, l, t, x, y):
        """[z(x_i, y_j)] and [d_2 z(x_i, y_j)] at time t."""
        c = np.tensordot(self._w(t), self._z[k][l], axes=1)
        Tx = C.chebvander(self._s(k, x), c.shape[0] - 1)
        Ty = C.chebvander(self._s(l, y), c.shape[1] - 1)
        left = Tx @ c
        dc = C.chebder(c, axis=1) * self._scale(l)
        Ty1 = Ty[:, :dc.shape[1]]
        return left @ Ty.T, (Tx @ dc) @ Ty1.T

    def max_c1(self) -> float:
        out = 0.0
        for nd in self.data:
            for k in range(self.d):
                out = max(out, nd.y0[k].norm(1), nd.y1[k].norm(1))
        return out

    def to_json(self) -> str:
        out = {"t_nodes": [float(t) for t in self.nodes], "nodes": []}
        for nd in self.data:
            out["nodes"].append({
                "t": float(nd.t),
                "support": [[mu.a_end, mu.b_end] for mu in nd.mus],
                "y0": [g.to_dict() for g in nd.y0],
                "y1": [g.to_dict() for g in nd.y1],
                "z": [[z.to_dict() for z in row] for row in nd.z],
                "constants": nd.constants,
                "residuals": nd.residuals,
            })
        out["info"] = self.info
        return json.dumps(out, sort_keys=True)


def _as_callable(sep: Separable) -> Callable:
    if sep.is_zero():
        return lambda x: np.zeros(np.shape(np.atleast_1d(x)))
    return lambda x: np.asarray(sep(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float)


def _measure_integral(op: MasterOperator, p: Polynomial, weight: np.ndarray | None = None) -> float:
    y = op._y
    w = op._wy if weight is None else op._wy * weight
    return float(np.sum(w * p(y)))


def _divided_difference(g: GridFunction, x: np.ndarray, y: float) -> np.ndarray:
    diff = x - y
    close = np.abs(diff) < 1e-7
    safe = np.where(close, 1.0, diff)
    return np.where(close, g.deriv(0.5 * (x + y)), (g(x) - g(y)) / safe)


def _kernels(F: ProductInteraction, mus, d):
    """K[k][l](y, x) = d/dy f_kl(x, y), the coupling of the Xi_t system."""
    K = [[None] * d for _ in range(d)]
    if F.is_zero():
        return K
    for k in range(d):
        for l in range(d):
            s = F.second(k, l, mus).partial(1)
            if not s.is_zero():
                K[k][l] = (lambda y, x, s=s: s(x, y))
    return K


def build_fields(problem: TransportProblem, n_t: int = T_NODES, n_grid: int = N_GRID_FIELDS,
                 tol: float = 1e-11) -> TransportFields:
    """Solve the three-tier system (y0, then z column by column, then y1) at
    n_t Chebyshev nodes in t.  Each node uses its own interpolated law
    mu_t, the equilibrium of W_k - t f_k."""
    d, beta = problem.d, problem.beta
    F, F1 = problem.interaction, problem.interaction1
    nodes = t_nodes(n_t)
    data = []
    worst = {"y0": 0.0, "z": 0.0, "y1": 0.0}
    laws = []
    for t in nodes:
        if F.is_zero() or t == 0:
            laws.append(([solve_onecut(W, beta, problem.M) for W in problem.Ws], 0))
        else:
            laws.append(self_consistent_system(problem.Ws, F.correction(t), beta, problem.M))
    # one grid interval per matrix, shared by all time nodes
    boxes = []
    for k in range(d):
        lo = min(m[k].a_end - 0.5 * (m[k].b_end - m[k].a_end) for m, _ in laws)
        hi = max(m[k].b_end + 0.5 * (m[k].b_end - m[k].a_end) for m, _ in laws)
        boxes.append((lo, hi))
    for t, (mus, its) in zip(nodes, laws):
        f1 = [F.first(k, mus) for k in range(d)]
        ops = []
        for k in range(d):
            fp = f1[k].partial(0)
            W = problem.Ws[k]
            wprime = (lambda x, W=W, fp=fp: W.d1(x) - t * np.asarray(fp(x))) if not fp.is_zero() else W.d1
            ops.append(MasterOperator(mus[k], wprime, beta, n_grid, *boxes[k]))
        K = _kernels(F, mus, d)

        # tier 0
        g0 = [_as_callable(f) for f in f1]
        y0, c0, _ = solve_coupled(ops, K, t, g0, tol=tol)
        worst["y0"] = max(worst["y0"], coupled_residual(ops, K, t, g0, y0, c0))

        # tier 2, one column y at a time
        z = [[None] * d for _ in range(d)]
        c2 = {}
        third_int = {}
        if not F.is_zero() and t != 0:
            for k, l in itertools.product(range(d), repeat=2):
                acc = Separable([], 2)
                for m in range(d):
                    f3 = F.third(k, l, m, mus).partial(2)
                    if f3.is_zero():
                        continue
                    wts = y0[m](ops[m]._y)
                    red = f3.integrate_slot(2, lambda p, m=m, wts=wts: _measure_integral(ops[m], p, wts))
                    acc.terms.extend(red.terms)
                third_int[(k, l)] = acc
        for l in range(d):
            ygrid = ops[l].nodes
            cols = [np.empty((n_grid, n_grid)) for _ in range(d)]
            consts = np.empty((d, n_grid))
            for j, yv in enumerate(ygrid):
                g2 = []
                for k in range(d):
                    f2 = F.second(k, l, mus) if not F.is_zero() else Separable([], 2)
                    f2x = f2.partial(0)
                    tri = third_int.get((k, l))

                    def g(x, k=k, f2=f2, f2x=f2x, tri=tri, yv=yv):
                        x = np.atleast_1d(np.asarray(x, dtype=float))
                        out = np.zeros(len(x))
                        if not f2.is_zero():
                            out = out + f2(x, yv)
                        if t != 0 and not f2x.is_zero():
                            out = out + 2 * t * f2x(x, yv) * y0[k](x)
                        if k == l:
                            out = out - 0.5 * beta * _divided_difference(y0[k], x, yv)
                        if tri is not None and not tri.is_zero():
                            out = out + 3 * t * tri(x, yv)
                        return out
                    g2.append(g)
                psis, cs, _ = solve_coupled(ops, K, t, g2, tol=tol)
                if j % 16 == 0:
                    worst["z"] = max(worst["z"], coupled_residual(ops, K, t, g2, psis, cs))
                for k in range(d):
                    cols[k][:, j] = psis[k].values
                    consts[k, j] = cs[k]
            for k in range(d):
                z[k][l] = GridFunction2D(ops[k].lo, ops[k].hi, ops[l].lo, ops[l].hi, cols[k])
                c2[f"{k}{l}"] = consts[k].tolist()

        # tier 1
        g1 = []
        for k in range(d):
            parts = []
            if F1 is not None and not F1.is_zero():
                fk1 = F1.first(k, mus)
                parts.append(_as_callable(fk1))
                dfk1 = fk1.partial(0)
                if t != 0 and not dfk1.is_zero():
                    parts.append(lambda x, dfk1=dfk1, k=k: -t * dfk1(x) * y0[k](x))
            if beta != 2:
                parts.append(lambda x, k=k: (beta / 2 - 1) * y0[k].deriv(x))
                for l in range(d):
                    yq, wq = ops[l]._y, ops[l]._wy
                    zkl = z[k][l]
                    parts.append(lambda x, zkl=zkl, yq=yq, wq=wq:
                                 (1 - beta / 2) * (zkl.outer(yq, x, dx=1).T @ wq))
            if F1 is not None and not F1.is_zero() and t != 0:
                for l in range(d):
                    dfl1 = F1.first(l, mus).partial(0)
                    yq, wq = ops[l]._y, ops[l]._wy
                    if not dfl1.is_zero():
                        w = wq * dfl1(yq)
                        zkl = z[k][l]
                        parts.append(lambda x, zkl=zkl, yq=yq, w=w: -t * (zkl.outer(yq, x).T @ w))
                    s = F1.second(k, l, mus).partial(1)
                    if not s.is_zero():
                        w = wq * y0[l](yq)
                        parts.append(lambda x, s=s, yq=yq, w=w:
                                     2 * t * (s(np.atleast_1d(x)[:, None], yq[None, :]) @ w))

            def g(x, parts=parts):
                x = np.atleast_1d(np.asarray(x, dtype=float))
                out = np.zeros(len(x))
                for p in parts:
                    out = out + np.asarray(p(x), dtype=float)
                return out
            g1.append(g)
        y1, c1, _ = solve_coupled(ops, K, t, g1, tol=tol)
        worst["y1"] = max(worst["y1"], coupled_residual(ops, K, t, g1, y1, c1))

        zbar = [[GridFunction(ops[k].lo, ops[k].hi,
                              z[k][l].outer(ops[k].nodes, ops[l]._y) @ ops[l]._wy)
                 for l in range(d)] for k in range(d)]
        data.append(NodeFields(float(t), mus, ops, y0, y1, z, zbar,
                               {"c0": c0, "c1": c1, "c2": c2, "self_consistent_its": its},
                               {}))
    fields = TransportFields(problem, nodes, data, {"residuals": worst})
    if max(worst.values()) > RESIDUAL_TOL:
        raise FlowError(f"defining-equation residual too large: {worst}")
    if fields.max_c1() > C1_CAP:
        raise FlowError("field C^1 norm exceeds the configured cap")
    return fields


def zero_fields(problem: TransportProblem, n_t: int = T_NODES, n_grid: int = N_GRID_FIELDS):
    """Fields of the non-interacting problem (all zero)."""
    return build_fields(TransportProblem(problem.Ws, problem.interaction.scaled(0.0), problem.beta,
                                         None, problem.M), n_t, n_grid)


# ----------------------------------------------------------------- flows


def _rk4(f, state, steps):
    h = 1.0 / steps
    t = 0.0
    for _ in range(steps):
        k1 = f(t, state)
        k2 = f(t + h / 2, [s + h / 2 * k for s, k in zip(state, k1)])
        k3 = f(t + h / 2, [s + h / 2 * k for s, k in zip(state, k2)])
        k4 = f(t + h, [s + h * k for s, k in zip(state, k3)])
        state = [s + h / 6 * (a + 2 * b + 2 * c + e) for s, a, b, c, e in zip(state, k1, k2, k3, k4)]
        t += h
    return state


def _check_inside(fields, X):
    for k in range(fields.d):
        lo, hi = fields.interval(k)
        if np.any(X[k] < lo) or np.any(X[k] > hi):
            raise FlowError(f"particle of matrix {k} left the grid interval [{lo:.4g}, {hi:.4g}]")


def particle_flow(fields, cfg: EigenConfig, order: int = 0, steps: int = FLOW_STEPS) -> EigenConfig:
    """Time-1 flow of the eigenvalues of cfg.  Order 0 moves each particle
    along y0; order 1 adds X_1/N from the linearised system with the
    empirical-measure terms summed exactly."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    lam = np.asarray(cfg.lambdas, dtype=float)
    d, N = lam.shape
    if d != fields.d:
        raise ValueError("configuration and fields disagree on d")
    _check_inside(fields, lam)

    def vel0(t, X):
        _check_inside(fields, X)
        return np.array([fields.y0(k, t, X[k]) for k in range(d)])

    if order == 0:
        (X0,) = _rk4(lambda t, s: [vel0(t, s[0])], [lam.copy()], steps)
        out = X0
    else:
        def vel(t, s):
            X0, X1 = s
            v0 = vel0(t, X0)
            v1 = np.empty_like(X1)
            for k in range(d):
                acc = fields.y0_prime(k, t, X0[k]) * X1[k] + fields.y1(k, t, X0[k])
                for l in range(d):
                    Z, dZ = fields.z_matrices(k, l, t, X0[k], X0[l])
                    acc = acc + Z.sum(axis=1) - N * fields.zbar(k, l, t, X0[k])
                    acc = acc + dZ @ X1[l] / N
                v1[k] = acc
            return [v0, v1]
        X0, X1 = _rk4(vel, [lam.copy(), np.zeros_like(lam)], steps)
        out = X0 + X1 / N
    if not np.all(np.isfinite(out)):
        raise FlowError("flow produced non-finite values")
    if np.any(np.diff(out, axis=1) < 0):
        raise FlowError("flow did not preserve the ordering")
    model = dict(cfg.model)
    model["transport_order"] = order
    return EigenConfig(out, cfg.beta, model, cfg.seed)


# ----------------------------------------------------------------- monotone maps


class MonotoneMap:
    """Strictly increasing map on [lo, hi] as a cubic Hermite interpolant,
    extended affinely outside with the endpoint slopes."""

    def __init__(self, nodes, values, derivs):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.derivs = np.asarray(derivs, dtype=float)
        if np.any(np.diff(self.nodes) <= 0) or np.any(np.diff(self.values) <= 0):
            raise ValueError("map is not strictly increasing")
        if np.min(self.derivs) <= 0:
            raise ValueError("map derivative must be positive")
        self._spline = CubicHermiteSpline(self.nodes, self.values, self.derivs)

    @property
    def lo(self):
        return self.nodes[0]

    @property
    def hi(self):
        return self.nodes[-1]

    @property
    def L(self) -> float:
        """Smallest L with e^{-L} <= T' <= e^{L} at the nodes."""
        return float(np.max(np.abs(np.log(self.derivs))))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = self._spline(np.clip(x, self.lo, self.hi))
        out = np.where(x < self.lo, self.values[0] + self.derivs[0] * (x - self.lo), inside)
        return np.where(x > self.hi, self.values[-1] + self.derivs[-1] * (x - self.hi), out)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        inside = self._spline(np.clip(x, self.lo, self.hi), 1)
        out = np.where(x < self.lo, self.derivs[0], inside)
        return np.where(x > self.hi, self.derivs[-1], out)

    def inverse(self) -> "MonotoneMap":
        return MonotoneMap(self.values, self.nodes, 1.0 / self.derivs)

    def then(self, other: "MonotoneMap") -> "MonotoneMap":
        """other o self."""
        return MonotoneMap(self.nodes, other(self.values), other.deriv(self.values) * self.derivs)

    def to_csv(self) -> str:
        rows = ["x,T,dT"] + [f"{x:.17g},{v:.17g},{dv:.17g}"
                             for x, v, dv in zip(self.nodes, self.values, self.derivs)]
        return "\n".join(rows) + "\n"


def identity_map(lo: float, hi: float, n: int = 3) -> MonotoneMap:
    x = np.linspace(lo, hi, n)
    return MonotoneMap(x, x, np.ones(n))


def _edge_slope(src, dst, side: str) -> float:
    # rho ~ d(edge) sqrt(L) sqrt(dist): T'^{3/2} = d_s sqrt(L_s) / (d_d sqrt(L_d))
    es, ed = (src.a_end, dst.a_end) if side == "left" else (src.b_end, dst.b_end)
    Ls, Ld = src.b_end - src.a_end, dst.b_end - dst.a_end
    ds, dd = float(src.d(es)), float(dst.d(ed))
    if ds <= 0 or dd <= 0:
        raise ValueError("density factor vanishes at an edge; edges are not square-root")
    return (ds * ds * Ls / (dd * dd * Ld)) ** (1.0 / 3.0)


def _inverse_cdf(mu, q):
    mass = mu.mass()
    if q <= 0:
        return mu.a_end
    if q >= 1:
        return mu.b_end
    return optimize.brentq(lambda x: float(mu.cdf(x)) / mass - q, mu.a_end, mu.b_end,
                           xtol=1e-15, rtol=4 * np.finfo(float).eps)


def monotone_map(src, dst, n: int = MAP_NODES, check: bool = True) -> MonotoneMap:
    """Monotone transport of src onto dst by quantile matching on a grid
    clustered at the edges of src."""
    th = np.pi * np.arange(n) / (n - 1)
    x = src.center - src.radius * np.cos(th)
    x[0], x[-1] = src.a_end, src.b_end
    mass = src.mass()
    q = np.asarray(src.cdf(x), dtype=float) / mass
    T = np.array([_inverse_cdf(dst, qi) for qi in q])
    T[0], T[-1] = dst.a_end, dst.b_end
    dT = np.empty(n)
    dT[0], dT[-1] = _edge_slope(src, dst, "left"), _edge_slope(src, dst, "right")
    inner = slice(1, n - 1)
    dT[inner] = src.density(x[inner]) / dst.density(T[inner]) * (dst.mass() / mass)
    if not np.all(np.isfinite(dT)) or np.min(dT) <= 0:
        raise ValueError("density ratio is not finite and positive")
    T = np.maximum.accumulate(T)
    m = MonotoneMap(x, T, dT)
    if check:
        qs = (np.arange(20) + 0.5) / 20
        err = np.max(np.abs(m(quantiles(src, qs)) - quantiles(dst, qs)))
        if err > PUSHFORWARD_TOL:
            raise ValueError(f"pushforward check failed: {err:.3g}")
    return m


def semicircle_measure():
    from .equilibrium import quadratic_potential
    return solve_onecut(quadratic_potential(0.5), 2)


def edge_scale(R: MonotoneMap, side: str = "left") -> float:
    """c = lim rho_sc(x) / rho_target(R(x)) at the chosen edge, which is the
    edge slope of R."""
    c = float(R.derivs[0] if side == "left" else R.derivs[-1])
    if not (np.isfinite(c) and c > 0):
        raise ValueError("edge scale must be finite and positive")
    return c


def leading_maps(reference, base, target) -> dict:
    """S: reference -> base, T: base -> target and R = T o S for one index."""
    S = monotone_map(reference, base)
    T = monotone_map(base, target)
    R = monotone_map(reference, target)
    return {"S": S, "T": T, "R": R, "c_left": edge_scale(R, "left"),
            "c_right": edge_scale(R, "right")}
