"""Master operator of a one-cut equilibrium measure and its inverse.

    Xi f(x) = -beta int (f(x)-f(y))/(x-y) dmu(y) + W_eff'(x) f(x)

On the support, stationarity of mu turns Xi f into beta times the finite
Hilbert transform of f*rho.  Writing f*d = sum e_n U_n(t) in Chebyshev
polynomials of the second kind (t the rescaled variable, rho = d*sqrt),

    Xi f = beta*pi*r * sum e_n T_{n+1}(t)    on [a, b],

so the inverse is a coefficient match: the T_0 coefficient of g fixes the
solvability constant c_g and the rest gives e.  Off the support Xi f is
algebraic in f(x), which gives the extension

    f(x) = (g(x) + c_g - beta * H[f rho](x)) / (W_eff'(x) - beta G(x)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import fft, special

from .equilibrium import EquilibriumMeasure, stieltjes

N_GRID = 128
EDGE_EXTRAP = 1e-4
DIVDIFF_SWITCH = 1e-5
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX = 500
CONTRACTION_CAP = 0.5
COND_LIMIT = 1e12


class ConditioningError(RuntimeError):
    pass


class ContractionError(RuntimeError):
    pass


def cheb_nodes(lo: float, hi: float, n: int) -> np.ndarray:
    """n Chebyshev points of the second kind on [lo, hi], ascending."""
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


class GridFunction:
    """Values at Chebyshev points of [lo, hi]; evaluation by the
    interpolating Chebyshev series."""

    def __init__(self, lo: float, hi: float, values):
        self.lo, self.hi = float(lo), float(hi)
        self.values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")
        self._coef = None
        self._dcoef = None

    @classmethod
    def from_callable(cls, f: Callable, lo: float, hi: float, n: int = N_GRID):
        return cls(lo, hi, f(cheb_nodes(lo, hi, n)))

    @property
    def n(self):
        return len(self.values)

    @property
    def nodes(self):
        return cheb_nodes(self.lo, self.hi, self.n)

    def _t(self, x):
        return (2 * np.asarray(x, dtype=float) - self.lo - self.hi) / (self.hi - self.lo)

    @property
    def coef(self):
        if self._coef is None:
            # DCT-I maps values at -cos(pi j/(n-1)) to Chebyshev coefficients
            v = self.values[::-1]
            c = fft.dct(v, type=1) / (self.n - 1)
            c[0] /= 2
            c[-1] /= 2
            self._coef = c
        return self._coef

    def __call__(self, x):
        return C.chebval(self._t(x), self.coef)

    def deriv(self, x, m: int = 1):
        if self._dcoef is None:
            self._dcoef = {}
        if m not in self._dcoef:
            self._dcoef[m] = C.chebder(self.coef, m) * (2 / (self.hi - self.lo)) ** m
        return C.chebval(self._t(x), self._dcoef[m])

    def derivative(self, m: int = 1) -> "GridFunction":
        return GridFunction(self.lo, self.hi, self.deriv(self.nodes, m))

    def norm(self, s: int = 0) -> float:
        """C^s norm sampled on the grid."""
        x = self.nodes
        return float(sum(np.max(np.abs(self.deriv(x, k) if k else self.values))
                         for k in range(s + 1)))

    def __add__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.lo, self.hi, self.values + other(self.nodes))
        return GridFunction(self.lo, self.hi, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.lo, self.hi, self.values - other(self.nodes))
        return GridFunction(self.lo, self.hi, self.values - other)

    def __mul__(self, s):
        return GridFunction(self.lo, self.hi, self.values * s)

    __rmul__ = __mul__

    def tail(self) -> float:
        c = np.abs(self.coef)
        return float(np.max(c[-4:]) / max(np.max(c), 1e-300))

    def to_csv(self) -> str:
        rows = ["x,value"] + [f"{x:.17g},{v:.17g}" for x, v in zip(self.nodes, self.values)]
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "values": [float(v) for v in self.values]}


def _dct_coef(v, axis):
    v = np.flip(v, axis=axis)
    c = fft.dct(v, type=1, axis=axis) / (v.shape[axis] - 1)
    idx = [slice(None)] * v.ndim
    idx[axis] = 0
    c[tuple(idx)] /= 2
    idx[axis] = -1
    c[tuple(idx)] /= 2
    return c


class GridFunction2D:
    """f(x, y) sampled on the tensor grid of Chebyshev points of
    [xlo, xhi] x [ylo, yhi]; values[i, j] = f(x_i, y_j)."""

    def __init__(self, xlo, xhi, ylo, yhi, values):
        self.xlo, self.xhi, self.ylo, self.yhi = map(float, (xlo, xhi, ylo, yhi))
        self.values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")
        self.coef = _dct_coef(_dct_coef(self.values, 0), 1)
        self._der = {}

    def _c(self, dx, dy):
        key = (dx, dy)
        if key not in self._der:
            c = self.coef
            if dx:
                c = C.chebder(c, dx, axis=0) * (2 / (self.xhi - self.xlo)) ** dx
            if dy:
                c = C.chebder(c, dy, axis=1) * (2 / (self.yhi - self.ylo)) ** dy
            self._der[key] = c
        return self._der[key]

    def outer(self, x, y, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Matrix [f(x_i, y_j)] (or its partial derivatives)."""
        c = self._c(dx, dy)
        tx = (2 * np.atleast_1d(np.asarray(x, dtype=float)) - self.xlo - self.xhi) / (self.xhi - self.xlo)
        ty = (2 * np.atleast_1d(np.asarray(y, dtype=float)) - self.ylo - self.yhi) / (self.yhi - self.ylo)
        Tx = C.chebvander(tx, c.shape[0] - 1)
        Ty = C.chebvander(ty, c.shape[1] - 1)
        return Tx @ c @ Ty.T

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return C.chebval2d((2 * x - self.xlo - self.xhi) / (self.xhi - self.xlo),
                           (2 * y - self.ylo - self.yhi) / (self.yhi - self.ylo), self.coef)

    def to_dict(self) -> dict:
        return {"x": [self.xlo, self.xhi], "y": [self.ylo, self.yhi],
                "values": self.values.tolist()}


def _gauss_cheb2(n):
    """Nodes s_j and weights w_j with sum w_j h(s_j) ~ int_{-1}^1 h(s) sqrt(1-s^2) ds."""
    j = np.arange(1, n + 1)
    th = j * np.pi / (n + 1)
    return np.cos(th), np.pi / (n + 1) * np.sin(th) ** 2


@dataclass
class MasterOperator:
    mu: EquilibriumMeasure
    W_eff_prime: Callable
    beta: int = 2
    n_grid: int = N_GRID
    lo: float = field(default=None)
    hi: float = field(default=None)

    def __post_init__(self):
        L = self.mu.b_end - self.mu.a_end
        if self.lo is None:
            self.lo = self.mu.a_end - 0.5 * L
        if self.hi is None:
            self.hi = self.mu.b_end + 0.5 * L
        if not (self.lo < self.mu.a_end < self.mu.b_end < self.hi):
            raise ValueError("equilibrium support must lie inside the grid interval")
        nq = 2 * self.n_grid
        s, w = _gauss_cheb2(nq)
        r = self.mu.radius
        self._y = self.mu.center + r * s
        self._wy = w * r ** 2 * self.mu.d(self._y)  # weights of dmu
        self._nsup = self.n_grid

    @classmethod
    def from_measure(cls, mu: EquilibriumMeasure, n_grid: int = N_GRID):
        if mu.potential is None:
            raise ValueError("measure carries no potential")
        return cls(mu, mu.potential.d1, mu.beta, n_grid)

    @property
    def nodes(self):
        return cheb_nodes(self.lo, self.hi, self.n_grid)

    def grid(self, f: Callable) -> GridFunction:
        return GridFunction.from_callable(f, self.lo, self.hi, self.n_grid)

    def integrate(self, h: Callable) -> float:
        """int h dmu."""
        return float(np.sum(self._wy * h(self._y)))

    # --- forward
    def apply_at(self, f: Callable, x, fprime: Callable | None = None) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fx, fy = f(x), f(self._y)
        diff = x[:, None] - self._y[None, :]
        close = np.abs(diff) < DIVDIFF_SWITCH
        safe = np.where(close, 1.0, diff)
        q = (fx[:, None] - fy[None, :]) / safe
        if np.any(close):
            mid = 0.5 * (x[:, None] + self._y[None, :])
            if fprime is None:
                raise ValueError("derivative needed for coincident points")
            q = np.where(close, fprime(mid), q)
        integral = q @ self._wy
        return -self.beta * integral + np.asarray(self.W_eff_prime(x), dtype=float) * fx

    def hilbert_weighted(self, f: Callable, x) -> np.ndarray:
        """PV int f(y) rho(y)/(x-y) dy through the second-kind expansion."""
        e = self._fd_coefficients(f)
        return self._hilbert_from_e(e, x)

    def _fd_coefficients(self, f: Callable) -> np.ndarray:
        """U-coefficients of f*d on the support."""
        mu = self.mu
        n = self._nsup
        s, w = _gauss_cheb2(n)
        y = mu.center + mu.radius * s
        vals = f(y) * mu.d(y)
        # orthogonality: int U_m U_n sqrt(1-s^2) = pi/2 delta
        U = np.empty((n, n))
        U[0] = 1.0
        if n > 1:
            U[1] = 2 * s
        for k in range(2, n):
            U[k] = 2 * s * U[k - 1] - U[k - 2]
        return (U * w) @ vals * (2 / np.pi)

    def _hilbert_from_e(self, e, x):
        mu = self.mu
        t = (np.atleast_1d(np.asarray(x, dtype=float)) - mu.center) / mu.radius
        out = np.empty(len(t))
        inside = np.abs(t) <= 1
        out[inside] = C.chebval(t[inside], np.concatenate([[0.0], e]))
        tt = t[~inside].astype(complex)
        w = 1.0 / (tt + np.sqrt(tt - 1) * np.sqrt(tt + 1))
        acc = np.zeros_like(w)
        p = w.copy()
        for en in e:
            acc += en * p
            p *= w
        out[~inside] = acc.real
        return np.pi * mu.radius * out

    def apply(self, f: GridFunction) -> GridFunction:
        x = self.nodes
        return GridFunction(self.lo, self.hi, self.apply_at(f, x, f.deriv))

    # --- inverse
    def invert(self, g) -> tuple:
        """(Psi, c_g) with Xi Psi = g + c_g; g a GridFunction or callable."""
        mu = self.mu
        r, beta = mu.radius, self.beta
        n = self._nsup
        # Chebyshev-T expansion of g on the support
        t1 = C.chebpts1(n)
        gam = C.chebfit(t1, g(mu.center + r * t1), n - 1)
        c_g = -gam[0]
        e = gam[1:] / (beta * np.pi * r)
        dmin = float(np.min(mu.d(mu.center + r * C.chebpts2(257))))
        dmax = float(np.max(np.abs(mu.dcoef))) * 2
        if dmin <= 0 or dmax / dmin > COND_LIMIT:
            raise ConditioningError("density factor too close to zero for a stable inverse")
        x = self.nodes
        vals = self._psi_values(e, c_g, g, x)
        return GridFunction(self.lo, self.hi, vals), float(c_g)

    def _psi_values(self, e, c_g, g, x):
        mu = self.mu
        t = (x - mu.center) / mu.radius
        out = np.empty(len(x))
        near = np.abs(t) <= 1 + EDGE_EXTRAP
        tn = t[near]
        U = np.zeros((len(e), len(tn)))
        if len(e):
            U[0] = 1.0
        if len(e) > 1:
            U[1] = 2 * tn
        for k in range(2, len(e)):
            U[k] = 2 * tn * U[k - 1] - U[k - 2]
        out[near] = (e @ U) / C.chebval(tn, mu.dcoef)
        far = ~near
        if np.any(far):
            xf = x[far]
            H = self._hilbert_from_e(e, xf)
            G = np.real(stieltjes(mu, xf.astype(complex)))
            denom = np.asarray(self.W_eff_prime(xf), dtype=float) - self.beta * G
            out[far] = (g(xf) + c_g - self.beta * H) / denom
        return out


def apply_xi(op: MasterOperator, f: GridFunction) -> GridFunction:
    return op.apply(f)


def invert_xi(op: MasterOperator, g) -> tuple:
    return op.invert(g)


def stability_constant(op: MasterOperator, family: Sequence[Callable]) -> float:
    """max over the family of ||Psi||_{C^1} / ||g||_{C^3} on the grid."""
    best = 0.0
    for g in family:
        gg = op.grid(g)
        psi, _ = op.invert(gg)
        best = max(best, psi.norm(1) / max(gg.norm(3), 1e-300))
    return best


def solve_coupled(ops: Sequence[MasterOperator], kernels, t: float, g: Sequence,
                  tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAX):
    """Fixed point for Xi_k Psi_k - 2t sum_l int Psi_l(y) K_kl(y, .) dmu_l(y) = g_k + c_k.

    kernels[k][l] is a vectorised callable K(y, x) (the x-derivative of the
    pair interaction in its first slot) or None.  Returns (Psi list,
    constants, info) where info holds the iteration count, successive C^1
    changes and the measured contraction ratio.
    """
    d = len(ops)
    coupled = t != 0 and any(kernels[k][l] is not None for k in range(d) for l in range(d))
    psis, cs = [], []
    for k in range(d):
        p, c = ops[k].invert(g[k])
        psis.append(p)
        cs.append(c)
    info = {"iterations": 0, "changes": [], "ratio": 0.0}
    if not coupled:
        return psis, cs, info
    # quadrature data reused across iterations
    for it in range(1, max_iter + 1):
        new_psis, new_cs = [], []
        for k in range(d):
            extra = _coupling_term(ops, kernels, k, psis, t)
            rhs = lambda x, k=k, extra=extra: np.asarray(g[k](x)) + extra(x)
            p, c = ops[k].invert(rhs)
            new_psis.append(p)
            new_cs.append(c)
        change = max((new_psis[k] - psis[k]).norm(1) for k in range(d))
        info["changes"].append(change)
        psis, cs = new_psis, new_cs
        info["iterations"] = it
        if len(info["changes"]) >= 2 and info["changes"][-2] > 0:
            ratio = info["changes"][-1] / info["changes"][-2]
            info["ratio"] = max(info["ratio"], ratio) if it <= 4 else info["ratio"]
            if it == 3 and ratio >= CONTRACTION_CAP:
                raise ContractionError(f"measured contraction ratio {ratio:.3g} >= {CONTRACTION_CAP}")
        if change < tol:
            return psis, cs, info
    raise ContractionError(f"fixed point not reached in {max_iter} iterations")


def _coupling_term(ops, kernels, k, psis, t):
    terms = []
    for l in range(len(ops)):
        K = kernels[k][l]
        if K is None:
            continue
        y, wy = ops[l]._y, ops[l]._wy
        weights = wy * psis[l](y)
        terms.append((K, y, weights))

    def extra(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        acc = np.zeros(len(x))
        for K, y, weights in terms:
            acc += K(y[None, :], x[:, None]) @ weights
        return 2 * t * acc

    return extra


def coupled_residual(ops, kernels, t, g, psis, cs, n_check: int = 64) -> float:
    """Residual of the coupled equation evaluated with a Gauss-Jacobi rule
    of a different size than the solver's quadrature."""
    worst = 0.0
    xg, wg = special.roots_jacobi(301, 0.5, 0.5)
    for k, op in enumerate(ops):
        x = op.nodes
        lhs = op.apply_at(psis[k], x, psis[k].deriv)
        for l, opl in enumerate(ops):
            K = kernels[k][l]
            if K is None or t == 0:
                continue
            mu = opl.mu
            y = mu.center + mu.radius * xg
            w = wg * mu.radius ** 2 * mu.d(y) * psis[l](y)
            lhs -= 2 * t * (K(y[None, :], x[:, None]) @ w)
        res = lhs - np.asarray(g[k](x)) - cs[k]
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def dump_fields(psis: Sequence[GridFunction]) -> str:
    return json.dumps([p.to_dict() for p in psis])
