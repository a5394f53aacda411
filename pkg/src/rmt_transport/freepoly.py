"""Limiting spectral law of Y = X_i + eps P(X_1..X_d) for free semicircular
X_j and P of degree <= 2, by linearization.

p = c + sum_j alpha_j X_j + sum_jk B_jk X_j X_k (B symmetric) is the Schur
complement a - u^T Q^{-1} u of a (1+2d)-square pencil L = A0 + sum_j A_j X_j,
so 1/(z - p) is the (0,0) entry of E[(Lambda_z - L)^{-1}] with
Lambda_z = diag(z, 0, .., 0).  That expectation solves the matrix Dyson
equation

    G = (Lambda - A0 - sum_j A_j G A_j)^{-1},

handled by Newton's method with the exact Jacobian
I - sum_j (A_j G)^T (x) (G A_j).  The edges are the ends of the real
solution branch off the support.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

from . import ncalg as nc
from .equilibrium import EquilibriumMeasure

NEWTON_TOL = 1e-13
NEWTON_MAX = 60
EDGE_TOL = 1e-11
DENSITY_DEGREE = 96


class LinearizationError(ValueError):
    pass


def quadratic_coefficients(P: nc.NCPoly, d: int):
    """(c, alpha, B) of a self-adjoint polynomial of degree <= 2 in x_1..x_d."""
    c, alpha, B = 0.0, np.zeros(d), np.zeros((d, d))
    for w, coef in P.terms.items():
        if abs(np.imag(coef)) > 1e-14:
            raise LinearizationError("complex coefficients are not supported")
        coef = float(np.real(coef))
        xs = [x - nc.A_BASE - 1 for x in w if not nc.is_u(x)]
        if any(x >= nc.B_BASE - nc.A_BASE - 1 for x in xs):
            raise LinearizationError("fixed matrices b_j are not supported")
        if len(xs) == 0:
            c += coef
        elif len(xs) == 1:
            alpha[xs[0]] += coef
        elif len(xs) == 2:
            B[xs[0], xs[1]] += coef
        else:
            raise LinearizationError("only polynomials of degree <= 2 are supported")
    if not np.allclose(B, B.T, atol=1e-14):
        raise LinearizationError("quadratic part is not self-adjoint")
    return c, alpha, B


def pencil(c: float, alpha, B):
    """A0, [A_1..A_d] with p = Schur complement of A0 + sum A_j X_j."""
    alpha = np.asarray(alpha, dtype=float)
    B = np.asarray(B, dtype=float)
    d = len(alpha)
    n = 1 + 2 * d
    A0 = np.zeros((n, n))
    A0[0, 0] = c
    A = [np.zeros((n, n)) for _ in range(d)]
    for j in range(d):
        b, cc = 1 + 2 * j, 2 + 2 * j
        A0[b, cc] = A0[cc, b] = -1.0
        A[j][0, 0] = alpha[j]
        # term X_j Y_j/2 + Y_j X_j/2 with Y_j = sum_k B_jk X_k
        A[j][0, b] = A[j][b, 0] = 1.0
        for k in range(d):
            A[k][0, cc] += 0.5 * B[j, k]
            A[k][cc, 0] += 0.5 * B[j, k]
    return A0, A


class MatrixDyson:
    def __init__(self, A0, A):
        self.A0 = np.asarray(A0, dtype=float)
        self.A = [np.asarray(a, dtype=float) for a in A]
        self.n = self.A0.shape[0]

    def _lam(self, z, delta=0.0):
        L = np.diag(np.full(self.n, 1j * delta)).astype(complex)
        L[0, 0] = z
        return L

    def eta(self, G):
        return sum(a @ G @ a for a in self.A)

    def residual(self, G, Lam):
        return G - np.linalg.inv(Lam - self.A0 - self.eta(G))

    def jacobian(self, G):
        n = self.n
        J = np.eye(n * n, dtype=complex)
        for a in self.A:
            # vec(G a H a G) = ((a G)^T kron (G a)) vec(H), column-major vec
            J -= np.kron((a @ G).T, G @ a)
        return J

    def newton(self, G, Lam, tol=NEWTON_TOL, max_iter=NEWTON_MAX):
        n = self.n
        for _ in range(max_iter):
            F = self.residual(G, Lam)
            err = np.max(np.abs(F))
            if err < tol:
                return G, True
            J = self.jacobian(G)
            try:
                step = np.linalg.solve(J, F.reshape(-1, order="F"))
            except np.linalg.LinAlgError:
                return G, False
            G = G - step.reshape((n, n), order="F")
            if not np.all(np.isfinite(G)):
                return G, False
        return G, np.max(np.abs(self.residual(G, Lam))) < 1e3 * tol

    def solve(self, z, G0=None, delta=1e-14):
        """G at spectral parameter z, by continuation from Im z = 1."""
        Lam_far = self._lam(z.real + 1j * max(1.0, abs(z.imag)), 1.0)
        G = np.linalg.inv(Lam_far - self.A0) if G0 is None else G0
        for _ in range(500):
            Gn = np.linalg.inv(Lam_far - self.A0 - self.eta(G))
            if np.max(np.abs(Gn - G)) < 1e-14:
                break
            G = 0.5 * (G + Gn)
        im = max(1.0, abs(z.imag))
        dl = 1.0
        while True:
            im_next, dl_next = max(im / 4, z.imag), max(dl / 4, delta)
            G_try, ok = self.newton(G, self._lam(z.real + 1j * im_next, dl_next))
            if not ok:
                raise LinearizationError(f"continuation failed at z = {z}")
            G, im, dl = G_try, im_next, dl_next
            if im == z.imag and dl == delta:
                return G

    def stieltjes(self, z) -> complex:
        return complex(self.solve(complex(z))[0, 0])

    def density(self, x, eta=1e-13) -> float:
        return max(0.0, -self.solve(complex(x, eta))[0, 0].imag / np.pi)

    def _real_branch(self, x, G):
        Lam = self._lam(x, 0.0)
        G, ok = self.newton(G.astype(complex), Lam)
        ok = ok and np.max(np.abs(G.imag)) < 1e-9
        return G, ok

    def edge(self, side: str, start: float, guess_in: float) -> float:
        """End of the real branch coming from `start` (outside the support)
        towards `guess_in` (inside)."""
        G = self.solve(complex(start, 1e-15)).real
        out, inn = start, guess_in
        # march until the branch is lost, then bisect
        xs = np.linspace(start, guess_in, 200)
        for x in xs[1:]:
            Gn, ok = self._real_branch(x, G)
            if not ok:
                inn = x
                break
            G, out = Gn.real, x
        else:
            raise LinearizationError("no edge between the given points")
        while abs(inn - out) > EDGE_TOL:
            mid = 0.5 * (out + inn)
            Gn, ok = self._real_branch(mid, G)
            if ok and np.max(np.abs(Gn - G)) < 1e-2 + 10 * np.sqrt(abs(mid - out)):
                G, out = Gn.real, mid
            else:
                inn = mid
        return out


def polynomial_law(P: nc.NCPoly, i: int, eps: float, d: int, degree: int = DENSITY_DEGREE):
    """One-cut measure of Y_i = X_i + eps P as an EquilibriumMeasure
    (density d(x) sqrt((x-a)(b-x)) with d fitted in Chebyshev form)."""
    c, alpha, B = quadratic_coefficients(P, d)
    c, alpha, B = eps * c, eps * alpha, eps * B
    alpha = alpha.copy()
    alpha[i] += 1.0
    md = MatrixDyson(*pencil(c, alpha, B))
    spread = 2.0 * (np.sum(np.abs(alpha)) + 2 * np.sum(np.abs(B))) + abs(c) + 1.0
    a = md.edge("left", -spread, c)
    b = md.edge("right", spread, c)
    centre, r = 0.5 * (a + b), 0.5 * (b - a)
    t = C.chebpts1(degree)
    x = centre + r * t
    rho = np.array([md.density(xi) for xi in x])
    dvals = rho / (r * np.sqrt(1 - t * t))
    dcoef = C.chebfit(t, dvals, degree - 1)
    mu = EquilibriumMeasure(a, b, dcoef, 2, None)
    return mu, md
