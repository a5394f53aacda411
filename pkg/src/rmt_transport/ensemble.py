"""Eigenvalue configurations: Gaussian ensembles, polynomial perturbations
Y_i = X_i + eps P_i(X), exactly solvable quadratic couplings and a
Metropolis sampler for the interacting matrix law."""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ncalg as nc
from .ncalg import NCPoly, A_BASE, B_BASE

HERMITIAN_TOL = 1e-10
MCMC_MAX_N = 128
ACCEPT_TARGET = 0.3
ACCEPT_RANGE = (0.05, 0.8)


class SamplerWarning(UserWarning):
    pass


@dataclass
class EigenConfig:
    lambdas: np.ndarray
    beta: int
    model: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambdas, dtype=float))
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(np.diff(lam, axis=1) < 0):
            raise ValueError("each row must be sorted ascending")
        self.lambdas = lam

    @property
    def d(self):
        return self.lambdas.shape[0]

    @property
    def N(self):
        return self.lambdas.shape[1]

    def linear_statistic(self, k: int, f) -> float:
        """Tr f(X_k) = sum_i f(lambda_i^k)."""
        return float(np.sum(f(self.lambdas[k])))

    def centered_statistic(self, k: int, f, mu) -> float:
        """M^N_k[f] = sum_i f(lambda_i) - N int f dmu."""
        xs, ws = np.polynomial.legendre.leggauss(200)
        y = mu.center + mu.radius * xs
        mean = float(np.sum(ws * mu.radius * mu.density(y) * f(y)))
        return self.linear_statistic(k, f) - self.N * mean

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.lambdas, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    def sidecar(self, extra: dict | None = None) -> str:
        out = {"beta": self.beta, "d": self.d, "N": self.N, "model": self.model, "seed": self.seed}
        out.update(extra or {})
        return json.dumps(out, sort_keys=True, default=str)

    @classmethod
    def from_csv(cls, text: str, beta: int, model=None, seed=None):
        lam = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2)
        return cls(lam, beta, model or {}, seed)


def save_configs(configs, path_csv, path_json=None, extra=None):
    """All configurations stacked: row block c*d..(c+1)*d-1 is config c."""
    with open(path_csv, "w") as fh:
        for cfg in configs:
            fh.write(cfg.to_csv())
    if path_json is not None:
        meta = {"count": len(configs),
                "configs": [json.loads(c.sidecar()) for c in configs]}
        meta.update(extra or {})
        with open(path_json, "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1, default=str)


def load_configs(path_csv, d: int, beta: int) -> list:
    lam = np.loadtxt(path_csv, delimiter=",", ndmin=2)
    return [EigenConfig(lam[i:i + d], beta) for i in range(0, lam.shape[0], d)]


# ----------------------------------------------------------------- specs


@dataclass
class ModelSpec:
    """d matrices of size N.  W: list of monomial-coefficient lists (one per
    matrix).  Exactly one of: V with a (interacting law), P with eps
    (polynomial perturbations), or neither (pure Gaussian)."""
    d: int
    N: int
    beta: int = 2
    W: list | None = None
    V: NCPoly | None = None
    a: float = 0.0
    P: list | None = None
    eps: float = 0.0
    B: list = field(default_factory=list)
    M: float = 10.0

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError("beta must be 1 or 2")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.V is not None and self.P is not None:
            raise ValueError("give either V or P, not both")
        if self.W is None:
            self.W = [[0.0, 0.0, 0.25 * self.beta]] * self.d
        if self.V is not None and not nc.is_self_adjoint(self.V):
            raise ValueError("V must be self-adjoint")
        if self.P is not None:
            if len(self.P) != self.d:
                raise ValueError("one perturbation polynomial per matrix")
            for p in self.P:
                if not nc.is_self_adjoint(p):
                    raise ValueError("perturbation polynomials must be self-adjoint")
        for Bj in self.B:
            Bj = np.asarray(Bj)
            if Bj.shape != (self.N, self.N) or not np.allclose(Bj, Bj.conj().T, atol=HERMITIAN_TOL):
                raise ValueError("B matrices must be N x N self-adjoint")
            if np.max(np.abs(np.linalg.eigvalsh(Bj))) > 1 + 1e-12:
                raise ValueError("B matrices must have spectral radius <= 1")

    def descriptor(self) -> dict:
        out = {"d": self.d, "N": self.N, "beta": self.beta, "W": self.W}
        if self.V is not None:
            out.update(V=self.V.to_text(), a=self.a, rank=self.V.rank)
        if self.P is not None:
            out.update(P=[p.to_text() for p in self.P], eps=self.eps)
        if self.B:
            out["m"] = len(self.B)
        return out


def equispaced_b(N: int) -> np.ndarray:
    """Diagonal matrix with spectrum equispaced in [-1, 1]."""
    return np.diag(np.linspace(-1.0, 1.0, N))


# ----------------------------------------------------------------- Gaussian


def gve_matrix(N: int, beta: int, rng: np.random.Generator) -> np.ndarray:
    """GUE (beta=2) or GOE (beta=1) with off-diagonal variance 1/N."""
    if beta == 2:
        G = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        return (G + G.conj().T) / (2 * np.sqrt(N))
    if beta == 1:
        G = rng.standard_normal((N, N))
        return (G + G.T) / np.sqrt(2 * N)
    raise ValueError("beta must be 1 or 2")


def _streams(seed: int, count: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def sample_gve(N: int, beta: int, count: int, seed: int, d: int = 1) -> list:
    if N < 2:
        raise ValueError("N must be at least 2")
    out = []
    for i, rng in enumerate(_streams(seed, count)):
        lam = [np.linalg.eigvalsh(gve_matrix(N, beta, rng)) for _ in range(d)]
        out.append(EigenConfig(np.array(lam), beta, {"model": "gve", "N": N}, seed))
    return out


def sample_gaussian_coupled(N: int, beta: int, Q, a: float, count: int, seed: int,
                            w=None) -> list:
    """Exact sampler for exp(N a sum Q_ij Tr X_i X_j - N sum_k (w_k/2) Tr X_k^2).

    Q symmetric d x d; the default w_k = beta/2 makes a = 0 the GVE.  The
    law is Gaussian and is obtained by mixing independent GVE matrices."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    w = np.full(d, beta / 2) if w is None else np.asarray(w, dtype=float)
    prec = (2.0 / beta) * (np.diag(w) - 2 * a * Q)
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise ValueError("coupled Gaussian law is not normalisable") from exc
    mix = np.linalg.inv(L.T)
    out = []
    for rng in _streams(seed, count):
        Y = [gve_matrix(N, beta, rng) for _ in range(d)]
        lam = []
        mats = []
        for k in range(d):
            Xk = sum(mix[k, i] * Y[i] for i in range(d))
            mats.append(Xk)
            lam.append(np.linalg.eigvalsh(Xk))
        cfg = EigenConfig(np.array(lam), beta, {"model": "gaussian-coupled", "a": a}, seed)
        cfg.matrices = mats
        out.append(cfg)
    return out


def covariance_coupled(beta: int, Q, a: float, w=None) -> np.ndarray:
    """Entry covariance between X_i and X_j in units of the GVE variance."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    w = np.full(d, beta / 2) if w is None else np.asarray(w, dtype=float)
    return np.linalg.inv((2.0 / beta) * (np.diag(w) - 2 * a * Q))


# ----------------------------------------------------------------- polynomials


def _x_letters(w: tuple):
    # drop unitary letters: with U_i = 1 the word u_i a_i u_i* is x_i
    return tuple(x for x in w if not nc.is_u(x))


def evaluate_x_poly(p: NCPoly, X: list, B: list | None = None) -> np.ndarray:
    """Matrix value of a polynomial in x_i and b_j, sharing prefixes of words
    (Horner over the prefix tree)."""
    B = B or []
    N = X[0].shape[0]
    mats = {A_BASE + i + 1: Xi for i, Xi in enumerate(X)}
    mats.update({B_BASE + j + 1: Bj for j, Bj in enumerate(B)})
    tree: dict = {}
    const = 0.0
    for w, c in p.terms.items():
        letters = _x_letters(w)
        if not letters:
            const += c
            continue
        node = tree
        for x in letters[:-1]:
            node = node.setdefault(x, {}).setdefault("", {})
        leaf = node.setdefault(letters[-1], {})
        leaf["c"] = leaf.get("c", 0.0) + c

    def walk(node):
        # returns sum over words below node of coefficient * product
        acc = None
        for x, sub in node.items():
            part = None
            if "c" in sub:
                part = sub["c"] * mats[x]
            if "" in sub:
                rest = walk(sub[""])
                if rest is not None:
                    r = mats[x] @ rest
                    part = r if part is None else part + r
            if part is not None:
                acc = part if acc is None else acc + part
        return acc

    out = walk(tree)
    dtype = complex if any(np.iscomplexobj(m) for m in mats.values()) or \
        any(isinstance(c, complex) and c.imag for c in p.terms.values()) else float
    res = np.zeros((N, N), dtype=dtype) if out is None else np.asarray(out, dtype=dtype)
    return res + const * np.eye(N)


def sample_polynomial_model(spec: ModelSpec, count: int, seed: int, eps_bound: float = 0.25) -> list:
    """Eigenvalues of Y_i = X_i + eps P_i(X_1..X_d, B) with independent GVE X_i."""
    if spec.P is None:
        raise ValueError("model spec carries no perturbation polynomials")
    if abs(spec.eps) > eps_bound:
        raise ValueError(f"|eps| exceeds the configured bound {eps_bound}")
    out = []
    for rng in _streams(seed, count):
        X = [gve_matrix(spec.N, spec.beta, rng) for _ in range(spec.d)]
        lam = []
        for i in range(spec.d):
            if spec.eps == 0:
                Y = X[i]
            else:
                Pi = evaluate_x_poly(spec.P[i], X, spec.B)
                if np.max(np.abs(Pi - Pi.conj().T)) > HERMITIAN_TOL * max(1.0, np.max(np.abs(Pi))):
                    raise ValueError(f"P_{i + 1} evaluated to a non-self-adjoint matrix")
                Y = X[i] + spec.eps * Pi
                Y = 0.5 * (Y + Y.conj().T)
            lam.append(np.linalg.eigvalsh(Y))
        out.append(EigenConfig(np.array(lam), spec.beta, {"model": "polynomial", "eps": spec.eps}, seed))
    return out


# ----------------------------------------------------------------- MCMC


def _trace_W(coeffs, lam):
    return float(np.sum(np.polynomial.polynomial.polyval(lam, coeffs)))


def _trace_V(V: NCPoly, X, B):
    if V.rank == 1:
        return float(np.real(np.trace(evaluate_x_poly(V, X, B))))
    N = X[0].shape[0]
    tot = 0.0
    for (w1, w2), c in V.terms.items():
        t1 = np.trace(evaluate_x_poly(NCPoly({w1: 1.0}, V.d, V.m), X, B))
        t2 = np.trace(evaluate_x_poly(NCPoly({w2: 1.0}, V.d, V.m), X, B))
        tot += np.real(c * t1 * t2)
    return tot / N  # N^{2-r} Tr^{(x) r} with r = 2


class MCMCChain:
    """Metropolis chain for exp(N a Tr V - N sum Tr W_k) 1_{|X_k| <= M}.

    proposal='pcn' uses X' = sqrt(1-s^2) X + s G with G a fresh GVE matrix
    (reversible for the Gaussian reference, so only the non-Gaussian part
    enters the acceptance ratio); proposal='rw' adds (s/sqrt N) times a
    Gaussian matrix.  s is adapted by Robbins-Monro during burn-in."""

    def __init__(self, spec: ModelSpec, seed: int, s: float = 0.3, proposal: str = "pcn"):
        if spec.V is None:
            raise ValueError("model spec carries no interaction V")
        if spec.V.rank not in (1, 2):
            raise ValueError("V must have tensor rank 1 or 2")
        if spec.N > MCMC_MAX_N:
            raise ValueError(f"N = {spec.N} exceeds the sampler cost guard {MCMC_MAX_N}")
        if proposal not in ("pcn", "rw"):
            raise ValueError("proposal must be 'pcn' or 'rw'")
        self.spec, self.seed, self.s, self.proposal = spec, seed, s, proposal
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.X = [gve_matrix(spec.N, spec.beta, self.rng) for _ in range(spec.d)]
        self.logp = self.log_density(self.X)
        self.accepted = 0
        self.proposed = 0

    def log_density(self, X) -> float:
        spec = self.spec
        N = spec.N
        tot = 0.0
        for k, Xk in enumerate(X):
            lam = np.linalg.eigvalsh(Xk)
            if np.max(np.abs(lam)) > spec.M:
                return -np.inf
            tot -= N * _trace_W(spec.W[k], lam)
        if spec.a:
            tot += N * spec.a * _trace_V(spec.V, X, spec.B)
        if np.isnan(tot):
            raise FloatingPointError("non-finite log-density")
        return tot

    def _reference(self, X) -> float:
        # log density of the GVE reference, exp(-(N beta / 4) Tr X^2)
        N, beta = self.spec.N, self.spec.beta
        return -0.25 * N * beta * sum(float(np.real(np.sum(Xk * Xk.conj()))) for Xk in X)

    def step(self) -> bool:
        spec = self.spec
        if self.proposal == "pcn":
            rho = np.sqrt(max(0.0, 1 - self.s ** 2))
            Xn = [rho * Xk + self.s * gve_matrix(spec.N, spec.beta, self.rng) for Xk in self.X]
        else:
            Xn = [Xk + self.s * gve_matrix(spec.N, spec.beta, self.rng) for Xk in self.X]
        lp = self.log_density(Xn)
        if self.proposal == "pcn":
            ratio = (lp - self._reference(Xn)) - (self.logp - self._reference(self.X))
        else:
            ratio = lp - self.logp
        self.proposed += 1
        if np.log(self.rng.uniform()) < ratio:
            self.X, self.logp = Xn, lp
            self.accepted += 1
            return True
        return False

    def burn_in(self, steps: int):
        for i in range(1, steps + 1):
            acc = self.step()
            gain = 1.0 / np.sqrt(i)
            self.s = float(np.clip(self.s * np.exp(gain * ((1.0 if acc else 0.0) - ACCEPT_TARGET)),
                                   1e-4, 1.0))
        self.accepted = self.proposed = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def state(self) -> dict:
        return {"X": [x.copy() for x in self.X], "s": self.s,
                "rng": self.rng.bit_generator.state, "accepted": self.accepted,
                "proposed": self.proposed}

    def restore(self, st: dict):
        self.X = [x.copy() for x in st["X"]]
        self.s = st["s"]
        self.rng.bit_generator.state = st["rng"]
        self.accepted, self.proposed = st["accepted"], st["proposed"]
        self.logp = self.log_density(self.X)


def mcmc_joint_law(spec: ModelSpec, steps: int, burn_in: int, seed: int, thin: int = 1,
                   proposal: str = "pcn", s0: float = 0.3) -> list:
    chain = MCMCChain(spec, seed, s0, proposal)
    chain.burn_in(burn_in)
    out = []
    for i in range(steps):
        chain.step()
        if (i + 1) % thin == 0:
            lam = np.array([np.linalg.eigvalsh(Xk) for Xk in chain.X])
            cfg = EigenConfig(lam, spec.beta, {"model": "mcmc", "a": spec.a}, seed)
            cfg.matrices = [x.copy() for x in chain.X]
            out.append(cfg)
    lo, hi = ACCEPT_RANGE
    if not lo <= chain.acceptance <= hi:
        warnings.warn(f"acceptance rate {chain.acceptance:.3f} outside [{lo}, {hi}]", SamplerWarning)
    for cfg in out:
        cfg.model["acceptance"] = chain.acceptance
        cfg.model["step_scale"] = chain.s
    return out
