"""Local eigenvalue statistics: rescaled bulk gaps, edge fluctuations,
smallest gaps, window-averaged correlation sums and rigidity, plus the
two-sample comparisons used to judge universality."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from .equilibrium import EquilibriumMeasure, quadratic_potential, quantiles, solve_onecut

DEFAULT_EDGE_FRACTION = 0.1
EDGE_M_CAP = 10
WINDOW_NODES = 33
ZETA_DEFAULT = 0.5


@dataclass
class GapSample:
    gaps: np.ndarray
    location: dict
    rescaling: str = "identity"

    def __post_init__(self):
        self.gaps = np.asarray(self.gaps, dtype=float)
        if np.any(self.gaps < 0):
            raise ValueError("gaps must be non-negative")


@dataclass
class StatReport:
    name: str
    values: np.ndarray
    ks: float
    tol: float | None = None
    reference: str = ""
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not 0.0 <= self.ks <= 1.0:
            raise ValueError("KS distance must lie in [0, 1]")

    @property
    def passed(self) -> bool | None:
        return None if self.tol is None else bool(self.ks < self.tol)

    def summary(self) -> dict:
        v = self.values
        qs = [0.05, 0.25, 0.5, 0.75, 0.95]
        return {"name": self.name, "n": int(v.size), "mean": float(np.mean(v)) if v.size else None,
                "quantiles": dict(zip(map(str, qs), np.quantile(v, qs).tolist())) if v.size else {},
                "ks": self.ks, "tol": self.tol, "passed": self.passed,
                "reference": self.reference, "counts": self.counts}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def histogram_csv(values, bins: int = 50) -> str:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    rows = ["left,right,count"] + [f"{a:.17g},{b:.17g},{c}" for a, b, c in zip(edges[:-1], edges[1:], counts)]
    return "\n".join(rows) + "\n"


def ks_distance(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("KS distance needs non-empty samples")
    return float(stats.ks_2samp(xs, ys).statistic)


def ks_to_cdf(xs, cdf: Callable) -> float:
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("KS distance needs a non-empty sample")
    return float(stats.kstest(xs, cdf).statistic)


# ----------------------------------------------------------------- quantiles


@lru_cache(maxsize=None)
def _semicircle():
    return solve_onecut(quadratic_potential(0.5), 2)


def classical_locations(N: int, mu: EquilibriumMeasure | None = None) -> np.ndarray:
    """gamma_{i/N}, i = 1..N, with gamma_1 the right edge."""
    mu = _semicircle() if mu is None else mu
    if mu is _semicircle():
        g = _semicircle_quantiles(N)
    else:
        g = np.append(quantiles(mu, np.arange(1, N) / N), mu.b_end)
    return g


@lru_cache(maxsize=64)
def _semicircle_quantiles_cached(N: int) -> tuple:
    mu = _semicircle()
    return tuple(np.append(quantiles(mu, np.arange(1, N) / N), mu.b_end))


def _semicircle_quantiles(N: int) -> np.ndarray:
    return np.array(_semicircle_quantiles_cached(N))


# ----------------------------------------------------------------- gaps


def rescaled_bulk_gaps(configs, k: int, window: tuple, Rprime: Callable | None = None,
                       edge_fraction: float = DEFAULT_EDGE_FRACTION) -> GapSample:
    """Pooled N (lambda_{i+1} - lambda_i) / R'(gamma_{i/N}) for 1-based i in
    [i0, i1)."""
    if not configs:
        raise ValueError("no configurations")
    N = configs[0].N
    i0, i1 = window
    if i0 < edge_fraction * N or i1 > (1 - edge_fraction) * N or i0 >= i1:
        raise ValueError(f"window {window} touches the edge region (fraction {edge_fraction})")
    idx = np.arange(i0, i1)  # 1-based gap index
    scale = np.ones(len(idx))
    if Rprime is not None:
        scale = np.asarray(Rprime(_semicircle_quantiles(N)[idx - 1]), dtype=float)
    out = []
    for cfg in configs:
        lam = cfg.lambdas[k]
        out.append(N * (lam[idx] - lam[idx - 1]) / scale)
    return GapSample(np.concatenate(out), {"k": k, "window": [int(i0), int(i1)], "N": N},
                     "identity" if Rprime is None else "R'")


def edge_fluctuations(configs, k: int, side: str = "left", m: int = 1, center: float = -2.0,
                      scale: float = 1.0, m_cap: int = EDGE_M_CAP) -> np.ndarray:
    """Rows scale * N^{2/3} (lambda_j - center), j = 1..m from the chosen edge."""
    if m > m_cap:
        raise ValueError(f"m = {m} exceeds the cap {m_cap}")
    rows = []
    for cfg in configs:
        lam = cfg.lambdas[k]
        pick = lam[:m] if side == "left" else lam[::-1][:m]
        rows.append(scale * cfg.N ** (2.0 / 3.0) * (pick - center))
    return np.array(rows)


def smallest_gap_prefactor(lo: float, hi: float) -> float:
    """(1/(144 pi^2)) int_lo^hi (4 - x^2)^2 dx."""
    val, _ = integrate.quad(lambda x: (4 - x * x) ** 2, lo, hi)
    return val / (144 * math.pi ** 2)


def smallest_gap_cdf(p: int = 1) -> Callable:
    """CDF of the density 3 x^{3p-1} e^{-x^3} / (p-1)!."""
    return lambda x: special.gammainc(p, np.maximum(np.asarray(x, dtype=float), 0.0) ** 3)


def smallest_gaps(configs, k: int, interval: tuple, p: int = 1, R=None, beta: int = 2,
                  tol: float | None = None) -> StatReport:
    """N^{4/3} times the p-th smallest renormalised spacing among eigenvalues
    in the interval, compared with the limiting law."""
    if beta != 2:
        raise ValueError("the smallest-gap law is only available for beta = 2")
    lo, hi = interval
    if R is None:
        pre = smallest_gap_prefactor(lo, hi)
        rprime = None
    else:
        inv = R.inverse()
        pre = smallest_gap_prefactor(float(inv(lo)), float(inv(hi)))
        rprime = R.deriv
    vals = []
    for cfg in configs:
        N = cfg.N
        lam = cfg.lambdas[k]
        sel = np.nonzero((lam >= lo) & (lam <= hi))[0]
        sel = sel[:-1][np.diff(sel) == 1]
        if sel.size < p:
            continue
        gaps = lam[sel + 1] - lam[sel]
        if rprime is not None:
            gaps = gaps / rprime(_semicircle_quantiles(N)[sel])
        t_p = np.partition(gaps, p - 1)[p - 1]
        vals.append(N ** (4.0 / 3.0) * pre ** (1.0 / 3.0) * t_p)
    vals = np.array(vals)
    ks = ks_to_cdf(vals, smallest_gap_cdf(p))
    return StatReport(f"smallest_gap_p{p}", vals, ks, tol, "3x^{3p-1}e^{-x^3}/(p-1)!",
                      {"configs": len(configs), "used": int(vals.size)})


def largest_gap_trend(configs, k: int, interval: tuple, R=None) -> float:
    """Mean of N/sqrt(32 log N) times the largest renormalised gap."""
    lo, hi = interval
    vals = []
    for cfg in configs:
        N = cfg.N
        lam = cfg.lambdas[k]
        sel = np.nonzero((lam >= lo) & (lam <= hi))[0]
        sel = sel[:-1][np.diff(sel) == 1]
        gaps = lam[sel + 1] - lam[sel]
        if R is not None:
            gaps = gaps / R.deriv(_semicircle_quantiles(N)[sel])
        vals.append(N / math.sqrt(32 * math.log(N)) * gaps.max())
    return float(np.mean(vals))


# ----------------------------------------------------------------- correlations


def averaged_correlation(configs, k: int, E: float, m: int, f: Callable, radius: float,
                         zeta: float = ZETA_DEFAULT, R: Callable | None = None,
                         Rprime: Callable | None = None, scale: float = 1.0,
                         n_nodes: int = WINDOW_NODES) -> float:
    """Sample and window average of sum over distinct i_1..i_m of
    f(scale N (lambda_{i_1} - E~), ..) for E~ in R(E) +- N^{-zeta} R'(E).

    f takes an array of shape (n, m) and returns n values; it must vanish
    when any argument exceeds `radius` in absolute value, which is what
    restricts the sum to nearby indices."""
    if m > 3:
        raise ValueError("m must be at most 3")
    if not -2 < E < 2:
        raise ValueError("E must lie in (-2, 2)")
    N = configs[0].N
    centre = E if R is None else float(R(E))
    half = N ** (-zeta) * (1.0 if Rprime is None else float(Rprime(E)))
    nodes = np.linspace(centre - half, centre + half, n_nodes)
    wts = np.full(n_nodes, 1.0)
    wts[0] = wts[-1] = 0.5
    wts /= wts.sum()
    total = 0.0
    for cfg in configs:
        lam = cfg.lambdas[k]
        acc = 0.0
        for Et, w in zip(nodes, wts):
            u = scale * N * (lam - Et)
            near = np.nonzero(np.abs(u) <= radius)[0]
            if near.size < m:
                continue
            tup = np.array(list(itertools.permutations(near, m)))
            acc += w * float(np.sum(f(u[tup])))
        total += acc
    return total / len(configs)


# ----------------------------------------------------------------- rigidity


def rigidity_check(cfg, mu_ref, theta: float) -> tuple:
    """Is |lambda_i - gamma_{i/N}| <= N^{theta-2/3} min(i, N+1-i)^{1/3} for
    all i and k?  Returns (flag, smallest slack)."""
    if not 0 < theta < 2.0 / 3.0:
        raise ValueError("theta must lie in (0, 2/3)")
    mus = mu_ref if isinstance(mu_ref, (list, tuple)) else [mu_ref] * cfg.d
    N = cfg.N
    i = np.arange(1, N + 1)
    bound = N ** (theta - 2.0 / 3.0) * np.minimum(i, N + 1 - i) ** (1.0 / 3.0)
    worst = np.inf
    for k in range(cfg.d):
        gam = classical_locations(N, mus[k])
        worst = min(worst, float(np.min(bound - np.abs(cfg.lambdas[k] - gam))))
    return worst >= 0, worst


def rigidity_fraction(configs, mu_ref, theta: float) -> float:
    return float(np.mean([rigidity_check(c, mu_ref, theta)[0] for c in configs]))
