"""Non-commutative Laurent polynomials in unitaries u_i, their adjoints, and
self-adjoint letters a_i, b_j.

Words are tuples of integer letter codes:

    u_i   ->  i            (1 <= i <= d)
    u_i*  -> -i
    a_i   ->  A_BASE + i
    b_j   ->  B_BASE + j

Reduced words never contain an adjacent pair (i, -i).  A rank-r polynomial
maps r-tuples of words to complex coefficients.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
import math
from typing import Callable, Iterable

import numpy as np

A_BASE = 1000
B_BASE = 2000
PRUNE_TOL = 1e-15
MAX_RANK = 2

EMPTY: tuple = ()


class AlphabetError(ValueError):
    pass


class DegreeError(ValueError):
    pass


# ---------------------------------------------------------------- words


def is_u(letter: int) -> bool:
    return -A_BASE < letter < A_BASE


def reduce_word(letters: Iterable[int]) -> tuple:
    """Cancel adjacent u_i u_i* pairs with a single stack scan."""
    stack: list[int] = []
    for x in letters:
        if stack and -A_BASE < x < A_BASE and stack[-1] == -x:
            stack.pop()
        else:
            stack.append(x)
    return tuple(stack)


@lru_cache(maxsize=1 << 20)
def deg_u(w: tuple) -> int:
    return sum(1 for x in w if -A_BASE < x < A_BASE)


def deg_ab(w: tuple) -> int:
    return len(w) - deg_u(w)


def word_adjoint(w: tuple) -> tuple:
    return tuple(-x if is_u(x) else x for x in reversed(w))


def cyclic_reduce(w: tuple) -> tuple:
    """Strip conjugating pairs u ... u* from the two ends (trace invariant)."""
    lo, hi = 0, len(w)
    while hi - lo >= 2 and is_u(w[lo]) and w[hi - 1] == -w[lo]:
        lo += 1
        hi -= 1
    return w[lo:hi]


@lru_cache(maxsize=1 << 20)
def cyclic_key(w: tuple) -> tuple:
    """Canonical representative of the trace class of a reduced word:
    cyclically reduced, then the lexicographically minimal rotation."""
    w = cyclic_reduce(w)
    if len(w) < 2:
        return w
    lo = min(w)
    return min(w[k:] + w[:k] for k, x in enumerate(w) if x == lo)


def letter_token(x: int) -> str:
    if is_u(x):
        return f"u{x}" if x > 0 else f"u{-x}^"
    if x < B_BASE:
        return f"a{x - A_BASE}"
    return f"b{x - B_BASE}"


def parse_token(tok: str) -> int:
    tok = tok.strip()
    if tok.startswith("u"):
        star = tok.endswith("^") or tok.endswith("*")
        i = int(tok[1:-1] if star else tok[1:])
        return -i if star else i
    if tok.startswith("a"):
        return A_BASE + int(tok[1:])
    if tok.startswith("b"):
        return B_BASE + int(tok[1:])
    raise ValueError(f"unknown letter token {tok!r}")


def format_word(w: tuple) -> str:
    return " ".join(letter_token(x) for x in w) if w else "1"


def parse_word(text: str) -> tuple:
    toks = text.split()
    if toks == ["1"] or not toks:
        return EMPTY
    return reduce_word(parse_token(t) for t in toks)


def x_word(i: int, power: int = 1) -> tuple:
    """The word u_i a_i^power u_i*, i.e. X_i^power."""
    return (i,) + (A_BASE + i,) * power + (-i,)


def b_word(j: int) -> tuple:
    return (B_BASE + j,)


def check_letters(w: tuple, d: int, m: int):
    for x in w:
        if is_u(x):
            ok = 1 <= abs(x) <= d
        elif x < B_BASE:
            ok = 1 <= x - A_BASE <= d
        else:
            ok = 1 <= x - B_BASE <= m
        if not ok:
            raise AlphabetError(f"letter {letter_token(x)} outside alphabet d={d}, m={m}")


# ------------------------------------------------- word-level derivatives


def partial_word(w: tuple, i: int) -> list:
    """Terms (c, left, right) of the non-commutative derivative of a word."""
    out = []
    for pos, x in enumerate(w):
        if x == i:
            out.append((1.0, w[: pos + 1], w[pos + 1:]))
        elif x == -i:
            out.append((-1.0, w[:pos], w[pos:]))
    return out


@lru_cache(maxsize=1 << 20)
def cyclic_derivative_word(w: tuple, i: int) -> tuple:
    """Terms (c, word) of D_i w = m(partial_i w) with m(p x q) = qp."""
    return tuple((c, reduce_word(r + l)) for c, l, r in partial_word(w, i))


def laplacian_identity_word(w: tuple, i: int) -> list:
    """Terms (c, left, right) of partial_i D_i w minus the two boundary
    families, written through the Leibniz rule so no cancellation is needed:
    sum over w = p1 u p2 of partial(p2 p1).(1 x u) and minus, over
    w = p1 u* p2, of (u* x 1).partial(p2 p1).

    Some factors come out conjugated (u* q u) and keep the degree of w, so
    this form agrees with laplacian_word only modulo trace classes.
    """
    out = []
    for pos, x in enumerate(w):
        if x == i:
            rest = reduce_word(w[pos + 1:] + w[:pos])
            for c, l, r in partial_word(rest, i):
                out.append((c, l, reduce_word(r + (i,))))
        elif x == -i:
            rest = reduce_word(w[pos + 1:] + w[:pos])
            for c, l, r in partial_word(rest, i):
                out.append((-c, reduce_word((-i,) + l), r))
    return out


def _reduced_prefixes(s: tuple) -> list:
    """P[k] = reduce_word(s[:k]) for k = 0..len(s)."""
    out = [EMPTY]
    stack: list[int] = []
    for x in s:
        if stack and -A_BASE < x < A_BASE and stack[-1] == -x:
            stack.pop()
        else:
            stack.append(x)
        out.append(tuple(stack))
    return out


def _reduced_suffixes(s: tuple) -> list:
    """S[k] = reduce_word(s[k:]) for k = 0..len(s)."""
    rev = _reduced_prefixes(tuple(reversed(s)))
    n = len(s)
    return [tuple(reversed(rev[n - k])) for k in range(n + 1)]


def _append(w: tuple, x: int) -> tuple:
    return w[:-1] if w and w[-1] == -x else w + (x,)


def _prepend(x: int, w: tuple) -> tuple:
    return w[1:] if w and w[0] == -x else (x,) + w


@lru_cache(maxsize=1 << 20)
def laplacian_word(w: tuple, i: int) -> tuple:
    """Terms (c, left, right) of the reduced Laplacian Delta_i w through the
    four-sum expansion.  Every factor has deg_U strictly below deg_U(w),
    which is what makes the degree-regularized operators contractive."""
    out = []
    for pos, x in enumerate(w):
        if x != i and x != -i:
            continue
        s = w[pos + 1:] + w[:pos]  # p2 p1, with u_i after or u_i* before
        pre, suf = _reduced_prefixes(s), _reduced_suffixes(s)
        for k, y in enumerate(s):
            if y == i:
                if x == i:
                    out.append((1.0, _append(pre[k], i), _append(suf[k + 1], i)))
                else:
                    out.append((-1.0, pre[k], suf[k + 1]))
            elif y == -i:
                if x == i:
                    out.append((-1.0, pre[k], suf[k + 1]))
                else:
                    out.append((1.0, _prepend(-i, pre[k]), _prepend(-i, suf[k + 1])))
    return tuple(out)


# ---------------------------------------------------------------- NCPoly


def _prune(terms: dict, tol: float) -> dict:
    return {k: v for k, v in terms.items() if abs(v) > tol}


class NCPoly:
    """Finite linear combination of words (rank 1) or r-tuples of words.

    Instances are immutable by convention; every operation returns a new
    polynomial with coefficients of modulus <= prune_tol dropped.
    """

    __slots__ = ("terms", "d", "m", "rank")

    def __init__(self, terms=None, d: int = 1, m: int = 0, rank: int = 1,
                 prune_tol: float = PRUNE_TOL, check: bool = True):
        if rank < 1 or rank > MAX_RANK:
            raise ValueError(f"tensor rank {rank} not supported (1..{MAX_RANK})")
        acc: dict = {}
        for key, c in (terms or {}).items():
            if rank == 1:
                key = reduce_word(key)
                if check:
                    check_letters(key, d, m)
            else:
                if len(key) != rank:
                    raise ValueError("tensor key has wrong rank")
                key = tuple(reduce_word(w) for w in key)
                if check:
                    for w in key:
                        check_letters(w, d, m)
            acc[key] = acc.get(key, 0.0) + complex(c)
        self.terms = _prune(acc, prune_tol)
        self.d, self.m, self.rank = d, m, rank

    # constructors
    @classmethod
    def word(cls, w, coeff=1.0, d=1, m=0):
        return cls({tuple(w): coeff}, d, m)

    @classmethod
    def one(cls, d=1, m=0):
        return cls({EMPTY: 1.0}, d, m)

    @classmethod
    def zero(cls, d=1, m=0, rank=1):
        return cls({}, d, m, rank)

    @classmethod
    def from_text(cls, text: str, d: int, m: int = 0):
        """Parse lines 'coeff word' (rank 1) or 'coeff w1 | w2' (rank 2)."""
        terms: dict = {}
        rank = None
        for line in text.strip().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coeff, _, rest = line.partition(" ")
            parts = [parse_word(s) for s in rest.split("|")]
            r = len(parts)
            if rank is None:
                rank = r
            elif r != rank:
                raise ValueError("mixed tensor ranks in polynomial text")
            key = parts[0] if r == 1 else tuple(parts)
            terms[key] = terms.get(key, 0.0) + complex(coeff.replace("i", "j"))
        return cls(terms, d, m, rank or 1)

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.terms, key=_sort_key):
            c = self.terms[key]
            ws = [key] if self.rank == 1 else list(key)
            lines.append(f"{format_coeff(c)} " + " | ".join(format_word(w) for w in ws))
        return "\n".join(lines)

    # algebra
    def _same(self, other):
        if (self.d, self.m) != (other.d, other.m):
            raise AlphabetError("alphabet mismatch")
        if self.rank != other.rank:
            raise ValueError("tensor rank mismatch")

    def __add__(self, other):
        self._same(other)
        t = dict(self.terms)
        for k, v in other.terms.items():
            t[k] = t.get(k, 0.0) + v
        return NCPoly(t, self.d, self.m, self.rank, check=False)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c):
        return NCPoly({k: c * v for k, v in self.terms.items()}, self.d, self.m, self.rank, check=False)

    def __rmul__(self, c):
        return self.scale(c)

    def __mul__(self, other):
        if isinstance(other, NCPoly):
            return mul(self, other)
        return self.scale(other)

    def __eq__(self, other):
        if not isinstance(other, NCPoly):
            return NotImplemented
        return (self.d, self.m, self.rank) == (other.d, other.m, other.rank) and \
            (self - other).terms == {}

    def __hash__(self):
        return hash((self.rank, frozenset(self.terms.items())))

    def __repr__(self):
        return f"NCPoly(rank={self.rank}, d={self.d}, m={self.m}, terms={len(self.terms)})"

    def __len__(self):
        return len(self.terms)

    def is_close(self, other, tol=1e-12) -> bool:
        return norm_xi_zeta(self - other, 1.0, 1.0) <= tol

    def items(self):
        return self.terms.items()

    def max_deg_u(self) -> int:
        if not self.terms:
            return 0
        if self.rank == 1:
            return max(deg_u(w) for w in self.terms)
        return max(sum(deg_u(w) for w in k) for k in self.terms)


def format_coeff(c: complex) -> str:
    c = complex(c)
    if c.imag == 0:
        return repr(float(c.real))
    return f"{c.real!r}{c.imag:+}j"


def _sort_key(key):
    if key and isinstance(key[0], tuple):
        return tuple((len(w), w) for w in key)
    return (len(key), key)


def _same_alphabet(p, q):
    if (p.d, p.m) != (q.d, q.m):
        raise AlphabetError("alphabet mismatch")


def mul(p: NCPoly, q: NCPoly) -> NCPoly:
    """Concatenation product (factorwise for rank 2) with reduction."""
    _same_alphabet(p, q)
    if p.rank != q.rank:
        raise ValueError("tensor rank mismatch")
    t: dict = {}
    for k1, c1 in p.terms.items():
        for k2, c2 in q.terms.items():
            if p.rank == 1:
                k = reduce_word(k1 + k2)
            else:
                k = tuple(reduce_word(a + b) for a, b in zip(k1, k2))
            t[k] = t.get(k, 0.0) + c1 * c2
    return NCPoly(t, p.d, p.m, p.rank, check=False)


def tensor(p: NCPoly, q: NCPoly) -> NCPoly:
    _same_alphabet(p, q)
    if p.rank != 1 or q.rank != 1:
        raise ValueError("tensor of rank-1 polynomials only")
    return NCPoly({(w1, w2): c1 * c2 for w1, c1 in p.terms.items() for w2, c2 in q.terms.items()},
                  p.d, p.m, 2, check=False)


def adjoint(p: NCPoly) -> NCPoly:
    if p.rank == 1:
        t = {word_adjoint(w): np.conj(c) for w, c in p.terms.items()}
    else:
        t = {tuple(word_adjoint(w) for w in k): np.conj(c) for k, c in p.terms.items()}
    return NCPoly(t, p.d, p.m, p.rank, check=False)


def is_self_adjoint(p: NCPoly, tol: float = 1e-12) -> bool:
    return (p - adjoint(p)).terms == {} or norm_xi_zeta(p - adjoint(p), 1, 1) < tol


def symmetrize(p: NCPoly) -> NCPoly:
    """Average of a rank-2 polynomial over swapping its two factors."""
    if p.rank == 1:
        return p
    t: dict = {}
    for (w1, w2), c in p.terms.items():
        t[(w1, w2)] = t.get((w1, w2), 0.0) + c / 2
        t[(w2, w1)] = t.get((w2, w1), 0.0) + c / 2
    return NCPoly(t, p.d, p.m, 2, check=False)


def norm_xi_zeta(p: NCPoly, xi: float = 8.0, zeta: float = 1.0) -> float:
    """sum |c| xi^{deg_U} zeta^{deg_AB}, degrees summed over tensor factors."""
    if xi < 1 or zeta < 1:
        raise ValueError("norm parameters must be >= 1")
    total = 0.0
    for k, c in p.terms.items():
        ws = [k] if p.rank == 1 else k
        du = sum(deg_u(w) for w in ws)
        da = sum(deg_ab(w) for w in ws)
        total += abs(c) * xi ** du * zeta ** da
    return total


# -------------------------------------------------------- poly derivatives


def _rank1(p: NCPoly):
    if p.rank != 1:
        raise ValueError("rank-1 polynomial required")


def _check_index(p: NCPoly, i: int):
    if not 1 <= i <= p.d:
        raise AlphabetError(f"index {i} outside 1..{p.d}")


def nc_derivative(p: NCPoly, i: int) -> NCPoly:
    _rank1(p)
    _check_index(p, i)
    t: dict = {}
    for w, c in p.terms.items():
        for s, l, r in partial_word(w, i):
            t[(l, r)] = t.get((l, r), 0.0) + s * c
    return NCPoly(t, p.d, p.m, 2, check=False)


def flip_multiply(p: NCPoly) -> NCPoly:
    """m(x (x) y) = y x."""
    t: dict = {}
    for (l, r), c in p.terms.items():
        k = reduce_word(r + l)
        t[k] = t.get(k, 0.0) + c
    return NCPoly(t, p.d, p.m, 1, check=False)


def flip_multiply_adjoint(p: NCPoly) -> NCPoly:
    """m~(x (x) y) = y* x, coefficient kept (linear extension on basis tensors)."""
    t: dict = {}
    for (l, r), c in p.terms.items():
        k = reduce_word(word_adjoint(r) + l)
        t[k] = t.get(k, 0.0) + c
    return NCPoly(t, p.d, p.m, 1, check=False)


def cyclic_derivative(p: NCPoly, i: int) -> NCPoly:
    _rank1(p)
    _check_index(p, i)
    t: dict = {}
    for w, c in p.terms.items():
        for s, k in cyclic_derivative_word(w, i):
            t[k] = t.get(k, 0.0) + s * c
    return NCPoly(t, p.d, p.m, 1, check=False)


def reduced_laplacian(p: NCPoly, i: int | None = None, form: str = "four-sum") -> NCPoly:
    """Delta_i p, or Delta p = sum_i Delta_i p when i is None.

    form='identity' returns partial_i D_i p minus the boundary terms instead;
    the two agree after mapping each tensor factor to its trace class.
    """
    _rank1(p)
    kernel = laplacian_word if form == "four-sum" else laplacian_identity_word
    idx = range(1, p.d + 1) if i is None else [i]
    t: dict = {}
    for j in idx:
        _check_index(p, j)
        for w, c in p.terms.items():
            for s, l, r in kernel(w, j):
                t[(l, r)] = t.get((l, r), 0.0) + s * c
    return NCPoly(t, p.d, p.m, 2, check=False)


def trace_class_tensor(p: NCPoly) -> dict:
    """Rank-2 polynomial with each factor replaced by its trace class."""
    t: dict = {}
    for (l, r), c in p.terms.items():
        k = (cyclic_key(l), cyclic_key(r))
        t[k] = t.get(k, 0.0) + c
    return {k: v for k, v in t.items() if abs(v) > PRUNE_TOL}


def degree_op(p: NCPoly) -> NCPoly:
    _rank1(p)
    return NCPoly({w: deg_u(w) * c for w, c in p.terms.items()}, p.d, p.m, check=False)


def inverse_degree_op(p: NCPoly) -> NCPoly:
    _rank1(p)
    t = {}
    for w, c in p.terms.items():
        k = deg_u(w)
        if k == 0:
            raise DegreeError(f"inverse degree undefined on word {format_word(w)}")
        t[w] = c / k
    return NCPoly(t, p.d, p.m, check=False)


def proj_perp(p: NCPoly) -> NCPoly:
    """Pi: drop words with deg_U = 0."""
    _rank1(p)
    return NCPoly({w: c for w, c in p.terms.items() if deg_u(w) > 0}, p.d, p.m, check=False)


def proj_ab(p: NCPoly) -> NCPoly:
    """Pi': keep only words in the algebra generated by the a's and b's."""
    _rank1(p)
    return NCPoly({w: c for w, c in p.terms.items() if deg_u(w) == 0}, p.d, p.m, check=False)


def degree_ops(p: NCPoly):
    """(D p, D^{-1} Pi p, Pi p, Pi' p)."""
    pp = proj_perp(p)
    return degree_op(p), inverse_degree_op(pp), pp, proj_ab(p)


# ------------------------------------------------------- polynomials in X


def monomial_to_word(mono: Iterable[str]) -> tuple:
    """Map a monomial in x_i and b_j (e.g. ['x1', 'x2', 'b1']) to the word
    obtained by substituting x_i = u_i a_i u_i*."""
    letters: list[int] = []
    for tok in mono:
        if tok.startswith("x"):
            letters.extend(x_word(int(tok[1:])))
        elif tok.startswith("b"):
            letters.append(B_BASE + int(tok[1:]))
        else:
            raise ValueError(f"bad monomial token {tok!r}")
    return reduce_word(letters)


def poly_in_x(monomials: dict, d: int, m: int = 0) -> NCPoly:
    """Polynomial in x_i = u_i a_i u_i* and b_j from {('x1','x2'): coeff}."""
    t: dict = {}
    for mono, c in monomials.items():
        w = monomial_to_word(mono)
        t[w] = t.get(w, 0.0) + c
    return NCPoly(t, d, m)


def p_class_words(d: int, m: int, max_len: int, max_deg_u: int | None = None) -> list:
    """Trace classes of monomials in x_i, b_j of length 1..max_len (class P)."""
    toks = [f"x{i}" for i in range(1, d + 1)] + [f"b{j}" for j in range(1, m + 1)]
    seen = {}
    for L in range(1, max_len + 1):
        for mono in itertools.product(toks, repeat=L):
            key = cyclic_key(monomial_to_word(mono))
            if max_deg_u is not None and deg_u(key) > max_deg_u:
                continue
            seen.setdefault(key, None)
    return sorted(seen, key=_sort_key)


def all_words(d: int, m: int, max_len: int, cyclic: bool = True) -> list:
    """All reduced words of length <= max_len (trace classes when cyclic)."""
    letters = list(range(1, d + 1)) + [-i for i in range(1, d + 1)] + \
        [A_BASE + i for i in range(1, d + 1)] + [B_BASE + j for j in range(1, m + 1)]
    out = {EMPTY: None}
    frontier = [EMPTY]
    for _ in range(max_len):
        nxt = []
        for w in frontier:
            for x in letters:
                if w and is_u(x) and w[-1] == -x:
                    continue
                nxt.append(w + (x,))
        for w in nxt:
            out.setdefault(cyclic_key(w) if cyclic else w, None)
        frontier = nxt
    return sorted(out, key=_sort_key)


# ------------------------------------------------------------ LinearForm


class LinearForm:
    """Linear functional on words, given by stored values and optionally a
    fallback evaluator for words not stored.

    With trace_flag set, words are identified with their trace class
    (cyclic_key) before lookup.
    """

    def __init__(self, values=None, max_degree: int | None = None, trace_flag: bool = True,
                 evaluator: Callable[[tuple], complex] | None = None):
        self.trace_flag = trace_flag
        self.max_degree = max_degree
        self.evaluator = evaluator
        self.values: dict = {}
        for w, v in (values or {}).items():
            self.values[self._key(w)] = complex(v)

    def _key(self, w):
        w = reduce_word(w)
        return cyclic_key(w) if self.trace_flag else w

    def word(self, w: tuple) -> complex:
        k = self._key(w)
        v = self.values.get(k)
        if v is None:
            if self.evaluator is None:
                raise KeyError(f"word {format_word(k)} not in linear form")
            v = complex(self.evaluator(k))
        return v

    def __call__(self, p) -> complex:
        if isinstance(p, tuple):
            return self.word(p)
        if p.rank == 1:
            return sum((c * self.word(w) for w, c in p.terms.items()), 0j)
        return sum((c * self.word(w1) * self.word(w2) for (w1, w2), c in p.terms.items()), 0j)

    def pair(self, other: "LinearForm", p: NCPoly) -> complex:
        """(self (x) other)(p) for a rank-2 polynomial."""
        return sum((c * self.word(w1) * other.word(w2) for (w1, w2), c in p.terms.items()), 0j)

    def materialize(self, words: Iterable[tuple]) -> "LinearForm":
        return LinearForm({w: self.word(w) for w in words}, self.max_degree, self.trace_flag)

    def dual_norm(self, xi: float = 8.0, zeta: float = 1.0) -> float:
        """sup over stored words of |tau(w)| / (xi^{deg_U} zeta^{deg_AB})."""
        best = 0.0
        for w, v in self.values.items():
            best = max(best, abs(v) / (xi ** deg_u(w) * zeta ** deg_ab(w)))
        return best

    def to_dict(self) -> dict:
        return {format_word(w): [v.real, v.imag] for w, v in sorted(self.values.items(), key=lambda kv: _sort_key(kv[0]))}


def apply_rank2(left: LinearForm, right: LinearForm, p: NCPoly) -> complex:
    return left.pair(right, p)


def semicircle_moment(k: int, var: float = 1.0) -> float:
    if k % 2:
        return 0.0
    n = k // 2
    return math.comb(2 * n, n) / (n + 1) * var ** n


def ab_state_from_moments(a_moments: list, b_moments: list | None = None) -> LinearForm:
    """State on the a/b algebra treating all letters as commuting independent
    classical variables: tau(w) = prod_i m_i(#a_i) prod_j m'_j(#b_j).

    Each entry of a_moments is a callable k -> k-th moment.
    """
    b_moments = b_moments or []

    def ev(w):
        if deg_u(w) != 0:
            raise DegreeError("state on a/b letters evaluated on a word with unitaries")
        counts: dict = {}
        for x in w:
            counts[x] = counts.get(x, 0) + 1
        val = 1.0
        for x, k in counts.items():
            if x < B_BASE:
                val *= a_moments[x - A_BASE - 1](k)
            else:
                val *= b_moments[x - B_BASE - 1](k)
        return val

    return LinearForm({}, None, True, ev)


def ab_state_from_matrices(As: list, Bs: list | None = None) -> LinearForm:
    """Normalized trace of products of given N x N matrices (A_i may be
    supplied as 1-d arrays of eigenvalues, read as diagonal matrices)."""
    Bs = Bs or []
    mats = {}
    N = None
    for i, A in enumerate(As, 1):
        A = np.asarray(A)
        mats[A_BASE + i] = np.diag(A) if A.ndim == 1 else A
        N = mats[A_BASE + i].shape[0]
    for j, B in enumerate(Bs, 1):
        mats[B_BASE + j] = np.asarray(B)
        N = mats[B_BASE + j].shape[0]

    def ev(w):
        if deg_u(w) != 0:
            raise DegreeError("state on a/b letters evaluated on a word with unitaries")
        if not w:
            return 1.0
        M = mats[w[0]]
        for x in w[1:]:
            M = M @ mats[x]
        return np.trace(M) / N

    return LinearForm({}, None, True, ev)


def evaluate_word_on_matrices(w: tuple, U: list, A: list, B: list | None = None) -> np.ndarray:
    """Matrix value of a word given unitaries U_i, matrices A_i and B_j."""
    B = B or []
    N = (U[0] if U else A[0]).shape[0]
    out = np.eye(N, dtype=complex)
    for x in w:
        if is_u(x):
            out = out @ (U[x - 1] if x > 0 else U[-x - 1].conj().T)
        elif x < B_BASE:
            out = out @ A[x - A_BASE - 1]
        else:
            out = out @ B[x - B_BASE - 1]
    return out


def evaluate_on_matrices(p: NCPoly, U: list, A: list, B: list | None = None) -> np.ndarray:
    _rank1(p)
    N = (U[0] if U else A[0]).shape[0]
    out = np.zeros((N, N), dtype=complex)
    for w, c in p.terms.items():
        out += c * evaluate_word_on_matrices(w, U, A, B)
    return out
