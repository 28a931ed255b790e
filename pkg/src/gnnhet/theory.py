"""Dependency graphs, proper covers and the convergence-rate calculator.

The rate bound has an unknown leading constant; every value here is
computed with that constant set to 1 and is meaningful only up to constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DependencyGraph",
    "ProperCover",
    "RateInputs",
    "RateBound",
    "build_dependency_graph",
    "greedy_cover",
    "rate_exponents",
    "rate_bound",
    "suggest_width",
]


@dataclass(frozen=True)
class DependencyGraph:
    """Symmetric, irreflexive graph of dependent unit pairs."""

    adjacency: sp.csr_matrix

    def __post_init__(self):
        A = sp.csr_matrix(self.adjacency, dtype=bool)
        A.eliminate_zeros()
        if A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if A.diagonal().any():
            raise ValueError("dependency graph must be irreflexive")
        if (A != A.T).nnz:
            raise ValueError("dependency graph must be symmetric")
        A.sort_indices()
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def from_pairs(cls, n, pairs):
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        i, j = pairs[:, 0], pairs[:, 1]
        data = np.ones(2 * i.size, dtype=bool)
        A = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        return cls(A.tocsr())

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def degree(self):
        return np.diff(self.adjacency.indptr)

    @property
    def n_edges(self):
        return self.adjacency.nnz // 2

    @property
    def max_degree(self):
        """``omega_n``, the largest number of dependent partners."""
        return int(self.degree.max()) if self.n else 0

    def neighbors(self, i):
        A = self.adjacency
        return A.indices[A.indptr[i]:A.indptr[i + 1]]


def build_dependency_graph(labels) -> DependencyGraph:
    """Complete graph inside each village, nothing across villages."""
    labels = np.asarray(labels).ravel()
    _, inv = np.unique(labels, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    rows, cols = [], []
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    for grp in np.split(order, bounds):
        if grp.size > 1:
            r = np.repeat(grp, grp.size)
            c = np.tile(grp, grp.size)
            keep = r != c
            rows.append(r[keep])
            cols.append(c[keep])
    n = labels.size
    if rows:
        r, c = np.concatenate(rows), np.concatenate(cols)
    else:
        r = c = np.zeros(0, dtype=np.int64)
    A = sp.csr_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n))
    return DependencyGraph(A)


@dataclass(frozen=True)
class ProperCover:
    """Disjoint edge-free classes covering every unit."""

    classes: tuple
    color: np.ndarray = field(repr=False)

    @property
    def J(self):
        return len(self.classes)

    @property
    def sizes(self):
        return [int(c.size) for c in self.classes]

    def validate(self, G: DependencyGraph):
        seen = np.zeros(G.n, dtype=np.int64)
        for c in self.classes:
            seen[c] += 1
            if G.adjacency[c][:, c].nnz:
                raise AssertionError("a cover class contains an edge")
        if np.any(seen != 1):
            raise AssertionError("cover classes must partition the units")
        return self

    def to_dict(self):
        return {"J": self.J, "sizes": self.sizes,
                "classes": [c.tolist() for c in self.classes]}


def greedy_cover(G: DependencyGraph) -> ProperCover:
    """Largest-degree-first greedy colouring; colour classes form the cover.

    Vertices are visited by degree (descending, ties by id) and take the
    smallest colour unused by coloured neighbours. The result is validated
    before it is returned.
    """
    n = G.n
    color = np.full(n, -1, dtype=np.int64)
    order = np.lexsort((np.arange(n), -G.degree))
    for v in order:
        used = color[G.neighbors(v)]
        used = np.unique(used[used >= 0])
        c = 0
        for u in used:  # sorted, so the first gap is the smallest free colour
            if u != c:
                break
            c += 1
        color[v] = c
    J = int(color.max()) + 1 if n else 0
    classes = tuple(np.flatnonzero(color == j) for j in range(J))
    return ProperCover(classes, color).validate(G)


@dataclass(frozen=True)
class RateInputs:
    """Ingredients of the rate bound.

    ``d_star`` is the largest of the input width and every layer's width
    parameter; ``family`` is ``"exp"`` for activations built on the
    exponential (sigmoid, tanh, softplus) and ``"non-exp"`` otherwise.
    """

    n: int
    cover_sizes: tuple
    c_n: float
    beta: float
    d_star: int
    family: str = "non-exp"
    L: int = 2
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cover_sizes", tuple(int(s) for s in self.cover_sizes))
        if self.n < 1 or not self.cover_sizes or min(self.cover_sizes) < 1:
            raise ValueError("n and every cover size must be positive")
        if self.c_n <= 0 or self.d_star < 1 or self.L < 1 or self.rho <= 0:
            raise ValueError("c_n, d_star, L and rho must be positive")
        if self.beta < 1:
            raise ValueError("smoothness beta must be at least 1")
        if self.family not in ("exp", "non-exp"):
            raise ValueError("family must be 'exp' or 'non-exp'")

    @property
    def J(self):
        return len(self.cover_sizes)


@dataclass(frozen=True)
class RateBound:
    value: float
    k: int
    s: int
    base: float
    exponent: float
    approximation_term: float
    cover_term: float
    condition_ratio: float
    constant: float = 1.0
    up_to_constants: bool = True

    def to_dict(self):
        return dict(self.__dict__)


def rate_exponents(family: str, L: int):
    """``(k, s)``: ``s = L`` and ``k = 2 / 4`` for ``L = 1 / L >= 2`` without an
    exponential; ``s = 2L - 1`` and ``k = 4 / 6`` with one."""
    if L < 1:
        raise ValueError("L must be at least 1")
    if family == "non-exp":
        return (2 if L == 1 else 4), L
    if family == "exp":
        return (4 if L == 1 else 6), 2 * L - 1
    raise ValueError("family must be 'exp' or 'non-exp'")


def _base(inp: RateInputs, s: int) -> float:
    sizes = np.asarray(inp.cover_sizes, dtype=np.float64)
    return float(np.sum(1.0 + np.log(sizes)) * float(inp.c_n) ** s / inp.n)


def rate_bound(inp: RateInputs) -> RateBound:
    """``base^(beta / (beta + k d*)) + (J log J + J rho) / n`` with
    ``base = (1/n) sum_j (1 + log|C_j|) c_n^s`` and unit constant.

    ``condition_ratio`` is ``J log J / sqrt(n)``, the sample-size reading of
    the requirement that it vanish.
    """
    k, s = rate_exponents(inp.family, inp.L)
    base = _base(inp, s)
    expo = inp.beta / (inp.beta + k * inp.d_star)
    J = inp.J
    jlogj = J * math.log(J)
    approx = base ** expo
    cover = (jlogj + J * inp.rho) / inp.n
    return RateBound(approx + cover, k, s, base, expo, approx, cover,
                     jlogj / math.sqrt(inp.n))


def suggest_width(inp: RateInputs) -> int:
    """``ceil(base^(-d* / (beta + k d*)))`` with unit proportionality constant.

    A relative slack of 1e-9 keeps values a rounding error above an integer
    from stepping up.
    """
    k, s = rate_exponents(inp.family, inp.L)
    val = _base(inp, s) ** (-inp.d_star / (inp.beta + k * inp.d_star))
    return max(1, int(math.ceil(val * (1 - 1e-9))))
