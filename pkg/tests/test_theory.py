import itertools
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
import scipy.sparse as sp

from gnnhet.theory import (DependencyGraph, ProperCover, RateInputs, build_dependency_graph,
                           greedy_cover, rate_bound, rate_exponents, suggest_width)


def chromatic_number(G):
    """Smallest colour count by exhaustive search (small graphs only)."""
    n = G.n
    edges = [(i, int(j)) for i in range(n) for j in G.neighbors(i) if i < j]
    for q in range(1, n + 1):
        for col in itertools.product(range(q), repeat=n):
            if all(col[i] != col[j] for i, j in edges):
                return q
    return 0


def random_partition(rng, n):
    return rng.integers(0, int(rng.integers(1, n + 1)), n)


# -- dependency graph ---------------------------------------------------------

def test_village_edge_count():
    G = build_dependency_graph([0, 0, 1, 1, 1])
    assert G.n_edges == 4
    assert G.max_degree == 2


def test_singletons_edgeless():
    G = build_dependency_graph(np.arange(6))
    assert G.n_edges == 0 and G.max_degree == 0


def test_max_degree_is_largest_village_minus_one(rng):
    for _ in range(20):
        labels = random_partition(rng, 30)
        G = build_dependency_graph(labels)
        assert G.max_degree == np.bincount(labels).max() - 1
        # degree enumeration: every pair in the same village and only those
        dense = G.adjacency.toarray()
        same = labels[:, None] == labels[None, :]
        np.fill_diagonal(same, False)
        np.testing.assert_array_equal(dense, same)


def test_graph_validation():
    with pytest.raises(ValueError):
        DependencyGraph(sp.csr_matrix(np.array([[0, 1], [0, 0]])))
    with pytest.raises(ValueError):
        DependencyGraph(sp.csr_matrix(np.eye(2)))
    with pytest.raises(ValueError):
        DependencyGraph(sp.csr_matrix(np.zeros((2, 3))))


# -- covers -------------------------------------------------------------------

def test_two_villages_of_three():
    cover = greedy_cover(build_dependency_graph([0, 0, 0, 1, 1, 1]))
    assert cover.J == 3 and cover.sizes == [2, 2, 2]


def test_edgeless_cover_one_class():
    cover = greedy_cover(build_dependency_graph(np.arange(5)))
    assert cover.J == 1 and cover.sizes == [5]


def test_random_partitions_cover_optimal(rng):
    for _ in range(100):
        n = int(rng.integers(1, 60))
        labels = random_partition(rng, n)
        G = build_dependency_graph(labels)
        cover = greedy_cover(G)
        assert cover.J == np.bincount(labels).max()
        for c in cover.classes:
            assert G.adjacency[c][:, c].nnz == 0
        assert sorted(np.concatenate(cover.classes).tolist()) == list(range(n))


def test_validate_catches_bad_cover():
    G = build_dependency_graph([0, 0, 1])
    with pytest.raises(AssertionError):
        ProperCover((np.array([0, 1]), np.array([2])), np.zeros(3)).validate(G)
    with pytest.raises(AssertionError):
        ProperCover((np.array([0]), np.array([1])), np.zeros(3)).validate(G)


def test_greedy_against_exact_chromatic_number(rng):
    gaps = []
    for _ in range(40):
        n = int(rng.integers(1, 8))
        A = np.triu(rng.random((n, n)) < 0.4, 1)
        G = DependencyGraph(sp.csr_matrix(A | A.T))
        cover = greedy_cover(G)
        chi = chromatic_number(G)
        assert cover.J >= chi
        gaps.append(cover.J - chi)
    print("greedy minus chromatic number:", np.bincount(gaps).tolist())


def test_cover_to_dict():
    doc = greedy_cover(build_dependency_graph([0, 1, 1])).to_dict()
    assert doc["J"] == 2 and sum(doc["sizes"]) == 3


# -- rate calculator ----------------------------------------------------------

@pytest.mark.parametrize("family,L,ks", [("non-exp", 1, (2, 1)), ("non-exp", 2, (4, 2)),
                                         ("non-exp", 3, (4, 3)), ("exp", 1, (4, 1)),
                                         ("exp", 2, (6, 3)), ("exp", 4, (6, 7))])
def test_rate_exponents(family, L, ks):
    assert rate_exponents(family, L) == ks


def _inputs(**kw):
    base = dict(n=10_000, cover_sizes=(50,) * 200, c_n=10, beta=8, d_star=4,
                family="non-exp", L=2, rho=1.0)
    base.update(kw)
    return RateInputs(**base)


def test_rate_inputs_validation():
    for bad in (dict(beta=0.5), dict(cover_sizes=()), dict(c_n=0), dict(family="relu")):
        with pytest.raises(ValueError):
            _inputs(**bad)


def _decimal_bound(n, sizes, c_n, beta, d_star, k, s, rho):
    getcontext().prec = 50
    D = Decimal
    base = sum(D(1) + D(m).ln() for m in sizes) * D(c_n) ** s / D(n)
    expo = D(beta) / (D(beta) + D(k) * D(d_star))
    J = D(len(sizes))
    approx = (expo * base.ln()).exp()
    cover = (J * J.ln() + J * D(rho)) / D(n)
    width = ((-D(d_star) / (D(beta) + D(k) * D(d_star))) * base.ln()).exp()
    return approx + cover, width


def test_worked_example_high_precision():
    inp = _inputs()
    rb = rate_bound(inp)
    want, width = _decimal_bound(10_000, inp.cover_sizes, 10, 8, 4, 4, 2, 1.0)
    assert (rb.k, rb.s) == (4, 2)
    assert rb.value == pytest.approx(float(want), rel=1e-13)
    assert rb.base == pytest.approx(2 * (1 + math.log(50)), rel=1e-14)
    assert rb.condition_ratio == pytest.approx(200 * math.log(200) / 100, rel=1e-14)
    assert rb.up_to_constants and rb.constant == 1.0
    assert suggest_width(inp) == max(1, math.ceil(float(width)))


def test_width_small_base_high_precision():
    inp = _inputs(n=10 ** 9, c_n=2, L=1, cover_sizes=(5,) * 10)
    k, s = rate_exponents("non-exp", 1)
    _, width = _decimal_bound(10 ** 9, inp.cover_sizes, 2, 8, 4, k, s, 1.0)
    assert float(width) > 2
    assert suggest_width(inp) == math.ceil(float(width))


def test_bound_decreases_when_n_doubles(rng):
    for _ in range(200):
        inp = _inputs(n=int(rng.integers(100, 10 ** 6)), c_n=float(rng.uniform(1, 20)),
                      beta=float(rng.uniform(1, 20)), d_star=int(rng.integers(1, 10)),
                      cover_sizes=tuple(rng.integers(1, 100, int(rng.integers(1, 50)))),
                      family=["exp", "non-exp"][int(rng.integers(2))],
                      L=int(rng.integers(1, 4)), rho=float(rng.uniform(0.1, 5)))
        a = rate_bound(inp).value
        b = rate_bound(RateInputs(**{**inp.__dict__, "n": 2 * inp.n})).value
        assert b < a


def test_bound_monotone_in_cn_J_rho(rng):
    for _ in range(200):
        inp = _inputs(n=int(rng.integers(1000, 10 ** 6)), c_n=float(rng.uniform(1, 20)),
                      cover_sizes=tuple(rng.integers(2, 100, int(rng.integers(1, 50)))),
                      rho=float(rng.uniform(0.1, 5)))
        v = rate_bound(inp).value
        kw = dict(inp.__dict__)
        assert rate_bound(RateInputs(**{**kw, "c_n": inp.c_n * 1.5})).value > v
        assert rate_bound(RateInputs(**{**kw, "rho": inp.rho + 1})).value > v
        more = inp.cover_sizes + (int(rng.integers(2, 100)),)
        assert rate_bound(RateInputs(**{**kw, "cover_sizes": more})).value > v


def test_width_weakly_increases_with_n():
    widths = [suggest_width(_inputs(n=n, c_n=2, cover_sizes=(5,) * 10))
              for n in (10 ** 3, 10 ** 5, 10 ** 7, 10 ** 9, 10 ** 11)]
    assert widths == sorted(widths) and widths[-1] > widths[0]


def test_width_beta_limit():
    assert suggest_width(_inputs(n=10 ** 9, c_n=2, beta=1e12)) == 1
