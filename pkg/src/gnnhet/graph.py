"""Directed village networks and neighbourhood queries.

Convention: ``adjacency[i, j] == 1`` means ``j`` is an adjacent neighbour of
``i`` (``j in N(i)``). In the generated networks this is an edge *from* ``j``
*to* ``i``, so ``N(i)`` is the in-neighbourhood.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Network",
    "NetworkValidationError",
    "LocalData",
    "neighbors",
    "neighbor_tuple",
    "distance_tuple",
    "local_data",
    "mean_neighbor_rows",
    "mean_operator",
    "closeness_centrality",
    "betweenness_centrality",
    "village_zscore",
    "edge_probability_for_mean_degree",
    "gen_er_capped",
]


class NetworkValidationError(ValueError):
    """Raised when network data violates an ingest invariant."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable sample ``(x_i, D)`` with village labels.

    Parameters
    ----------
    adjacency : scipy.sparse.csr_matrix, shape (n, n)
        Binary adjacency matrix with sorted column indices.
    covariates : ndarray, shape (n, d)
        Node covariates in ``[-1, 1]``.
    village : ndarray, shape (n,)
        Integer village label per node.

    Use :meth:`from_edges` or :meth:`from_dense` rather than the raw
    constructor; they validate and canonicalise the inputs.
    """

    adjacency: sp.csr_matrix
    covariates: np.ndarray
    village: np.ndarray
    meta: dict = field(default_factory=dict)

    # -- construction ---------------------------------------------------
    @classmethod
    def from_edges(cls, n, src, dst, covariates, village=None, *, meta=None,
                   check_range=True):
        """Build from edge lists where each pair sets ``d[src, dst] = 1``.

        Duplicate pairs collapse to a single edge.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise NetworkValidationError("src and dst lengths differ")
        if src.size and (src.min() < 0 or dst.min() < 0
                         or src.max() >= n or dst.max() >= n):
            raise NetworkValidationError("edge endpoint out of range")
        if np.any(src == dst):
            raise NetworkValidationError("self-loops (d_ii = 1) are not allowed")
        data = np.ones(src.size, dtype=np.int8)
        adj = sp.coo_matrix((data, (src, dst)), shape=(n, n)).tocsr()
        adj.data[:] = 1  # collapse duplicates
        return cls._build(adj, covariates, village, meta, check_range)

    @classmethod
    def from_dense(cls, adjacency, covariates, village=None, *, meta=None,
                   check_range=True):
        adjacency = np.asarray(adjacency)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise NetworkValidationError("adjacency must be square")
        if not np.isin(adjacency, (0, 1)).all():
            raise NetworkValidationError("adjacency must be binary")
        if np.any(np.diag(adjacency) != 0):
            raise NetworkValidationError("self-loops (d_ii = 1) are not allowed")
        adj = sp.csr_matrix(adjacency.astype(np.int8))
        return cls._build(adj, covariates, village, meta, check_range)

    @classmethod
    def _build(cls, adj, covariates, village, meta, check_range):
        n = adj.shape[0]
        adj = adj.tocsr()
        adj.eliminate_zeros()
        adj.sort_indices()
        adj.indptr = adj.indptr.astype(np.int64)
        adj.indices = adj.indices.astype(np.int64)
        x = np.asarray(covariates, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        if x.shape[0] != n:
            raise NetworkValidationError(
                f"covariates have {x.shape[0]} rows for {n} nodes")
        if not np.all(np.isfinite(x)):
            raise NetworkValidationError("covariates must be finite")
        if check_range and x.size and (x.min() < -1.0 or x.max() > 1.0):
            raise NetworkValidationError(
                "covariates must lie in [-1, 1]; rescale before ingest")
        if village is None:
            village = np.zeros(n, dtype=np.int64)
        village = np.asarray(village).ravel()
        if village.shape[0] != n:
            raise NetworkValidationError("village labels must have one entry per node")
        village = village.astype(np.int64)
        rows = np.repeat(np.arange(n), np.diff(adj.indptr))
        if np.any(village[rows] != village[adj.indices]):
            raise NetworkValidationError("edge crosses village boundary")
        adj.data.flags.writeable = False
        adj.indptr.flags.writeable = False
        adj.indices.flags.writeable = False
        return cls(adj, _readonly(x), _readonly(village), dict(meta or {}))

    # -- basic properties -------------------------------------------------
    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    @property
    def degree(self) -> np.ndarray:
        """``|N(i)|`` for every node."""
        return np.diff(self.indptr)

    @property
    def villages(self) -> np.ndarray:
        return np.unique(self.village)

    def neighbors_of(self, i) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def with_covariates(self, covariates, *, check_range=True) -> "Network":
        return Network._build(self.adjacency.copy(), covariates, self.village,
                              self.meta, check_range)

    def subgraph(self, nodes) -> "Network":
        """Induced subnetwork on ``nodes`` (relabelled 0..len(nodes)-1)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self.adjacency[nodes][:, nodes]
        return Network._build(sub.tocsr(), self.covariates[nodes],
                              self.village[nodes], self.meta, False)

    def permute(self, perm) -> "Network":
        """Relabel so that new node ``k`` is old node ``perm[k]``."""
        return self.subgraph(perm)

    def symmetrized(self) -> sp.csr_matrix:
        a = self.adjacency
        s = ((a + a.T) > 0).astype(np.int8).tocsr()
        s.sort_indices()
        return s

    def __repr__(self):
        return (f"Network(n={self.n}, d={self.d}, edges={self.adjacency.nnz}, "
                f"villages={self.villages.size})")


# ---------------------------------------------------------------------------
# neighbourhood tuples
# ---------------------------------------------------------------------------

def _check_node(net: Network, i) -> int:
    i = int(i)
    if not 0 <= i < net.n:
        raise IndexError(f"node id {i} out of range for n={net.n}")
    return i


def neighbors(net: Network, i) -> frozenset:
    """The set ``N(i) = {j : d_ij = 1}``."""
    i = _check_node(net, i)
    return frozenset(int(j) for j in net.neighbors_of(i))


def neighbor_tuple(net: Network, i) -> tuple:
    """``D(i)``: neighbours of ``i`` in ascending id order."""
    i = _check_node(net, i)
    return tuple(int(j) for j in net.neighbors_of(i))


def distance_tuple(net: Network, i, l: int) -> tuple:
    """``D_l(i)``, concatenating ``D(j)`` over ``j in D_{l-1}(i)``.

    Repeated nodes are kept, so common friends and cycles show up with
    multiplicity.
    """
    if l < 0:
        raise ValueError("hop count must be non-negative")
    cur = (_check_node(net, i),)
    for _ in range(l):
        nxt = []
        for j in cur:
            nxt.extend(int(k) for k in net.neighbors_of(j))
        cur = tuple(nxt)
    return cur


@dataclass(frozen=True)
class LocalData:
    """Nested local network data of one node.

    ``tree`` mirrors the recursive tuple structure with node ids at the
    leaves; :meth:`values` swaps each id for that node's covariate row.
    """

    node: int
    hops: int
    tree: tuple
    covariates: np.ndarray = field(repr=False, compare=False)

    def values(self):
        x = self.covariates

        def sub(t):
            if isinstance(t, tuple):
                return tuple(sub(e) for e in t)
            return tuple(float(v) for v in x[t])

        return sub(self.tree)

    def flat_ids(self) -> tuple:
        out = []

        def walk(t):
            if isinstance(t, tuple):
                for e in t:
                    walk(e)
            else:
                out.append(t)

        walk(self.tree)
        return tuple(out)

    def leaf_count(self) -> int:
        return len(self.flat_ids())

    def block(self, l: int) -> tuple:
        """The layer-``l`` block appended at step ``l`` (``l >= 1``)."""
        t = self.tree
        for _ in range(self.hops - l):
            t = t[0]
        return t[1]


def local_data(net: Network, i, L: int) -> LocalData:
    """Recursive local data ``xi_{i,L}``.

    ``xi_{i,0} = (x_i)`` and each further hop appends the tuple
    ``((x_k)_{k in D(j)})_{j in D_{l-1}(i)}``. An empty ``D(j)`` contributes
    ``()``; an empty ``D_{l-1}(i)`` contributes ``((),)``.
    """
    if L < 0:
        raise ValueError("hop count must be non-negative")
    i = _check_node(net, i)
    tree = (i,)
    prev = (i,)
    for _ in range(L):
        if prev:
            blk = tuple(neighbor_tuple(net, j) for j in prev)
        else:
            blk = ((),)
        tree = (tree, blk)
        prev = tuple(k for j in prev for k in net.neighbors_of(j))
        prev = tuple(int(k) for k in prev)
    return LocalData(i, L, tree, net.covariates)


def mean_neighbor_rows(net: Network, rows, i) -> np.ndarray:
    """Mean of ``rows[j]`` over ``j in N(i)``; zero vector if ``N(i)`` is empty.

    Rows are summed in ascending neighbour id order and then divided by the
    degree, the same order the GNN kernels use.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] != net.n:
        raise ValueError("rows must have one row per node")
    i = _check_node(net, i)
    nb = net.neighbors_of(i)
    out = np.zeros(rows.shape[1:], dtype=np.float64)
    if nb.size == 0:
        return out
    for j in nb:
        out += rows[j]
    return out / nb.size


def mean_operator(net: Network) -> sp.csr_matrix:
    """Sparse row-normalised adjacency ``M`` so that ``M @ H`` is the neighbour mean."""
    deg = net.degree.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ net.adjacency.astype(np.float64)


# ---------------------------------------------------------------------------
# centrality
# ---------------------------------------------------------------------------

def _centrality_graph(net: Network, directed: bool):
    a = net.adjacency if directed else net.symmetrized()
    return a.indptr, a.indices


def _bfs(indptr, indices, s):
    dist = {s: 0}
    q = deque([s])
    while q:
        v = q.popleft()
        for w in indices[indptr[v]:indptr[v + 1]]:
            w = int(w)
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def closeness_centrality(net: Network, i=None, *, directed=False):
    """Closeness ``(r - 1) / sum_j dist(i, j)`` over the ``r`` nodes reachable
    from ``i`` (``i`` included); 0 when nothing else is reachable.

    Edges never cross villages, so distances are automatically within the
    village. By default the adjacency is symmetrised first; with
    ``directed=True`` paths follow ``i -> j`` for ``j in N(i)``.
    Returns a scalar for a single ``i``, else an array over all nodes.
    """
    indptr, indices = _centrality_graph(net, directed)

    def one(s):
        dist = _bfs(indptr, indices, s)
        total = sum(dist.values())
        return (len(dist) - 1) / total if total > 0 else 0.0

    if i is not None:
        return one(_check_node(net, i))
    return np.array([one(s) for s in range(net.n)])


def betweenness_centrality(net: Network, *, directed=False, exact=False) -> np.ndarray:
    """Unnormalised betweenness by Brandes' accumulation, endpoints excluded.

    On the symmetrised graph each unordered pair is counted once; with
    ``directed=True`` ordered pairs are used. ``exact=True`` accumulates in
    rational arithmetic and rounds once at the end, so results are the
    correctly rounded exact values (much slower; meant for small graphs).
    """
    indptr, indices = _centrality_graph(net, directed)
    n = net.n
    zero = Fraction(0) if exact else 0.0
    bc = [zero] * n
    for s in range(n):
        stack = []
        preds = {}
        sigma = {s: 1}
        dist = {s: 0}
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in indices[indptr[v]:indptr[v + 1]]:
                w = int(w)
                if w not in dist:
                    dist[w] = dist[v] + 1
                    sigma[w] = 0
                    preds[w] = []
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(stack, zero)
        while stack:
            w = stack.pop()
            for v in preds.get(w, ()):
                ratio = Fraction(sigma[v], sigma[w]) if exact else sigma[v] / sigma[w]
                delta[v] += ratio * (1 + delta[w])
            if w != s:
                bc[w] += delta[w]
    if not directed:
        bc = [b / 2 for b in bc]
    return np.array([float(b) for b in bc], dtype=np.float64)


def village_zscore(values, village) -> np.ndarray:
    """Standardise ``values`` within each village (zero where the SD is 0)."""
    values = np.asarray(values, dtype=np.float64)
    village = np.asarray(village)
    out = np.zeros_like(values)
    for v in np.unique(village):
        m = village == v
        sd = values[m].std()
        out[m] = (values[m] - values[m].mean()) / sd if sd > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# random graphs
# ---------------------------------------------------------------------------

def edge_probability_for_mean_degree(mean_degree: float, n_v: int) -> float:
    """``p_e`` with ``p_e * (n_v - 1) = mean_degree``."""
    if n_v < 2:
        raise ValueError("villages need at least two nodes")
    return min(1.0, mean_degree / (n_v - 1))


def gen_er_capped(n_v: int, n_villages: int, p_e: float, cap: int, *, d: int = 4,
                  seed=None) -> Network:
    """Villages of directed Erdos-Renyi graphs with capped in-degree.

    Every ordered pair ``(j -> i)`` inside a village is an edge with
    probability ``p_e``. A node left with more than ``cap`` neighbours keeps a
    uniformly random subset of size ``cap``. Covariates are i.i.d. uniform on
    ``[-1, 1]^d``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if not 0.0 <= p_e <= 1.0:
        raise ValueError("p_e must lie in [0, 1]")
    if cap < 0:
        raise ValueError("degree cap must be non-negative")
    if n_v < 1 or n_villages < 1:
        raise ValueError("need at least one village with one node")
    rng = np.random.default_rng(seed)
    n = n_v * n_villages
    rows, cols = [], []
    for v in range(n_villages):
        draw = rng.random((n_v, n_v)) < p_e
        np.fill_diagonal(draw, False)
        for i in np.flatnonzero(draw.sum(axis=1) > cap):
            keep = np.sort(rng.choice(np.flatnonzero(draw[i]), size=cap,
                                      replace=False))
            draw[i] = False
            draw[i, keep] = True
        r, c = np.nonzero(draw)
        rows.append(r + v * n_v)
        cols.append(c + v * n_v)
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    village = np.repeat(np.arange(n_villages), n_v)
    meta = {"generator": "er_capped", "n_v": n_v, "n_villages": n_villages,
            "p_e": p_e, "cap": cap, "d": d}
    return Network.from_edges(n, np.concatenate(rows), np.concatenate(cols), x,
                              village, meta=meta)
