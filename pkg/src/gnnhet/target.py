"""Leader selection: weighted participation/centrality scores and their frontier."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScoreInputs",
    "FrontierPoint",
    "weighted_score",
    "select_top_k",
    "frontier",
    "non_dominated",
    "baseline_compare",
    "DEFAULT_GRID",
]

DEFAULT_GRID = 101
NORMALIZATION = "minmax-eligible"


@dataclass(frozen=True)
class ScoreInputs:
    """Per-node predicted participation ``p_hat`` and centrality ``c``.

    ``c_norm`` is ``c`` min-max scaled to ``[0, 1]`` over the eligible nodes
    (all zeros when ``c`` is constant there); it is what enters the score.
    """

    p_hat: np.ndarray
    c: np.ndarray
    eligible: np.ndarray
    measure: str = "centrality"
    normalization: str = NORMALIZATION
    c_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.p_hat, dtype=np.float64).ravel()
        c = np.asarray(self.c, dtype=np.float64).ravel()
        if p.shape != c.shape:
            raise ValueError("p_hat and c need one entry per node")
        if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise ValueError("p_hat must lie in [0, 1]")
        if not np.all(np.isfinite(c)):
            raise ValueError("centrality must be finite")
        el = (np.ones(p.size, dtype=bool) if self.eligible is None
              else np.asarray(self.eligible, dtype=bool).ravel())
        if el.shape != p.shape:
            raise ValueError("eligibility mask length differs from node count")
        if not el.any():
            raise ValueError("no eligible nodes")
        lo, hi = c[el].min(), c[el].max()
        cn = (c - lo) / (hi - lo) if hi > lo else np.zeros_like(c)
        for name, val in (("p_hat", p), ("c", c), ("eligible", el), ("c_norm", cn)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def build(cls, p_hat, c, eligible=None, measure="centrality"):
        return cls(p_hat, c, eligible, measure)

    @property
    def n(self):
        return self.p_hat.size


@dataclass(frozen=True)
class FrontierPoint:
    omega: float
    selected: tuple
    mean_p: float
    mean_c: float
    dominated: bool = False

    @property
    def k(self):
        return len(self.selected)


def weighted_score(inputs: ScoreInputs, omega: float) -> np.ndarray:
    """``s_i = (1 - omega) p_hat_i + omega c_i`` with normalised ``c``."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    return (1.0 - omega) * inputs.p_hat + omega * inputs.c_norm


def select_top_k(scores, k: int, eligible=None) -> np.ndarray:
    """Ids of the ``k`` highest-scoring eligible nodes, sorted ascending.

    Equal scores are broken in favour of the lower node id.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    idx = np.arange(s.size) if eligible is None else np.flatnonzero(eligible)
    k = int(k)
    if k < 0 or k > idx.size:
        raise ValueError(f"k={k} exceeds the {idx.size} eligible nodes")
    order = np.lexsort((idx, -s[idx]))
    return np.sort(idx[order[:k]])


def non_dominated(points) -> np.ndarray:
    """Flags points beaten on both means (``>=`` on both, ``>`` on one)."""
    P = np.array([[p.mean_p, p.mean_c] for p in points], dtype=np.float64)
    if P.size == 0:
        return np.zeros(0, dtype=bool)
    ge = (P[None, :, :] >= P[:, None, :]).all(axis=2)
    gt = (P[None, :, :] > P[:, None, :]).any(axis=2)
    return (ge & gt).any(axis=1)


def frontier(inputs: ScoreInputs, k: int, omega_grid=None, threads: int = 1) -> list:
    """Top-``k`` selections along a grid of weights.

    Means use the raw ``p_hat`` and raw centrality. Points are returned in
    grid order with their dominated flag set.
    """
    grid = (np.linspace(0.0, 1.0, DEFAULT_GRID) if omega_grid is None
            else np.asarray(omega_grid, dtype=np.float64).ravel())
    if grid.size == 0:
        raise ValueError("empty omega grid")

    def point(w):
        sel = select_top_k(weighted_score(inputs, float(w)), k, inputs.eligible)
        return FrontierPoint(float(w), tuple(int(i) for i in sel),
                             float(inputs.p_hat[sel].mean()) if sel.size else np.nan,
                             float(inputs.c[sel].mean()) if sel.size else np.nan)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            pts = list(pool.map(point, grid))
    else:
        pts = [point(w) for w in grid]
    flags = non_dominated(pts)
    return [FrontierPoint(p.omega, p.selected, p.mean_p, p.mean_c, bool(f))
            for p, f in zip(pts, flags)]


def baseline_compare(points, baseline, inputs: ScoreInputs) -> list:
    """Gain of each point over a baseline set in standard-deviation units.

    Returns dicts with ``d_p = (mean_p - mean_p_base) / SD(p_hat)`` and
    ``d_c`` likewise; SDs are population SDs over all nodes.
    """
    base = np.asarray(sorted(set(int(i) for i in baseline)), dtype=np.int64)
    if base.size == 0:
        raise ValueError("baseline set is empty")
    if base.min() < 0 or base.max() >= inputs.n:
        raise ValueError("baseline node id out of range")
    bp, bc = inputs.p_hat[base].mean(), inputs.c[base].mean()
    sp_, sc = inputs.p_hat.std(), inputs.c.std()
    out = []
    for p in points:
        out.append({
            "omega": p.omega,
            "d_p": float((p.mean_p - bp) / sp_) if sp_ > 0 else 0.0,
            "d_c": float((p.mean_c - bc) / sc) if sc > 0 else 0.0,
        })
    return out
