"""Doubly robust policy values and treatment effects with village-clustered variance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, clone

from .graph import Network

__all__ = [
    "NuisanceEstimates",
    "PolicyRule",
    "CausalReport",
    "propensity_trim",
    "influence",
    "policy_value",
    "ate",
    "estimate_policy",
    "cluster_variance",
    "confidence_interval",
    "centrality_percentile_policy",
    "NetworkAIPW",
]

DEFAULT_P_MIN = 0.01


def propensity_trim(p_raw, p_min=DEFAULT_P_MIN):
    """Clamp propensities into ``[p_min, 1 - p_min]``.

    Returns ``(p, n_trimmed)``.
    """
    if not 0.0 < p_min < 0.5:
        raise ValueError("p_min must lie in (0, 0.5)")
    p_raw = np.asarray(p_raw, dtype=np.float64)
    p = np.clip(p_raw, p_min, 1.0 - p_min)
    return p, int(np.count_nonzero(p != p_raw))


@dataclass
class NuisanceEstimates:
    """Per-node ``mu_1``, ``mu_0`` on the outcome scale and trimmed ``p_1``."""

    mu1: np.ndarray
    mu0: np.ndarray
    p1: np.ndarray
    p_min: float = DEFAULT_P_MIN
    n_trimmed: int = 0

    def __post_init__(self):
        self.mu1 = np.asarray(self.mu1, dtype=np.float64).ravel()
        self.mu0 = np.broadcast_to(np.asarray(self.mu0, dtype=np.float64),
                                   self.mu1.shape).copy()
        self.p1 = np.broadcast_to(np.asarray(self.p1, dtype=np.float64),
                                  self.mu1.shape).copy()

    @classmethod
    def from_raw(cls, mu1, mu0, p1_raw, p_min=DEFAULT_P_MIN):
        p, k = propensity_trim(np.broadcast_to(p1_raw, np.shape(mu1)), p_min)
        return cls(mu1, mu0, p, p_min, k)

    @property
    def p0(self):
        return 1.0 - self.p1

    def check(self):
        lo, hi = self.p_min, 1.0 - self.p_min
        tol = 1e-12
        if np.any(self.p1 < lo - tol) or np.any(self.p1 > hi + tol):
            raise ValueError("propensity outside the trimming bounds; trim before use")


@dataclass(frozen=True)
class PolicyRule:
    """Deterministic assignment ``s(xi_i)`` in {0, 1} per node."""

    assign: np.ndarray
    tag: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.assign).ravel()
        if not np.all((s == 0) | (s == 1)):
            raise ValueError("policy assignments must be 0 or 1")
        object.__setattr__(self, "assign", s.astype(np.float64))

    @classmethod
    def treat_all(cls, n):
        return cls(np.ones(n), "ate-all-ones")

    @property
    def s1(self):
        return self.assign

    @property
    def s0(self):
        return 1.0 - self.assign


@dataclass
class CausalReport:
    zeta: np.ndarray
    estimate: float
    sigma: float
    se: float
    ci: tuple
    level: float
    n: int
    n_clusters: int
    cluster_sizes: dict
    cluster_means: dict
    kind: str = "policy"
    n_trimmed: int = 0

    def to_dict(self):
        return {
            "kind": self.kind,
            "estimate": self.estimate,
            "sigma_n": self.sigma,
            "se": self.se,
            "ci": list(self.ci),
            "level": self.level,
            "n": self.n,
            "n_clusters": self.n_clusters,
            "n_trimmed": self.n_trimmed,
            "cluster_sizes": {str(k): int(v) for k, v in self.cluster_sizes.items()},
            "cluster_means": {str(k): float(v) for k, v in self.cluster_means.items()},
        }


def _phi(y, t, arm, mu, p):
    ind = (t == arm).astype(np.float64)
    return ind / p * (y - mu) + mu


def influence(y, t, rule: PolicyRule | np.ndarray, nuisance: NuisanceEstimates, i=None):
    """``zeta_i = s_1 phi_1 + s_0 phi_0`` with
    ``phi_t = 1{t_i = t} / p_t (y_i - mu_t) + mu_t``.

    Returns the whole vector, or node ``i``'s value when ``i`` is given.
    """
    nuisance.check()
    y = np.asarray(y, dtype=np.float64).ravel()
    t = np.asarray(t).ravel()
    s = rule.assign if isinstance(rule, PolicyRule) else np.asarray(rule, float).ravel()
    s = np.broadcast_to(s, y.shape)
    phi1 = _phi(y, t, 1, nuisance.mu1, nuisance.p1)
    phi0 = _phi(y, t, 0, nuisance.mu0, nuisance.p0)
    zeta = s * phi1 + (1.0 - s) * phi0
    return zeta if i is None else float(zeta[int(i)])


def policy_value(zeta) -> float:
    """Sample mean of the influence values."""
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.size == 0:
        raise ValueError("empty sample")
    return float(zeta.mean())


def _cluster_stats(zeta, village):
    zeta = np.asarray(zeta, dtype=np.float64).ravel()
    village = np.asarray(village).ravel()
    if village.shape != zeta.shape:
        raise ValueError("need one cluster label per influence value")
    labels, inv, sizes = np.unique(village, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=zeta, minlength=labels.size)
    return labels, sizes, sums / sizes


def cluster_variance(zeta, village) -> float:
    """Village-clustered variance
    ``(1/C) sum_c (n_c^2 C / n) (mean_c - mean)^2``.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    # shift by one observation so constant inputs give exactly zero
    zeta = zeta - zeta[0] if zeta.size else zeta
    labels, sizes, means = _cluster_stats(zeta, village)
    if labels.size < 2:
        raise ValueError("cluster-robust variance needs at least two clusters")
    n = sizes.sum()
    C = labels.size
    overall = zeta.mean()
    return float(np.sum(sizes.astype(float) ** 2 * C / n * (means - overall) ** 2) / C)


def confidence_interval(estimate, sigma, n, level=0.95):
    """Normal interval ``estimate +/- q * sqrt(sigma / n)``.

    At ``level=0.95`` the quantile is 1.96, as usually reported.
    """
    if sigma < 0:
        raise ValueError("variance must be non-negative")
    q = 1.96 if level == 0.95 else float(norm.ppf(0.5 + level / 2))
    half = q * math.sqrt(sigma / n)
    return (estimate - half, estimate + half)


def estimate_policy(y, t, rule, nuisance, village, level=0.95, kind="policy"):
    zeta = influence(y, t, rule, nuisance)
    return _report(zeta, village, level, kind, nuisance.n_trimmed)


def _report(zeta, village, level, kind, n_trimmed=0):
    est = policy_value(zeta)
    sigma = cluster_variance(zeta, village)
    n = zeta.size
    labels, sizes, means = _cluster_stats(zeta, village)
    return CausalReport(zeta, est, sigma, math.sqrt(sigma / n),
                        confidence_interval(est, sigma, n, level), level, n,
                        labels.size, dict(zip(labels.tolist(), sizes.tolist())),
                        dict(zip(labels.tolist(), means.tolist())), kind, n_trimmed)


def ate(y, t, nuisance: NuisanceEstimates, village, level=0.95) -> CausalReport:
    """Average treatment effect: mean of ``phi_1 - phi_0``."""
    t = np.asarray(t).ravel()
    if not np.any(t == 1) or not np.any(t == 0):
        raise ValueError("both treatment arms must be non-empty")
    nuisance.check()
    y = np.asarray(y, dtype=np.float64).ravel()
    zeta = _phi(y, t, 1, nuisance.mu1, nuisance.p1) - _phi(y, t, 0, nuisance.mu0,
                                                            nuisance.p0)
    return _report(zeta, village, level, "ate", nuisance.n_trimmed)


def centrality_percentile_policy(centrality, side="top", q=0.25, eligible=None,
                                 tag=None) -> PolicyRule:
    """Assign treatment to the ``ceil(q * n)`` most (``top``) or least
    (``bottom``) central eligible nodes.

    Ties at the cut-off go to the lower node ids.
    """
    c = np.asarray(centrality, dtype=np.float64).ravel()
    if side not in ("top", "bottom"):
        raise ValueError("side must be 'top' or 'bottom'")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    idx = np.arange(c.size) if eligible is None else np.flatnonzero(eligible)
    k = int(math.ceil(q * idx.size - 1e-12))
    key = -c[idx] if side == "top" else c[idx]
    chosen = idx[np.lexsort((idx, key))[:k]]
    s = np.zeros(c.size)
    s[chosen] = 1.0
    return PolicyRule(s, tag or f"centrality-{side}-{q:g}",
                      {"side": side, "q": q, "count": k})


class NetworkAIPW(BaseEstimator):
    """Doubly robust estimator with GNN nuisance models.

    Parameters
    ----------
    outcome_model : estimator
        Fitted separately on each arm's nodes; must expose
        ``predict_outcome(net)`` (see :class:`gnnhet.estimators.GNNClassifier`).
    propensity_model : estimator or "mean"
        ``"mean"`` uses the sample treated share; an estimator must expose
        ``predict_proba(net)``.
    y0_zero : bool
        Treat ``y_i(0) = 0`` as known, so no control-arm outcome model is fit.
    p_min : float
        Propensity trimming bound.
    """

    def __init__(self, outcome_model=None, propensity_model="mean", y0_zero=False,
                 p_min=DEFAULT_P_MIN, level=0.95):
        self.outcome_model = outcome_model
        self.propensity_model = propensity_model
        self.y0_zero = y0_zero
        self.p_min = p_min
        self.level = level

    def fit(self, net: Network, y, t):
        from .estimators import GNNClassifier

        y = np.asarray(y, dtype=np.float64).ravel()
        t = np.asarray(t).ravel().astype(np.int64)
        if y.shape[0] != net.n or t.shape[0] != net.n:
            raise ValueError("y and t need one entry per node")
        base = self.outcome_model if self.outcome_model is not None else GNNClassifier()
        self.outcome_model_1_ = clone(base).fit(net, y, sample_mask=t == 1)
        mu1 = self.outcome_model_1_.predict_outcome(net)
        if self.y0_zero:
            self.outcome_model_0_ = None
            mu0 = np.zeros(net.n)
        else:
            self.outcome_model_0_ = clone(base).fit(net, y, sample_mask=t == 0)
            mu0 = self.outcome_model_0_.predict_outcome(net)
        if isinstance(self.propensity_model, str):
            if self.propensity_model != "mean":
                raise ValueError("propensity_model must be 'mean' or an estimator")
            p_raw = np.full(net.n, t.mean())
            self.propensity_model_ = None
        else:
            self.propensity_model_ = clone(self.propensity_model).fit(net, t)
            p_raw = self.propensity_model_.predict_proba(net)[:, 1]
        self.nuisance_ = NuisanceEstimates.from_raw(mu1, mu0, p_raw, self.p_min)
        self.y_, self.t_, self.village_ = y, t, np.asarray(net.village)
        self.report_ = ate(y, t, self.nuisance_, self.village_, self.level)
        self.ate_ = self.report_.estimate
        return self

    def policy_value(self, rule: PolicyRule) -> CausalReport:
        return estimate_policy(self.y_, self.t_, rule, self.nuisance_, self.village_,
                               self.level)
