"""Monte Carlo study of the doubly robust ATE estimator on simulated villages.

Seeds: every random stream is derived from the master seed with
``SeedSequence(master, spawn_key=key)``:

* ``(0, 0)`` outcome model parameters, ``(0, 1)`` treatment model parameters
* ``(1,)`` population truth
* ``(2, r)`` replication ``r`` (network, covariates, shocks, training)

so replications can run in any order or in parallel with identical results.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .causal import NuisanceEstimates, ate
from .estimators import GNNClassifier
from .graph import Network, edge_probability_for_mean_degree, gen_er_capped, mean_operator

__all__ = [
    "DgpParams",
    "Dgps",
    "McConfig",
    "ReplicationRecord",
    "McReport",
    "draw_dgp",
    "eval_quadratic",
    "quadratic_features",
    "heterogeneity",
    "gen_outcomes",
    "gen_treatment",
    "estimate_truth",
    "run_replication",
    "aggregate",
    "run_study",
    "seed_sequence",
    "make_dgps",
    "simulate_sample",
    "load_study_configs",
]

OUTCOME_RANGE = (0.3, 0.7)
TREATMENT_RANGE = (0.1, 0.2)
QUADRATIC_RANGE = (-0.1, 0.1)
FINAL_CONSTANT = -0.1


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class DgpParams:
    """Two-layer quadratic heterogeneity model.

    Layer ``l`` maps ``(x, y)`` to ``A x + B y + C x~ + D y~ + c`` where
    ``x~ = vec(outer(x, x))`` in row-major order (``x~[i*d + j] = x_i x_j``).
    Layer 1 has ``h`` outputs, layer 2 one output.
    """

    A1: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    D1: np.ndarray
    c1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    D2: np.ndarray
    c2: np.ndarray
    scenario: str = "outcome"

    @classmethod
    def zeros(cls, d=4, h=4, scenario="outcome"):
        return cls(np.zeros((h, d)), np.zeros((h, d)), np.zeros((h, d * d)),
                   np.zeros((h, d * d)), np.zeros(h), np.zeros((1, h)),
                   np.zeros((1, h)), np.zeros((1, h * h)), np.zeros((1, h * h)),
                   np.zeros(1), scenario)

    def layer(self, l):
        if l == 1:
            return self.A1, self.B1, self.C1, self.D1, self.c1
        if l == 2:
            return self.A2, self.B2, self.C2, self.D2, self.c2
        raise ValueError("layer must be 1 or 2")

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in out.items()}

    @classmethod
    def from_dict(cls, doc):
        kw = {k: (np.asarray(v, dtype=float) if k != "scenario" else v)
              for k, v in doc.items()}
        return cls(**kw)


@dataclass
class Dgps:
    outcome: DgpParams
    treatment: DgpParams | None = None


def draw_dgp(seed, scenario="outcome", d=4, h=4) -> DgpParams:
    """Draw one parameter set; linear and constant blocks come from the
    scenario's range, quadratic blocks from ``U[-0.1, 0.1]``, and the final
    constant is fixed at ``-0.1``.

    Draw order: ``A1, B1, C1, D1, c1, A2, B2, C2, D2``.
    """
    if scenario == "outcome":
        lo, hi = OUTCOME_RANGE
    elif scenario == "treatment":
        lo, hi = TREATMENT_RANGE
    else:
        raise ValueError("scenario must be 'outcome' or 'treatment'")
    rng = np.random.default_rng(seed)
    qlo, qhi = QUADRATIC_RANGE
    A1 = rng.uniform(lo, hi, (h, d))
    B1 = rng.uniform(lo, hi, (h, d))
    C1 = rng.uniform(qlo, qhi, (h, d * d))
    D1 = rng.uniform(qlo, qhi, (h, d * d))
    c1 = rng.uniform(lo, hi, h)
    A2 = rng.uniform(lo, hi, (1, h))
    B2 = rng.uniform(lo, hi, (1, h))
    C2 = rng.uniform(qlo, qhi, (1, h * h))
    D2 = rng.uniform(qlo, qhi, (1, h * h))
    return DgpParams(A1, B1, C1, D1, c1, A2, B2, C2, D2,
                     np.array([FINAL_CONSTANT]), scenario)


def quadratic_features(x) -> np.ndarray:
    """Row-major second-order interactions of each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.einsum("ni,nj->nij", x, x).reshape(x.shape[0], -1)


def eval_quadratic(params: DgpParams, x, y, layer: int) -> np.ndarray:
    """``A x + B y + C x~ + D y~ + c`` for one layer; rows of ``x``/``y`` are nodes."""
    A, B, C, D, c = params.layer(layer)
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != A.shape[1] or y.shape[1] != B.shape[1]:
        raise ValueError("input width does not match the layer")
    out = (x @ A.T + y @ B.T + quadratic_features(x) @ C.T
           + quadratic_features(y) @ D.T + c)
    return out[0] if single else out


def heterogeneity(net: Network, params: DgpParams) -> np.ndarray:
    """True ``z*_i`` for every node under the two-layer quadratic model."""
    M = mean_operator(net)
    x = np.asarray(net.covariates)
    h = eval_quadratic(params, x, M @ x, 1)
    return eval_quadratic(params, h, M @ h, 2)[:, 0]


def gen_outcomes(net: Network, dgp_outcome: DgpParams, rng):
    """``y_i(1) = 1[z*_i > eps_i]`` with logistic shocks; ``y_i(0) = 0``.

    Returns ``(y1, z_star)``.
    """
    rng = np.random.default_rng(rng)
    z = heterogeneity(net, dgp_outcome)
    eps = rng.logistic(0.0, 1.0, size=net.n)
    return (z > eps).astype(np.float64), z


def gen_treatment(net: Network, scenario: str, dgp_treatment: DgpParams | None, rng):
    """Treatment draws and their true propensities.

    ``random``: ``t_i = 1[U_i > 0.5]``. ``gnn``: ``t_i = 1[z*_i > eps_i]``
    under the treatment model.
    """
    rng = np.random.default_rng(rng)
    if scenario == "random":
        if dgp_treatment is not None:
            raise ValueError("random scenario takes no treatment model")
        return (rng.uniform(size=net.n) > 0.5).astype(np.int64), np.full(net.n, 0.5)
    if scenario == "gnn":
        if dgp_treatment is None:
            raise ValueError("gnn scenario needs a treatment model")
        z = heterogeneity(net, dgp_treatment)
        t = (z > rng.logistic(0.0, 1.0, size=net.n)).astype(np.int64)
        return t, _sigmoid(z)
    raise ValueError("scenario must be 'random' or 'gnn'")


@dataclass
class McConfig:
    """Monte Carlo study settings.

    ``nuisance`` selects how ``mu_1`` and ``p`` are obtained: ``gnn`` trains
    the estimator networks, ``oracle`` plugs in the truth, and
    ``oracle_mu_const_p`` / ``zero_mu_oracle_p`` get one of the two right.
    """

    villages: int = 50
    n_v: int = 200
    mean_degree: float = 5.0
    cap: int = 10
    d: int = 4
    reps: int = 1000
    scenario: str = "random"
    hidden: tuple = (8, 8)
    activation: str = "sigmoid"
    lr: float = 0.001
    batch_size: int = 5
    epochs: int = 100
    p_min: float = 0.01
    nuisance: str = "gnn"
    wrong_p: float = 0.5
    truth_n: int = 1_000_000
    seed: int = 2024
    schema_version: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.reps < 1:
            raise ValueError("need at least one replication")
        if self.scenario not in ("random", "gnn"):
            raise ValueError("scenario must be 'random' or 'gnn'")
        if self.nuisance not in ("gnn", "oracle", "oracle_mu_const_p", "zero_mu_oracle_p"):
            raise ValueError(f"unknown nuisance mode {self.nuisance!r}")

    @property
    def p_e(self):
        return edge_probability_for_mean_degree(self.mean_degree, self.n_v)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**doc)


def make_dgps(mc: McConfig) -> Dgps:
    out = draw_dgp(seed_sequence(mc.seed, 0, 0), "outcome", mc.d)
    tr = draw_dgp(seed_sequence(mc.seed, 0, 1), "treatment", mc.d) \
        if mc.scenario == "gnn" else None
    return Dgps(out, tr)


def estimate_truth(dgp_outcome: DgpParams, mc: McConfig, n_big=None, seed=None):
    """Population ``E[y(1)] = E[sigmoid(z*)]`` by simulation on fresh villages.

    Returns ``(tau, se)``; the SE treats villages as independent draws.
    """
    n_big = mc.truth_n if n_big is None else int(n_big)
    ss = seed_sequence(mc.seed, 1) if seed is None else seed
    rng = np.random.default_rng(ss)
    n_vill = max(2, math.ceil(n_big / mc.n_v))
    chunk = 500
    means = []
    done = 0
    while done < n_vill:
        k = min(chunk, n_vill - done)
        net = gen_er_capped(mc.n_v, k, mc.p_e, mc.cap, d=mc.d, seed=rng)
        p = _sigmoid(heterogeneity(net, dgp_outcome))
        means.append(p.reshape(k, mc.n_v).mean(axis=1))
        done += k
    means = np.concatenate(means)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(means.size))


@dataclass
class ReplicationRecord:
    rep: int
    tau_hat: float
    sigma: float
    ci: tuple
    covered: bool
    treated_share: float = math.nan
    n_trimmed: int = 0
    seconds: float = 0.0


def _fit_classifier(mc: McConfig, net, target, mask, seed):
    est = GNNClassifier(hidden=mc.hidden, activation=mc.activation, lr=mc.lr,
                        batch_size=mc.batch_size, max_epochs=mc.epochs,
                        early_stopping=False, random_state=seed)
    return est.fit(net, target, sample_mask=mask).predict_outcome(net)


def simulate_sample(mc: McConfig, dgps: Dgps, rng):
    """One simulated data set: ``(net, y, t, mu1_true, p_true)``."""
    net = gen_er_capped(mc.n_v, mc.villages, mc.p_e, mc.cap, d=mc.d, seed=rng)
    y1, z = gen_outcomes(net, dgps.outcome, rng)
    t, p_true = gen_treatment(net, mc.scenario, dgps.treatment, rng)
    y = t * y1
    return net, y, t, _sigmoid(z), p_true


def run_replication(mc: McConfig, dgps: Dgps, rep_index: int, truth: float):
    """Simulate, estimate the nuisances, and check CI coverage of ``truth``."""
    start = time.perf_counter()
    ss = seed_sequence(mc.seed, 2, rep_index)
    data_ss, fit_ss = ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    net, y, t, mu_true, p_true = simulate_sample(mc, dgps, rng)
    fit_seed = int(fit_ss.generate_state(1)[0])
    try:
        if mc.nuisance == "oracle":
            mu1, p1 = mu_true, p_true
        elif mc.nuisance == "oracle_mu_const_p":
            mu1, p1 = mu_true, np.full(net.n, mc.wrong_p)
        elif mc.nuisance == "zero_mu_oracle_p":
            mu1, p1 = np.zeros(net.n), p_true
        else:
            mu1 = _fit_classifier(mc, net, y, t == 1, fit_seed)
            if mc.scenario == "random":
                p1 = np.full(net.n, t.mean())
            else:
                p1 = _fit_classifier(mc, net, t, None, fit_seed + 1)
        nuis = NuisanceEstimates.from_raw(mu1, np.zeros(net.n), p1, mc.p_min)
        rep = ate(y, t, nuis, net.village)
    except Exception as exc:
        raise RuntimeError(f"replication {rep_index} failed: {exc}") from exc
    lo, hi = rep.ci
    return ReplicationRecord(rep_index, rep.estimate, rep.sigma, (lo, hi),
                             bool(lo <= truth <= hi), float(t.mean()),
                             nuis.n_trimmed, time.perf_counter() - start)


@dataclass
class McReport:
    records: list
    truth: float
    truth_se: float
    truth_method: str
    bias: float
    coverage: float
    config: dict = field(default_factory=dict)

    @property
    def reps(self):
        return len(self.records)

    def to_dict(self):
        est = np.array([r.tau_hat for r in self.records])
        return {
            "architecture": list(self.config.get("hidden", [])),
            "scenario": self.config.get("scenario"),
            "nuisance": self.config.get("nuisance"),
            "bias": self.bias,
            "coverage": self.coverage,
            "reps": self.reps,
            "truth": self.truth,
            "truth_se": self.truth_se,
            "truth_method": self.truth_method,
            "mean_estimate": float(est.mean()),
            "sd_estimate": float(est.std(ddof=1)) if est.size > 1 else 0.0,
            "mean_se": float(np.mean([math.sqrt(r.sigma / self._n) for r in self.records])),
            "epochs": self.config.get("epochs"),
            "config": self.config,
            "records": [{**asdict(r), "ci": list(r.ci)} for r in self.records],
        }

    @property
    def _n(self):
        return self.config.get("villages", 1) * self.config.get("n_v", 1)


def aggregate(records, truth, truth_se=0.0, truth_method="given", config=None) -> McReport:
    """Bias ``mean(tau_hat) - tau`` and the share of intervals covering ``tau``."""
    records = sorted(records, key=lambda r: r.rep)
    if not records:
        raise ValueError("need at least one replication record")
    est = np.array([r.tau_hat for r in records])
    cov = np.array([r.covered for r in records], dtype=float)
    return McReport(records, float(truth), float(truth_se), truth_method,
                    float(est.mean() - truth), float(cov.mean()), dict(config or {}))


def _worker(args):
    mc, dgps, reps, truth = args
    return [run_replication(mc, dgps, r, truth) for r in reps]


def run_study(mc: McConfig, threads: int = 1, truth=None, progress=None) -> McReport:
    """Run all replications of one study and aggregate them."""
    dgps = make_dgps(mc)
    if truth is None:
        tau, tau_se = estimate_truth(dgps.outcome, mc)
        method = f"simulated E[sigmoid(z*)] over {mc.truth_n} nodes"
    else:
        tau, tau_se, method = float(truth), 0.0, "given"
    reps = list(range(mc.reps))
    if threads <= 1:
        records = []
        for r in reps:
            records.append(run_replication(mc, dgps, r, tau))
            if progress:
                progress(records[-1])
    else:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = [rec for part in pool.map(_worker,
                                                [(mc, dgps, c, tau) for c in chunks])
                       for rec in part]
    return aggregate(records, tau, tau_se, method, mc.to_dict())


def load_study_configs(path) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    if "studies" in doc:
        base = {k: v for k, v in doc.items() if k != "studies"}
        return [McConfig.from_dict({**base, **s}) for s in doc["studies"]]
    return [McConfig.from_dict(doc)]
