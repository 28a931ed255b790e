import json
import math

import numpy as np
import pytest
from scipy.stats import binom

from gnnhet.graph import gen_er_capped
from gnnhet.simulate import (DgpParams, McConfig, ReplicationRecord, aggregate, draw_dgp,
                             estimate_truth, eval_quadratic, gen_outcomes, gen_treatment,
                             heterogeneity, load_study_configs, make_dgps,
                             quadratic_features, run_replication, run_study, seed_sequence)


def loop_quadratic(params, x, y, layer):
    """Term-by-term scalar evaluation of one quadratic layer."""
    A, B, C, D, c = params.layer(layer)
    d_in = len(x)
    out = []
    for r in range(A.shape[0]):
        s = 0.0
        for j in range(d_in):
            s += A[r, j] * x[j] + B[r, j] * y[j]
        for i in range(d_in):
            for j in range(d_in):
                s += C[r, i * d_in + j] * x[i] * x[j] + D[r, i * d_in + j] * y[i] * y[j]
        out.append(s + c[r])
    return np.array(out)


def loop_heterogeneity(net, params, i):
    def nb_mean(rows, k):
        nb = net.neighbors_of(k)
        return np.mean(rows[nb], axis=0) if nb.size else np.zeros(rows.shape[1])

    X = net.covariates
    h = np.array([loop_quadratic(params, X[k], nb_mean(X, k), 1) for k in range(net.n)])
    return loop_quadratic(params, h[i], nb_mean(h, i), 2)[0]


# -- parameter draws ----------------------------------------------------------

@pytest.mark.parametrize("scenario,lo,hi", [("outcome", 0.3, 0.7), ("treatment", 0.1, 0.2)])
def test_draw_ranges(scenario, lo, hi):
    p = draw_dgp(seed_sequence(9, 0, 0), scenario)
    for block in (p.A1, p.B1, p.c1, p.A2, p.B2):
        assert block.min() >= lo and block.max() <= hi
    for block in (p.C1, p.D1, p.C2, p.D2):
        assert block.min() >= -0.1 and block.max() <= 0.1
    assert p.c2.tolist() == [-0.1]
    assert p.A1.shape == (4, 4) and p.C1.shape == (4, 16) and p.C2.shape == (1, 16)


def test_draw_rejects_unknown_scenario():
    with pytest.raises(ValueError):
        draw_dgp(0, "policy")


def test_dgp_dict_roundtrip():
    p = draw_dgp(3)
    q = DgpParams.from_dict(json.loads(json.dumps(p.to_dict())))
    for name in ("A1", "C1", "D2", "c2"):
        np.testing.assert_array_equal(getattr(q, name), getattr(p, name))


# -- quadratic layer ----------------------------------------------------------

def test_quadratic_zero_input_gives_constant():
    p = draw_dgp(1)
    np.testing.assert_array_equal(eval_quadratic(p, np.zeros(4), np.zeros(4), 1), p.c1)
    np.testing.assert_array_equal(eval_quadratic(p, np.zeros(4), np.zeros(4), 2), p.c2)


def test_quadratic_linear_pick():
    p = draw_dgp(1)
    p.C1[:] = 0
    p.D1[:] = 0
    e1 = np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(eval_quadratic(p, e1, np.zeros(4), 1), p.A1[:, 0] + p.c1,
                               rtol=1e-15)


def test_quadratic_features_row_major():
    x = np.array([2.0, 3.0, 5.0])
    assert quadratic_features(x)[0].tolist() == [4, 6, 10, 6, 9, 15, 10, 15, 25]


def test_quadratic_matches_scalar_loop(rng):
    p = draw_dgp(5)
    for _ in range(20):
        x, y = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
        np.testing.assert_allclose(eval_quadratic(p, x, y, 1), loop_quadratic(p, x, y, 1),
                                   rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(eval_quadratic(p, x, y, 2), loop_quadratic(p, x, y, 2),
                                   rtol=1e-13, atol=1e-15)


def test_quadratic_width_check():
    with pytest.raises(ValueError):
        eval_quadratic(draw_dgp(0), np.zeros(3), np.zeros(4), 1)


def test_heterogeneity_matches_loop_oracle():
    net = gen_er_capped(15, 2, 0.2, 4, d=4, seed=6)
    p = draw_dgp(seed_sequence(6, 0, 0))
    z = heterogeneity(net, p)
    oracle = [loop_heterogeneity(net, p, i) for i in range(net.n)]
    np.testing.assert_allclose(z, oracle, rtol=1e-12, atol=1e-14)


# -- outcome and treatment draws ----------------------------------------------

def _big_net(seed=0):
    return gen_er_capped(200, 50, 5 / 199, 10, d=4, seed=seed)


def test_zero_dgp_outcome_mean_half():
    net = _big_net()
    y, z = gen_outcomes(net, DgpParams.zeros(), np.random.default_rng(1))
    assert not z.any()
    assert abs(y.mean() - 0.5) < 3 * math.sqrt(0.25 / net.n)


def test_outcome_saturation():
    p = DgpParams.zeros()
    p.c2[:] = 60.0
    y, _ = gen_outcomes(_big_net(), p, np.random.default_rng(1))
    assert y.all()


def test_outcome_determinism():
    net, p = _big_net(), draw_dgp(2)
    a, _ = gen_outcomes(net, p, np.random.default_rng(11))
    b, _ = gen_outcomes(net, p, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


def test_outcome_probability_matches_sigmoid():
    net = _big_net(3)
    p = draw_dgp(4)
    y, z = gen_outcomes(net, p, np.random.default_rng(5))
    pr = 1 / (1 + np.exp(-z))
    # standardized sum of Bernoulli residuals
    assert abs((y - pr).sum()) < 4 * math.sqrt((pr * (1 - pr)).sum())


def test_random_treatment_share():
    net = _big_net()
    t, p = gen_treatment(net, "random", None, np.random.default_rng(2))
    assert abs(t.mean() - 0.5) < 3 * math.sqrt(0.25 / net.n)
    assert (p == 0.5).all()


def test_gnn_treatment_zero_model_share():
    net = _big_net()
    t, p = gen_treatment(net, "gnn", DgpParams.zeros(scenario="treatment"),
                         np.random.default_rng(2))
    assert abs(t.mean() - 0.5) < 3 * math.sqrt(0.25 / net.n)
    np.testing.assert_array_equal(p, 0.5)


def test_treatment_determinism():
    net = _big_net()
    dgp = draw_dgp(1, "treatment")
    a, _ = gen_treatment(net, "gnn", dgp, np.random.default_rng(8))
    b, _ = gen_treatment(net, "gnn", dgp, np.random.default_rng(8))
    np.testing.assert_array_equal(a, b)


def test_treatment_model_presence():
    net = _big_net()
    with pytest.raises(ValueError):
        gen_treatment(net, "gnn", None, 0)
    with pytest.raises(ValueError):
        gen_treatment(net, "random", draw_dgp(0, "treatment"), 0)


# -- networks -----------------------------------------------------------------

def test_capped_degree_statistics():
    mc = McConfig()
    # exact expected capped degree E[min(Bin(n_v - 1, p_e), cap)]
    k = np.arange(mc.n_v)
    expected = float(np.sum(np.minimum(k, mc.cap) * binom.pmf(k, mc.n_v - 1, mc.p_e)))
    assert 4.9 < expected <= 5.0
    degs = []
    for s in range(5):
        net = gen_er_capped(mc.n_v, mc.villages, mc.p_e, mc.cap, d=mc.d, seed=s)
        assert net.degree.max() <= 10
        degs.append(net.degree)
    deg = np.concatenate(degs)
    assert abs(deg.mean() - expected) < 3 * deg.std() / math.sqrt(deg.size)


# -- truth --------------------------------------------------------------------

def test_truth_zero_dgp_is_half():
    tau, se = estimate_truth(DgpParams.zeros(), McConfig(), n_big=20_000)
    assert tau == 0.5 and se == 0.0


def test_truth_stable_across_seeds():
    mc = McConfig()
    dgp = make_dgps(mc).outcome
    taus = [estimate_truth(dgp, mc, seed=seed_sequence(s, 1))[0] for s in range(5)]
    assert max(taus) - min(taus) < 0.002
    assert all(abs(t - np.mean(taus)) <= 0.001 for t in taus)


# -- replications -------------------------------------------------------------

def test_oracle_replications_unbiased():
    mc = McConfig(nuisance="oracle", reps=200)
    dgps = make_dgps(mc)
    tau, tau_se = estimate_truth(dgps.outcome, mc)
    est = np.array([run_replication(mc, dgps, r, tau).tau_hat for r in range(mc.reps)])
    mc_se = math.sqrt(est.var(ddof=1) / est.size + tau_se ** 2)
    assert abs(est.mean() - tau) < 3 * mc_se


def test_single_village_surfaces_variance_error():
    mc = McConfig(villages=1, nuisance="oracle", reps=1)
    with pytest.raises(RuntimeError, match="replication 0"):
        run_replication(mc, make_dgps(mc), 0, 0.5)


def test_study_deterministic_and_order_free():
    mc = McConfig(villages=4, n_v=60, reps=4, epochs=2, truth_n=10_000, seed=5)
    a = run_study(mc).to_dict()
    b = run_study(mc, threads=2).to_dict()
    for doc in (a, b):
        for r in doc["records"]:
            r.pop("seconds")
    assert a == b
    assert a["epochs"] == 2 and a["architecture"] == [8, 8]


def test_replication_regenerates_data():
    mc = McConfig(villages=3, n_v=50, nuisance="oracle", reps=2)
    dgps = make_dgps(mc)
    r0, r1 = run_replication(mc, dgps, 0, 0.5), run_replication(mc, dgps, 1, 0.5)
    assert r0.tau_hat != r1.tau_hat


# -- aggregation --------------------------------------------------------------

def _rec(rep, tau_hat, covered):
    return ReplicationRecord(rep, tau_hat, 0.1, (tau_hat - 0.1, tau_hat + 0.1), covered)


def test_aggregate_all_cover():
    rep = aggregate([_rec(i, 0.4 + 0.01 * i, True) for i in range(5)], 0.42)
    assert rep.coverage == 1.0
    assert rep.bias == pytest.approx(0.0, abs=1e-15)


def test_aggregate_exact_estimates_zero_bias():
    rep = aggregate([_rec(i, 0.3, True) for i in range(3)], 0.3)
    assert rep.bias == 0.0


def test_aggregate_half_coverage_and_order():
    recs = [_rec(i, 0.5, i % 2 == 0) for i in range(10)]
    a = aggregate(recs, 0.5)
    b = aggregate(recs[::-1], 0.5)
    assert a.coverage == b.coverage == 0.5
    assert [r.rep for r in b.records] == list(range(10))


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([], 0.5)


# -- configs ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(reps=0)
    with pytest.raises(ValueError):
        McConfig(scenario="network")
    with pytest.raises(ValueError):
        McConfig.from_dict({"villages": 3, "epoch": 5})


def test_config_roundtrip():
    mc = McConfig(hidden=(4, 2), scenario="gnn")
    assert McConfig.from_dict(json.loads(json.dumps(mc.to_dict()))) == mc


def test_shipped_configs_load():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    [main] = load_study_configs(root / "table1_random_8_8.json")
    assert (main.villages, main.n_v, main.cap, main.d, main.lr, main.batch_size) == \
        (50, 200, 10, 4, 0.001, 5)
    assert main.hidden == (8, 8) and main.scenario == "random"
    studies = load_study_configs(root / "table1_all.json")
    assert len(studies) == 18
    assert {s.scenario for s in studies} == {"random", "gnn"}
