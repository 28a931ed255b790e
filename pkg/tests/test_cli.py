import csv
import json
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from gnnhet.cli import main

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / "configs"


def run_ok(*argv):
    assert main([str(a) for a in argv]) == 0


def run_err(capsys, *argv):
    code = main([str(a) for a in argv])
    doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert doc["exit_code"] == code != 0
    return code, doc


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> train (treated arm) -> infer, shared by several tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run_ok("gen", "--villages", 4, "--nodes-per-village", 40, "--d", 3,
           "--outcomes", "random", "--seed", 7, "--out", data)
    model = root / "mu1.json"
    run_ok("train", "--network", data, "--labels", data / "outcomes.csv",
           "--treatment", data / "treatment.csv", "--arm", 1, "--hidden", 4, 4,
           "--epochs", 5, "--seed", 3, "--out", model)
    report = root / "ate.json"
    run_ok("infer", "--network", data, "--outcomes", data / "outcomes.csv",
           "--treatment", data / "treatment.csv", "--outcome-model", model,
           "--out", report)
    return root, data, model, report


def test_gen_outputs(pipeline):
    _, data, _, _ = pipeline
    for name in ("edges.csv", "covariates.csv", "villages.csv", "outcomes.csv",
                 "treatment.csv", "network.json", "manifest.json"):
        assert (data / name).is_file()
    meta = json.loads((data / "network.json").read_text())
    assert meta["n"] == 160 and meta["max_degree"] <= 10
    man = json.loads((data / "manifest.json").read_text())
    assert man["run_id"] == meta["run_id"] and man["command"] == "gen"
    assert set(man["outputs"]) >= {str(data / "edges.csv"), str(data / "network.json")}


def test_train_outputs(pipeline):
    root, _, model, _ = pipeline
    doc = json.loads(model.read_text())
    assert doc["kind"] == "GNNClassifier" and doc["sample"] == "t==1"
    assert doc["params"]["dims"] == [3, 4, 4]
    assert len(read_csv(root / "mu1.loss.csv")) == doc["training"]["epochs_run"]
    assert (root / "mu1.manifest.json").is_file()


def test_infer_report(pipeline):
    root, _, _, report = pipeline
    doc = json.loads(report.read_text())
    lo, hi = doc["ci"]
    assert lo <= doc["estimate"] <= hi and doc["kind"] == "ate"
    assert doc["nuisance"]["propensity"] == "sample mean"
    zeta = [float(r["zeta"]) for r in read_csv(root / "ate.zeta.csv")]
    assert np.mean(zeta) == pytest.approx(doc["estimate"], rel=1e-12)
    man = json.loads((root / "ate.manifest.json").read_text())
    assert man["run_id"] == doc["run_id"] and len(man["inputs"]) == 6


def test_infer_policy_and_propensity_model(pipeline, tmp_path):
    _, data, model, _ = pipeline
    out = tmp_path / "pol.json"
    run_ok("infer", "--network", data, "--outcomes", data / "outcomes.csv",
           "--treatment", data / "treatment.csv", "--outcome-model", model,
           "--propensity-model", model, "--policy", "treat-all", "--out", out)
    doc = json.loads(out.read_text())
    assert doc["kind"] == "treat-all" and doc["nuisance"]["propensity"] == "model"


def test_infer_dimension_mismatch(pipeline, tmp_path, capsys):
    _, data, model, _ = pipeline
    other = tmp_path / "d2"
    run_ok("gen", "--villages", 2, "--nodes-per-village", 20, "--d", 2,
           "--outcomes", "random", "--seed", 1, "--out", other)
    code, doc = run_err(capsys, "infer", "--network", other,
                        "--outcomes", other / "outcomes.csv",
                        "--treatment", other / "treatment.csv",
                        "--outcome-model", model, "--out", tmp_path / "x.json")
    assert code == 4 and doc["error"] == "dimension_mismatch"


def test_missing_file_and_usage_errors(tmp_path, capsys):
    code, doc = run_err(capsys, "cover", "--villages", tmp_path / "nope.csv",
                        "--out", tmp_path / "c")
    assert code == 3 and doc["error"] == "missing_file"
    code, _ = run_err(capsys, "frobnicate")
    assert code == 2
    code, _ = run_err(capsys)
    assert code == 2
    code, _ = run_err(capsys, "cover", "--villages", tmp_path / "v.csv")
    assert code == 2


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"villages": 3, "epoch": 2}))
    code, doc = run_err(capsys, "simulate", "--config", bad, "--out", tmp_path / "r.json")
    assert code == 2 and "malformed" in doc["message"]


def test_cover_three_villages(tmp_path):
    vil = tmp_path / "villages.csv"
    vil.write_text("node,village\n0,a\n1,a\n2,b\n3,b\n4,b\n5,b\n6,c\n")
    run_ok("cover", "--villages", vil, "--out", tmp_path / "cov")
    doc = json.loads((tmp_path / "cov" / "cover.json").read_text())
    assert doc["J"] == 4 and sorted(doc["sizes"]) == [1, 1, 2, 3]
    rate = json.loads((tmp_path / "cov" / "rate.json").read_text())
    assert rate["up_to_constants"] and rate["inputs"]["J"] == 4


def test_target_frontier(pipeline, tmp_path):
    _, data, model, _ = pipeline
    base = tmp_path / "base.csv"
    base.write_text("node\n0\n1\n2\n")
    out = tmp_path / "tgt"
    run_ok("target", "--network", data, "--model", model, "--measure", "betweenness",
           "--k", 10, "--grid", 11, "--baseline", base, "--out", out)
    rows = read_csv(out / "frontier.csv")
    assert len(rows) == 11 and float(rows[-1]["omega"]) == 1.0
    for r in rows:
        sel = read_csv(out / r["selected_file"])
        assert len(sel) == 10
    c = np.array([float(r["betweenness"]) for r in read_csv(out / "centrality.csv")])
    last = [int(r["node"]) for r in read_csv(out / rows[-1]["selected_file"])]
    assert sorted(last) == sorted(np.lexsort((np.arange(c.size), -c))[:10].tolist())
    assert "d_c_sd" in rows[0]


def test_rerun_reproduces_outputs(tmp_path):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_ok("gen", "--villages", 3, "--nodes-per-village", 30, "--outcomes", "gnn",
               "--seed", 5, "--out", out)
        run_ok("train", "--network", out, "--labels", out / "outcomes.csv",
               "--epochs", 3, "--hidden", 3, "--seed", 2, "--out", out / "m.json")
        files = ("edges.csv", "covariates.csv", "outcomes.csv", "treatment.csv",
                 "network.json", "m.json", "m.loss.csv")
        digests.append([(out / f).read_bytes() for f in files])
        man = json.loads((out / "m.manifest.json").read_text())
    assert digests[0] == digests[1]
    assert man["seeds"] == {"model": 2}


def test_env_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv("GNNHET_OUT", str(tmp_path / "envout"))
    monkeypatch.setenv("GNNHET_SEED", "9")
    run_ok("gen", "--villages", 2, "--nodes-per-village", 10)
    doc = json.loads((tmp_path / "envout" / "network.json").read_text())
    assert doc["seed"] == 9


def test_simulate_smoke_config(tmp_path):
    out = tmp_path / "smoke.json"
    run_ok("simulate", "--config", CONFIGS / "smoke.json", "--reps", 2, "--out", out)
    doc = json.loads(out.read_text())
    [row] = doc["table"]
    assert set(row) == {"scenario", "architecture", "bias", "coverage", "reps", "epochs"}
    assert row["reps"] == 2 and row["architecture"] == [8, 8]
    assert (tmp_path / "smoke.manifest.json").is_file()


def test_simulate_table1_config_end_to_end(tmp_path):
    out = tmp_path / "t1.json"
    run_ok("simulate", "--config", CONFIGS / "table1_random_8_8.json", "--reps", 1,
           "--keep-records", "--out", out)
    doc = json.loads(out.read_text())
    st = doc["studies"][0]
    assert st["scenario"] == "random" and st["config"]["villages"] == 50
    assert 0 <= st["coverage"] <= 1 and "bias" in st and len(st["records"]) == 1


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "gnnhet.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "gnnhet" in res.stdout
