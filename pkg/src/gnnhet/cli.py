"""Command-line entry point: ``gnnhet {gen,train,infer,target,cover,simulate}``.

Every run writes a manifest (command, resolved config, seeds, input digests,
version, wall-clock, output digests) next to its outputs. JSON outputs carry
the manifest's ``run_id``. Failures print a JSON error document on stderr and
exit non-zero.

Global flags ``--threads``, ``--seed`` and ``--out`` default to the
environment variables ``GNNHET_THREADS``, ``GNNHET_SEED`` and ``GNNHET_OUT``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .causal import NuisanceEstimates, ate, estimate_policy, PolicyRule
from .estimators import GNNClassifier, GNNRegressor, CovariateScaler, load_model
from .files import (read_bundle, read_covariates, read_node_column, read_table,
                    sha256_file, write_bundle, write_json, write_node_values,
                    write_table)
from .gnn import DimensionMismatch
from .graph import (betweenness_centrality, closeness_centrality,
                    edge_probability_for_mean_degree, gen_er_capped)
from .simulate import (McConfig, gen_outcomes, gen_treatment, load_study_configs,
                       make_dgps, run_study)
from .target import ScoreInputs, baseline_compare, frontier
from .theory import RateInputs, build_dependency_graph, greedy_cover, rate_bound, suggest_width

ENV_PREFIX = "GNNHET_"
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_DIMENSION = 4
EXIT_FAILURE = 1
PATH_FLAGS = frozenset({"network", "edges", "covars", "villages", "labels", "treatment",
                        "outcomes", "outcome_model", "control_model", "propensity_model",
                        "model", "baseline", "config"})


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE, kind="usage"):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _env(name, default=None, cast=str):
    v = os.environ.get(ENV_PREFIX + name)
    return default if v is None else cast(v)


# -- manifest -----------------------------------------------------------------

class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command, config, seeds, manifest_path):
        self.command = command
        self.config = config
        self.seeds = seeds
        self.inputs = {}
        self.outputs = {}
        self.manifest_path = Path(manifest_path)
        self.start = time.time()

    def add_input(self, path):
        if path is not None:
            self.inputs[str(path)] = sha256_file(path)

    @property
    def run_id(self):
        # input files enter through their digests, not their locations
        cfg = {k: v for k, v in self.config.items()
               if not (k in PATH_FLAGS and isinstance(v, str))}
        doc = {"command": self.command, "config": cfg, "seeds": self.seeds,
               "inputs": sorted(self.inputs.values()), "version": __version__}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def json(self, path, doc):
        doc = {**doc, "run_id": self.run_id, "artifact_version": __version__}
        self.outputs[str(path)] = None
        return write_json(path, doc)

    def file(self, path):
        self.outputs[str(path)] = None
        return path

    def finish(self):
        outs = {p: sha256_file(p) for p in self.outputs}
        manifest = {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": outs,
            "artifact_version": __version__,
            "wall_clock_seconds": time.time() - self.start,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.start)),
        }
        write_json(self.manifest_path, manifest)
        return manifest


def _manifest_for_file(out):
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _config(args, drop=("func", "out", "command")):
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def _need_out(args):
    if not args.out:
        raise CliError("--out is required (or set GNNHET_OUT)")
    return Path(args.out)


def _bundle_args(p, villages=True):
    p.add_argument("--network", help="directory holding edges.csv, covariates.csv, villages.csv")
    p.add_argument("--edges")
    p.add_argument("--covars")
    if villages:
        p.add_argument("--villages")


def _bundle_paths(args):
    base = Path(args.network) if args.network else None
    def pick(flag, name):
        v = getattr(args, flag, None)
        if v:
            return Path(v)
        if base is not None:
            return base / name
        return None
    edges, cov = pick("edges", "edges.csv"), pick("covars", "covariates.csv")
    vil = pick("villages", "villages.csv")
    if edges is None or cov is None:
        raise CliError("give --network DIR or both --edges and --covars")
    if vil is not None and not vil.exists() and not getattr(args, "villages", None):
        vil = None
    return edges, cov, vil


def _load_network(args, run, scaler=None):
    edges, cov, vil = _bundle_paths(args)
    for p in (edges, cov, vil):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"missing input file: {p}")
        run.add_input(p)
    return read_bundle(edges, cov, vil, scaler=scaler)


def _load_model_file(path, run):
    if not Path(path).is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    run.add_input(path)
    with open(path) as fh:
        doc = json.load(fh)
    est = load_model(doc)
    scaler = CovariateScaler.from_dict(doc["scaler"]) if doc.get("scaler") else None
    return est, scaler


def _check_dims(est, net, path):
    if net.d != est.n_features_in_:
        raise DimensionMismatch(
            f"model {path} expects {est.n_features_in_} covariates, "
            f"network has {net.d}")


# -- subcommands --------------------------------------------------------------

def cmd_gen(args):
    out = _need_out(args)
    seed = args.seed
    p_e = (args.p_e if args.p_e is not None
           else edge_probability_for_mean_degree(args.mean_degree, args.nodes_per_village))
    run = Run("gen", _config(args), {"master": seed}, out / "manifest.json")
    net = gen_er_capped(args.nodes_per_village, args.villages, p_e, args.cap,
                        d=args.d, seed=np.random.SeedSequence(seed, spawn_key=(0,)))
    for path in write_bundle(net, out).values():
        run.file(path)
    doc = {"seed": seed, "p_e": p_e, "c_n": args.cap, "n_v": args.nodes_per_village,
           "villages": args.villages, "d": args.d, "n": net.n,
           "mean_degree": float(net.degree.mean()), "max_degree": int(net.degree.max())}
    if args.outcomes:
        mc = McConfig(scenario=args.outcomes, d=args.d, seed=seed, reps=1)
        dgps = make_dgps(mc)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        y1, _ = gen_outcomes(net, dgps.outcome, rng)
        t, _ = gen_treatment(net, args.outcomes, dgps.treatment, rng)
        run.file(write_node_values(out / "outcomes.csv", "y", (t * y1).astype(int)))
        run.file(write_node_values(out / "treatment.csv", "t", t))
        doc["scenario"] = args.outcomes
    run.json(out / "network.json", doc)
    return run


def cmd_train(args):
    out = _need_out(args)
    run = Run("train", _config(args), {"model": args.seed}, _manifest_for_file(out))
    scaler = None
    if args.scale_covariates:
        _, cov, _ = _bundle_paths(args)
        scaler = CovariateScaler().fit(read_covariates(cov)[1])
    net = _load_network(args, run, scaler)
    if not args.labels:
        raise CliError("--labels is required")
    run.add_input(args.labels)
    header, _ = read_table(args.labels)
    col = [h for h in header if h != "node"]
    if len(col) != 1:
        raise CliError("label file needs columns node,<value>")
    y = read_node_column(args.labels, col[0], net.n)
    mask = None
    if args.treatment is not None:
        run.add_input(args.treatment)
        t = read_node_column(args.treatment, "t", net.n, int)
        mask = t == args.arm
    cls = GNNClassifier if args.loss == "logistic" else GNNRegressor
    est = cls(hidden=tuple(args.hidden), activation=args.activation, lr=args.lr,
              batch_size=args.batch, max_epochs=args.epochs, patience=args.patience,
              early_stopping=not args.no_validation, split_fraction=args.split,
              random_state=args.seed)
    est.fit(net, y, sample_mask=mask)
    extra = {"scaler": scaler.to_dict() if scaler else None,
             "label_column": col[0], "sample": "all" if mask is None else f"t=={args.arm}"}
    run.json(out, est.to_dict(extra))
    m = est.model_
    rows = [(e, repr(m.train_loss[e]), repr(m.val_loss[e]) if m.val_loss else "")
            for e in range(len(m.train_loss))]
    run.file(write_table(out.with_suffix(".loss.csv"), ["epoch", "train_loss", "val_loss"], rows))
    return run


def cmd_infer(args):
    out = _need_out(args)
    run = Run("infer", _config(args), {}, _manifest_for_file(out))
    mu_est, scaler = _load_model_file(args.outcome_model, run)
    net = _load_network(args, run, scaler)
    _check_dims(mu_est, net, args.outcome_model)
    if net.villages.size < 2:
        raise CliError("inference needs village labels with at least two villages")
    run.add_input(args.outcomes)
    run.add_input(args.treatment)
    y = read_node_column(args.outcomes, "y", net.n)
    t = read_node_column(args.treatment, "t", net.n, int)
    mu1 = mu_est.predict_outcome(net)
    if args.control_model:
        c_est, _ = _load_model_file(args.control_model, run)
        _check_dims(c_est, net, args.control_model)
        mu0 = c_est.predict_outcome(net)
    else:
        mu0 = np.zeros(net.n)
    if args.propensity_model:
        p_est, _ = _load_model_file(args.propensity_model, run)
        _check_dims(p_est, net, args.propensity_model)
        p_raw = p_est.predict_outcome(net)
    else:
        p_raw = np.full(net.n, t.mean())
    nuis = NuisanceEstimates.from_raw(mu1, mu0, p_raw, args.p_min)
    if args.policy == "ate":
        rep = ate(y, t, nuis, net.village, args.level)
    else:
        rule = PolicyRule(np.ones(net.n) if args.policy == "treat-all" else np.zeros(net.n),
                          args.policy)
        rep = estimate_policy(y, t, rule, nuis, net.village, args.level, args.policy)
    doc = rep.to_dict()
    doc["nuisance"] = {"control": "model" if args.control_model else "y0 = 0",
                       "propensity": "model" if args.propensity_model else "sample mean",
                       "p_min": args.p_min}
    run.json(out, doc)
    run.file(write_node_values(out.with_suffix(".zeta.csv"), "zeta", rep.zeta))
    return run


def cmd_target(args):
    out = _need_out(args)
    run = Run("target", _config(args), {}, out / "manifest.json")
    est, scaler = _load_model_file(args.model, run)
    net = _load_network(args, run, scaler)
    _check_dims(est, net, args.model)
    p_hat = est.predict_outcome(net)
    c = (closeness_centrality(net) if args.measure == "closeness"
         else betweenness_centrality(net))
    inputs = ScoreInputs(p_hat, c, None, args.measure)
    grid = np.linspace(0.0, 1.0, args.grid)
    pts = frontier(inputs, args.k, grid, threads=args.threads)
    base = None
    if args.baseline:
        run.add_input(args.baseline)
        header, rows = read_table(args.baseline)
        col = header.index("node") if "node" in header else 0
        base = baseline_compare(pts, [int(r[col]) for r in rows], inputs)
    sel_dir = out / "selections"
    rows = []
    for idx, p in enumerate(pts):
        name = f"omega_{idx:03d}.csv"
        run.file(write_table(sel_dir / name, ["node"], [(i,) for i in p.selected]))
        row = [repr(p.omega), repr(p.mean_p), repr(p.mean_c), int(p.dominated),
               f"selections/{name}"]
        if base is not None:
            row += [repr(float(base[idx]["d_p"])), repr(float(base[idx]["d_c"]))]
        rows.append(row)
    header = ["omega", "mean_p", "mean_c", "dominated", "selected_file"]
    if base is not None:
        header += ["d_p_sd", "d_c_sd"]
    run.file(write_table(out / "frontier.csv", header, rows))
    run.file(write_node_values(out / "centrality.csv", args.measure, c))
    run.file(write_node_values(out / "p_hat.csv", "p_hat", p_hat))
    run.json(out / "frontier.json", {"k": args.k, "measure": args.measure,
                                     "normalization": inputs.normalization,
                                     "grid": args.grid,
                                     "non_dominated": int(sum(not p.dominated for p in pts))})
    return run


def cmd_cover(args):
    out = _need_out(args)
    run = Run("cover", _config(args), {}, out / "manifest.json")
    if not args.villages:
        raise CliError("--villages is required")
    run.add_input(args.villages)
    header, rows = read_table(args.villages)
    if "village" not in header:
        raise CliError("village file needs columns node,village")
    vi = header.index("village")
    if "node" in header:
        ni = header.index("node")
        order = np.argsort([int(r[ni]) for r in rows])
        labels = np.array([rows[k][vi] for k in order])
    else:
        labels = np.array([r[vi] for r in rows])
    G = build_dependency_graph(labels)
    cover = greedy_cover(G)
    run.json(out / "cover.json", {"n": G.n, "max_degree": G.max_degree, **cover.to_dict()})
    inp = RateInputs(G.n, cover.sizes, args.c_n, args.beta, args.d_star,
                     args.family, args.layers, args.rho)
    rb = rate_bound(inp)
    run.json(out / "rate.json", {**rb.to_dict(), "suggested_width": suggest_width(inp),
                                 "inputs": {"n": inp.n, "J": inp.J, "c_n": inp.c_n,
                                            "beta": inp.beta, "d_star": inp.d_star,
                                            "family": inp.family, "L": inp.L,
                                            "rho": inp.rho},
                                 "note": "bound with unit constant; up to constants"})
    return run


def cmd_simulate(args):
    out = _need_out(args)
    if not args.config:
        raise CliError("--config is required")
    if not Path(args.config).is_file():
        raise FileNotFoundError(f"missing input file: {args.config}")
    try:
        studies = load_study_configs(args.config)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed config: {exc}") from exc
    if args.reps is not None or args.seed_given:
        studies = [McConfig.from_dict({**s.to_dict(),
                                       **({"reps": args.reps} if args.reps else {}),
                                       **({"seed": args.seed} if args.seed_given else {})})
                   for s in studies]
    cfg = _config(args)
    cfg["studies"] = [s.to_dict() for s in studies]
    run = Run("simulate", cfg, {"master": [s.seed for s in studies]},
              _manifest_for_file(out))
    run.add_input(args.config)
    rows = []
    for s in studies:
        rep = run_study(s, threads=args.threads)
        d = rep.to_dict()
        if not args.keep_records:
            d.pop("records")
        rows.append(d)
    run.json(out, {"table": [{k: r[k] for k in ("scenario", "architecture", "bias",
                                                  "coverage", "reps", "epochs")}
                             for r in rows],
                   "studies": rows})
    return run


# -- parser -------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=_env("THREADS", 1, int))
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=_env("OUT"))

    p = _Parser(prog="gnnhet", description="GNN nuisance models for network causal inference")
    p.add_argument("--version", action="version", version=f"gnnhet {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate capped ER village networks")
    g.add_argument("--villages", type=int, default=50)
    g.add_argument("--nodes-per-village", type=int, default=200)
    g.add_argument("--mean-degree", type=float, default=5.0)
    g.add_argument("--p-e", type=float, default=None)
    g.add_argument("--cap", type=int, default=10)
    g.add_argument("--d", type=int, default=4)
    g.add_argument("--outcomes", choices=["random", "gnn"], default=None,
                   help="also simulate outcomes and treatment under this scenario")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="fit a GNN to node labels")
    _bundle_args(t)
    t.add_argument("--labels", help="CSV node,<value>")
    t.add_argument("--treatment", help="CSV node,t; restricts the sample to --arm")
    t.add_argument("--arm", type=int, default=1)
    t.add_argument("--loss", choices=["logistic", "least_squares"], default="logistic")
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--batch", type=int, default=5)
    t.add_argument("--hidden", type=int, nargs="+", default=[8, 8])
    t.add_argument("--activation", choices=["sigmoid", "tanh"], default="sigmoid")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--patience", type=int, default=25)
    t.add_argument("--split", type=float, default=0.8)
    t.add_argument("--no-validation", action="store_true")
    t.add_argument("--scale-covariates", action="store_true",
                   help="min-max covariates onto [-1, 1] and store the map in the model")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="doubly robust ATE or policy value")
    _bundle_args(i)
    i.add_argument("--outcomes", required=True)
    i.add_argument("--treatment", required=True)
    i.add_argument("--outcome-model", required=True)
    i.add_argument("--control-model", default=None,
                   help="model for mu_0; without it y(0) = 0 is assumed")
    i.add_argument("--propensity-model", default=None,
                   help="model for p; without it the treated share is used")
    i.add_argument("--policy", choices=["ate", "treat-all", "treat-none"], default="ate")
    i.add_argument("--p-min", type=float, default=0.01)
    i.add_argument("--level", type=float, default=0.95)
    i.set_defaults(func=cmd_infer)

    tg = sub.add_parser("target", parents=[common], help="leader selection frontier")
    _bundle_args(tg)
    tg.add_argument("--model", required=True)
    tg.add_argument("--measure", choices=["closeness", "betweenness"], default="betweenness")
    tg.add_argument("--k", type=int, required=True)
    tg.add_argument("--grid", type=int, default=101)
    tg.add_argument("--baseline", default=None, help="CSV with a node column")
    tg.set_defaults(func=cmd_target)

    c = sub.add_parser("cover", parents=[common], help="proper cover and rate diagnostics")
    c.add_argument("--villages")
    c.add_argument("--c-n", type=float, default=10.0)
    c.add_argument("--beta", type=float, default=2.0)
    c.add_argument("--d-star", type=int, default=4)
    c.add_argument("--layers", type=int, default=2)
    c.add_argument("--family", choices=["exp", "non-exp"], default="exp")
    c.add_argument("--rho", type=float, default=1.0)
    c.set_defaults(func=cmd_cover)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo coverage study")
    s.add_argument("--config")
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--keep-records", action="store_true")
    s.set_defaults(func=cmd_simulate)
    return p


def _error(kind, message, code, command=None):
    doc = {"error": kind, "message": str(message), "exit_code": code}
    if command:
        doc["command"] = command
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if command is None:
            raise CliError("missing subcommand; choose from gen, train, infer, "
                           "target, cover, simulate")
        args.seed_given = args.seed is not None or _env("SEED") is not None
        if args.seed is None:
            args.seed = _env("SEED", 0, int)
        run = args.func(args)
        run.finish()
        return 0
    except CliError as exc:
        return _error(exc.kind, exc, exc.code, command)
    except FileNotFoundError as exc:
        return _error("missing_file", exc, EXIT_MISSING, command)
    except DimensionMismatch as exc:
        return _error("dimension_mismatch", exc, EXIT_DIMENSION, command)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        return _error("invalid_input", exc, EXIT_FAILURE, command)
    except Exception as exc:  # keep the error machine-readable
        return _error(type(exc).__name__, exc, EXIT_FAILURE, command)


if __name__ == "__main__":
    sys.exit(main())
