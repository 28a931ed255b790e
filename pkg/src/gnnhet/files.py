"""CSV and JSON readers/writers for network bundles and per-node tables.

A bundle is three CSVs:

* ``edges.csv`` with header ``src,dst``; each row sets ``d[src, dst] = 1``
  (``dst`` is an adjacent neighbour of ``src``)
* ``covariates.csv`` with a header; an optional leading ``node`` column gives
  row order, otherwise rows are nodes ``0..n-1``
* ``villages.csv`` with header ``node,village``
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .graph import Network

__all__ = [
    "read_table",
    "write_table",
    "read_node_column",
    "read_bundle",
    "write_bundle",
    "sha256_file",
    "write_json",
]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_table(path):
    """Header and rows (as strings) of a CSV file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for k, r in enumerate(rows):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {k + 2} has {len(r)} fields, "
                             f"header has {len(header)}")
    return header, rows


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def read_node_column(path, column, n, dtype=float):
    """Values of ``column`` keyed by the ``node`` column, as a length-``n`` array."""
    header, rows = read_table(path)
    if "node" not in header or column not in header:
        raise ValueError(f"{path} needs columns node,{column}")
    ni, ci = header.index("node"), header.index(column)
    nodes = np.array([int(r[ni]) for r in rows], dtype=np.int64)
    vals = np.array([dtype(r[ci]) for r in rows])
    if nodes.size != n or np.unique(nodes).size != n or nodes.min() != 0 or nodes.max() != n - 1:
        raise ValueError(f"{path} must list each of the {n} nodes exactly once")
    out = np.empty(n, dtype=vals.dtype)
    out[nodes] = vals
    return out


def read_covariates(path):
    header, rows = read_table(path)
    X = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    if header and header[0] == "node":
        nodes = X[:, 0].astype(np.int64)
        X = X[:, 1:]
        if np.unique(nodes).size != nodes.size or nodes.min() != 0 \
                or nodes.max() != nodes.size - 1:
            raise ValueError("covariate node column must list 0..n-1 once each")
        X = X[np.argsort(nodes)]
        header = header[1:]
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("covariate file has no covariate columns")
    return header, X


def read_bundle(edges, covariates, villages=None, *, scaler=None) -> Network:
    """Load a network; ``scaler`` (a fitted CovariateScaler) maps raw covariates."""
    _, X = read_covariates(covariates)
    n = X.shape[0]
    if scaler is not None:
        X = scaler.transform(X)
    header, rows = read_table(edges)
    if header[:2] != ["src", "dst"]:
        raise ValueError("edge file needs header src,dst")
    e = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
    village = None
    if villages is not None:
        village = read_node_column(villages, "village", n, int)
    return Network.from_edges(n, e[:, 0], e[:, 1], X, village)


def write_bundle(net: Network, out_dir, names=None):
    out = Path(out_dir)
    names = names or {"edges": "edges.csv", "covariates": "covariates.csv",
                      "villages": "villages.csv"}
    rows = []
    for i in range(net.n):
        for j in net.neighbors_of(i):
            rows.append((i, int(j)))
    paths = {
        "edges": write_table(out / names["edges"], ["src", "dst"], rows),
        "covariates": write_table(
            out / names["covariates"], ["node"] + [f"x{k}" for k in range(net.d)],
            [[i] + [_fmt(v) for v in net.covariates[i]] for i in range(net.n)]),
        "villages": write_table(out / names["villages"], ["node", "village"],
                                [(i, int(v)) for i, v in enumerate(net.village)]),
    }
    return paths


def write_node_values(path, column, values):
    return write_table(path, ["node", column],
                       [(i, _fmt(v)) for i, v in enumerate(np.asarray(values).ravel())])


def write_json(path, doc):
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set, frozenset)):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
