"""Mean-aggregation graph neural network: parameters, forward pass, gradients.

Layer ``l`` computes

    h_i^(l) = sigma(A^(l) h_i^(l-1) + A_N^(l) mean_{j in N(i)} h_j^(l-1) + b^(l))

starting from ``h_i^(0) = x_i``, and the scalar output is
``z_i = a . h_i^(L) + b`` clamped to ``[-zbar, zbar]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .graph import Network

__all__ = [
    "ACTIVATIONS",
    "GnnParams",
    "ForwardTrace",
    "DimensionMismatch",
    "init_params",
    "forward",
    "backward",
    "predict_z",
    "clamp_output",
    "clamp_mask",
    "param_count",
]

ACTIVATIONS = {"sigmoid": K.SIGMOID, "tanh": K.TANH}
PARAMS_FORMAT = "gnnhet.params"
PARAMS_VERSION = 1


class DimensionMismatch(ValueError):
    pass


def param_count(dims: Sequence[int]) -> int:
    dims = list(dims)
    return sum(2 * dims[l] * dims[l - 1] + dims[l]
               for l in range(1, len(dims))) + dims[-1] + 1


@dataclass(frozen=True, eq=False)
class GnnParams:
    """All weights of an ``L``-layer network as one read-only flat vector.

    ``dims = (d, d_h^(1), ..., d_h^(L))``. Per-layer views are exposed
    through :attr:`layers`, :attr:`a` and :attr:`b`.
    """

    dims: tuple
    theta: np.ndarray
    activation: str = "sigmoid"
    zbar: float = math.inf

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError("dims must be (d, d_h1, ..., d_hL) with all entries >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; "
                             f"choose from {sorted(ACTIVATIONS)}")
        if not self.zbar > 0:
            raise ValueError("zbar must be positive")
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if theta.size != param_count(dims):
            raise DimensionMismatch(
                f"theta has {theta.size} entries, dims {dims} need {param_count(dims)}")
        theta.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "zbar", float(self.zbar))

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def layers(self) -> list:
        """``[(A, A_N, b), ...]`` views for ``l = 1..L``."""
        out, off, d = [], 0, self.dims
        for l in range(1, len(d)):
            k = d[l] * d[l - 1]
            A = self.theta[off:off + k].reshape(d[l], d[l - 1])
            AN = self.theta[off + k:off + 2 * k].reshape(d[l], d[l - 1])
            b = self.theta[off + 2 * k:off + 2 * k + d[l]]
            out.append((A, AN, b))
            off += 2 * k + d[l]
        return out

    @property
    def a(self) -> np.ndarray:
        return self.theta[-self.dims[-1] - 1:-1]

    @property
    def b(self) -> float:
        return float(self.theta[-1])

    def replace(self, theta=None, **kw) -> "GnnParams":
        return GnnParams(self.dims, self.theta if theta is None else theta,
                         kw.get("activation", self.activation),
                         kw.get("zbar", self.zbar))

    @classmethod
    def from_arrays(cls, layers, a, b, activation="sigmoid", zbar=math.inf):
        parts, dims = [], [np.asarray(layers[0][0]).shape[1]]
        for A, AN, bias in layers:
            A, AN = np.asarray(A, float), np.asarray(AN, float)
            if A.shape != AN.shape or A.shape[1] != dims[-1]:
                raise DimensionMismatch("inconsistent layer shapes")
            dims.append(A.shape[0])
            parts += [A.ravel(), AN.ravel(), np.asarray(bias, float).ravel()]
        parts += [np.asarray(a, float).ravel(), np.array([float(b)])]
        return cls(tuple(dims), np.concatenate(parts), activation, zbar)

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "dims": list(self.dims),
            "activation": self.activation,
            "zbar": None if math.isinf(self.zbar) else self.zbar,
            "layers": [{"A": A.tolist(), "A_N": AN.tolist(), "b": b.tolist()}
                       for A, AN, b in self.layers],
            "a": self.a.tolist(),
            "b": self.b,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GnnParams":
        if doc.get("format") != PARAMS_FORMAT:
            raise ValueError("not a gnnhet parameter document")
        if doc.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported parameter version {doc.get('version')}")
        zbar = math.inf if doc.get("zbar") is None else doc["zbar"]
        p = cls.from_arrays([(L["A"], L["A_N"], L["b"]) for L in doc["layers"]],
                            doc["a"], doc["b"], doc["activation"], zbar)
        if list(p.dims) != list(doc["dims"]):
            raise DimensionMismatch("dims field disagrees with weight shapes")
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GnnParams":
        return cls.from_dict(json.loads(text))


def init_params(d: int, hidden: Sequence[int], *, activation="sigmoid",
                zbar=math.inf, random_state=None) -> GnnParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation.

    ``fan_in`` is the input width of the layer the weight belongs to.
    """
    rng = np.random.default_rng(random_state)
    dims = (int(d),) + tuple(int(h) for h in hidden)
    parts = []
    for l in range(1, len(dims)):
        bound = 1.0 / math.sqrt(dims[l - 1])
        k = dims[l] * dims[l - 1]
        parts.append(rng.uniform(-bound, bound, 2 * k + dims[l]))
    bound = 1.0 / math.sqrt(dims[-1])
    parts.append(rng.uniform(-bound, bound, dims[-1] + 1))
    return GnnParams(dims, np.concatenate(parts), activation, zbar)


def clamp_output(z, zbar):
    """``min(max(z, -zbar), zbar)``."""
    if not zbar > 0:
        raise ValueError("zbar must be positive")
    return np.clip(z, -zbar, zbar)


def clamp_mask(z, zbar):
    """Derivative of :func:`clamp_output`: 1 inside ``[-zbar, zbar]``, else 0."""
    z = np.asarray(z, dtype=np.float64)
    return ((z >= -zbar) & (z <= zbar)).astype(np.float64)


@dataclass(eq=False)
class ForwardTrace:
    """Activations of one batched forward pass, kept for :func:`backward`."""

    params: GnnParams
    net: Network
    batch: np.ndarray
    order: np.ndarray
    m: np.ndarray
    pos: np.ndarray = field(repr=False)
    H: object = field(repr=False)
    Hbar: object = field(repr=False)
    zraw: np.ndarray = field(repr=False)

    @property
    def hidden(self) -> list:
        """``h^(l)`` for every layer, rows ordered as :attr:`order`."""
        return list(self.H)

    def rows(self, nodes) -> np.ndarray:
        return self.pos[np.asarray(nodes, dtype=np.int64)]


def _check_dims(params: GnnParams, net: Network):
    if params.dims[0] != net.d:
        raise DimensionMismatch(
            f"network has {net.d} covariates but parameters expect {params.dims[0]}")


def forward(params: GnnParams, net: Network, batch=None):
    """Evaluate ``z_i`` for the nodes in ``batch`` (all nodes when ``None``).

    Each layer aggregates over the full neighbourhoods it needs; nothing is
    sampled. Returns ``(z, trace)``.
    """
    _check_dims(params, net)
    if batch is None:
        batch = np.arange(net.n, dtype=np.int64)
    batch = np.asarray(batch, dtype=np.int64).ravel()
    if batch.size and (batch.min() < 0 or batch.max() >= net.n):
        raise IndexError("batch contains out-of-range node ids")
    dims = np.asarray(params.dims, dtype=np.int64)
    pos = np.full(net.n, -1, dtype=np.int64)
    order = np.empty(net.n, dtype=np.int64)
    m = K.build_context(net.indptr, net.indices, batch, params.n_layers, pos, order)
    H, Hbar, zraw = K.forward(params.theta, dims, ACTIVATIONS[params.activation],
                              net.covariates, net.indptr, net.indices, order, m, pos)
    z = clamp_output(zraw[pos[batch]], params.zbar)
    trace = ForwardTrace(params, net, batch, order[:m[0]].copy(), m, pos, H, Hbar, zraw)
    return z, trace


def backward(trace: ForwardTrace, loss_grad_z) -> GnnParams:
    """Gradient of ``sum_k loss_grad_z[k] * z[batch[k]]`` w.r.t. all parameters.

    Returned as a :class:`GnnParams` so the per-layer views line up with the
    parameters. Outputs pinned by the clamp contribute nothing.
    """
    params = trace.params
    g = np.asarray(loss_grad_z, dtype=np.float64).ravel()
    if g.shape != trace.batch.shape:
        raise ValueError(f"loss_grad_z has {g.size} entries for a batch of "
                         f"{trace.batch.size}")
    L = params.n_layers
    rows = trace.pos[trace.batch]
    gz = np.zeros(trace.m[L])
    np.add.at(gz, rows, g * clamp_mask(trace.zraw[rows], params.zbar))
    order = np.empty(trace.net.n, dtype=np.int64)
    order[:trace.order.size] = trace.order
    grad = np.zeros(params.theta.size)
    K.backward(params.theta, np.asarray(params.dims, dtype=np.int64),
               ACTIVATIONS[params.activation], trace.net.indptr, trace.net.indices,
               order, trace.m, trace.pos, trace.H, trace.Hbar, gz, grad)
    return GnnParams(params.dims, grad, params.activation)


def predict_z(params: GnnParams, net: Network, nodes=None) -> np.ndarray:
    """Clamped outputs ``z_i(theta)`` without keeping the trace."""
    return forward(params, net, nodes)[0]
