"""Empirical risk minimisation for the GNN: losses, village split, Adam."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .gnn import ACTIVATIONS, GnnParams, forward, init_params
from .graph import Network

__all__ = [
    "LOSSES",
    "loss",
    "village_split",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "fit",
    "dataset_loss",
    "full_gradient",
]

LOSSES = {"least_squares": K.LEAST_SQUARES, "logistic": K.LOGISTIC}
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss(tag: str, y, z):
    """Per-node loss and its derivative in ``z``.

    ``least_squares``: ``0.5 (y - z)^2``.
    ``logistic``: ``-y z + log(1 + e^z)``, evaluated as
    ``y softplus(-z) + (1 - y) softplus(z)`` so large ``|z|`` stays accurate.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if tag == "least_squares":
        r = z - y
        return 0.5 * r * r, r
    if tag == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic loss needs binary outcomes in {0, 1}")
        value = y * _softplus(-z) + (1.0 - y) * _softplus(z)
        return value, 1.0 / (1.0 + np.exp(-z)) - y
    raise ValueError(f"unknown loss {tag!r}; choose from {sorted(LOSSES)}")


def village_split(village, fraction=0.8, seed=None):
    """Assign whole villages to training and validation.

    ``round(fraction * V)`` villages (halves rounded up) go to training,
    clipped so both sides get at least one. Returns two sorted label arrays.
    """
    labels = np.unique(np.asarray(getattr(village, "village", village)))
    if labels.size < 2:
        raise ValueError("a village-level split needs at least two villages")
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    n_train = int(math.floor(fraction * labels.size + 0.5))
    n_train = min(max(n_train, 1), labels.size - 1)
    perm = np.random.default_rng(seed).permutation(labels)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(theta, grad, state: AdamState, lr: float, *, beta1=ADAM_BETA1,
              beta2=ADAM_BETA2, eps=ADAM_EPS):
    """Bias-corrected Adam update. Returns ``(new_theta, new_state)``."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (theta.shape == grad.shape == state.m.shape == state.v.shape):
        raise ValueError("Adam state, parameters and gradient shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    step = lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return theta - step, AdamState(m, v, t)


@dataclass
class TrainConfig:
    """Optimiser and stopping settings.

    With ``validation=False`` the whole sample is trained for exactly
    ``max_epochs`` epochs and the final parameters are returned.
    """

    loss: str = "logistic"
    lr: float = 0.001
    batch_size: int = 5
    max_epochs: int = 500
    patience: int = 25
    split_fraction: float = 0.8
    validation: bool = True
    seed: int = 0
    hidden: tuple = (8, 8)
    activation: str = "sigmoid"
    zbar: float | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainedModel:
    params: GnnParams
    train_loss: list
    val_loss: list
    best_epoch: int
    train_villages: np.ndarray
    val_villages: np.ndarray
    config: TrainConfig
    epochs_run: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch] if self.val_loss else math.nan


def default_zbar(tag: str, y) -> float:
    """``2 M`` with ``M`` the largest absolute target on the link scale.

    Binary targets have an unbounded logit, so the logistic default caps the
    link scale at ``M = 5`` (probabilities within about 0.7% of 0 and 1).
    """
    if tag == "least_squares":
        M = float(np.max(np.abs(y))) if np.size(y) else 1.0
        return 2.0 * max(M, 1e-8)
    return 10.0


def dataset_loss(params: GnnParams, net: Network, y, nodes, tag: str) -> float:
    """Mean loss over ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return math.nan
    z, _ = forward(params, net, nodes)
    return float(loss(tag, np.asarray(y, float)[nodes], z)[0].mean())


def full_gradient(params: GnnParams, net: Network, y, nodes, tag: str,
                  scale=None) -> np.ndarray:
    """Gradient of ``scale * sum_{i in nodes} loss_i`` (``scale`` defaults to 1/|nodes|)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    scale = 1.0 / nodes.size if scale is None else scale
    grad = np.zeros(params.theta.size)
    pos = np.full(net.n, -1, dtype=np.int64)
    order = np.empty(net.n, dtype=np.int64)
    K.batch_loss_grad(params.theta, np.asarray(params.dims, np.int64),
                      ACTIVATIONS[params.activation], params.zbar, LOSSES[tag],
                      net.covariates, net.indptr, net.indices,
                      np.asarray(y, np.float64), nodes, scale, pos, order, grad)
    return grad


def fit(net: Network, targets, sample_mask=None, config: TrainConfig | None = None,
        init: GnnParams | None = None) -> TrainedModel:
    """Minimise the mean loss over ``sample_mask`` with mini-batch Adam.

    A batch only selects loss terms; the forward pass always uses the full
    receptive field. Batch gradients are scaled by ``1 / n_train`` so one
    epoch of batch gradients adds up to the full-sample gradient.

    With validation enabled, whole villages are held out and the parameters
    of the epoch with the lowest validation loss are returned; training
    stops after ``patience`` epochs without improvement.
    """
    config = config or TrainConfig()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if y.shape[0] != net.n:
        raise ValueError("targets need one entry per node")
    if sample_mask is None:
        mask = np.ones(net.n, dtype=bool)
    else:
        mask = np.asarray(sample_mask).ravel()
        if mask.dtype != bool:
            m2 = np.zeros(net.n, dtype=bool)
            m2[mask.astype(np.int64)] = True
            mask = m2
    if not mask.any():
        raise TrainingError("sample mask selects no nodes")
    if config.loss == "logistic":
        loss(config.loss, y[mask], np.zeros(int(mask.sum())))  # validates labels
    if not np.all(np.isfinite(y[mask])):
        raise TrainingError("targets must be finite on the sample")

    if config.validation:
        tr_v, va_v = village_split(net.village, config.split_fraction, config.seed)
        in_val = np.isin(net.village, va_v)
        train_nodes = np.flatnonzero(mask & ~in_val)
        val_nodes = np.flatnonzero(mask & in_val)
        if val_nodes.size == 0:
            raise TrainingError("no labelled nodes in the validation villages")
        if train_nodes.size == 0:
            raise TrainingError("no labelled nodes in the training villages")
    else:
        tr_v, va_v = np.unique(net.village), np.array([], dtype=np.int64)
        train_nodes = np.flatnonzero(mask)
        val_nodes = np.array([], dtype=np.int64)

    zbar = config.zbar if config.zbar is not None else default_zbar(
        config.loss, y[train_nodes])
    rng = np.random.default_rng(config.seed)
    if init is None:
        params = init_params(net.d, config.hidden, activation=config.activation,
                             zbar=zbar, random_state=rng)
    else:
        if init.dims[0] != net.d:
            raise ValueError("initial parameters do not match covariate count")
        params = init.replace(zbar=zbar)

    theta = params.theta.copy()
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    dims = np.asarray(params.dims, dtype=np.int64)
    act = ACTIVATIONS[params.activation]
    kind = LOSSES[config.loss]
    pos = np.full(net.n, -1, dtype=np.int64)
    order = np.empty(net.n, dtype=np.int64)
    scale = 1.0 / train_nodes.size

    train_trace, val_trace = [], []
    best_theta, best_epoch, best_val = theta.copy(), -1, math.inf
    t = 0
    epochs_run = 0
    for epoch in range(config.max_epochs):
        perm = rng.permutation(train_nodes)
        t = K.train_epoch(theta, mom, vel, t, config.lr, ADAM_BETA1, ADAM_BETA2,
                          ADAM_EPS, dims, act, zbar, kind, net.covariates,
                          net.indptr, net.indices, y, perm, config.batch_size,
                          scale, pos, order)
        epochs_run += 1
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"parameters diverged at epoch {epoch}")
        current = params.replace(theta)
        train_trace.append(dataset_loss(current, net, y, train_nodes, config.loss))
        if config.validation:
            vl = dataset_loss(current, net, y, val_nodes, config.loss)
            val_trace.append(vl)
            if vl < best_val:
                best_val, best_epoch, best_theta = vl, epoch, theta.copy()
            elif epoch - best_epoch >= config.patience:
                break
    if config.validation and best_epoch >= 0:
        final = params.replace(best_theta)
    else:
        final = params.replace(theta)
        best_epoch = epochs_run - 1
    return TrainedModel(final, train_trace, val_trace, best_epoch, tr_v, va_v,
                        config, epochs_run,
                        {"n_train": int(train_nodes.size), "n_val": int(val_nodes.size),
                         "zbar": zbar, "adam_steps": int(t)})
