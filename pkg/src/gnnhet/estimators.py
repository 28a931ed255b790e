"""scikit-learn style wrappers around :func:`gnnhet.train.fit`.

``X`` is always a :class:`~gnnhet.graph.Network`; ``y`` has one entry per
node and ``sample_mask`` picks which nodes enter the loss.
"""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.preprocessing import MinMaxScaler
from sklearn.utils.validation import check_is_fitted

from ._validation import check_mask, check_network, check_node_vector
from .gnn import GnnParams, predict_z
from .train import TrainConfig, TrainedModel, fit

__all__ = ["GNNRegressor", "GNNClassifier", "CovariateScaler", "load_model",
           "MODEL_FORMAT"]

MODEL_FORMAT = "gnnhet.model"
MODEL_VERSION = 1


class _GNNBase(BaseEstimator):
    _loss = None

    def __init__(self, hidden=(8, 8), activation="sigmoid", lr=0.001, batch_size=5,
                 max_epochs=500, patience=25, early_stopping=True,
                 split_fraction=0.8, zbar=None, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.early_stopping = early_stopping
        self.split_fraction = split_fraction
        self.zbar = zbar
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(loss=self._loss, lr=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           split_fraction=self.split_fraction,
                           validation=self.early_stopping,
                           seed=0 if self.random_state is None else int(self.random_state),
                           hidden=tuple(self.hidden), activation=self.activation,
                           zbar=self.zbar)

    def fit(self, X, y, sample_mask=None):
        net = check_network(X)
        y = check_node_vector(y, net.n)
        mask = check_mask(sample_mask, net.n)
        self.model_: TrainedModel = fit(net, y, mask, self._config())
        self.params_: GnnParams = self.model_.params
        self.n_features_in_ = net.d
        return self

    def decision_function(self, X, nodes=None):
        """Clamped network output ``z_i`` on the link scale."""
        check_is_fitted(self, "params_")
        net = check_network(X, self.n_features_in_)
        return predict_z(self.params_, net, nodes)

    # -- persistence -------------------------------------------------------
    def to_dict(self, extra=None) -> dict:
        check_is_fitted(self, "params_")
        m = self.model_
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": type(self).__name__,
            "loss": self._loss,
            "estimator_params": {k: (list(v) if isinstance(v, tuple) else v)
                                 for k, v in self.get_params().items()},
            "params": self.params_.to_dict(),
            "training": {
                "config": m.config.to_dict(),
                "best_epoch": m.best_epoch,
                "epochs_run": m.epochs_run,
                "train_loss": m.train_loss,
                "val_loss": m.val_loss,
                "train_villages": np.asarray(m.train_villages).tolist(),
                "val_villages": np.asarray(m.val_villages).tolist(),
                "meta": m.meta,
            },
            **(extra or {}),
        }


class GNNRegressor(RegressorMixin, _GNNBase):
    """GNN fit by least squares; predictions are ``z_i``."""

    _loss = "least_squares"

    def predict(self, X, nodes=None):
        return self.decision_function(X, nodes)

    predict_outcome = predict


class GNNClassifier(ClassifierMixin, _GNNBase):
    """GNN fit by the logistic log-likelihood; ``P(y=1) = 1 / (1 + e^{-z_i})``."""

    _loss = "logistic"

    def fit(self, X, y, sample_mask=None):
        super().fit(X, y, sample_mask)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X, nodes=None):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X, nodes)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, nodes=None):
        return (self.predict_proba(X, nodes)[:, 1] > 0.5).astype(np.int64)

    def predict_outcome(self, X, nodes=None):
        return self.predict_proba(X, nodes)[:, 1]


def load_model(doc: dict | str):
    """Rebuild a fitted estimator from :meth:`to_dict` output (or its JSON)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a gnnhet model document")
    cls = {"GNNRegressor": GNNRegressor, "GNNClassifier": GNNClassifier}[doc["kind"]]
    est = cls(**{k: (tuple(v) if k == "hidden" else v)
                 for k, v in doc["estimator_params"].items()})
    est.params_ = GnnParams.from_dict(doc["params"])
    est.n_features_in_ = est.params_.dims[0]
    tr = doc.get("training", {})
    cfg = TrainConfig(**{**tr.get("config", {}),
                         "hidden": tuple(tr.get("config", {}).get("hidden", est.hidden))})
    est.model_ = TrainedModel(est.params_, tr.get("train_loss", []),
                              tr.get("val_loss", []), tr.get("best_epoch", -1),
                              np.asarray(tr.get("train_villages", [])),
                              np.asarray(tr.get("val_villages", [])), cfg,
                              tr.get("epochs_run", 0), tr.get("meta", {}))
    if cls is GNNClassifier:
        est.classes_ = np.array([0, 1])
    return est


class CovariateScaler(TransformerMixin, BaseEstimator):
    """Column-wise min-max map onto ``[-1, 1]``, clipped at prediction time.

    Thin wrapper over :class:`sklearn.preprocessing.MinMaxScaler` whose fitted
    ranges can be written to and read from JSON.
    """

    def __init__(self, clip=True):
        self.clip = clip

    def fit(self, X, y=None):
        self.scaler_ = MinMaxScaler(feature_range=(-1, 1), clip=self.clip).fit(X)
        self.n_features_in_ = self.scaler_.n_features_in_
        return self

    def transform(self, X):
        check_is_fitted(self, "scaler_")
        return self.scaler_.transform(X)

    def to_dict(self):
        check_is_fitted(self, "scaler_")
        return {"data_min": self.scaler_.data_min_.tolist(),
                "data_max": self.scaler_.data_max_.tolist(), "clip": self.clip}

    @classmethod
    def from_dict(cls, doc):
        lo = np.asarray(doc["data_min"], dtype=float)
        hi = np.asarray(doc["data_max"], dtype=float)
        return cls(clip=doc.get("clip", True)).fit(np.vstack([lo, hi]))
