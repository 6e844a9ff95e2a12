"""Scikit-learn style front end: fit on labeled source graphs plus
unlabeled target graphs, then predict, score, or embed new graphs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import GradaError
from .graphs import Graph, validate_graph
from .training import (TrainConfig, fit_model, graph_embeddings,
                       predict_proba as _predict_proba)


def _check_graph_list(xs, name) -> int:
    """Validate a homogeneous list of graphs; returns the feature width."""
    if not isinstance(xs, (list, tuple)) or not xs:
        raise GradaError(f"{name} must be a non-empty list of Graph objects")
    k = None
    for i, g in enumerate(xs):
        if not isinstance(g, Graph):
            raise GradaError(f"{name}[{i}] is not a Graph")
        validate_graph(g)
        if k is None:
            k = g.features.shape[1]
        elif g.features.shape[1] != k:
            raise GradaError(
                f"{name}[{i}] has feature dimension {g.features.shape[1]}, expected {k}")
    return k


class DomainAdaptiveGraphClassifier(BaseEstimator, ClassifierMixin):
    """Graph classifier trained adversarially against an unlabeled target
    domain.

    Parameters mirror the training configuration. ``fit(X, y, target=...)``
    takes the labeled source graphs in X (labels from ``y`` or from the
    graphs themselves) and the unlabeled target graphs via the ``target``
    keyword; ``ablation_mode="source_only"`` trains without a target.

    After fitting, ``predict``/``predict_proba`` classify graphs from
    either domain and ``transform`` returns the pooled latent embedding
    per graph.
    """

    def __init__(self, batch_size=1024, learning_rate=0.01, dropout=0.5,
                 encoder_hidden=256, decoder_hidden=64, latent_dim=256,
                 lr_decay=0.75, lambda_e=1.0, weight_decay=0.0005,
                 p_add=0.1, p_drop=0.1, epochs=20, seed=27,
                 ablation_mode="full"):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.latent_dim = latent_dim
        self.lr_decay = lr_decay
        self.lambda_e = lambda_e
        self.weight_decay = weight_decay
        self.p_add = p_add
        self.p_drop = p_drop
        self.epochs = epochs
        self.seed = seed
        self.ablation_mode = ablation_mode

    def _config(self) -> TrainConfig:
        cfg = TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            dropout=self.dropout, encoder_hidden=self.encoder_hidden,
            decoder_hidden=self.decoder_hidden, latent_dim=self.latent_dim,
            lr_decay=self.lr_decay, lambda_e=self.lambda_e,
            weight_decay=self.weight_decay, p_add=self.p_add,
            p_drop=self.p_drop, epochs=self.epochs, seed=self.seed,
            ablation_mode=self.ablation_mode,
        )
        cfg.validate()
        return cfg

    def fit(self, X, y=None, target=None):
        cfg = self._config()
        k = _check_graph_list(X, "X")
        if y is not None:
            y = np.asarray(y)
            if y.shape != (len(X),):
                raise GradaError(f"y has shape {y.shape}, expected ({len(X)},)")
            source = [Graph(g.adjacency, g.features, label=int(lbl))
                      for g, lbl in zip(X, y)]
        else:
            if any(g.label is None for g in X):
                raise GradaError("pass y or use graphs that carry labels")
            source = list(X)
        if target is not None:
            kt = _check_graph_list(target, "target")
            if kt != k:
                raise GradaError(
                    f"target feature dimension {kt} != source dimension {k}")
            target = [g.without_label() for g in target]
        elif cfg.ablation_mode != "source_only":
            raise GradaError("target graphs are required unless "
                             "ablation_mode='source_only'")
        params, reports, opt, classes = fit_model(cfg, source, target or [])
        self.params_ = params
        self.classes_ = classes
        self.reports_ = [r for epoch in reports for r in epoch]
        self.optimizer_steps_ = opt.step_count
        self.feature_dim_ = k
        return self

    def _check_ready(self, X):
        check_is_fitted(self, "params_")
        k = _check_graph_list(X, "X")
        if k != self.feature_dim_:
            raise GradaError(
                f"feature dimension {k} does not match fitted dimension "
                f"{self.feature_dim_}")

    def predict_proba(self, X):
        self._check_ready(X)
        return _predict_proba(self.params_, list(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X):
        self._check_ready(X)
        return graph_embeddings(self.params_, list(X))
