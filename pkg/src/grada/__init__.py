"""Unsupervised domain adaptation for graph classification.

A denoising variational graph autoencoder with an attention encoder plus a
classifier that doubles as a nuclear-norm discrepancy critic, trained with
a two-pass (clean, corrupted) update schedule. Built on an in-package
reverse-mode autodiff engine over dense float64 arrays.
"""

from .autodiff import Tensor, backward, grad_reverse, nuclear_norm, svd
from .data import SynthSpec, f1_score, generate_synthetic, load_dataset, save_dataset, split
from .errors import (ConfigError, DatasetFormatError, DomainError, GradaError,
                     ShapeError)
from .estimator import DomainAdaptiveGraphClassifier
from .graphs import (AugmentConfig, Graph, GraphBatch, augment_adjacency,
                     batch_graphs, compute_node_features)
from .losses import (CorrelationDiagnostics, LossReport,
                     class_correlation_diagnostics, cls_loss, elbo_loss,
                     entropy_reg, gaussian_kl, nwd_loss, total_objective)
from .model import (ClassifierParams, DecoderParams, EncoderParams,
                    GatLayerParams, LatentBatch, ModelParams, classify, decode,
                    encode, gat_forward, init_model, load_params, pool,
                    save_params)
from .training import (ExperimentResult, OptimizerState, TrainConfig,
                       adam_update, fit_model, grl_coefficient, lr_at,
                       run_experiment, train_step)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ClassifierParams", "ConfigError",
    "CorrelationDiagnostics", "DatasetFormatError", "DecoderParams",
    "DomainAdaptiveGraphClassifier", "DomainError", "EncoderParams",
    "ExperimentResult", "GatLayerParams", "GradaError", "Graph", "GraphBatch",
    "LatentBatch", "LossReport", "ModelParams", "OptimizerState", "ShapeError",
    "SynthSpec", "Tensor", "TrainConfig", "adam_update", "augment_adjacency",
    "backward", "batch_graphs", "class_correlation_diagnostics", "classify",
    "cls_loss", "compute_node_features", "decode", "elbo_loss", "encode",
    "entropy_reg", "f1_score", "fit_model", "gat_forward", "gaussian_kl",
    "generate_synthetic", "grad_reverse", "grl_coefficient", "init_model",
    "load_dataset", "load_params", "lr_at", "nuclear_norm", "nwd_loss",
    "pool", "run_experiment", "save_dataset", "save_params", "split", "svd",
    "total_objective", "train_step",
]
