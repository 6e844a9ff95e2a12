"""Objective terms: reweighted adjacency reconstruction with a Gaussian KL
(the evidence lower bound), an element-wise entropy regularizer on the
latents, source cross-entropy, the nuclear-norm discrepancy between the
two domains' prediction matrices, and the adversarial wiring that lets one
backward pass drive the classifier up and the encoder down that discrepancy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GradaError
from .model import ClassifierParams, classify

_PROB_EPS = 1e-12


@dataclass
class LossReport:
    """Per-update scalar values of every objective component."""

    recon: float = 0.0
    kl: float = 0.0
    elbo: float = 0.0
    entropy_reg: float = 0.0
    cls: float = 0.0
    nwd: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "recon": self.recon, "kl": self.kl, "elbo": self.elbo,
            "entropy_reg": self.entropy_reg, "cls": self.cls,
            "nwd": self.nwd, "total": self.total,
        }


@dataclass
class CorrelationDiagnostics:
    """Summary statistics of a prediction matrix: trace and off-diagonal
    mass of P^T P, plus its Frobenius and nuclear norms."""

    intra: float
    inter: float
    frob: float
    nuclear: float


def gaussian_kl(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over entries, divided by the
    number of rows so graphs of different sizes weigh comparably."""
    n = mu.shape[0]
    sigma_sq = ad.exp(ad.mul(log_sigma, 2.0))
    per_entry = ad.sub(ad.add(ad.mul(mu, mu), sigma_sq), ad.add(1.0, ad.mul(log_sigma, 2.0)))
    return ad.mul(ad.tsum(per_entry), 0.5 / n)


def elbo_loss(edge_probs: Tensor, a_target: np.ndarray,
              mu: Tensor, log_sigma: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Reconstruction log-likelihood, KL, and their difference.

    The target is the clean adjacency even when the encoder saw a corrupted
    one. Positive entries are upweighted by the non-edge/edge ratio and the
    whole mean is rescaled so a constant per-entry log-likelihood passes
    through unchanged; an edgeless target falls back to weight one.
    """
    a = np.asarray(a_target, dtype=np.float64)
    n = a.shape[0]
    total = float(n * n)
    pos = float(a.sum())
    if pos == 0.0:
        warnings.warn("reconstruction target has no edges; positive weight set to 1",
                      RuntimeWarning, stacklevel=2)
        weight = 1.0
    else:
        weight = (total - pos) / pos
    norm = total / (2.0 * (total - pos))
    p = ad.clamp(edge_probs, _PROB_EPS, 1.0 - _PROB_EPS)
    ll = ad.add(ad.mul(Tensor(a * weight), ad.log(p)),
                ad.mul(Tensor(1.0 - a), ad.log(ad.sub(1.0, p))))
    recon = ad.mul(ad.tmean(ll), norm)
    kl = gaussian_kl(mu, log_sigma)
    return recon, kl, ad.sub(recon, kl)


def entropy_reg(z: Tensor, ranges: list[tuple[int, int]]) -> Tensor:
    """Mean over graphs of the element-wise mean of sigmoid(z)*log(sigmoid(z)).

    Computed as sigmoid(z) * (-softplus(-z)), which stays exact where the
    sigmoid saturates at either end.
    """
    if not ranges:
        raise GradaError("entropy_reg: no graphs")
    terms = []
    for start, stop in ranges:
        zk = ad.slice_rows(z, start, stop)
        elem = ad.mul(ad.sigmoid(zk), ad.neg(ad.softplus(ad.neg(zk))))
        terms.append(ad.tmean(elem))
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, 1.0 / len(terms))


def nwd_loss(p_source: Tensor, p_target: Tensor) -> Tensor:
    """Per-sample-normalized nuclear norm gap between the two domains'
    prediction matrices."""
    if p_source.shape[0] == 0 or p_target.shape[0] == 0:
        raise GradaError("nwd_loss: empty batch")
    return ad.sub(ad.mul(ad.nuclear_norm(p_source), 1.0 / p_source.shape[0]),
                  ad.mul(ad.nuclear_norm(p_target), 1.0 / p_target.shape[0]))


def cls_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of logits against integer class labels."""
    labels = np.asarray(labels)
    m, k = logits.shape
    if labels.shape != (m,):
        raise GradaError(f"cls_loss: {labels.shape} labels for {m} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise GradaError(f"cls_loss: labels must be in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    onehot = np.zeros((m, k))
    onehot[np.arange(m), labels] = 1.0
    lse = ad.logsumexp(logits, axis=1)
    picked = ad.tsum(ad.mul(logits, Tensor(onehot)))
    return ad.sub(ad.tmean(lse), ad.mul(picked, 1.0 / m))


def adversarial_nwd(pooled_source: Tensor, pooled_target: Tensor,
                    cls: ClassifierParams, grl_coeff: float) -> Tensor:
    """Nuclear-norm discrepancy wired for single-pass min-max training.

    The pooled features pass through a gradient-reversal node with
    ``grl_coeff`` before the classifier, and the resulting scalar passes
    through a unit reversal. Forward value: the plain discrepancy. Backward:
    the classifier's parameters receive the negated gradient (they climb the
    discrepancy) while the encoder receives +grl_coeff times the gradient
    (it descends it).
    """
    _, p_s = classify(cls, ad.grad_reverse(pooled_source, grl_coeff))
    _, p_t = classify(cls, ad.grad_reverse(pooled_target, grl_coeff))
    return ad.grad_reverse(nwd_loss(p_s, p_t), 1.0)


def total_objective(cls_term: Tensor | None, elbo_term: Tensor | None,
                    entropy_term: Tensor | None, nwd_term: Tensor | None,
                    lambda_e: float) -> Tensor:
    """Combine enabled components: cls - elbo + lambda_e * entropy + nwd."""
    total = Tensor(0.0)
    if cls_term is not None:
        total = ad.add(total, cls_term)
    if elbo_term is not None:
        total = ad.sub(total, elbo_term)
    if entropy_term is not None:
        total = ad.add(total, ad.mul(entropy_term, float(lambda_e)))
    if nwd_term is not None:
        total = ad.add(total, nwd_term)
    return total


def class_correlation_diagnostics(p) -> CorrelationDiagnostics:
    """Intra/inter-class correlation and both matrix norms of a
    row-stochastic prediction matrix."""
    arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    r = arr.T @ arr
    intra = float(np.trace(r))
    inter = float(r.sum() - np.trace(r))
    _, s, _ = ad._jacobi_svd(arr)
    return CorrelationDiagnostics(
        intra=intra,
        inter=inter,
        frob=float(np.linalg.norm(arr)),
        nuclear=float(s.sum()),
    )
