"""Neural architecture: attention-based graph encoder producing per-node
Gaussian latents, an MLP-enhanced inner-product edge decoder, mean pooling
to graph embeddings, and a two-layer classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GradaError, ShapeError
from .graphs import GraphBatch

LOG_SIGMA_CLIP = 10.0

CHECKPOINT_VERSION = 1


@dataclass
class GatLayerParams:
    weight: Tensor          # (K_in, K_out)
    attn: Tensor            # (2*K_out, 1), [self half ; neighbor half]
    slope: float = 0.2


@dataclass
class EncoderParams:
    shared: GatLayerParams
    mu_head: GatLayerParams
    sigma_head: GatLayerParams


@dataclass
class DecoderParams:
    w0: Tensor              # (F, H_dec)
    w1: Tensor              # (H_dec, F_out)


@dataclass
class ClassifierParams:
    w1: Tensor              # (F, H_cls)
    b1: Tensor              # (H_cls,)
    w2: Tensor              # (H_cls, k)
    b2: Tensor              # (k,)


@dataclass
class ModelParams:
    encoder: EncoderParams
    decoder: DecoderParams
    classifier: ClassifierParams

    def named(self) -> dict[str, Tensor]:
        e, d, c = self.encoder, self.decoder, self.classifier
        return {
            "encoder.shared.weight": e.shared.weight,
            "encoder.shared.attn": e.shared.attn,
            "encoder.mu.weight": e.mu_head.weight,
            "encoder.mu.attn": e.mu_head.attn,
            "encoder.sigma.weight": e.sigma_head.weight,
            "encoder.sigma.attn": e.sigma_head.attn,
            "decoder.w0": d.w0,
            "decoder.w1": d.w1,
            "classifier.w1": c.w1,
            "classifier.b1": c.b1,
            "classifier.w2": c.w2,
            "classifier.b2": c.b2,
        }

    @property
    def num_features(self) -> int:
        return self.encoder.shared.weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.encoder.mu_head.weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.classifier.w2.shape[1]

    def encoder_parameters(self) -> list[Tensor]:
        e = self.encoder
        return [e.shared.weight, e.shared.attn, e.mu_head.weight, e.mu_head.attn,
                e.sigma_head.weight, e.sigma_head.attn]


@dataclass
class LatentBatch:
    """Per-node posterior for one batch: Z = mu + eps * exp(log_sigma),
    with log_sigma already clipped."""

    mu: Tensor
    log_sigma: Tensor
    z: Tensor
    eps: np.ndarray


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _gat_layer(rng, k_in, k_out, slope=0.2) -> GatLayerParams:
    return GatLayerParams(
        weight=_glorot(rng, k_in, k_out, (k_in, k_out)),
        attn=_glorot(rng, 2 * k_out, 1, (2 * k_out, 1)),
        slope=slope,
    )


def init_model(num_features, encoder_hidden, latent_dim, decoder_hidden,
               classifier_hidden, num_classes, rng: np.random.Generator) -> ModelParams:
    if num_classes < 2:
        raise GradaError(f"need at least 2 classes, got {num_classes}")
    encoder = EncoderParams(
        shared=_gat_layer(rng, num_features, encoder_hidden),
        mu_head=_gat_layer(rng, encoder_hidden, latent_dim),
        sigma_head=_gat_layer(rng, encoder_hidden, latent_dim),
    )
    decoder = DecoderParams(
        w0=_glorot(rng, latent_dim, decoder_hidden, (latent_dim, decoder_hidden)),
        w1=_glorot(rng, decoder_hidden, latent_dim, (decoder_hidden, latent_dim)),
    )
    classifier = ClassifierParams(
        w1=_glorot(rng, latent_dim, classifier_hidden, (latent_dim, classifier_hidden)),
        b1=Tensor(np.zeros(classifier_hidden), requires_grad=True),
        w2=_glorot(rng, classifier_hidden, num_classes, (classifier_hidden, num_classes)),
        b2=Tensor(np.zeros(num_classes), requires_grad=True),
    )
    return ModelParams(encoder, decoder, classifier)


def gat_forward(layer: GatLayerParams, adjacency: np.ndarray, h: Tensor) -> Tensor:
    """Single-head graph attention over ``adjacency`` plus self-loops.

    Output row i is the attention-weighted sum of W h_j over j in N(i) and i
    itself; masked-out pairs get an attention weight of exactly zero, so
    block-diagonal batches never mix graphs.
    """
    n = adjacency.shape[0]
    if h.shape[0] != n:
        raise ShapeError(f"gat_forward: {h.shape[0]} feature rows for {n} nodes")
    k_out = layer.weight.shape[1]
    wh = ad.matmul(h, layer.weight)
    a_self = ad.slice_rows(layer.attn, 0, k_out)
    a_neigh = ad.slice_rows(layer.attn, k_out, 2 * k_out)
    s_self = ad.matmul(wh, a_self)        # (n, 1)
    s_neigh = ad.matmul(wh, a_neigh)      # (n, 1)
    scores = ad.add(s_self, ad.transpose(s_neigh))
    keep = (adjacency + np.eye(n)) != 0
    alpha = ad.leaky_masked_softmax(scores, keep, layer.slope)
    return ad.matmul(alpha, wh)


def attention_weights(layer: GatLayerParams, adjacency: np.ndarray, h: Tensor) -> np.ndarray:
    """The softmax attention matrix itself, for inspection and testing."""
    n = adjacency.shape[0]
    k_out = layer.weight.shape[1]
    wh = ad.matmul(h, layer.weight)
    a_self = ad.slice_rows(layer.attn, 0, k_out)
    a_neigh = ad.slice_rows(layer.attn, k_out, 2 * k_out)
    scores = ad.add(ad.matmul(wh, a_self), ad.transpose(ad.matmul(wh, a_neigh)))
    keep = (adjacency + np.eye(n)) != 0
    return ad.leaky_masked_softmax(scores, keep, layer.slope).data


def _dropout(t: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return t
    mask = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return ad.mul(t, Tensor(mask))


def encode(enc: EncoderParams, batch: GraphBatch, adjacency: np.ndarray | None = None,
           rng: np.random.Generator | None = None, dropout: float = 0.0) -> LatentBatch:
    """Encode a batch into per-node Gaussian latents.

    ``adjacency`` defaults to the batch's own (clean) adjacency; pass an
    augmented matrix to encode a corrupted view. With ``rng=None`` the
    latent noise is zero (Z = mu) and dropout is off: the deterministic
    evaluation path.
    """
    a = batch.adjacency if adjacency is None else adjacency
    if a.shape != batch.adjacency.shape:
        raise ShapeError(
            f"encode: adjacency shape {a.shape} != batch shape {batch.adjacency.shape}")
    x = _dropout(Tensor(batch.features), dropout, rng)
    hidden = ad.elu(gat_forward(enc.shared, a, x))
    hidden = _dropout(hidden, dropout, rng)
    mu = gat_forward(enc.mu_head, a, hidden)
    log_sigma = ad.clamp(gat_forward(enc.sigma_head, a, hidden),
                         -LOG_SIGMA_CLIP, LOG_SIGMA_CLIP)
    if rng is None:
        eps = np.zeros(mu.shape)
    else:
        eps = rng.standard_normal(mu.shape)
    z = ad.add(mu, ad.mul(Tensor(eps), ad.exp(log_sigma)))
    return LatentBatch(mu=mu, log_sigma=log_sigma, z=z, eps=eps)


def decode_hidden(dec: DecoderParams, z: Tensor) -> Tensor:
    """The decoder MLP h = relu((z W0) W1); rows feed the edge model."""
    return ad.relu(ad.matmul(ad.matmul(z, dec.w0), dec.w1))


def edge_probs_from_hidden(h: Tensor) -> Tensor:
    """sigmoid(h_i . h_j); the pre-sigmoid Gram matrix is symmetrized
    explicitly so the output equals its transpose bit for bit."""
    gram = ad.matmul(h, ad.transpose(h))
    gram = ad.mul(ad.add(gram, ad.transpose(gram)), 0.5)
    return ad.sigmoid(gram)


def decode(dec: DecoderParams, z: Tensor) -> Tensor:
    """Edge probabilities sigmoid(h_i . h_j) with h = relu((z W0) W1)."""
    return edge_probs_from_hidden(decode_hidden(dec, z))


def pooling_matrix(batch: GraphBatch) -> np.ndarray:
    s = np.zeros((batch.num_graphs, batch.num_nodes))
    for i, (start, stop) in enumerate(batch.ranges):
        s[i, start:stop] = 1.0 / (stop - start)
    return s


def pool(batch: GraphBatch, z: Tensor) -> Tensor:
    """Mean of each graph's node latents: one embedding row per graph."""
    return ad.matmul(Tensor(pooling_matrix(batch)), z)


def classify(cls: ClassifierParams, graph_emb: Tensor) -> tuple[Tensor, Tensor]:
    """Logits and row-softmax prediction matrix for graph embeddings."""
    hidden = ad.relu(ad.add(ad.matmul(graph_emb, cls.w1), cls.b1))
    logits = ad.add(ad.matmul(hidden, cls.w2), cls.b2)
    return logits, ad.softmax(logits, axis=1)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: ModelParams, path) -> None:
    arrays = {name: t.data for name, t in params.named().items()}
    arrays["checkpoint_version"] = np.array([CHECKPOINT_VERSION])
    np.savez(path, **arrays)


def load_params(path) -> ModelParams:
    with np.load(path) as blob:
        version = blob.get("checkpoint_version")
        if version is None or int(version[0]) != CHECKPOINT_VERSION:
            raise GradaError(f"unsupported checkpoint version in {path}")
        data = {name: blob[name] for name in blob.files if name != "checkpoint_version"}
    expected = {
        "encoder.shared.weight", "encoder.shared.attn",
        "encoder.mu.weight", "encoder.mu.attn",
        "encoder.sigma.weight", "encoder.sigma.attn",
        "decoder.w0", "decoder.w1",
        "classifier.w1", "classifier.b1", "classifier.w2", "classifier.b2",
    }
    missing = expected - set(data)
    if missing:
        raise GradaError(f"checkpoint missing parameters: {sorted(missing)}")

    def t(name):
        return Tensor(data[name], requires_grad=True)

    encoder = EncoderParams(
        shared=GatLayerParams(t("encoder.shared.weight"), t("encoder.shared.attn")),
        mu_head=GatLayerParams(t("encoder.mu.weight"), t("encoder.mu.attn")),
        sigma_head=GatLayerParams(t("encoder.sigma.weight"), t("encoder.sigma.attn")),
    )
    decoder = DecoderParams(t("decoder.w0"), t("decoder.w1"))
    classifier = ClassifierParams(t("classifier.w1"), t("classifier.b1"),
                                  t("classifier.w2"), t("classifier.b2"))
    return ModelParams(encoder, decoder, classifier)
