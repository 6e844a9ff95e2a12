"""Two-pass adversarial training loop, Adam optimizer, learning-rate and
reversal-strength schedules, and experiment orchestration with per-epoch
evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import losses
from .autodiff import Tensor
from .data import f1_score, split
from .errors import ConfigError, GradaError
from .graphs import AugmentConfig, Graph, GraphBatch, augment_adjacency, batch_graphs

ABLATION_MODES = ("full", "dnan_d", "dnan_n", "source_only")

# Node budget per forward pass when evaluating a corpus.
_EVAL_CHUNK_NODES = 2048


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference configuration for
    the social-network benchmark, with the batch size capped to the dataset
    at run time."""

    batch_size: int = 1024
    learning_rate: float = 0.01
    dropout: float = 0.5
    encoder_hidden: int = 256
    decoder_hidden: int = 64
    latent_dim: int = 256
    lr_decay: float = 0.75
    lambda_e: float = 1.0
    weight_decay: float = 0.0005
    p_add: float = 0.1
    p_drop: float = 0.1
    epochs: int = 20
    seed: int = 27
    ablation_mode: str = "full"
    train_fraction: float = 0.8
    split_seed: int = 0

    def validate(self) -> None:
        for name in ("batch_size", "encoder_hidden", "decoder_hidden",
                     "latent_dim", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("dropout", "p_add", "p_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0 or self.lr_decay < 0 or self.lambda_e < 0:
            raise ConfigError("lr_decay, lambda_e and weight_decay must be non-negative")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(
                f"ablation_mode must be one of {ABLATION_MODES}, got {self.ablation_mode!r}")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class OptimizerState:
    """Adam accumulators, keyed by parameter name; per-parameter step
    counters keep bias correction right for late-joining parameters."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)
    step_count: int = 0


def adam_update(opt: OptimizerState, params: mdl.ModelParams, grads: dict,
                lr_t: float, weight_decay: float) -> None:
    """One Adam step over every parameter that received a gradient.

    Weight decay is coupled (added to the gradient as an L2 term).
    Parameters absent from the gradient map are left untouched.
    """
    for name, tensor in params.named().items():
        entry = grads.get(tensor.tid)
        if entry is None:
            continue
        g = entry.data if isinstance(entry, Tensor) else np.asarray(entry)
        if g.shape != tensor.shape:
            raise GradaError(f"adam_update: gradient shape {g.shape} != parameter "
                             f"shape {tensor.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise GradaError(f"adam_update: non-finite gradient for {name}")
        if weight_decay:
            g = g + weight_decay * tensor.data
        t = opt.t.get(name, 0) + 1
        opt.t[name] = t
        m = opt.beta1 * opt.m.get(name, 0.0) + (1.0 - opt.beta1) * g
        v = opt.beta2 * opt.v.get(name, 0.0) + (1.0 - opt.beta2) * g * g
        opt.m[name] = m
        opt.v[name] = v
        m_hat = m / (1.0 - opt.beta1 ** t)
        v_hat = v / (1.0 - opt.beta2 ** t)
        tensor.data = tensor.data - lr_t * m_hat / (np.sqrt(v_hat) + opt.eps)
    opt.step_count += 1


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Annealed learning rate lr0 / (1 + 10 p)^decay with p the training
    progress fraction."""
    p = step / total_steps if total_steps > 0 else 0.0
    return cfg.learning_rate / (1.0 + 10.0 * p) ** cfg.lr_decay


def grl_coefficient(step: int, total_steps: int) -> float:
    """Reversal strength warm-up 2 / (1 + exp(-10 p)) - 1, from 0 to 1."""
    p = step / total_steps if total_steps > 0 else 0.0
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def _passes_per_step(mode: str) -> int:
    return 2 if mode in ("full", "dnan_n") else 1


def _augmented_adjacency(graphs, batch: GraphBatch, aug: AugmentConfig,
                         rng: np.random.Generator) -> np.ndarray:
    a = np.zeros_like(batch.adjacency)
    for g, (start, stop) in zip(graphs, batch.ranges):
        a[start:stop, start:stop] = augment_adjacency(g, aug, rng)
    return a


def _mean_tensors(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, 1.0 / len(terms))


def _elbo_over_graphs(decoder: mdl.DecoderParams, graphs, ranges,
                      latent: mdl.LatentBatch):
    # One decoder MLP pass over all nodes; only the per-graph Gram products
    # are sliced out (cross-graph edges are never scored).
    hidden = mdl.decode_hidden(decoder, latent.z)
    recs, kls = [], []
    for g, (start, stop) in zip(graphs, ranges):
        probs = mdl.edge_probs_from_hidden(ad.slice_rows(hidden, start, stop))
        mu_k = ad.slice_rows(latent.mu, start, stop)
        ls_k = ad.slice_rows(latent.log_sigma, start, stop)
        rec, kl, _ = losses.elbo_loss(probs, g.adjacency, mu_k, ls_k)
        recs.append(rec)
        kls.append(kl)
    recon = _mean_tensors(recs)
    kl = _mean_tensors(kls)
    return recon, kl, ad.sub(recon, kl)


def _one_pass(params, opt, source_graphs, source_batch, target_graphs, target_batch,
              cfg, rng, total_steps, augmented: bool) -> losses.LossReport:
    mode = cfg.ablation_mode
    use_elbo = mode in ("full", "dnan_n")
    use_nwd = mode in ("full", "dnan_d")
    use_cls = not augmented

    if augmented:
        aug = AugmentConfig(p_add=cfg.p_add, p_drop=cfg.p_drop)
        adj_s = _augmented_adjacency(source_graphs, source_batch, aug, rng)
        adj_t = _augmented_adjacency(target_graphs, target_batch, aug, rng)
    else:
        adj_s = source_batch.adjacency
        adj_t = target_batch.adjacency

    lat_s = mdl.encode(params.encoder, source_batch, adj_s, rng, cfg.dropout)
    lat_t = None
    if use_elbo or use_nwd:
        lat_t = mdl.encode(params.encoder, target_batch, adj_t, rng, cfg.dropout)

    cls_term = None
    if use_cls:
        logits, _ = mdl.classify(params.classifier, mdl.pool(source_batch, lat_s.z))
        cls_term = losses.cls_loss(logits, source_batch.labels)

    recon_t = kl_t = elbo_term = ent_term = None
    if use_elbo:
        all_graphs = list(source_graphs) + list(target_graphs)
        z_all = ad.concat([lat_s.z, lat_t.z], axis=0)
        mu_all = ad.concat([lat_s.mu, lat_t.mu], axis=0)
        ls_all = ad.concat([lat_s.log_sigma, lat_t.log_sigma], axis=0)
        offset = source_batch.num_nodes
        ranges = list(source_batch.ranges) + [(s + offset, e + offset)
                                              for s, e in target_batch.ranges]
        merged = mdl.LatentBatch(mu=mu_all, log_sigma=ls_all, z=z_all,
                                 eps=np.zeros(0))
        recon_t, kl_t, elbo_term = _elbo_over_graphs(params.decoder, all_graphs,
                                                     ranges, merged)
        ent_term = losses.entropy_reg(z_all, ranges)

    nwd_term = None
    if use_nwd:
        grl = grl_coefficient(opt.step_count, total_steps)
        nwd_term = losses.adversarial_nwd(mdl.pool(source_batch, lat_s.z),
                                          mdl.pool(target_batch, lat_t.z),
                                          params.classifier, grl)

    total = losses.total_objective(cls_term, elbo_term, ent_term, nwd_term, cfg.lambda_e)
    grads = ad.backward(total)
    adam_update(opt, params, grads, lr_at(opt.step_count, total_steps, cfg),
                cfg.weight_decay)

    def val(t):
        return float(t.data) if t is not None else 0.0

    return losses.LossReport(
        recon=val(recon_t), kl=val(kl_t), elbo=val(elbo_term),
        entropy_reg=val(ent_term), cls=val(cls_term), nwd=val(nwd_term),
        total=float(total.data),
    )


def train_step(params: mdl.ModelParams, opt: OptimizerState,
               source_graphs: list[Graph], target_graphs: list[Graph],
               cfg: TrainConfig, rng: np.random.Generator,
               total_steps: int) -> tuple[losses.LossReport, losses.LossReport | None]:
    """One sampled minibatch pair: a clean update, then (unless the ablation
    drops it) a second update on randomly corrupted adjacencies with the
    classification term zeroed. Returns the per-pass loss reports."""
    if not source_graphs or not target_graphs:
        raise GradaError("train_step: empty batch")
    if any(g.label is None for g in source_graphs):
        raise GradaError("train_step: source batch must carry labels")
    if any(g.label is not None for g in target_graphs):
        raise GradaError("train_step: target batch must not carry labels")
    source_batch = batch_graphs(source_graphs)
    target_batch = batch_graphs(target_graphs)

    clean = _one_pass(params, opt, source_graphs, source_batch,
                      target_graphs, target_batch, cfg, rng, total_steps, augmented=False)
    noisy = None
    if _passes_per_step(cfg.ablation_mode) == 2:
        noisy = _one_pass(params, opt, source_graphs, source_batch,
                          target_graphs, target_batch, cfg, rng, total_steps, augmented=True)
    return clean, noisy


def _aggregate(reports: list[losses.LossReport]) -> losses.LossReport:
    n = len(reports)
    return losses.LossReport(
        recon=sum(r.recon for r in reports) / n,
        kl=sum(r.kl for r in reports) / n,
        elbo=sum(r.elbo for r in reports) / n,
        entropy_reg=sum(r.entropy_reg for r in reports) / n,
        cls=sum(r.cls for r in reports) / n,
        nwd=sum(r.nwd for r in reports) / n,
        total=sum(r.total for r in reports) / n,
    )


class _Recycler:
    """Endless shuffled stream over a finite pool; reshuffles on wrap."""

    def __init__(self, items, rng: np.random.Generator):
        self._items = list(items)
        self._rng = rng
        self._order = []

    def take(self, count: int) -> list:
        out = []
        while len(out) < count:
            if not self._order:
                self._order = list(self._rng.permutation(len(self._items)))
            out.append(self._items[self._order.pop(0)])
        return out


def planned_total_steps(cfg: TrainConfig, num_source_train: int) -> int:
    b_s = min(cfg.batch_size, num_source_train)
    num_batches = math.ceil(num_source_train / b_s)
    return cfg.epochs * num_batches * _passes_per_step(cfg.ablation_mode)


def fit_model(cfg: TrainConfig, source_graphs: list[Graph], target_graphs: list[Graph],
              on_epoch=None):
    """Train on labeled source graphs and unlabeled target graphs.

    Returns (params, per-epoch aggregated LossReports, optimizer state,
    sorted class labels). ``on_epoch(epoch, params, reports, opt,
    total_steps)`` fires after each epoch with the aggregated clean/noisy
    reports for that epoch.
    """
    cfg.validate()
    if not source_graphs:
        raise GradaError("fit_model: no source graphs")
    if any(g.label is None for g in source_graphs):
        raise GradaError("fit_model: every source graph needs a label")
    if cfg.ablation_mode != "source_only" and not target_graphs:
        raise GradaError("fit_model: target graphs required unless ablation_mode "
                         "is 'source_only'")

    classes = np.unique([g.label for g in source_graphs])
    index = {c: i for i, c in enumerate(classes)}
    source = [Graph(g.adjacency, g.features, label=index[g.label]) for g in source_graphs]
    target = [g.without_label() for g in target_graphs]
    if not target:
        # A source-only run still needs a formally valid target stream for
        # the shared step machinery; it never influences the objective.
        target = [source[0].without_label()]

    rng = np.random.default_rng(cfg.seed)
    params = mdl.init_model(
        num_features=source[0].features.shape[1],
        encoder_hidden=cfg.encoder_hidden,
        latent_dim=cfg.latent_dim,
        decoder_hidden=cfg.decoder_hidden,
        classifier_hidden=cfg.encoder_hidden,
        num_classes=len(classes),
        rng=rng,
    )
    opt = OptimizerState()

    b_s = min(cfg.batch_size, len(source))
    b_t = min(cfg.batch_size, len(target))
    num_batches = math.ceil(len(source) / b_s)
    total_steps = planned_total_steps(cfg, len(source))
    recycler = _Recycler(target, rng)

    epoch_reports = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(source))
        clean_reports, noisy_reports = [], []
        for b in range(num_batches):
            idx = order[b * b_s:(b + 1) * b_s]
            src = [source[i] for i in idx]
            tgt = recycler.take(b_t)
            clean, noisy = train_step(params, opt, src, tgt, cfg, rng, total_steps)
            clean_reports.append(clean)
            if noisy is not None:
                noisy_reports.append(noisy)
        reports = [_aggregate(clean_reports)]
        if noisy_reports:
            reports.append(_aggregate(noisy_reports))
        epoch_reports.append(reports)
        if on_epoch is not None:
            on_epoch(epoch, params, reports, opt, total_steps)
    return params, epoch_reports, opt, classes


# ---------------------------------------------------------------------------
# evaluation


def _chunks_by_nodes(graphs: list[Graph], budget: int = _EVAL_CHUNK_NODES):
    chunk, used = [], 0
    for g in graphs:
        if chunk and used + g.num_nodes > budget:
            yield chunk
            chunk, used = [], 0
        chunk.append(g)
        used += g.num_nodes
    if chunk:
        yield chunk


def predict_proba(params: mdl.ModelParams, graphs: list[Graph]) -> np.ndarray:
    """Row-softmax class probabilities per graph, deterministic (no noise,
    no dropout, clean adjacency)."""
    rows = []
    for chunk in _chunks_by_nodes(graphs):
        batch = batch_graphs([g.without_label() for g in chunk])
        latent = mdl.encode(params.encoder, batch)
        _, p = mdl.classify(params.classifier, mdl.pool(batch, latent.z))
        rows.append(p.data)
    return np.vstack(rows)


def predict_indices(params: mdl.ModelParams, graphs: list[Graph]) -> np.ndarray:
    return predict_proba(params, graphs).argmax(axis=1)


def graph_embeddings(params: mdl.ModelParams, graphs: list[Graph]) -> np.ndarray:
    """Pooled deterministic latent embedding per graph."""
    rows = []
    for chunk in _chunks_by_nodes(graphs):
        batch = batch_graphs([g.without_label() for g in chunk])
        latent = mdl.encode(params.encoder, batch)
        rows.append(mdl.pool(batch, latent.z).data)
    return np.vstack(rows)


def evaluate_f1(params: mdl.ModelParams, graphs: list[Graph], classes: np.ndarray,
                positive_class=None) -> float:
    labels = [g.label for g in graphs]
    if any(lbl is None for lbl in labels):
        raise GradaError("evaluate_f1: every graph needs a label")
    preds = classes[predict_indices(params, graphs)]
    if positive_class is None:
        positive_class = classes[-1]
    return f1_score(preds, np.asarray(labels), positive_class)


# ---------------------------------------------------------------------------
# experiment orchestration

METRIC_FIELDS = ("epoch", "f1_target", "f1_source", "recon", "kl",
                 "entropy_reg", "cls", "nwd", "lr")


@dataclass
class ExperimentResult:
    params: mdl.ModelParams
    classes: np.ndarray
    records: list[dict]
    reports: list[losses.LossReport]
    optimizer_steps: int
    steps_per_epoch: list[int]
    final_f1_target: float | None
    final_f1_source: float | None


def run_experiment(cfg: TrainConfig, source_graphs: list[Graph],
                   target_graphs: list[Graph], metrics_path=None,
                   positive_class=None) -> ExperimentResult:
    """Split both domains, train, and evaluate the target test split each
    epoch. When ``metrics_path`` is given, one JSON record per epoch is
    appended and flushed as it is produced."""
    cfg.validate()
    src_train, src_test = split(source_graphs, cfg.train_fraction, cfg.split_seed)
    tgt_labeled = bool(target_graphs) and all(g.label is not None for g in target_graphs)
    if target_graphs:
        tgt_train, tgt_test = split(target_graphs, cfg.train_fraction, cfg.split_seed)
    else:
        tgt_train, tgt_test = [], []

    records: list[dict] = []
    reports_flat: list[losses.LossReport] = []
    steps_per_epoch: list[int] = []
    last_step = [0]
    stream = open(metrics_path, "a", encoding="utf-8") if metrics_path else None

    def on_epoch(epoch, params, reports, opt, total_steps):
        reports_flat.extend(reports)
        steps_per_epoch.append(opt.step_count - last_step[0])
        last_step[0] = opt.step_count
        classes = np.unique([g.label for g in src_train])
        f1_t = evaluate_f1(params, tgt_test, classes, positive_class) \
            if (tgt_test and tgt_labeled) else None
        f1_s = evaluate_f1(params, src_test, classes, positive_class)
        mean = _aggregate(reports)
        record = {
            "epoch": epoch,
            "f1_target": f1_t,
            "f1_source": f1_s,
            "recon": mean.recon,
            "kl": mean.kl,
            "entropy_reg": mean.entropy_reg,
            "cls": mean.cls,
            "nwd": mean.nwd,
            "lr": lr_at(opt.step_count, total_steps, cfg),
        }
        records.append(record)
        if stream is not None:
            stream.write(json.dumps(record) + "\n")
            stream.flush()

    try:
        params, _, opt, classes = fit_model(cfg, src_train, tgt_train, on_epoch=on_epoch)
    finally:
        if stream is not None:
            stream.close()

    final_f1_t = records[-1]["f1_target"] if records else None
    final_f1_s = records[-1]["f1_source"] if records else None
    return ExperimentResult(
        params=params, classes=classes, records=records, reports=reports_flat,
        optimizer_steps=opt.step_count, steps_per_epoch=steps_per_epoch,
        final_f1_target=final_f1_t, final_f1_source=final_f1_s,
    )


def records_to_csv(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_FIELDS) + "\n")
        for rec in records:
            cells = []
            for k in METRIC_FIELDS:
                v = rec[k]
                cells.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")
