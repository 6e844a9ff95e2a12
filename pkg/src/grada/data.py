"""Dataset serialization, the synthetic two-domain benchmark, stratified
splitting, and the F1 evaluation metric.

Dataset files are UTF-8 text. The first line is the version tag
``grada-dataset v1``; each graph is a block

    graph <id> nodes=<n> label=<int|none>
    edges:
    <i> <j>          (one line per edge, i < j)
    features:        (optional)
    <K floats>       (n rows)

separated by blank lines. Floats are written with repr so stored features
round-trip bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetFormatError, GradaError
from .graphs import Graph, compute_features_corpus

FORMAT_TAG = "grada-dataset v1"


@dataclass
class SynthSpec:
    """Two-domain benchmark layout: per class, random graphs whose edge
    density separates the classes; the target domain's densities are
    shifted by ``delta_density`` and its structural features perturbed by
    Gaussian noise of scale ``sigma_shift``."""

    graphs_per_class: int = 100
    nodes_min: int = 12
    nodes_max: int = 20
    q0: float = 0.10
    q1: float = 0.25
    delta_density: float = 0.15
    sigma_shift: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.graphs_per_class < 1:
            raise GradaError("graphs_per_class must be positive")
        if not 2 <= self.nodes_min <= self.nodes_max:
            raise GradaError(f"invalid node range [{self.nodes_min}, {self.nodes_max}]")
        for name, q in (("q0", self.q0), ("q1", self.q1)):
            if not 0.0 < q < 1.0:
                raise GradaError(f"{name} must be in (0, 1), got {q}")
            if not 0.0 < q + self.delta_density < 1.0:
                raise GradaError(
                    f"shifted density {name}+delta = {q + self.delta_density} "
                    "is outside (0, 1)")
        if self.sigma_shift < 0:
            raise GradaError("sigma_shift must be non-negative")


def _random_adjacency(n: int, density: float, rng: np.random.Generator) -> np.ndarray:
    # Redraw the rare all-isolated sample: an edgeless graph is useless for
    # a structure-driven benchmark.
    for _ in range(100):
        a = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        a[iu] = (rng.random(len(iu[0])) < density).astype(np.float64)
        a += a.T
        if a.sum() > 0:
            return a
    return a


def generate_synthetic(spec: SynthSpec) -> tuple[list[Graph], list[Graph]]:
    """Source and target graph lists, each balanced across the two classes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    domains: dict[str, list[Graph]] = {}
    for domain in ("source", "target"):
        shift = 0.0 if domain == "source" else spec.delta_density
        bare: list[tuple[np.ndarray, int]] = []
        for label, q in ((0, spec.q0), (1, spec.q1)):
            for _ in range(spec.graphs_per_class):
                n = int(rng.integers(spec.nodes_min, spec.nodes_max + 1))
                bare.append((_random_adjacency(n, q + shift, rng), label))
        shells = [Graph(a, np.zeros((a.shape[0], 1)), label=lbl) for a, lbl in bare]
        feats = compute_features_corpus(shells)
        if domain == "target" and spec.sigma_shift > 0:
            feats = [x + rng.normal(0.0, spec.sigma_shift, size=x.shape) for x in feats]
        domains[domain] = [Graph(a, x, label=lbl)
                           for (a, lbl), x in zip(bare, feats)]
    return domains["source"], domains["target"]


# ---------------------------------------------------------------------------
# serialization


def save_dataset(path, graphs: list[Graph], include_features: bool = True) -> None:
    labeled = [g.label is not None for g in graphs]
    if any(labeled) and not all(labeled):
        raise DatasetFormatError("labels must be all present or all absent")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_TAG + "\n")
        for gid, g in enumerate(graphs):
            label = "none" if g.label is None else str(int(g.label))
            fh.write(f"graph {gid} nodes={g.num_nodes} label={label}\n")
            fh.write("edges:\n")
            iu = np.triu_indices(g.num_nodes, k=1)
            for i, j in zip(*iu):
                if g.adjacency[i, j] == 1.0:
                    fh.write(f"{i} {j}\n")
            if include_features:
                fh.write("features:\n")
                for row in g.features:
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write("\n")


def _parse_header(line: str, record: int):
    parts = line.split()
    if len(parts) != 4 or parts[0] != "graph":
        raise DatasetFormatError(f"graph record {record}: bad header line {line!r}")
    try:
        int(parts[1])
    except ValueError:
        raise DatasetFormatError(f"graph record {record}: bad id field {parts[1]!r}")
    if not parts[2].startswith("nodes=") or not parts[3].startswith("label="):
        raise DatasetFormatError(f"graph record {record}: header needs nodes= and label=")
    try:
        n = int(parts[2][len("nodes="):])
    except ValueError:
        raise DatasetFormatError(f"graph record {record}: bad nodes field")
    if n < 1:
        raise DatasetFormatError(f"graph record {record}: nodes must be positive")
    raw = parts[3][len("label="):]
    if raw == "none":
        label = None
    else:
        try:
            label = int(raw)
        except ValueError:
            raise DatasetFormatError(f"graph record {record}: bad label field {raw!r}")
    return n, label


def load_dataset(path, recompute_features: bool = False) -> list[Graph]:
    """Parse a dataset file into Graph objects.

    Stored features win unless ``recompute_features`` is set; graphs
    without stored features get the structural features computed.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != FORMAT_TAG:
        found = lines[0].strip() if lines else "<empty file>"
        raise DatasetFormatError(f"unknown dataset version tag: {found!r}")

    entries = []  # (n, label, adjacency, features-or-None)
    pos = 1
    record = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        n, label = _parse_header(lines[pos], record)
        pos += 1
        adjacency = np.zeros((n, n))
        features = None
        seen_edges = set()
        if pos < len(lines) and lines[pos].strip() == "edges:":
            pos += 1
            while pos < len(lines):
                stripped = lines[pos].strip()
                if not stripped or stripped == "features:" or stripped.startswith("graph "):
                    break
                parts = stripped.split()
                if len(parts) != 2:
                    raise DatasetFormatError(
                        f"graph record {record}: bad edge line {stripped!r}")
                try:
                    i, j = int(parts[0]), int(parts[1])
                except ValueError:
                    raise DatasetFormatError(
                        f"graph record {record}: non-integer edge {stripped!r}")
                if not 0 <= i < j < n:
                    raise DatasetFormatError(
                        f"graph record {record}: edge ({i}, {j}) out of range for "
                        f"{n} nodes or not i<j")
                if (i, j) in seen_edges:
                    raise DatasetFormatError(
                        f"graph record {record}: duplicate edge ({i}, {j})")
                seen_edges.add((i, j))
                adjacency[i, j] = adjacency[j, i] = 1.0
                pos += 1
        if pos < len(lines) and lines[pos].strip() == "features:":
            pos += 1
            rows = []
            for _ in range(n):
                if pos >= len(lines) or not lines[pos].strip():
                    raise DatasetFormatError(
                        f"graph record {record}: features need {n} rows, got {len(rows)}")
                try:
                    rows.append([float(v) for v in lines[pos].split()])
                except ValueError:
                    raise DatasetFormatError(
                        f"graph record {record}: bad features row {lines[pos]!r}")
                pos += 1
            widths = {len(r) for r in rows}
            if len(widths) != 1:
                raise DatasetFormatError(
                    f"graph record {record}: inconsistent features row widths {sorted(widths)}")
            features = np.array(rows)
        entries.append((n, label, adjacency, features))
        record += 1

    if not entries:
        raise DatasetFormatError("dataset contains no graphs")
    labeled = [label is not None for _, label, _, _ in entries]
    if any(labeled) and not all(labeled):
        raise DatasetFormatError("labels must be all present or all absent")

    need_compute = [i for i, (_, _, _, f) in enumerate(entries)
                    if recompute_features or f is None]
    if need_compute:
        shells = [Graph(entries[i][2], np.zeros((entries[i][0], 1))) for i in need_compute]
        computed = compute_features_corpus(shells)
        lookup = dict(zip(need_compute, computed))
    else:
        lookup = {}

    graphs = []
    for i, (n, label, adjacency, features) in enumerate(entries):
        x = lookup.get(i, features)
        graphs.append(Graph(adjacency, x, label=label))
    widths = {g.features.shape[1] for g in graphs}
    if len(widths) != 1:
        raise DatasetFormatError(f"mixed feature dimensions in dataset: {sorted(widths)}")
    return graphs


# ---------------------------------------------------------------------------
# metric and split


def f1_score(predictions, labels, positive_class) -> float:
    """Harmonic mean of precision and recall for one class; zero when the
    denominator vanishes."""
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.size == 0:
        raise GradaError("f1_score: empty input")
    if preds.shape != labs.shape:
        raise GradaError(f"f1_score: {preds.shape} predictions vs {labs.shape} labels")
    tp = float(np.sum((preds == positive_class) & (labs == positive_class)))
    fp = float(np.sum((preds == positive_class) & (labs != positive_class)))
    fn = float(np.sum((preds != positive_class) & (labs == positive_class)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def split(dataset: list[Graph], train_fraction: float, seed: int):
    """Deterministic train/test split, stratified by label when labels
    exist. Every class must have at least two samples."""
    if not 0.0 < train_fraction < 1.0:
        raise GradaError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if not dataset:
        raise GradaError("split: empty dataset")
    rng = np.random.default_rng(seed)
    labeled = all(g.label is not None for g in dataset)
    if labeled:
        groups = {}
        for i, g in enumerate(dataset):
            groups.setdefault(g.label, []).append(i)
        train_idx, test_idx = [], []
        for label in sorted(groups):
            idxs = groups[label]
            if len(idxs) < 2:
                raise GradaError(f"split: class {label} has fewer than 2 samples")
            order = rng.permutation(len(idxs))
            n_train = min(max(int(train_fraction * len(idxs)), 1), len(idxs) - 1)
            train_idx.extend(idxs[k] for k in order[:n_train])
            test_idx.extend(idxs[k] for k in order[n_train:])
    else:
        if len(dataset) < 2:
            raise GradaError("split: need at least 2 samples")
        order = rng.permutation(len(dataset))
        n_train = min(max(int(train_fraction * len(dataset)), 1), len(dataset) - 1)
        train_idx = list(order[:n_train])
        test_idx = list(order[n_train:])
    train_idx = [train_idx[k] for k in rng.permutation(len(train_idx))]
    test_idx = [test_idx[k] for k in rng.permutation(len(test_idx))]
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]
