"""Graph containers, random edge augmentation, structural node features,
and block-diagonal batching."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GradaError, ShapeError

FEATURE_NAMES = (
    "coreness",
    "pagerank",
    "hub",
    "authority",
    "eigenvector_centrality",
    "clustering_coefficient",
    "degree",
)

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 1000


@dataclass
class Graph:
    """One undirected graph: binary symmetric adjacency, node features,
    optional class label."""

    adjacency: np.ndarray
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        validate_graph(self)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def without_label(self) -> "Graph":
        return Graph(self.adjacency, self.features, label=None)

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(self.adjacency, features, label=self.label)


def validate_graph(g: Graph) -> None:
    a, x = g.adjacency, g.features
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise GradaError(f"adjacency must be square and non-empty, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise GradaError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise GradaError("adjacency diagonal must be zero")
    if not np.all((a == 0) | (a == 1)):
        raise GradaError("adjacency entries must be 0 or 1")
    if x.ndim != 2 or x.shape[0] != a.shape[0]:
        raise GradaError(
            f"features must be (num_nodes, K); got {x.shape} for {a.shape[0]} nodes")
    if not np.all(np.isfinite(x)):
        raise GradaError("features contain non-finite values")
    if g.label is not None and (not isinstance(g.label, (int, np.integer)) or g.label < 0):
        raise GradaError(f"label must be a non-negative integer, got {g.label!r}")


@dataclass
class AugmentConfig:
    """Edge dropping/addition rates. The effective addition probability per
    non-edge pair is p_add times the graph's own edge density (edges over
    all off-diagonal pairs), clamped to [0, 1]."""

    p_add: float = 0.1
    p_drop: float = 0.1

    def __post_init__(self):
        for name in ("p_add", "p_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GradaError(f"{name} must be in [0, 1], got {v}")


def edge_density(adjacency: np.ndarray) -> float:
    n = adjacency.shape[0]
    pairs = n * (n - 1) / 2
    if pairs == 0:
        return 0.0
    return float(adjacency.sum() / 2.0 / pairs)


def augment_adjacency(g: Graph, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Randomly drop existing edges and add new ones.

    Each existing edge survives with probability 1 - p_drop; each non-edge
    pair becomes an edge with probability p_add * p_edge. One draw per
    unordered pair, mirrored below the diagonal, so the result is again a
    valid binary symmetric adjacency.
    """
    n = g.num_nodes
    out = np.zeros((n, n))
    if n < 2:
        return out
    iu = np.triu_indices(n, k=1)
    vals = g.adjacency[iu]
    p_edge = edge_density(g.adjacency)
    p_add_eff = min(1.0, cfg.p_add * p_edge)
    u = rng.random(vals.shape[0])
    new_vals = np.where(vals == 1.0, u >= cfg.p_drop, u < p_add_eff).astype(np.float64)
    out[iu] = new_vals
    out += out.T
    return out


# ---------------------------------------------------------------------------
# structural node features


def _coreness(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    degree = a.sum(axis=1).astype(int)
    core = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    k = 0
    while alive.any():
        while True:
            peel = alive & (degree <= k)
            if not peel.any():
                break
            core[peel] = k
            alive[peel] = False
            degree = degree - a[:, peel].sum(axis=1).astype(int)
        k += 1
    return core


def _pagerank(a: np.ndarray, damping=0.85) -> np.ndarray:
    n = a.shape[0]
    deg = a.sum(axis=1)
    dangling = deg == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        trans = np.where(deg[:, None] > 0, a / np.where(deg[:, None] > 0, deg[:, None], 1.0), 0.0)
    r = np.full(n, 1.0 / n)
    for _ in range(_POWER_MAX_ITER):
        spill = r[dangling].sum() / n
        nxt = damping * (trans.T @ r + spill) + (1.0 - damping) / n
        if np.abs(nxt - r).sum() < 1e-12:
            r = nxt
            break
        r = nxt
    return r / r.sum()


def _l2_power_iteration(step, n: int) -> np.ndarray:
    """Repeatedly apply ``step`` and L2-normalize, from a uniform positive
    start. Stops at the tolerance or the iteration cap, whichever first."""
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(_POWER_MAX_ITER):
        nxt = step(x)
        norm = np.linalg.norm(nxt)
        if norm < 1e-300:
            return x
        nxt = nxt / norm
        if np.abs(nxt - x).max() < _POWER_TOL:
            return nxt
        x = nxt
    return x


def _hits(a: np.ndarray):
    n = a.shape[0]
    hub = _l2_power_iteration(lambda h: a @ (a.T @ h), n)
    authority = a.T @ hub
    norm = np.linalg.norm(authority)
    if norm < 1e-300:
        authority = np.full(n, 1.0 / np.sqrt(n))
    else:
        authority = authority / norm
    return hub, authority


def _eigenvector_centrality(a: np.ndarray) -> np.ndarray:
    return _l2_power_iteration(lambda x: a @ x, a.shape[0])


def _clustering_coefficient(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    closed = np.diag(a @ a @ a)
    denom = deg * (deg - 1.0)
    out = np.zeros_like(deg)
    mask = denom > 0
    out[mask] = closed[mask] / denom[mask]
    return out


def compute_node_features(g: Graph) -> np.ndarray:
    """Seven structural features per node, in FEATURE_NAMES order.

    Pagerank sums to one; hub, authority and eigenvector centrality are
    L2-normalized; isolated nodes get clustering coefficient zero.
    """
    a = g.adjacency
    hub, authority = _hits(a)
    cols = [
        _coreness(a).astype(np.float64),
        _pagerank(a),
        hub,
        authority,
        _eigenvector_centrality(a),
        _clustering_coefficient(a),
        a.sum(axis=1),
    ]
    return np.column_stack(cols)


def _max_workers() -> int:
    cap = os.environ.get("GRADA_THREADS")
    workers = min(4, os.cpu_count() or 1)
    if cap is not None:
        workers = max(1, min(workers, int(cap)))
    return workers


def compute_features_corpus(graphs: list[Graph]) -> list[np.ndarray]:
    """Feature matrices for a whole corpus; parallel across graphs, capped
    by the GRADA_THREADS environment variable."""
    workers = _max_workers()
    if workers <= 1 or len(graphs) < 2:
        return [compute_node_features(g) for g in graphs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(compute_node_features, graphs))


# ---------------------------------------------------------------------------
# batching


@dataclass
class GraphBatch:
    """Several graphs merged into one block-diagonal adjacency.

    ``ranges`` holds each graph's contiguous [start, stop) node interval.
    ``labels`` is None for unlabeled (target-domain) batches, so training
    code cannot read labels that must not exist.
    """

    adjacency: np.ndarray
    features: np.ndarray
    ranges: list[tuple[int, int]] = field(default_factory=list)
    labels: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return len(self.ranges)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def graph_sizes(self) -> list[int]:
        return [stop - start for start, stop in self.ranges]


def batch_graphs(graphs: list[Graph]) -> GraphBatch:
    """Merge graphs into a block-diagonal batch, preserving input order.

    Labels are carried only when every graph has one.
    """
    if not graphs:
        raise GradaError("batch_graphs: empty graph list")
    k = graphs[0].features.shape[1]
    for i, g in enumerate(graphs):
        if g.features.shape[1] != k:
            raise ShapeError(
                f"batch_graphs: graph {i} has feature dimension {g.features.shape[1]}, expected {k}")
    sizes = [g.num_nodes for g in graphs]
    total = sum(sizes)
    adjacency = np.zeros((total, total))
    features = np.zeros((total, k))
    ranges = []
    offset = 0
    for g, n in zip(graphs, sizes):
        adjacency[offset:offset + n, offset:offset + n] = g.adjacency
        features[offset:offset + n] = g.features
        ranges.append((offset, offset + n))
        offset += n
    labels = None
    if all(g.label is not None for g in graphs):
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    return GraphBatch(adjacency, features, ranges, labels)
