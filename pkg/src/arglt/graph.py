"""Graph containers, dataset IO, node splits, synthetic graphs, and the
mask-weighted normalized adjacency operator.

Edges are stored canonically: an (E, 2) int64 array with i < j per row,
rows unique and lexicographically sorted. Symmetry of every derived matrix
is structural (both directions are materialized from the same storage).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .rng import rng_for


def canonical_edges(pairs) -> np.ndarray:
    """Canonicalize an iterable of undirected pairs.

    Orients each pair as (min, max), drops duplicates (including reversed
    duplicates), and sorts rows lexicographically. Raises on self-loops.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.shape[0] == 0:
        return np.empty((0, 2), dtype=np.int64)
    lo = arr.min(axis=1)
    hi = arr.max(axis=1)
    if np.any(lo == hi):
        bad = int(lo[np.argmax(lo == hi)])
        raise ValueError(f"self-loop edge at node {bad}")
    if np.any(lo < 0):
        raise ValueError("negative node id in edge list")
    out = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return out


def edge_lookup(edges: np.ndarray, n_nodes: int) -> dict[tuple[int, int], int]:
    """Map canonical (i, j) pairs to their row index in ``edges``."""
    return {(int(i), int(j)): k for k, (i, j) in enumerate(edges)}


@dataclass(frozen=True)
class Graph:
    """Undirected node-attributed labeled graph."""

    n_nodes: int
    edges: np.ndarray      # (E, 2) canonical
    features: np.ndarray   # (n, F) float64
    labels: np.ndarray     # (n,) int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        edges = canonical_edges(self.edges)
        features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        n = int(self.n_nodes)
        if n <= 0:
            raise ValueError("graph must have at least one node")
        if features.shape[0] != n:
            raise ValueError(f"features rows {features.shape[0]} != n_nodes {n}")
        if labels.shape != (n,):
            raise ValueError(f"labels length {labels.shape} != n_nodes {n}")
        if edges.size and edges.max() >= n:
            raise ValueError("edge endpoint out of range")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        for a in (edges, features, labels):
            a.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_nodes", n)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class NodeSplit:
    """Disjoint train/val/test node index sets (sorted int64 arrays)."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        arrays = []
        for name in ("train_idx", "val_idx", "test_idx"):
            a = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            a.setflags(write=False)
            arrays.append(a)
            object.__setattr__(self, name, a)
        tr, va, te = arrays
        if tr.size == 0:
            raise ValueError("train set must be non-empty")
        total = tr.size + va.size + te.size
        if np.unique(np.concatenate(arrays)).size != total:
            raise ValueError("split sets must be pairwise disjoint")
        if any(a.size and a.min() < 0 for a in arrays):
            raise ValueError("negative node id in split")


def load_graph(path) -> Graph:
    """Load a dataset directory: edges.txt, features.csv, labels.txt.

    edges.txt holds one edge per line as two whitespace-separated 0-based
    node ids; duplicate and reversed lines collapse to one undirected edge,
    self-loop lines are rejected. features.csv holds n comma-separated
    rows; labels.txt one integer per line.
    """
    d = Path(path)
    for fname in ("edges.txt", "features.csv", "labels.txt"):
        if not (d / fname).is_file():
            raise FileNotFoundError(f"dataset file missing: {d / fname}")
    raw = np.loadtxt(d / "edges.txt", dtype=np.int64, ndmin=2)
    if raw.size and raw.shape[1] != 2:
        raise ValueError("edges.txt lines must hold exactly two node ids")
    features = np.loadtxt(d / "features.csv", delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(d / "labels.txt", dtype=np.int64, ndmin=1)
    if labels.size and labels.min() < 0:
        raise ValueError("label out of range")
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return Graph(
        n_nodes=features.shape[0],
        edges=canonical_edges(raw) if raw.size else np.empty((0, 2), np.int64),
        features=features,
        labels=labels,
        num_classes=num_classes,
    )


def load_split(path, n_nodes: int) -> NodeSplit | None:
    """Read split.json ({"train": [...], "val": [...], "test": [...]}) if present."""
    f = Path(path) / "split.json"
    if not f.is_file():
        return None
    blob = json.loads(f.read_text())
    split = NodeSplit(
        train_idx=np.asarray(blob["train"], dtype=np.int64),
        val_idx=np.asarray(blob["val"], dtype=np.int64),
        test_idx=np.asarray(blob["test"], dtype=np.int64),
    )
    all_idx = np.concatenate([split.train_idx, split.val_idx, split.test_idx])
    if all_idx.size and all_idx.max() >= n_nodes:
        raise ValueError("split.json index out of range")
    return split


def write_dataset(path, g: Graph, split: NodeSplit | None = None) -> None:
    """Write a graph (and optionally a split) in the dataset directory format."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "edges.txt", g.edges, fmt="%d")
    np.savetxt(d / "features.csv", g.features, delimiter=",", fmt="%.10g")
    np.savetxt(d / "labels.txt", g.labels, fmt="%d")
    if split is not None:
        (d / "split.json").write_text(json.dumps({
            "train": split.train_idx.tolist(),
            "val": split.val_idx.tolist(),
            "test": split.test_idx.tolist(),
        }))


def largest_connected_component(g: Graph) -> tuple[Graph, dict[int, int]]:
    """Restrict to the largest connected component.

    Ties between equal-size components go to the one containing the
    smallest original node id. Returns the relabeled graph plus the
    old-id -> new-id map (retained nodes keep their relative order).
    """
    n = g.n_nodes
    adj = sp.coo_matrix(
        (np.ones(2 * g.num_edges), (
            np.concatenate([g.edges[:, 0], g.edges[:, 1]]),
            np.concatenate([g.edges[:, 1], g.edges[:, 0]]),
        )),
        shape=(n, n),
    ).tocsr()
    n_comp, comp = sp.csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    best = max(range(n_comp), key=lambda c: (sizes[c], -int(np.argmax(comp == c))))
    keep = np.flatnonzero(comp == best)
    index_map = {int(old): new for new, old in enumerate(keep)}
    if g.num_edges:
        sel = np.isin(g.edges[:, 0], keep) & np.isin(g.edges[:, 1], keep)
        remap = np.full(n, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        new_edges = remap[g.edges[sel]]
    else:
        new_edges = np.empty((0, 2), np.int64)
    sub = Graph(
        n_nodes=keep.size,
        edges=new_edges,
        features=g.features[keep],
        labels=g.labels[keep],
        num_classes=g.num_classes,
    )
    return sub, index_map


def make_split(g: Graph, fractions: tuple[float, float, float], seed: int) -> NodeSplit:
    """Seeded random split with sizes floor(f * n); test takes the remainder."""
    tr, va, te = fractions
    if min(tr, va, te) < 0 or tr + va + te > 1 + 1e-12:
        raise ValueError("fractions must be non-negative and sum to at most 1")
    n = g.n_nodes
    n_train = int(np.floor(tr * n))
    n_val = int(np.floor(va * n))
    if n_train == 0:
        raise ValueError("train fraction yields zero nodes")
    perm = rng_for(seed, "split").permutation(n)
    return NodeSplit(
        train_idx=perm[:n_train],
        val_idx=perm[n_train:n_train + n_val],
        test_idx=perm[n_train + n_val:],
    )


def generate_sbm(blocks: int, nodes_per_block: int, p_in: float, p_out: float,
                 feature_dim: int, feature_noise: float, seed: int) -> Graph:
    """Homophilic stochastic block model with block-centroid features.

    Block membership is the label; features are the block's one-hot
    centroid embedded in R^feature_dim plus Gaussian noise of scale
    feature_noise. Requires p_in > p_out and feature_dim >= blocks so
    noiseless features determine the class.
    """
    if blocks < 2:
        raise ValueError("need at least 2 blocks")
    if nodes_per_block < 1:
        raise ValueError("nodes_per_block must be positive")
    if not (0 <= p_out < p_in <= 1):
        raise ValueError("need 0 <= p_out < p_in <= 1")
    if feature_dim < blocks:
        raise ValueError("feature_dim must be >= blocks")
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks, dtype=np.int64), nodes_per_block)
    rng = rng_for(seed, "sbm")
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    mask = rng.random(iu.size) < p
    edges = np.stack([iu[mask], ju[mask]], axis=1)
    centroids = np.zeros((blocks, feature_dim))
    centroids[np.arange(blocks), np.arange(blocks)] = 1.0
    features = centroids[labels]
    if feature_noise > 0:
        features = features + feature_noise * rng.standard_normal((n, feature_dim))
    return Graph(n_nodes=n, edges=edges, features=features,
                 labels=labels, num_classes=blocks)


def incident_sum(n: int, edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-node sum of per-edge values over incident edges."""
    out = np.bincount(edges[:, 0], weights=values, minlength=n)
    out += np.bincount(edges[:, 1], weights=values, minlength=n)
    return out


class AdjacencyStructure:
    """Precomputed CSR pattern for one edge set, reusable across mask values."""

    __slots__ = ("n", "order", "indices", "indptr")

    def __init__(self, n: int, edges: np.ndarray):
        diag = np.arange(n, dtype=np.int64)
        rows = np.concatenate([edges[:, 0], edges[:, 1], diag])
        cols = np.concatenate([edges[:, 1], edges[:, 0], diag])
        order = np.lexsort((cols, rows))
        self.n = n
        self.order = order
        self.indices = cols[order].astype(np.int32 if n < 2**31 else np.int64)
        counts = np.bincount(rows, minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(self.indices.dtype)

    def csr_with(self, off_coeff: np.ndarray, diag: np.ndarray) -> sp.csr_matrix:
        data = np.concatenate([off_coeff, off_coeff, diag])[self.order]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class NormalizedAdjacency:
    """Symmetric sparse operator D^{-1/2} (masked adjacency + I) D^{-1/2}.

    Degrees are mask-weighted, d_i = 1 + sum of incident mask values, so
    gradients flow through the normalization. Entries exist only at the
    stored edges and the diagonal; a mask value of 0 contributes nothing.
    """

    __slots__ = ("n", "edges", "mask", "degrees", "off_coeff", "diag",
                 "structure", "_csr")

    def __init__(self, n: int, edges: np.ndarray, mask: np.ndarray,
                 structure: AdjacencyStructure | None = None):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        if mask.shape[0] != edges.shape[0]:
            raise ValueError("one mask value per edge required")
        degrees = 1.0 + incident_sum(n, edges, mask)
        if degrees.min(initial=np.inf) <= 0:
            raise ValueError("non-positive mask-weighted degree (divergent masks)")
        self.n = n
        self.edges = edges
        self.mask = mask
        self.degrees = degrees
        inv_sqrt = 1.0 / np.sqrt(degrees)
        self.off_coeff = mask * inv_sqrt[edges[:, 0]] * inv_sqrt[edges[:, 1]]
        self.diag = 1.0 / degrees
        self.structure = structure
        self._csr = None

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            if self.structure is None:
                self.structure = AdjacencyStructure(self.n, self.edges)
            self._csr = self.structure.csr_with(self.off_coeff, self.diag)
        return self._csr

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        return self.to_csr() @ dense

    __matmul__ = matmul

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()


def normalized_adjacency(n_nodes: int, edges: np.ndarray, mask: np.ndarray) -> NormalizedAdjacency:
    """Build the normalized adjacency for a (possibly perturbed) edge set.

    ``edges`` is the surviving edge set (base edges minus deletions plus
    additions, canonical); ``mask`` holds one real value per edge.
    """
    return NormalizedAdjacency(n_nodes, edges, mask)


def graph_sparsity(edge_mask: np.ndarray) -> float:
    """1 - nnz / total over edge-mask entries (entries at initialization)."""
    edge_mask = np.asarray(edge_mask)
    if edge_mask.size == 0:
        return 0.0
    return 1.0 - np.count_nonzero(edge_mask) / edge_mask.size


def model_sparsity(weight_masks) -> float:
    """1 - nnz / total over all weight-mask tensors."""
    total = sum(int(np.asarray(m).size) for m in weight_masks)
    if total == 0:
        return 0.0
    nnz = sum(int(np.count_nonzero(m)) for m in weight_masks)
    return 1.0 - nnz / total
