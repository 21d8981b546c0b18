"""Feature-only MLP training and high-confidence pseudo-label selection.

The MLP never sees the adjacency, so structure poisoning cannot touch it;
its confident test-node predictions supply the extra CE signal used while
pruning and retraining.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, nn
from .graph import Graph, NodeSplit
from .rng import subseed

DEFAULT_MLP_HIDDEN = 1024


def mlp_hidden_for(num_features: int) -> int:
    """Default MLP width: 1024, scaled down to 4*F on tiny feature spaces."""
    return min(DEFAULT_MLP_HIDDEN, 4 * num_features)


@dataclass(frozen=True)
class PseudoLabels:
    """Predicted labels for the test nodes the MLP is confident about."""

    entries: dict[int, tuple[int, float]]  # node -> (label, confidence)
    threshold: float
    node_ids: np.ndarray = field(init=False)
    label_array: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.array(sorted(self.entries), dtype=np.int64)
        labels = np.array([self.entries[int(v)][0] for v in nodes], dtype=np.int64)
        nodes.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "node_ids", nodes)
        object.__setattr__(self, "label_array", labels)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def empty(cls, threshold: float = 0.0) -> "PseudoLabels":
        return cls(entries={}, threshold=threshold)


def _accuracy(probs: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    if idx.size == 0:
        return 0.0
    return float((probs[idx].argmax(axis=1) == labels[idx]).mean())


def train_mlp(g: Graph, split: NodeSplit, epochs: int = 200, lr: float = 1e-2,
              seed: int = 0, hidden: int | None = None, patience: int = 30) -> nn.MlpState:
    """Train the feature-only MLP on the train nodes with Adam.

    Early-stops on validation accuracy (best weights restored); falls back
    to train accuracy when the validation set is empty. Deterministic per
    seed.
    """
    if split.train_idx.size == 0:
        raise ValueError("train set must be non-empty")
    h = mlp_hidden_for(g.num_features) if hidden is None else hidden
    mlp = nn.MlpState.create(g.num_features, h, g.num_classes, subseed(seed, "mlp-init"))
    if epochs == 0:
        return mlp
    x = nn.maybe_sparse(g.features)
    y = g.labels
    monitor_idx = split.val_idx if split.val_idx.size else split.train_idx
    opt = nn.AdamState.for_params([mlp.v0, mlp.v1], lr=lr)
    # accuracy plateaus are broken by train CE so confidence keeps growing
    best_score = (-1.0, -np.inf)
    best_weights = (mlp.v0.copy(), mlp.v1.copy())
    stale = 0
    for _ in range(epochs):
        probs, cache = nn.mlp_forward(x, mlp)
        if not np.isfinite(probs).all():
            raise FloatingPointError("MLP training diverged")
        train_ce = losses.ce_train(probs, y, split.train_idx)
        score = (_accuracy(probs, y, monitor_idx), -train_ce)
        if score > best_score:
            best_score = score
            best_weights = (mlp.v0.copy(), mlp.v1.copy())
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
        dlogits = losses.ce_grad_logits(probs, split.train_idx, y[split.train_idx], 1.0)
        dv0, dv1 = nn.mlp_backward(cache, dlogits)
        mlp.v0, mlp.v1 = nn.adam_step(opt, [mlp.v0, mlp.v1], [dv0, dv1])
    mlp.v0, mlp.v1 = best_weights
    return mlp


def select_pseudo_labels(mlp: nn.MlpState, g: Graph, split: NodeSplit,
                         threshold: float) -> PseudoLabels:
    """Confident test-node predictions: include iff max softmax >= threshold.

    Labels break probability ties toward the smallest class id. An empty
    result is permitted but flagged with a warning.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    probs, _ = nn.mlp_forward(nn.maybe_sparse(g.features), mlp)
    entries: dict[int, tuple[int, float]] = {}
    for node in split.test_idx:
        p = probs[node]
        conf = float(p.max())
        if conf >= threshold:
            entries[int(node)] = (int(p.argmax()), conf)
    if not entries:
        warnings.warn(f"no test node reached confidence {threshold}", stacklevel=2)
    return PseudoLabels(entries=entries, threshold=threshold)


def save_pseudo_labels(path, pseudo: PseudoLabels) -> None:
    """Export as a JSON array of {node, label, confidence}."""
    rows = [{"node": int(v), "label": int(l), "confidence": c}
            for v, (l, c) in sorted(pseudo.entries.items())]
    Path(path).write_text(json.dumps(rows, indent=1))


def load_pseudo_labels(path, threshold: float = 0.0) -> PseudoLabels:
    rows = json.loads(Path(path).read_text())
    return PseudoLabels(
        entries={int(r["node"]): (int(r["label"]), float(r["confidence"])) for r in rows},
        threshold=threshold,
    )
