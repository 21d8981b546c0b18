"""Weight-only GCN training on a fixed masked adjacency.

Used for the attack surrogate (plain train CE) and for retraining a
pruned ticket (train CE plus pseudo-label CE); in both cases the masks
are constants and only the weights move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, nn
from .graph import NodeSplit, NormalizedAdjacency


def accuracy(probs: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    """Fraction of idx whose argmax prediction (smallest class id on ties)
    equals the true label."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty evaluation index set")
    return float((probs[idx].argmax(axis=1) == np.asarray(labels)[idx]).mean())


@dataclass
class WeightTrainOutcome:
    w0: np.ndarray
    w1: np.ndarray
    val_accuracy: float
    test_accuracy: float
    final_w0: np.ndarray
    final_w1: np.ndarray
    final_test_accuracy: float
    epochs_run: int


def train_gcn_weights(adj: NormalizedAdjacency, features, labels: np.ndarray,
                      split: NodeSplit, pseudo, gcn: nn.GcnState, weight_masks,
                      eta: float, zeta: float, epochs: int, lr: float,
                      patience: int) -> WeightTrainOutcome:
    """Adam on eta*trainCE + zeta*pseudoCE with fixed masks.

    Early-stops on validation accuracy; the returned (w0, w1) are the
    best-validation weights, with the final-epoch state kept alongside.
    """
    w0 = gcn.w0.copy()
    w1 = gcn.w1.copy()
    m0, m1 = weight_masks
    opt = nn.AdamState.for_params([w0, w1], lr=lr)
    state = nn.GcnState(w0=w0, w1=w1, init_w0=gcn.init_w0, init_w1=gcn.init_w1)
    monitor = split.val_idx if split.val_idx.size else split.train_idx

    def objective(probs):
        value = eta * losses.ce_train(probs, labels, split.train_idx)
        if zeta != 0.0 and pseudo is not None and len(pseudo):
            value += zeta * losses.ce_pseudo(probs, pseudo)
        return value

    # accuracy plateaus (common early in training) are broken by the
    # training objective so patience does not fire while still learning
    best_score = (-1.0, -np.inf)
    best = (w0.copy(), w1.copy(), -1.0, -1.0)
    stale = 0
    epochs_run = 0
    for _ in range(epochs):
        probs, cache = nn.gcn_forward(adj, features, state, (m0, m1))
        val_acc = accuracy(probs, labels, monitor)
        test_acc = accuracy(probs, labels, split.test_idx) if split.test_idx.size else val_acc
        score = (val_acc, -objective(probs))
        if score > best_score:
            best_score = score
            best = (state.w0.copy(), state.w1.copy(), val_acc, test_acc)
            stale = 0
        else:
            stale += 1
        dlogits = losses.ce_grad_logits(probs, split.train_idx,
                                        labels[split.train_idx], eta)
        if zeta != 0.0 and pseudo is not None and len(pseudo):
            dlogits = losses.ce_grad_logits(probs, pseudo.node_ids,
                                            pseudo.label_array, zeta, out=dlogits)
        g = nn.gcn_backward(cache, dlogits)
        state.w0, state.w1 = nn.adam_step(opt, [state.w0, state.w1],
                                          [g["dw0"], g["dw1"]])
        epochs_run += 1
        if stale >= patience:
            break
    probs, _ = nn.gcn_forward(adj, features, state, (m0, m1))
    final_val = accuracy(probs, labels, monitor)
    final_test = accuracy(probs, labels, split.test_idx) if split.test_idx.size else final_val
    if (final_val, -objective(probs)) > best_score:
        best = (state.w0.copy(), state.w1.copy(), final_val, final_test)
    return WeightTrainOutcome(
        w0=best[0], w1=best[1], val_accuracy=best[2], test_accuracy=best[3],
        final_w0=state.w0, final_w1=state.w1, final_test_accuracy=final_test,
        epochs_run=epochs_run,
    )
