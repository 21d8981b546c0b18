"""Scalar training objectives and their gradient contributions.

Cross-entropy terms are plain sums over the indexed nodes (no averaging).
The smoothness term is the Laplacian-style penalty sum of
mask * ||x_i - x_j||^2 over undirected edges; minimizing it pushes down
the masks of edges joining dissimilar nodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

PROB_FLOOR = 1e-12  # clamp before log, numerical safety only


@dataclass(frozen=True)
class LossWeights:
    """Non-negative coefficients of the combined objective and retraining."""

    alpha: float = 1.0    # train CE
    beta: float = 0.1     # feature smoothness
    gamma: float = 1.0    # pseudo-label CE
    eta: float = 1.0      # retrain: train CE
    zeta: float = 1.0     # retrain: pseudo CE
    lambda1: float = 1e-2  # L1 on edge mask
    lambda2: float = 1e-2  # L1 on weight masks

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta", "zeta", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    """Component values of the combined objective (unweighted) plus total."""

    l0: float        # train CE
    lfs: float       # feature smoothness
    l1: float        # pseudo CE
    reg_g: float     # L1 of edge mask
    reg_theta: float  # L1 of weight masks
    total: float


def _ce_sum(probs: np.ndarray, idx: np.ndarray, targets: np.ndarray) -> float:
    p = probs[idx, targets]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).sum())


def ce_train(probs: np.ndarray, labels: np.ndarray, train_idx: np.ndarray) -> float:
    """Summed cross-entropy of the true labels over the train nodes."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty train index set")
    return _ce_sum(probs, train_idx, np.asarray(labels)[train_idx])


def ce_pseudo(probs: np.ndarray, pseudo) -> float:
    """Summed cross-entropy of the pseudo labels over the selected test nodes.

    An empty pseudo-label set contributes 0 and raises a warning (the
    confidence threshold was too strict to select anything).
    """
    if len(pseudo) == 0:
        warnings.warn("empty pseudo-label set; pseudo CE term is 0", stacklevel=2)
        return 0.0
    return _ce_sum(probs, pseudo.node_ids, pseudo.label_array)


def ce_grad_logits(probs: np.ndarray, idx: np.ndarray, targets: np.ndarray,
                   weight: float, out: np.ndarray | None = None) -> np.ndarray:
    """Accumulate weight * d(sum CE)/d(logits) into ``out`` (softmax fused)."""
    if out is None:
        out = np.zeros_like(probs)
    if len(idx) == 0 or weight == 0.0:
        return out
    idx = np.asarray(idx, dtype=np.int64)
    g = probs[idx] * weight
    g[np.arange(idx.size), np.asarray(targets, dtype=np.int64)] -= weight
    out[idx] += g
    return out


def edge_feature_sqdiff(edges: np.ndarray, features, normalize_rows: bool = False) -> np.ndarray:
    """Per-edge squared Euclidean feature difference ||x_i - x_j||^2.

    With normalize_rows, feature rows are L2-normalized before differencing.
    Gathers rows in blocks so huge pair lists (attack candidates) stay
    within memory.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    out = np.empty(edges.shape[0])
    sparse = sp.issparse(features)
    if sparse:
        x = features.tocsr()
        sq = np.asarray(x.multiply(x).sum(axis=1)).ravel()
        if normalize_rows:
            x = sp.diags(1.0 / np.sqrt(np.maximum(sq, 1e-300))) @ x
            sq = np.ones_like(sq)
    else:
        x = np.asarray(features, dtype=np.float64)
        if normalize_rows:
            x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300)
        sq = np.einsum("nf,nf->n", x, x)
    block = max(1, (1 << 22) // max(x.shape[1], 1))
    for a in range(0, edges.shape[0], block):
        i = edges[a:a + block, 0]
        j = edges[a:a + block, 1]
        if sparse:
            cross = np.asarray(x[i].multiply(x[j]).sum(axis=1)).ravel()
        else:
            cross = np.einsum("ef,ef->e", x[i], x[j])
        out[a:a + block] = np.maximum(sq[i] + sq[j] - 2.0 * cross, 0.0)
    return out


def feature_smoothness(edges: np.ndarray, mask: np.ndarray, features,
                       normalize_rows: bool = False) -> float:
    """Mask-weighted smoothness penalty over undirected edges.

    Equals half the sum over the full symmetric masked adjacency of
    entry * ||x_i - x_j||^2; the gradient w.r.t. a mask entry is exactly
    that edge's squared feature difference.
    """
    sq = edge_feature_sqdiff(edges, features, normalize_rows=normalize_rows)
    return float(np.dot(np.asarray(mask, dtype=np.float64), sq))


def l1_subgradient(values: np.ndarray) -> np.ndarray:
    """sign(v), with 0 at exactly 0 (keeps pruned entries at rest)."""
    return np.sign(values)


def args_total(l0: float, lfs: float, l1: float, weights: LossWeights,
               edge_mask: np.ndarray, weight_masks) -> LossBreakdown:
    """Compose the full pruning objective from its parts.

    total = alpha*l0 + beta*lfs + gamma*l1 + lambda1*|m_g|_1 + lambda2*|m_theta|_1,
    with the L1 norms taken over the current mask entries.
    """
    reg_g = float(np.abs(edge_mask).sum())
    reg_theta = float(sum(np.abs(m).sum() for m in weight_masks))
    total = (weights.alpha * l0 + weights.beta * lfs + weights.gamma * l1
             + weights.lambda1 * reg_g + weights.lambda2 * reg_theta)
    return LossBreakdown(l0=l0, lfs=lfs, l1=l1, reg_g=reg_g,
                         reg_theta=reg_theta, total=total)


def retrain_loss(probs: np.ndarray, labels: np.ndarray, train_idx: np.ndarray,
                 pseudo, eta: float, zeta: float) -> float:
    """Ticket-retraining objective eta*L0 + zeta*L1 (masks held constant)."""
    total = eta * ce_train(probs, labels, train_idx)
    if zeta != 0.0:
        total += zeta * ce_pseudo(probs, pseudo)
    return float(total)
