"""Dense/sparse matrix arithmetic for the two-layer GCN and MLP, with
hand-written analytic backward passes, plus Adam.

The GCN is Z = softmax(A_hat relu(A_hat X (mask0*W0)) (mask1*W1)) where
A_hat is the mask-weighted normalized adjacency. The backward pass returns
exact gradients for the weights, the weight masks, and the edge masks,
including the dependence of the degree normalization on the edge masks;
a finite-difference oracle in the test suite is the arbiter.

All arithmetic is float64. No bias terms, no dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedAdjacency, incident_sum


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_weights(shape: tuple[int, int], seed) -> np.ndarray:
    """Seeded Glorot-uniform matrix: entries in +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("weight dimensions must be positive")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-limit, limit, size=shape)


def maybe_sparse(features: np.ndarray, density_cutoff: float = 0.05):
    """Return a CSR view of a feature matrix when it is sparse enough."""
    if sp.issparse(features):
        return features.tocsr()
    x = np.asarray(features, dtype=np.float64)
    if x.size > 10000 and np.count_nonzero(x) / x.size < density_cutoff:
        return sp.csr_matrix(x)
    return x


@dataclass
class GcnState:
    """Two-layer GCN weights plus the immutable initialization snapshot."""

    w0: np.ndarray       # F x H
    w1: np.ndarray       # H x C
    init_w0: np.ndarray  # snapshot, written once at construction
    init_w1: np.ndarray

    def __post_init__(self):
        self.init_w0 = np.array(self.init_w0, dtype=np.float64, copy=True)
        self.init_w1 = np.array(self.init_w1, dtype=np.float64, copy=True)
        self.init_w0.setflags(write=False)
        self.init_w1.setflags(write=False)

    @classmethod
    def create(cls, num_features: int, hidden: int, num_classes: int, seed) -> "GcnState":
        ss = np.random.SeedSequence(seed) if isinstance(seed, int) else seed
        s0, s1 = ss.spawn(2)
        w0 = init_weights((num_features, hidden), s0)
        w1 = init_weights((hidden, num_classes), s1)
        return cls(w0=w0, w1=w1, init_w0=w0, init_w1=w1)

    @property
    def hidden_dim(self) -> int:
        return self.w0.shape[1]


@dataclass
class MlpState:
    """Two-layer MLP weights (feature-only classifier)."""

    v0: np.ndarray  # F x H_mlp
    v1: np.ndarray  # H_mlp x C

    @classmethod
    def create(cls, num_features: int, hidden: int, num_classes: int, seed) -> "MlpState":
        ss = np.random.SeedSequence(seed) if isinstance(seed, int) else seed
        s0, s1 = ss.spawn(2)
        return cls(v0=init_weights((num_features, hidden), s0),
                   v1=init_weights((hidden, num_classes), s1))

    @property
    def hidden_dim(self) -> int:
        return self.v0.shape[1]


@dataclass
class MaskPair:
    """Differentiable edge mask plus weight masks, with frozen support.

    ``*_alive`` mark entries that have never been pruned; pruned entries
    hold exactly 0.0 and stay that way (pruning never resurrects).
    """

    edge_mask: np.ndarray          # (E,) aligned to the perturbed edge list
    weight_masks: list[np.ndarray]  # shaped like [W0, W1]
    edge_alive: np.ndarray         # (E,) bool
    weight_alive: list[np.ndarray]  # bool, shaped like weight_masks

    @classmethod
    def ones(cls, n_edges: int, weight_shapes) -> "MaskPair":
        return cls(
            edge_mask=np.ones(n_edges),
            weight_masks=[np.ones(s) for s in weight_shapes],
            edge_alive=np.ones(n_edges, dtype=bool),
            weight_alive=[np.ones(s, dtype=bool) for s in weight_shapes],
        )

    def copy(self) -> "MaskPair":
        return MaskPair(
            edge_mask=self.edge_mask.copy(),
            weight_masks=[m.copy() for m in self.weight_masks],
            edge_alive=self.edge_alive.copy(),
            weight_alive=[a.copy() for a in self.weight_alive],
        )

    def is_binary(self) -> bool:
        ok = bool(np.isin(self.edge_mask, (0.0, 1.0)).all())
        return ok and all(np.isin(m, (0.0, 1.0)).all() for m in self.weight_masks)


@dataclass
class GcnCache:
    """Intermediates kept by gcn_forward for the backward pass."""

    adj: NormalizedAdjacency
    features: object            # ndarray or CSR
    xw: np.ndarray              # X @ (mask0*W0), n x H
    pre_act: np.ndarray         # A_hat @ xw, n x H
    hidden: np.ndarray          # relu(pre_act)
    ah: np.ndarray              # A_hat @ hidden
    hw: np.ndarray              # hidden @ (mask1*W1), n x C
    probs: np.ndarray           # softmax rows
    weights: tuple[np.ndarray, np.ndarray]
    weight_masks: tuple[np.ndarray, np.ndarray]


def gcn_forward(adj: NormalizedAdjacency, features, gcn: GcnState,
                weight_masks) -> tuple[np.ndarray, GcnCache]:
    """Masked two-layer GCN forward pass; rows of the output sum to 1."""
    m0, m1 = weight_masks
    u0 = m0 * gcn.w0
    u1 = m1 * gcn.w1
    xw = features @ u0
    pre_act = adj.matmul(xw)
    hidden = relu(pre_act)
    ah = adj.matmul(hidden)
    logits = ah @ u1
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite values in GCN forward (divergence)")
    probs = softmax_rows(logits)
    cache = GcnCache(adj=adj, features=features, xw=xw, pre_act=pre_act,
                     hidden=hidden, ah=ah, hw=logits, probs=probs,
                     weights=(gcn.w0, gcn.w1), weight_masks=(m0, m1))
    return probs, cache


def _adjacency_entry_grads(adj: NormalizedAdjacency, g2: np.ndarray, b2: np.ndarray,
                           g1: np.ndarray, b1: np.ndarray,
                           chunk: int = 1 << 18) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry loss gradients on the sparse support of A_hat.

    For each stored undirected edge e=(p,q) returns the symmetric pair sum
    S_pq + S_qp, and for each node the diagonal gradient S_ii, where
    S = d(loss)/d(A_hat) restricted to the support. A_hat appears at two
    product sites; each site contributes g[i] . b[j] to S_ij.
    """
    edges = adj.edges
    n_edges = edges.shape[0]
    s_sym = np.empty(n_edges)
    for a in range(0, n_edges, chunk):
        p = edges[a:a + chunk, 0]
        q = edges[a:a + chunk, 1]
        s = np.einsum("ec,ec->e", g2[p], b2[q])
        s += np.einsum("ec,ec->e", g2[q], b2[p])
        s += np.einsum("eh,eh->e", g1[p], b1[q])
        s += np.einsum("eh,eh->e", g1[q], b1[p])
        s_sym[a:a + chunk] = s
    s_diag = np.einsum("nc,nc->n", g2, b2) + np.einsum("nh,nh->n", g1, b1)
    return s_sym, s_diag


def gcn_backward(cache: GcnCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given its gradient on the logits.

    Returns dw0, dw1 (weights), dmask_w0, dmask_w1 (weight masks), and
    dedge (edge-mask entries, including the degree-normalization path).
    Edge entries whose mask value is 0 still receive their gradient.
    """
    adj = cache.adj
    w0, w1 = cache.weights
    m0, m1 = cache.weight_masks
    u1 = m1 * w1

    # layer 2: logits = (A_hat @ hidden) @ u1
    du1 = cache.ah.T @ dlogits
    dhidden = adj.matmul(dlogits @ u1.T)
    dpre = dhidden * (cache.pre_act > 0)

    # layer 1: pre_act = A_hat @ (X @ u0)
    dxw = adj.matmul(dpre)
    du0 = cache.features.T @ dxw

    # adjacency entries: logits site uses (dlogits, hidden @ u1),
    # pre_act site uses (dpre, xw)
    hu1 = cache.hidden @ u1
    s_sym, s_diag = _adjacency_entry_grads(adj, dlogits, hu1, dpre, cache.xw)

    # chain through A_hat entries to the edge-mask values:
    # off-diagonal (p,q): m_e / sqrt(d_p d_q); diagonal (i,i): 1 / d_i;
    # d_i = 1 + sum of incident mask values.
    edges = adj.edges
    node_acc = incident_sum(adj.n, edges, adj.off_coeff * s_sym)
    grad_deg = -(0.5 * node_acc + s_diag * adj.diag) / adj.degrees
    inv_sqrt = 1.0 / np.sqrt(adj.degrees)
    dedge = (s_sym * inv_sqrt[edges[:, 0]] * inv_sqrt[edges[:, 1]]
             + grad_deg[edges[:, 0]] + grad_deg[edges[:, 1]])

    return {
        "dw0": np.asarray(du0) * m0,
        "dw1": du1 * m1,
        "dmask_w0": np.asarray(du0) * w0,
        "dmask_w1": du1 * w1,
        "dedge": dedge,
    }


def mlp_forward(features, mlp: MlpState) -> tuple[np.ndarray, dict]:
    """softmax(relu(X V0) V1) per row; returns probabilities and a cache."""
    pre = features @ mlp.v0
    hidden = relu(pre)
    logits = hidden @ mlp.v1
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite values in MLP forward")
    probs = softmax_rows(logits)
    return probs, {"pre": pre, "hidden": hidden, "features": features, "v1": mlp.v1}


def mlp_backward(cache: dict, dlogits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dV0, dV1) of a scalar loss given its logit gradient."""
    dv1 = cache["hidden"].T @ dlogits
    dpre = (dlogits @ cache["v1"].T) * (cache["pre"] > 0)
    dv0 = cache["features"].T @ dpre
    return np.asarray(dv0), dv1


@dataclass
class AdamState:
    """Adam accumulators for one parameter group."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the updated parameters."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def save_checkpoint(path, gcn: GcnState, seed: int) -> None:
    """Write a model checkpoint (.npz): current weights, the initialization
    snapshot, and the RNG seed. Shapes are implicit in the arrays."""
    np.savez(path, w0=gcn.w0, w1=gcn.w1, init_w0=gcn.init_w0,
             init_w1=gcn.init_w1, seed=np.int64(seed))


def load_checkpoint(path) -> tuple[GcnState, int]:
    blob = np.load(path)
    gcn = GcnState(w0=blob["w0"], w1=blob["w1"],
                   init_w0=blob["init_w0"], init_w1=blob["init_w1"])
    return gcn, int(blob["seed"])
