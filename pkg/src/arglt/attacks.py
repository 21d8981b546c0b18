"""Structure poisoning adversaries and attack statistics.

Three attacks, all budgeted at floor(ptb_rate * |E|) undirected flips:

* pgd_structure_attack: trains a clean-graph surrogate GCN, relaxes edge
  flips into s in [0,1] per candidate pair, ascends the surrogate's
  train-node CE through the normalized adjacency, projects onto the
  budget polytope by bisection, then keeps the best feasible Bernoulli
  discretization.
* random_flip_attack: uniform flips (weak baseline).
* dissimilar_edge_attack: greedily inserts the non-edges with the largest
  feature differences (homophily-breaking baseline).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import losses, nn
from .graph import (AdjacencyStructure, Graph, NodeSplit, NormalizedAdjacency,
                    canonical_edges)
from .rng import rng_for, subseed
from .train import train_gcn_weights

FULL_CANDIDATE_LIMIT = 3000   # all node pairs are PGD candidates up to here
CANDIDATES_PER_FLIP = 50      # sampled candidates per budgeted flip above it


@dataclass(frozen=True)
class AttackConfig:
    """Budget and solver knobs shared by the attacks.

    ptb_rate is the fraction of clean undirected edges that may be
    flipped. The PGD step at iteration t is step_size / sqrt(t + 1) times
    the ascent gradient of the mean train-node CE.
    """

    ptb_rate: float
    steps: int = 100
    step_size: float = 200.0
    sample_trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ptb_rate <= 1.0:
            raise ValueError("ptb_rate must be in [0, 1]")
        if self.steps < 0 or self.sample_trials < 1:
            raise ValueError("steps must be >= 0 and sample_trials >= 1")


@dataclass(frozen=True)
class SurrogateConfig:
    """Clean-graph surrogate GCN used by the PGD adversary."""

    hidden: int = 64
    epochs: int = 200
    lr: float = 1e-2
    patience: int = 30


@dataclass(frozen=True)
class EdgeCategoryCounts:
    """Adversarial added edges bucketed by endpoint membership.

    Validation nodes count as test nodes for bucketing purposes.
    """

    train_train: int
    train_test: int
    test_test: int

    @property
    def total(self) -> int:
        return self.train_train + self.train_test + self.test_test


@dataclass(frozen=True)
class PerturbedGraph:
    """A base graph plus the budgeted flip set an attack produced."""

    base: Graph
    added_edges: np.ndarray    # (k, 2) canonical, disjoint from base edges
    removed_edges: np.ndarray  # (r, 2) canonical, subset of base edges

    def __post_init__(self):
        added = canonical_edges(self.added_edges)
        removed = canonical_edges(self.removed_edges)
        n = self.base.n_nodes
        if (added.size and added.max() >= n) or (removed.size and removed.max() >= n):
            raise ValueError("flip endpoint out of range")
        base_keys = _pair_keys(self.base.edges, n)
        if np.isin(_pair_keys(added, n), base_keys).any():
            raise ValueError("added edge already present in the base graph")
        if not np.isin(_pair_keys(removed, n), base_keys).all():
            raise ValueError("removed edge absent from the base graph")
        object.__setattr__(self, "added_edges", added)
        object.__setattr__(self, "removed_edges", removed)

    @property
    def budget_used(self) -> int:
        return self.added_edges.shape[0] + self.removed_edges.shape[0]

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Surviving canonical edge set: base minus removals plus additions."""
        n = self.base.n_nodes
        keep = ~np.isin(_pair_keys(self.base.edges, n),
                        _pair_keys(self.removed_edges, n))
        merged = np.concatenate([self.base.edges[keep], self.added_edges])
        order = np.lexsort((merged[:, 1], merged[:, 0]))
        out = merged[order]
        out.setflags(write=False)
        return out

    @cached_property
    def added_index(self) -> np.ndarray:
        """Positions of the adversarial added edges inside edge_array."""
        n = self.base.n_nodes
        keys = _pair_keys(self.edge_array, n)
        pos = np.searchsorted(keys, _pair_keys(self.added_edges, n))
        pos.setflags(write=False)
        return pos

    @cached_property
    def clean_index(self) -> np.ndarray:
        """Positions of the surviving clean (base) edges inside edge_array."""
        mask = np.ones(self.edge_array.shape[0], dtype=bool)
        mask[self.added_index] = False
        out = np.flatnonzero(mask)
        out.setflags(write=False)
        return out

    @classmethod
    def unperturbed(cls, g: Graph) -> "PerturbedGraph":
        empty = np.empty((0, 2), np.int64)
        return cls(base=g, added_edges=empty, removed_edges=empty)


def _pair_keys(edges: np.ndarray, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return e[:, 0] * n + e[:, 1]


def _decode_pair_index(flat: np.ndarray, n: int) -> np.ndarray:
    """Map flat indices over the i<j pairs (lexicographic) back to pairs."""
    i_vals = np.arange(n, dtype=np.int64)
    offsets = i_vals * (2 * n - i_vals - 1) // 2
    i = np.searchsorted(offsets, flat, side="right") - 1
    j = flat - offsets[i] + i + 1
    return np.stack([i, j], axis=1)


def attack_budget(g: Graph, ptb_rate: float) -> int:
    return int(np.floor(ptb_rate * g.num_edges))


def project_flip_budget(s: np.ndarray, budget: float,
                        max_iters: int = 64) -> np.ndarray:
    """Project onto {s in [0,1]^m, sum(s) <= budget} by bisecting the
    shifted-clamp threshold."""
    clipped = np.clip(s, 0.0, 1.0)
    if clipped.sum() <= budget:
        return clipped
    lo, hi = 0.0, float(s.max())
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        total = np.clip(s - mid, 0.0, 1.0).sum()
        if total > budget:
            lo = mid
        else:
            hi = mid
    return np.clip(s - hi, 0.0, 1.0)


def train_surrogate(g: Graph, split: NodeSplit, cfg: SurrogateConfig,
                    seed: int) -> nn.GcnState:
    """Train the clean-graph surrogate GCN (all-ones masks, train CE)."""
    adj = NormalizedAdjacency(g.n_nodes, g.edges, np.ones(g.num_edges))
    gcn = nn.GcnState.create(g.num_features, cfg.hidden, g.num_classes,
                             subseed(seed, "surrogate-init"))
    x = nn.maybe_sparse(g.features)
    out = train_gcn_weights(adj, x, g.labels, split, None, gcn,
                            (np.ones_like(gcn.w0), np.ones_like(gcn.w1)),
                            eta=1.0, zeta=0.0, epochs=cfg.epochs, lr=cfg.lr,
                            patience=cfg.patience)
    return nn.GcnState(w0=out.w0, w1=out.w1, init_w0=gcn.init_w0,
                       init_w1=gcn.init_w1)


def _mean_train_ce(probs: np.ndarray, labels: np.ndarray,
                   train_idx: np.ndarray) -> float:
    return losses.ce_train(probs, labels, train_idx) / train_idx.size


def _surrogate_loss_on_flips(g: Graph, surrogate: nn.GcnState, x, split: NodeSplit,
                             ones_masks, flip_pairs: np.ndarray) -> float:
    pg = _flips_to_perturbed(g, flip_pairs)
    edges = pg.edge_array
    adj = NormalizedAdjacency(g.n_nodes, edges, np.ones(edges.shape[0]))
    probs, _ = nn.gcn_forward(adj, x, surrogate, ones_masks)
    return _mean_train_ce(probs, g.labels, split.train_idx)


def _flips_to_perturbed(g: Graph, flip_pairs: np.ndarray) -> PerturbedGraph:
    if flip_pairs.size == 0:
        return PerturbedGraph.unperturbed(g)
    keys = _pair_keys(flip_pairs, g.n_nodes)
    is_base = np.isin(keys, _pair_keys(g.edges, g.n_nodes))
    return PerturbedGraph(base=g, added_edges=flip_pairs[~is_base],
                          removed_edges=flip_pairs[is_base])


def pgd_structure_attack(g: Graph, split: NodeSplit,
                         surrogate_cfg: SurrogateConfig | None = None,
                         atk: AttackConfig | None = None) -> PerturbedGraph:
    """Projected-gradient structure poisoning within the flip budget.

    The inner optimization of the poisoning objective is approximated by
    a surrogate trained once on the clean graph; the relaxed flip
    variable then maximizes the surrogate's train CE. Deterministic per
    (graph, configs, seed).
    """
    surrogate_cfg = surrogate_cfg or SurrogateConfig()
    if atk is None:
        raise ValueError("an AttackConfig is required")
    budget = attack_budget(g, atk.ptb_rate)
    if budget == 0:
        return PerturbedGraph.unperturbed(g)
    n = g.n_nodes
    surrogate = train_surrogate(g, split, surrogate_cfg, atk.seed)
    x = nn.maybe_sparse(g.features)
    ones_masks = (np.ones_like(surrogate.w0), np.ones_like(surrogate.w1))

    base_keys = _pair_keys(g.edges, n)
    if n <= FULL_CANDIDATE_LIMIT:
        iu, ju = np.triu_indices(n, k=1)
        cand = np.stack([iu.astype(np.int64), ju.astype(np.int64)], axis=1)
    else:
        total_pairs = n * (n - 1) // 2
        want = min(CANDIDATES_PER_FLIP * budget, total_pairs)
        flat = rng_for(atk.seed, "pgd-candidates").choice(total_pairs, size=want,
                                                          replace=False)
        flat.sort()
        cand = _decode_pair_index(flat, n)
        # keep every base edge a candidate so deletions stay reachable
        extra = ~np.isin(base_keys, _pair_keys(cand, n))
        cand = np.concatenate([cand, g.edges[extra]])
        order = np.lexsort((cand[:, 1], cand[:, 0]))
        cand = cand[order]
    if cand.shape[0] == 0:
        raise ValueError("empty candidate pair set")
    cand_is_base = np.isin(_pair_keys(cand, n), base_keys)
    sign = np.where(cand_is_base, -1.0, 1.0)
    base_val = cand_is_base.astype(np.float64)
    structure = AdjacencyStructure(n, cand)

    s = np.zeros(cand.shape[0])
    for t in range(atk.steps):
        adj = NormalizedAdjacency(n, cand, base_val + sign * s, structure=structure)
        probs, cache = nn.gcn_forward(adj, x, surrogate, ones_masks)
        dlogits = losses.ce_grad_logits(probs, split.train_idx,
                                        g.labels[split.train_idx],
                                        1.0 / split.train_idx.size)
        grad_s = sign * nn.gcn_backward(cache, dlogits)["dedge"]
        s += (atk.step_size / np.sqrt(t + 1.0)) * grad_s
        s = project_flip_budget(s, budget)

    rng = rng_for(atk.seed, "pgd-discretize")
    best_pairs = None
    best_loss = -np.inf
    for _ in range(atk.sample_trials):
        pick = rng.random(s.size) < s
        if pick.sum() > budget:
            continue
        pairs = cand[pick]
        loss = _surrogate_loss_on_flips(g, surrogate, x, split, ones_masks, pairs)
        if loss > best_loss:
            best_loss = loss
            best_pairs = pairs
    if best_pairs is None:
        # all trials overspent; fall back to the top-budget relaxed scores
        top = np.argsort(-s, kind="stable")[:budget]
        best_pairs = cand[np.sort(top)]
    return _flips_to_perturbed(g, best_pairs)


def random_flip_attack(g: Graph, atk: AttackConfig) -> PerturbedGraph:
    """Budgeted flips drawn uniformly over all node pairs, seeded."""
    budget = attack_budget(g, atk.ptb_rate)
    total_pairs = g.n_nodes * (g.n_nodes - 1) // 2
    budget = min(budget, total_pairs)
    if budget == 0:
        return PerturbedGraph.unperturbed(g)
    flat = rng_for(atk.seed, "random-flips").choice(total_pairs, size=budget,
                                                    replace=False)
    flat.sort()
    return _flips_to_perturbed(g, _decode_pair_index(flat, g.n_nodes))


def dissimilar_edge_attack(g: Graph, atk: AttackConfig) -> PerturbedGraph:
    """Insert the non-edges with the largest squared feature differences.

    Spends the whole budget on additions in decreasing difference order,
    ties broken lexicographically by (i, j); clamps when fewer non-edges
    exist than the budget.
    """
    budget = attack_budget(g, atk.ptb_rate)
    if budget == 0:
        raise ValueError("dissimilar_edge_attack needs a positive budget")
    n = g.n_nodes
    iu, ju = np.triu_indices(n, k=1)
    pairs = np.stack([iu.astype(np.int64), ju.astype(np.int64)], axis=1)
    non_edge = ~np.isin(_pair_keys(pairs, n), _pair_keys(g.edges, n))
    pairs = pairs[non_edge]
    if pairs.shape[0] == 0:
        return PerturbedGraph.unperturbed(g)
    diffs = losses.edge_feature_sqdiff(pairs, g.features)
    order = np.lexsort((pairs[:, 1], pairs[:, 0], -diffs))
    chosen = pairs[order[:min(budget, pairs.shape[0])]]
    return PerturbedGraph(base=g, added_edges=chosen,
                          removed_edges=np.empty((0, 2), np.int64))


@dataclass(frozen=True)
class FeatureDiffHistogram:
    """Shared-bin densities of edge feature differences; adversarial side
    is None when the perturbation added no edges."""

    bin_edges: np.ndarray
    clean_density: np.ndarray
    adv_density: np.ndarray | None


def feature_diff_histogram(pg: PerturbedGraph, bins: int = 20,
                           normalize_rows: bool = False) -> FeatureDiffHistogram:
    """Densities of ||x_i - x_j||^2 over surviving clean vs added edges."""
    base = pg.base
    n = base.n_nodes
    keep = ~np.isin(_pair_keys(base.edges, n), _pair_keys(pg.removed_edges, n))
    clean = losses.edge_feature_sqdiff(base.edges[keep], base.features,
                                       normalize_rows=normalize_rows)
    adv = losses.edge_feature_sqdiff(pg.added_edges, base.features,
                                     normalize_rows=normalize_rows)
    combined = np.concatenate([clean, adv]) if adv.size else clean
    edges = np.histogram_bin_edges(combined, bins=bins)
    clean_d, _ = np.histogram(clean, bins=edges, density=True)
    if adv.size:
        adv_d, _ = np.histogram(adv, bins=edges, density=True)
    else:
        adv_d = None
    return FeatureDiffHistogram(bin_edges=edges, clean_density=clean_d,
                                adv_density=adv_d)


def edge_category_counts(pg: PerturbedGraph, split: NodeSplit,
                         edge_mask: np.ndarray) -> EdgeCategoryCounts:
    """Count still-active adversarial added edges per endpoint bucket.

    An added edge is active while its mask entry is nonzero. Endpoints
    are bucketed as train vs test, with validation nodes counted as test.
    """
    edge_mask = np.asarray(edge_mask).reshape(-1)
    if edge_mask.shape[0] != pg.edge_array.shape[0]:
        raise ValueError("edge mask not aligned to the perturbed edge set")
    is_train = np.zeros(pg.base.n_nodes, dtype=bool)
    is_train[split.train_idx] = True
    active = pg.added_edges[edge_mask[pg.added_index] != 0]
    a = is_train[active[:, 0]]
    b = is_train[active[:, 1]]
    return EdgeCategoryCounts(
        train_train=int((a & b).sum()),
        train_test=int((a ^ b).sum()),
        test_test=int((~a & ~b).sum()),
    )


def save_attack(path, pg: PerturbedGraph, attack_name: str, ptb_rate: float,
                seed: int) -> None:
    """Write the poisoned-graph exchange file (attack.json)."""
    blob = {
        "ptb_rate": ptb_rate,
        "seed": seed,
        "attack_name": attack_name,
        "added": pg.added_edges.tolist(),
        "removed": pg.removed_edges.tolist(),
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True))


def load_attack(path, g: Graph) -> tuple[PerturbedGraph, dict]:
    """Read attack.json back into a PerturbedGraph over the given base."""
    blob = json.loads(Path(path).read_text())
    added = np.asarray(blob["added"], dtype=np.int64).reshape(-1, 2)
    removed = np.asarray(blob["removed"], dtype=np.int64).reshape(-1, 2)
    pg = PerturbedGraph(base=g, added_edges=added, removed_edges=removed)
    meta = {k: blob[k] for k in ("ptb_rate", "seed", "attack_name")}
    return pg, meta
