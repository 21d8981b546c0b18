"""Iterative joint pruning of the edge mask and the weight masks.

Each round rewinds the weights to their initialization snapshot, trains
weights and masks jointly on the combined objective (train CE + feature
smoothness + pseudo-label CE + L1 mask regularizers), then prunes the
lowest-magnitude alive entries of every mask whose target sparsity is
unmet and binarizes the rest to 1. Pruned entries never come back. The
ticket is the final binary mask pair plus the initialization snapshot;
retraining it optimizes train CE + pseudo CE with the masks frozen.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import losses, nn
from .attacks import EdgeCategoryCounts, PerturbedGraph, edge_category_counts
from .graph import (AdjacencyStructure, NodeSplit, NormalizedAdjacency,
                    graph_sparsity, model_sparsity)
from .losses import LossBreakdown, LossWeights
from .nn import GcnState, MaskPair
from .rng import subseed
from .train import accuracy, train_gcn_weights


@dataclass(frozen=True)
class ArgsConfig:
    """Resolved sparsification run configuration."""

    weights: LossWeights = LossWeights()
    p_g: float = 0.05        # per-round edge prune rate
    p_theta: float = 0.20    # per-round weight prune rate
    s_g: float = 0.22        # target graph sparsity
    s_theta: float = 0.67    # target model sparsity
    epochs: int = 200        # mask-training epochs per round (cap)
    lr_weights: float = 1e-2
    lr_edge_mask: float = 1e-2
    lr_weight_mask: float = 1e-2
    patience: int = 30
    tau: float = 0.8         # pseudo-label confidence threshold
    hidden: int = 512
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p_g < 1.0 and 0.0 < self.p_theta < 1.0):
            raise ValueError("prune rates must lie in (0, 1)")
        if not (0.0 <= self.s_g < 1.0 and 0.0 <= self.s_theta < 1.0):
            raise ValueError("target sparsities must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")


@dataclass(frozen=True)
class RoundRecord:
    """One pruning-round row of a ticket report."""

    round_index: int
    graph_sparsity: float
    model_sparsity: float
    val_accuracy: float
    test_accuracy: float
    loss: LossBreakdown
    adv_counts: EdgeCategoryCounts
    mean_mask_added: float
    mean_mask_clean: float
    retrained: bool
    test_accuracy_final_epoch: float


@dataclass
class TicketReport:
    """Per-round metrics plus the final retrained-ticket accuracy."""

    rounds: list[RoundRecord]
    final_val_accuracy: float
    final_test_accuracy: float
    final_test_accuracy_last_epoch: float


@dataclass
class ArgsResult:
    masks: MaskPair
    theta0: GcnState
    report: TicketReport


def rewind(gcn: GcnState) -> GcnState:
    """Weights back to the initialization snapshot (optimizer state is
    discarded by construction: training loops build a fresh one)."""
    return GcnState(w0=gcn.init_w0.copy(), w1=gcn.init_w1.copy(),
                    init_w0=gcn.init_w0, init_w1=gcn.init_w1)


def _prune_flat(values: np.ndarray, alive: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Binarize alive entries to 1, pruning the floor(rate*nnz) smallest
    by |value| (min 1 when rate > 0; ties to the smaller index)."""
    new_values = np.where(alive, 1.0, 0.0)
    new_alive = alive.copy()
    nnz = int(alive.sum())
    if rate > 0.0 and nnz > 0:
        k = max(int(np.floor(rate * nnz)), 1)
        pos = np.flatnonzero(alive)
        order = np.argsort(np.abs(values[pos]), kind="stable")
        kill = pos[order[:k]]
        new_values[kill] = 0.0
        new_alive[kill] = False
    return new_values, new_alive


def prune_masks(m: MaskPair, p_g: float, p_theta: float) -> MaskPair:
    """Percentage-prune both masks and binarize survivors to exactly 1.

    Weight masks prune jointly across both layers with a flat row-major
    index tie-break. A rate of 0 binarizes without pruning (used once a
    mask's target sparsity is met). Previously pruned entries stay 0.
    """
    edge_values, edge_alive = _prune_flat(m.edge_mask, m.edge_alive, p_g)
    flat_vals = np.concatenate([w.ravel() for w in m.weight_masks])
    flat_alive = np.concatenate([a.ravel() for a in m.weight_alive])
    new_flat, new_alive_flat = _prune_flat(flat_vals, flat_alive, p_theta)
    weight_masks = []
    weight_alive = []
    at = 0
    for w in m.weight_masks:
        size = w.size
        weight_masks.append(new_flat[at:at + size].reshape(w.shape))
        weight_alive.append(new_alive_flat[at:at + size].reshape(w.shape))
        at += size
    return MaskPair(edge_mask=edge_values, weight_masks=weight_masks,
                    edge_alive=edge_alive, weight_alive=weight_alive)


def simulate_prune_schedule(n_edges: int, n_weights: int, p_g: float,
                            p_theta: float, rounds: int) -> list[tuple[int, float, float]]:
    """Pure mask bookkeeping: (round, graph_sparsity, model_sparsity) rows
    for the floor-with-minimum-1 pruning schedule."""
    rows = []
    e, w = n_edges, n_weights
    for r in range(1, rounds + 1):
        e -= max(int(np.floor(p_g * e)), 1) if e > 0 else 0
        w -= max(int(np.floor(p_theta * w)), 1) if w > 0 else 0
        rows.append((r, 1.0 - e / n_edges, 1.0 - w / n_weights))
    return rows


def args_loss_and_grads(pg: PerturbedGraph, edges: np.ndarray, edge_mask: np.ndarray,
                        features, labels: np.ndarray, split: NodeSplit, pseudo,
                        gcn: GcnState, weight_masks, weights: LossWeights,
                        sqdiff: np.ndarray | None = None,
                        structure: AdjacencyStructure | None = None):
    """One evaluation of the combined objective with its exact gradients.

    Returns (breakdown, grads, probs); grads holds dw0, dw1, dmask_w0,
    dmask_w1, dedge for the total objective, including the smoothness and
    L1 contributions on the mask entries.
    """
    if sqdiff is None:
        sqdiff = losses.edge_feature_sqdiff(edges, features)
    adj = NormalizedAdjacency(pg.base.n_nodes, edges, edge_mask, structure=structure)
    probs, cache = nn.gcn_forward(adj, features, gcn, weight_masks)
    l0 = losses.ce_train(probs, labels, split.train_idx)
    lfs = float(np.dot(edge_mask, sqdiff))
    l1 = losses.ce_pseudo(probs, pseudo) if len(pseudo) else 0.0
    breakdown = losses.args_total(l0, lfs, l1, weights, edge_mask, weight_masks)
    if not np.isfinite(breakdown.total):
        raise FloatingPointError("non-finite combined loss (divergence)")
    dlogits = losses.ce_grad_logits(probs, split.train_idx, labels[split.train_idx],
                                    weights.alpha)
    if len(pseudo):
        dlogits = losses.ce_grad_logits(probs, pseudo.node_ids, pseudo.label_array,
                                        weights.gamma, out=dlogits)
    g = nn.gcn_backward(cache, dlogits)
    grads = {
        "dw0": g["dw0"],
        "dw1": g["dw1"],
        "dmask_w0": g["dmask_w0"] + weights.lambda2 * losses.l1_subgradient(weight_masks[0]),
        "dmask_w1": g["dmask_w1"] + weights.lambda2 * losses.l1_subgradient(weight_masks[1]),
        "dedge": g["dedge"] + weights.beta * sqdiff
                 + weights.lambda1 * losses.l1_subgradient(edge_mask),
    }
    return breakdown, grads, probs


def _normalized_mask_step(values: np.ndarray, grad: np.ndarray,
                          alive: np.ndarray, lr: float) -> None:
    """In-place plain gradient step on the alive mask entries.

    The step is scaled by the RMS gradient over alive entries, which keeps
    the step size meaningful across graph sizes while preserving the
    relative gradient magnitudes that score edges for pruning (Adam's
    per-coordinate normalization would erase them). Values clamp at 0 so
    mask-weighted degrees stay positive.
    """
    g = np.where(alive, grad, 0.0)
    n_alive = int(alive.sum())
    if n_alive == 0:
        return
    rms = float(np.sqrt(np.dot(g.ravel(), g.ravel()) / n_alive))
    if rms <= 0.0:
        return
    values -= (lr / rms) * g
    np.maximum(values, 0.0, out=values)


def _optimize_round(pg: PerturbedGraph, edges, features, split, pseudo,
                    gcn: GcnState, masks: MaskPair, cfg: ArgsConfig,
                    sqdiff, structure) -> LossBreakdown:
    """Train weights and masks jointly for one round (final state kept).

    Weights train with Adam; masks take normalized plain gradient steps.
    Mutates gcn weights and the alive mask entries in place; dead entries
    receive zero gradient and stay exactly 0.
    """
    labels = pg.base.labels
    opt_w = nn.AdamState.for_params([gcn.w0, gcn.w1], lr=cfg.lr_weights)
    monitor = split.val_idx if split.val_idx.size else split.train_idx
    flat_weight_alive = np.concatenate([a.ravel() for a in masks.weight_alive])
    best_val = -1.0
    stale = 0
    breakdown = None
    for _ in range(cfg.epochs):
        breakdown, grads, probs = args_loss_and_grads(
            pg, edges, masks.edge_mask, features, labels, split, pseudo,
            gcn, masks.weight_masks, cfg.weights, sqdiff=sqdiff,
            structure=structure)
        gcn.w0, gcn.w1 = nn.adam_step(opt_w, [gcn.w0, gcn.w1],
                                      [grads["dw0"], grads["dw1"]])
        _normalized_mask_step(masks.edge_mask, grads["dedge"],
                              masks.edge_alive, cfg.lr_edge_mask)
        flat_vals = np.concatenate([w.ravel() for w in masks.weight_masks])
        flat_grad = np.concatenate([grads["dmask_w0"].ravel(),
                                    grads["dmask_w1"].ravel()])
        _normalized_mask_step(flat_vals, flat_grad, flat_weight_alive,
                              cfg.lr_weight_mask)
        at = 0
        for k, w in enumerate(masks.weight_masks):
            masks.weight_masks[k] = flat_vals[at:at + w.size].reshape(w.shape)
            at += w.size
        val_acc = accuracy(probs, labels, monitor)
        if val_acc > best_val:
            best_val = val_acc
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return breakdown


def evaluate(gcn: GcnState, masks: MaskPair, pg: PerturbedGraph,
             node_idx: np.ndarray) -> float:
    """Argmax accuracy of the masked model on the given nodes."""
    edges = pg.edge_array
    adj = NormalizedAdjacency(pg.base.n_nodes, edges, masks.edge_mask)
    probs, _ = nn.gcn_forward(adj, nn.maybe_sparse(pg.base.features), gcn,
                              tuple(masks.weight_masks))
    return accuracy(probs, pg.base.labels, node_idx)


def _fresh_gcn(pg: PerturbedGraph, cfg: ArgsConfig) -> GcnState:
    return GcnState.create(pg.base.num_features, cfg.hidden,
                           pg.base.num_classes, subseed(cfg.seed, "gcn-init"))


def retrain_ticket(pg: PerturbedGraph, split: NodeSplit, pseudo,
                   masks: MaskPair, cfg: ArgsConfig,
                   gcn: GcnState | None = None) -> tuple[GcnState, float]:
    """Rewind to the snapshot and train the ticket with masks frozen.

    Returns the best-validation model and its test accuracy. When ``gcn``
    is omitted a fresh state is created from cfg.seed (identical to the
    one a run with that seed used).
    """
    if not masks.is_binary():
        raise ValueError("retraining expects binary masks")
    gcn = _fresh_gcn(pg, cfg) if gcn is None else rewind(gcn)
    edges = pg.edge_array
    adj = NormalizedAdjacency(pg.base.n_nodes, edges, masks.edge_mask)
    out = train_gcn_weights(adj, nn.maybe_sparse(pg.base.features),
                            pg.base.labels, split, pseudo, gcn,
                            tuple(masks.weight_masks), eta=cfg.weights.eta,
                            zeta=cfg.weights.zeta, epochs=cfg.epochs,
                            lr=cfg.lr_weights, patience=cfg.patience)
    state = GcnState(w0=out.w0, w1=out.w1, init_w0=gcn.init_w0, init_w1=gcn.init_w1)
    return state, out.test_accuracy


def _retrain_metrics(pg, split, pseudo, masks, cfg, gcn):
    edges = pg.edge_array
    adj = NormalizedAdjacency(pg.base.n_nodes, edges, masks.edge_mask)
    out = train_gcn_weights(adj, nn.maybe_sparse(pg.base.features),
                            pg.base.labels, split, pseudo, rewind(gcn),
                            tuple(masks.weight_masks), eta=cfg.weights.eta,
                            zeta=cfg.weights.zeta, epochs=cfg.epochs,
                            lr=cfg.lr_weights, patience=cfg.patience)
    return out


def sparsity_round_bound(p: float, s: float) -> int:
    """Upper bound on rounds to reach target sparsity s at rate p."""
    if s <= 0.0:
        return 0
    return int(np.ceil(np.log(1.0 - s) / np.log(1.0 - p))) + 1


def run_args(pg: PerturbedGraph, split: NodeSplit, pseudo, cfg: ArgsConfig,
             retrain: str | set[int] = "all",
             on_round_start=None) -> ArgsResult:
    """Iterative mask optimization with percentage pruning and rewinding.

    Rounds continue while either sparsity target is unmet; a mask whose
    target is met stops being pruned (its survivors stay binarized) while
    the other continues. ``retrain`` selects the rounds whose ticket is
    retrained for the report: "all", "last", "none", or a set of round
    indices. Deterministic per (inputs, cfg.seed).
    """
    base = pg.base
    edges = pg.edge_array
    features = nn.maybe_sparse(base.features)
    sqdiff = losses.edge_feature_sqdiff(edges, features)
    structure = AdjacencyStructure(base.n_nodes, edges)
    gcn = _fresh_gcn(pg, cfg)
    masks = MaskPair.ones(edges.shape[0], [gcn.w0.shape, gcn.w1.shape])

    max_rounds = max(sparsity_round_bound(cfg.p_g, cfg.s_g),
                     sparsity_round_bound(cfg.p_theta, cfg.s_theta)) + 1
    rows: list[RoundRecord] = []
    last_retrain = None
    round_index = 0
    while True:
        gs = graph_sparsity(masks.edge_mask)
        ms = model_sparsity(masks.weight_masks)
        if gs >= cfg.s_g and ms >= cfg.s_theta:
            break
        round_index += 1
        if round_index > max_rounds:
            raise RuntimeError("pruning failed to reach target sparsities")
        gcn = rewind(gcn)
        if on_round_start is not None:
            on_round_start(round_index, gcn, masks)
        breakdown = _optimize_round(pg, edges, features, split, pseudo, gcn,
                                    masks, cfg, sqdiff, structure)
        if pg.added_index.size:
            mean_added = float(masks.edge_mask[pg.added_index].mean())
        else:
            mean_added = float("nan")
        mean_clean = float(masks.edge_mask[pg.clean_index].mean()) \
            if pg.clean_index.size else float("nan")
        masks = prune_masks(masks,
                            cfg.p_g if gs < cfg.s_g else 0.0,
                            cfg.p_theta if ms < cfg.s_theta else 0.0)
        adv = edge_category_counts(pg, split, masks.edge_mask)
        do_retrain = (retrain == "all"
                      or (isinstance(retrain, set) and round_index in retrain))
        if do_retrain:
            out = _retrain_metrics(pg, split, pseudo, masks, cfg, gcn)
            last_retrain = (round_index, out)
            val_acc, test_acc = out.val_accuracy, out.test_accuracy
            test_final = out.final_test_accuracy
        else:
            monitor = split.val_idx if split.val_idx.size else split.train_idx
            val_acc = evaluate(gcn, masks, pg, monitor)
            test_acc = evaluate(gcn, masks, pg, split.test_idx) \
                if split.test_idx.size else val_acc
            test_final = test_acc
        rows.append(RoundRecord(
            round_index=round_index,
            graph_sparsity=graph_sparsity(masks.edge_mask),
            model_sparsity=model_sparsity(masks.weight_masks),
            val_accuracy=val_acc, test_accuracy=test_acc,
            loss=breakdown, adv_counts=adv,
            mean_mask_added=mean_added, mean_mask_clean=mean_clean,
            retrained=do_retrain, test_accuracy_final_epoch=test_final))

    theta0 = rewind(gcn) if round_index else _fresh_gcn(pg, cfg)
    if retrain != "none":
        if last_retrain is not None and last_retrain[0] == round_index:
            out = last_retrain[1]
        else:
            out = _retrain_metrics(pg, split, pseudo, masks, cfg, theta0)
        final = (out.val_accuracy, out.test_accuracy, out.final_test_accuracy)
    else:
        final = (float("nan"),) * 3
    report = TicketReport(rounds=rows, final_val_accuracy=final[0],
                          final_test_accuracy=final[1],
                          final_test_accuracy_last_epoch=final[2])
    return ArgsResult(masks=masks, theta0=theta0, report=report)


ABLATION_GRID = (
    (True, True, True, True, True),
    (True, False, True, True, True),
    (True, True, False, True, True),
    (True, False, False, True, True),
)


def run_ablation(pg: PerturbedGraph, split: NodeSplit, pseudo,
                 base_cfg: ArgsConfig,
                 configurations=ABLATION_GRID,
                 checkpoints=((0.227, 0.677), (0.604, 0.982))) -> list[dict]:
    """Loss-component on/off grid evaluated at two sparsity checkpoints.

    Each configuration is an (alpha, beta, gamma, eta, zeta) on/off
    vector; "on" keeps the base config's coefficient. Checkpoints are
    (graph, model) sparsity pairs mapped to the nearest achievable
    pruning round. Returns one row per configuration with the retrained
    test accuracy at both checkpoints.
    """
    edges = pg.edge_array.shape[0]
    weights_total = sum(int(np.prod(s)) for s in (
        (pg.base.num_features, base_cfg.hidden),
        (base_cfg.hidden, pg.base.num_classes)))
    horizon = max(sparsity_round_bound(base_cfg.p_g, max(c[0] for c in checkpoints)),
                  sparsity_round_bound(base_cfg.p_theta, max(c[1] for c in checkpoints))) + 2
    schedule = simulate_prune_schedule(edges, weights_total, base_cfg.p_g,
                                       base_cfg.p_theta, horizon)
    rounds = []
    for cp_g, cp_m in checkpoints:
        best = min(schedule, key=lambda row: abs(row[1] - cp_g) + abs(row[2] - cp_m))
        rounds.append(best[0])
    stop = schedule[max(rounds) - 1]
    results = []
    for idx, flags in enumerate(configurations, start=1):
        a, b, g, e, z = flags
        w = base_cfg.weights
        cfg = replace(base_cfg, weights=LossWeights(
            alpha=w.alpha if a else 0.0, beta=w.beta if b else 0.0,
            gamma=w.gamma if g else 0.0, eta=w.eta if e else 0.0,
            zeta=w.zeta if z else 0.0, lambda1=w.lambda1, lambda2=w.lambda2),
            s_g=stop[1] - 1e-9, s_theta=stop[2] - 1e-9)
        res = run_args(pg, split, pseudo, cfg, retrain=set(rounds))
        row = {"config": idx, "alpha_on": a, "beta_on": b, "gamma_on": g,
               "eta_on": e, "zeta_on": z}
        for (cp_g, cp_m), r in zip(checkpoints, rounds):
            rec = next(rr for rr in res.report.rounds if rr.round_index == r)
            row[f"acc_at_{cp_g:.3f}_{cp_m:.3f}"] = rec.test_accuracy
            row[f"graph_sparsity_{cp_g:.3f}_{cp_m:.3f}"] = rec.graph_sparsity
            row[f"model_sparsity_{cp_g:.3f}_{cp_m:.3f}"] = rec.model_sparsity
        results.append(row)
    return results


def _rle_encode(bits: np.ndarray) -> str:
    """Run-length encode a 0/1 vector as comma-joined "count*bit" tokens."""
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size == 0:
        return ""
    breaks = np.flatnonzero(np.diff(b)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [b.size]])
    return ",".join(f"{e - s}*{int(b[s])}" for s, e in zip(starts, ends))


def _rle_decode(text: str) -> np.ndarray:
    if not text:
        return np.zeros(0, dtype=bool)
    counts = []
    bits = []
    for token in text.split(","):
        c, v = token.split("*")
        counts.append(int(c))
        bits.append(bool(int(v)))
    return np.repeat(np.asarray(bits, dtype=bool), counts)


def save_ticket(out_dir, result: ArgsResult, pg: PerturbedGraph,
                cfg: ArgsConfig, report_path: str = "metrics.csv") -> Path:
    """Write ticket.json (+ theta0.npz checkpoint) into a run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "theta0.npz"
    nn.save_checkpoint(ckpt, result.theta0, cfg.seed)
    kept = pg.edge_array[result.masks.edge_mask != 0]
    blob = {
        "kept_edges": kept.tolist(),
        "weight_mask_w0": _rle_encode(result.masks.weight_masks[0]),
        "weight_mask_w1": _rle_encode(result.masks.weight_masks[1]),
        "weight_mask_shapes": [list(m.shape) for m in result.masks.weight_masks],
        "theta0_checkpoint": ckpt.name,
        "config": asdict(cfg),
        "report_path": report_path,
    }
    path = out / "ticket.json"
    path.write_text(json.dumps(blob, sort_keys=True))
    return path


def load_ticket(path, pg: PerturbedGraph) -> tuple[MaskPair, GcnState, dict]:
    """Rebuild (masks, theta0, config) from a ticket.json run directory."""
    p = Path(path)
    blob = json.loads(p.read_text())
    edges = pg.edge_array
    n = pg.base.n_nodes
    kept = np.asarray(blob["kept_edges"], dtype=np.int64).reshape(-1, 2)
    keys = edges[:, 0] * n + edges[:, 1]
    kept_keys = kept[:, 0] * n + kept[:, 1]
    edge_alive = np.isin(keys, kept_keys)
    weight_masks = []
    weight_alive = []
    for text, shape in zip((blob["weight_mask_w0"], blob["weight_mask_w1"]),
                           blob["weight_mask_shapes"]):
        alive = _rle_decode(text).reshape(shape)
        weight_alive.append(alive)
        weight_masks.append(alive.astype(np.float64))
    masks = MaskPair(edge_mask=edge_alive.astype(np.float64),
                     weight_masks=weight_masks, edge_alive=edge_alive,
                     weight_alive=weight_alive)
    theta0, _seed = nn.load_checkpoint(p.parent / blob["theta0_checkpoint"])
    return masks, theta0, blob["config"]
