"""Command-line experiment harness.

Subcommands: attack, sparsify, ablate, report, gen-sbm. Configuration
resolves as built-in defaults < --config JSON file < explicit flags, and
every run writes its resolved configuration next to its outputs. The
ARGLT_THREADS environment variable caps worker parallelism for multi-seed
sweeps.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import report as report_mod
from .attacks import (AttackConfig, PerturbedGraph, SurrogateConfig,
                      dissimilar_edge_attack, edge_category_counts,
                      feature_diff_histogram, load_attack,
                      pgd_structure_attack, random_flip_attack, save_attack)
from .graph import (Graph, NodeSplit, generate_sbm, largest_connected_component,
                    load_graph, load_split, make_split, write_dataset)
from .losses import LossWeights
from .pseudo import save_pseudo_labels, select_pseudo_labels, train_mlp
from .sparsify import ArgsConfig, run_ablation, run_args, save_ticket

DEFAULTS = {
    "alpha": 1.0, "beta": 0.1, "gamma": 1.0, "eta": 1.0, "zeta": 1.0,
    "lambda1": 1e-2, "lambda2": 1e-2,
    "pg": 0.05, "ptheta": 0.20, "sg": 0.22, "stheta": 0.67,
    "epochs": 200, "patience": 30, "hidden": 512, "tau": 0.8,
    "lr": 1e-2, "lr_edge_mask": 1e-2, "lr_weight_mask": 1e-2,
    "ptb": 0.05, "attack": "pgd", "steps": 100, "step_size": 200.0,
    "sample_trials": 20, "surrogate_hidden": 64,
    "split_seed": 0, "split_frac": (0.1, 0.1, 0.8),
}


def worker_count() -> int:
    raw = os.environ.get("ARGLT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parse_seeds(text: str) -> list[int]:
    return [int(s) for s in str(text).split(",") if s != ""]


def resolve(args: argparse.Namespace, keys) -> dict:
    """defaults < config file < explicit CLI flags."""
    cfg = {k: DEFAULTS[k] for k in keys if k in DEFAULTS}
    if getattr(args, "config", None):
        blob = json.loads(Path(args.config).read_text())
        unknown = set(blob) - set(keys)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(blob)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def load_dataset(args) -> tuple[Graph, NodeSplit | None]:
    if args.dataset and args.sbm:
        raise ValueError("give either --dataset or --sbm, not both")
    if args.dataset:
        g = load_graph(args.dataset)
        if args.lcc:
            g, _ = largest_connected_component(g)
            split = None  # ids changed; split.json no longer applies
        else:
            split = load_split(args.dataset, g.n_nodes)
        return g, split
    if args.sbm:
        parts = args.sbm.split(",")
        if len(parts) != 6:
            raise ValueError("--sbm expects k,n,p_in,p_out,F,sigma")
        k, n = int(parts[0]), int(parts[1])
        p_in, p_out, sigma = float(parts[2]), float(parts[3]), float(parts[5])
        dim = int(parts[4])
        return generate_sbm(k, n, p_in, p_out, dim, sigma,
                            seed=args.sbm_seed), None
    raise ValueError("a dataset is required: --dataset DIR or --sbm spec")


def get_split(g: Graph, preset: NodeSplit | None, cfg: dict) -> NodeSplit:
    if preset is not None:
        return preset
    return make_split(g, tuple(cfg["split_frac"]), seed=cfg["split_seed"])


def write_resolved(out_dir: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    blob = {"command": command, **cfg}
    if extra:
        blob.update(extra)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(blob, indent=1, sort_keys=True, default=str))


def args_config_from(cfg: dict, seed: int) -> ArgsConfig:
    return ArgsConfig(
        weights=LossWeights(alpha=cfg["alpha"], beta=cfg["beta"],
                            gamma=cfg["gamma"], eta=cfg["eta"],
                            zeta=cfg["zeta"], lambda1=cfg["lambda1"],
                            lambda2=cfg["lambda2"]),
        p_g=cfg["pg"], p_theta=cfg["ptheta"], s_g=cfg["sg"],
        s_theta=cfg["stheta"], epochs=cfg["epochs"],
        lr_weights=cfg["lr"], lr_edge_mask=cfg["lr_edge_mask"],
        lr_weight_mask=cfg["lr_weight_mask"], patience=cfg["patience"],
        tau=cfg["tau"], hidden=cfg["hidden"], seed=seed,
    )


ATTACK_KEYS = ("ptb", "attack", "steps", "step_size", "sample_trials",
               "surrogate_hidden", "epochs", "patience", "lr",
               "split_seed", "split_frac")
SPARSIFY_KEYS = ("alpha", "beta", "gamma", "eta", "zeta", "lambda1", "lambda2",
                 "pg", "ptheta", "sg", "stheta", "epochs", "patience",
                 "hidden", "tau", "lr", "lr_edge_mask", "lr_weight_mask",
                 "split_seed", "split_frac")


def cmd_attack(args) -> int:
    cfg = resolve(args, ATTACK_KEYS)
    g, preset = load_dataset(args)
    split = get_split(g, preset, cfg)
    seeds = parse_seeds(args.seed)
    if len(seeds) != 1:
        raise ValueError("attack expects a single --seed")
    seed = seeds[0]
    atk = AttackConfig(ptb_rate=cfg["ptb"], steps=cfg["steps"],
                       step_size=cfg["step_size"],
                       sample_trials=cfg["sample_trials"], seed=seed)
    name = cfg["attack"]
    if name == "pgd":
        sur = SurrogateConfig(hidden=cfg["surrogate_hidden"], epochs=cfg["epochs"],
                              lr=cfg["lr"], patience=cfg["patience"])
        pg = pgd_structure_attack(g, split, sur, atk)
    elif name == "random":
        pg = random_flip_attack(g, atk)
    elif name == "dissimilar":
        pg = dissimilar_edge_attack(g, atk)
    else:
        raise ValueError(f"unknown attack {name!r}")
    if pg.budget_used == 0:
        print("warning: empty flip set (zero budget)", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_attack(out / "attack.json", pg, name, cfg["ptb"], seed)
    hist = feature_diff_histogram(pg, bins=args.bins)
    counts = edge_category_counts(pg, split, np.ones(pg.edge_array.shape[0]))
    report_mod.write_attack_stats_csv(out / "attack_stats.csv", hist, counts)
    write_resolved(out, "attack", cfg, {"seed": seed, "flips": pg.budget_used})
    print(f"wrote {out / 'attack.json'} ({pg.budget_used} flips)")
    return 0


def _perturbed_for(args, g: Graph) -> PerturbedGraph:
    if args.attack_file:
        pg, _meta = load_attack(args.attack_file, g)
        return pg
    return PerturbedGraph.unperturbed(g)


def _run_one_sparsify(g, split, pg, cfg, seed, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    mlp = train_mlp(g, split, epochs=cfg["epochs"], lr=cfg["lr"], seed=seed,
                    patience=cfg["patience"])
    pseudo = select_pseudo_labels(mlp, g, split, threshold=cfg["tau"])
    save_pseudo_labels(out / "pseudo_labels.json", pseudo)
    run_cfg = args_config_from(cfg, seed)
    result = run_args(pg, split, pseudo, run_cfg, retrain="all")
    report_mod.write_metrics_csv(out / "metrics.csv", result.report)
    save_ticket(out, result, pg, run_cfg)
    write_resolved(out, "sparsify", cfg, {
        "seed": seed, "pseudo_label_count": len(pseudo),
        "mlp_hidden": mlp.hidden_dim,
        "final_test_accuracy": result.report.final_test_accuracy,
        "final_test_accuracy_last_epoch": result.report.final_test_accuracy_last_epoch,
    })


def cmd_sparsify(args) -> int:
    cfg = resolve(args, SPARSIFY_KEYS)
    g, preset = load_dataset(args)
    split = get_split(g, preset, cfg)
    pg = _perturbed_for(args, g)
    seeds = parse_seeds(args.seed)
    out = Path(args.out)
    jobs = [(seed, out if len(seeds) == 1 else out / f"seed{seed}")
            for seed in seeds]
    if len(jobs) == 1 or worker_count() == 1:
        for seed, d in jobs:
            _run_one_sparsify(g, split, pg, cfg, seed, d)
    else:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            futures = [pool.submit(_run_one_sparsify, g, split, pg, cfg, seed, d)
                       for seed, d in jobs]
            for f in futures:
                f.result()
    print(f"wrote {len(jobs)} run(s) under {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve(args, SPARSIFY_KEYS)
    g, preset = load_dataset(args)
    split = get_split(g, preset, cfg)
    pg = _perturbed_for(args, g)
    seeds = parse_seeds(args.seed)
    if len(seeds) != 1:
        raise ValueError("ablate expects a single --seed")
    seed = seeds[0]
    checkpoints = []
    for token in args.checkpoints.split(","):
        gs, ms = token.split(":")
        checkpoints.append((float(gs), float(ms)))
    mlp = train_mlp(g, split, epochs=cfg["epochs"], lr=cfg["lr"], seed=seed,
                    patience=cfg["patience"])
    pseudo = select_pseudo_labels(mlp, g, split, threshold=cfg["tau"])
    rows = run_ablation(pg, split, pseudo, args_config_from(cfg, seed),
                        checkpoints=tuple(checkpoints))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_mod.write_ablation_csv(out / "ablation.csv", rows)
    write_resolved(out, "ablate", cfg, {"seed": seed,
                                        "checkpoints": checkpoints})
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_report(args) -> int:
    summary, acc_rows, adv_rows = report_mod.aggregate_runs(args.run_dirs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_mod.write_summary_json(out / "summary.json", summary)
    report_mod.write_rows_csv(out / "accuracy_vs_sparsity.csv", acc_rows)
    report_mod.write_rows_csv(out / "adversarial_edge_evolution.csv", adv_rows)
    print(f"wrote summary for {summary['n_runs']} run(s) to {out}")
    return 0


def cmd_gen_sbm(args) -> int:
    parts = args.sbm.split(",")
    if len(parts) != 6:
        raise ValueError("--sbm expects k,n,p_in,p_out,F,sigma")
    g = generate_sbm(int(parts[0]), int(parts[1]), float(parts[2]),
                     float(parts[3]), int(parts[4]), float(parts[5]),
                     seed=args.sbm_seed)
    write_dataset(args.out, g)
    print(f"wrote SBM dataset ({g.n_nodes} nodes, {g.num_edges} edges) to {args.out}")
    return 0


def add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset directory (edges.txt, features.csv, labels.txt)")
    p.add_argument("--sbm", help="synthetic graph spec k,n,p_in,p_out,F,sigma")
    p.add_argument("--sbm-seed", type=int, default=0)
    p.add_argument("--lcc", action="store_true",
                   help="restrict to the largest connected component on load")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--config", help="JSON config file (defaults < file < flags)")


def add_loss_flags(p: argparse.ArgumentParser) -> None:
    for name in ("alpha", "beta", "gamma", "eta", "zeta", "lambda1", "lambda2",
                 "tau", "lr"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--lr-edge-mask", dest="lr_edge_mask", type=float)
    p.add_argument("--lr-weight-mask", dest="lr_weight_mask", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arglt",
        description="Adversarially robust graph lottery tickets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="poison a graph within a flip budget")
    add_dataset_flags(p)
    p.add_argument("--attack", choices=("pgd", "random", "dissimilar"))
    p.add_argument("--ptb", type=float, help="perturbation rate (fraction of edges)")
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--sample-trials", dest="sample_trials", type=int)
    p.add_argument("--surrogate-hidden", dest="surrogate_hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sparsify", help="find and retrain a robust ticket")
    add_dataset_flags(p)
    add_loss_flags(p)
    p.add_argument("--attack-file", dest="attack_file",
                   help="attack.json to apply (omit for the clean graph)")
    p.add_argument("--pg", type=float, help="per-round edge prune rate")
    p.add_argument("--ptheta", type=float, help="per-round weight prune rate")
    p.add_argument("--sg", type=float, help="target graph sparsity")
    p.add_argument("--stheta", type=float, help="target model sparsity")
    p.add_argument("--seed", default="0", help="seed or comma list of seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("ablate", help="loss-component on/off grid")
    add_dataset_flags(p)
    add_loss_flags(p)
    p.add_argument("--attack-file", dest="attack_file")
    p.add_argument("--pg", type=float)
    p.add_argument("--ptheta", type=float)
    p.add_argument("--sg", type=float)
    p.add_argument("--stheta", type=float)
    p.add_argument("--checkpoints", default="0.227:0.677,0.604:0.982",
                   help="comma list of graph:model sparsity checkpoints")
    p.add_argument("--seed", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate metrics across runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-sbm", help="write a synthetic dataset directory")
    p.add_argument("--sbm", required=True, help="k,n,p_in,p_out,F,sigma")
    p.add_argument("--sbm-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sbm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # CLI contract: nonzero exit with a message
        print(f"error: {err}", file=sys.stderr)
        if os.environ.get("ARGLT_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
