"""CSV/JSON emission and cross-seed aggregation for experiment runs.

All floats are formatted with 6 significant digits so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .sparsify import TicketReport

METRICS_COLUMNS = ["round", "graph_sparsity", "model_sparsity", "val_acc",
                   "test_acc", "l0", "lfs", "l1", "reg_g", "reg_theta",
                   "adv_tt", "adv_trte", "adv_tete"]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.6g" % float(value)


def write_metrics_csv(path, report: TicketReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in report.rounds:
            writer.writerow([fmt(v) for v in (
                r.round_index, r.graph_sparsity, r.model_sparsity,
                r.val_accuracy, r.test_accuracy, r.loss.l0, r.loss.lfs,
                r.loss.l1, r.loss.reg_g, r.loss.reg_theta,
                r.adv_counts.train_train, r.adv_counts.train_test,
                r.adv_counts.test_test)])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(row[k]) for k in header])


def write_attack_stats_csv(path, histogram, counts) -> None:
    """Long-format stats: histogram densities plus category counts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "bin_lo", "bin_hi", "value"])
        edges = histogram.bin_edges
        for i, d in enumerate(histogram.clean_density):
            writer.writerow(["clean_density", fmt(edges[i]), fmt(edges[i + 1]), fmt(d)])
        if histogram.adv_density is not None:
            for i, d in enumerate(histogram.adv_density):
                writer.writerow(["adv_density", fmt(edges[i]), fmt(edges[i + 1]), fmt(d)])
        writer.writerow(["adv_train_train", "", "", fmt(counts.train_train)])
        writer.writerow(["adv_train_test", "", "", fmt(counts.train_test)])
        writer.writerow(["adv_test_test", "", "", fmt(counts.test_test)])


def aggregate_runs(run_dirs) -> tuple[dict, list[dict], list[dict]]:
    """Mean/population-stddev rows across per-seed metrics.csv files.

    Returns (summary, accuracy_rows, adversarial_rows); raises when the
    runs disagree on schema or round sets.
    """
    tables = []
    for d in run_dirs:
        rows = read_metrics_csv(Path(d) / "metrics.csv")
        if not rows:
            raise ValueError(f"empty metrics.csv in {d}")
        tables.append(rows)
    first_rounds = [r["round"] for r in tables[0]]
    first_cols = sorted(tables[0][0])
    for d, rows in zip(run_dirs, tables):
        if sorted(rows[0]) != first_cols:
            raise ValueError(f"inconsistent metrics schema in {d}")
        if [r["round"] for r in rows] != first_rounds:
            raise ValueError(f"inconsistent round set in {d}")
    acc_rows = []
    adv_rows = []
    for i, rnd in enumerate(first_rounds):
        stack = {c: np.array([t[i][c] for t in tables]) for c in first_cols}
        acc_rows.append({
            "round": int(rnd),
            "graph_sparsity_mean": stack["graph_sparsity"].mean(),
            "model_sparsity_mean": stack["model_sparsity"].mean(),
            "val_acc_mean": stack["val_acc"].mean(),
            "val_acc_std": stack["val_acc"].std(),
            "test_acc_mean": stack["test_acc"].mean(),
            "test_acc_std": stack["test_acc"].std(),
        })
        adv_rows.append({
            "round": int(rnd),
            "adv_tt_mean": stack["adv_tt"].mean(),
            "adv_tt_std": stack["adv_tt"].std(),
            "adv_trte_mean": stack["adv_trte"].mean(),
            "adv_trte_std": stack["adv_trte"].std(),
            "adv_tete_mean": stack["adv_tete"].mean(),
            "adv_tete_std": stack["adv_tete"].std(),
        })
    final = tables[0][-1]
    summary = {
        "runs": [str(d) for d in run_dirs],
        "n_runs": len(run_dirs),
        "rounds": len(first_rounds),
        "final_test_acc_mean": float(np.mean([t[-1]["test_acc"] for t in tables])),
        "final_test_acc_std": float(np.std([t[-1]["test_acc"] for t in tables])),
        "final_graph_sparsity": final["graph_sparsity"],
        "final_model_sparsity": final["model_sparsity"],
    }
    return summary, acc_rows, adv_rows


def write_rows_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(row[k]) for k in header])


def write_summary_json(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=1, sort_keys=True))
