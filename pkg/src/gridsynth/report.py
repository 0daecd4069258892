"""Rendering of evaluation results: markdown tables, delimited exports, and
matplotlib figures written next to them.

Numbers in the tables are rounded to presentation precision (macro-F1 one
decimal as percent, KL two decimals, JS three, PRS two); the JSON report
keeps full precision.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .classifiers import CLASSIFIER_KINDS, KIND_LABELS

_FAMILY_TITLES = {
    "real": "Real",
    "wgan": "WGAN",
    "diffusion": "Diffusion",
    "ctgan": "CTGAN",
    "noise": "Noise",
}

_REGIME_TITLES = {"real": "(baseline)", "semi": "Semi-synthetic", "full": "Full-synthetic"}

_FAMILY_MARKERS = {"wgan": "o", "ctgan": "^", "diffusion": "s", "noise": "D", "real": "*"}
_FAMILY_COLORS = {
    "wgan": "#1f77b4",
    "ctgan": "#d62728",
    "diffusion": "#2ca02c",
    "noise": "#9467bd",
    "real": "#444444",
}


def dataset_title(entry) -> str:
    family = _FAMILY_TITLES.get(entry["family"], entry["family"])
    if entry["family"] == "real":
        return "Real (baseline)"
    return f"{family} {_REGIME_TITLES.get(entry['regime'], entry['regime'])}"


def _best_classifier(utility: dict):
    best_kind, best = None, -1.0
    for kind in CLASSIFIER_KINDS:
        if kind in utility and utility[kind]["mean"] > best:
            best_kind, best = kind, utility[kind]["mean"]
    return best_kind, best


def render_fidelity_utility_table(report: dict) -> str:
    """Combined divergence + best-classifier table."""
    lines = [
        "| Synthetic data | KL | JS | Best classifier | Macro-F1 (%) |",
        "| --- | --- | --- | --- | --- |",
    ]
    for entry in report["datasets"]:
        if entry.get("error"):
            lines.append(f"| {dataset_title(entry)} | error | error | - | - |")
            continue
        util = entry["utility"]
        kind, _ = _best_classifier(util)
        mu = util[kind]["mean"] * 100
        sd = util[kind]["std"] * 100
        if entry["family"] == "real":
            kl_s, js_s = "--", "--"
        else:
            kl_s = f"{entry['fidelity']['kl']:.2f}"
            js_s = f"{entry['fidelity']['js']:.3f}"
        lines.append(
            f"| {dataset_title(entry)} | {kl_s} | {js_s} | {KIND_LABELS[kind]} "
            f"| {mu:.1f} ± {sd:.1f} |"
        )
    return "\n".join(lines) + "\n"


def _arrow(entry, kind) -> str:
    sig = entry.get("significance")
    if not sig:
        return ""
    cmp_ = sig["comparisons"].get(kind)
    if not cmp_ or not cmp_["significant"]:
        return ""
    return " ↑" if cmp_["direction"] == "improvement" else " ↓"


def render_utility_table(report: dict) -> str:
    """Per-classifier macro-F1 table with significance arrows."""
    header = "| Dataset | " + " | ".join(KIND_LABELS[k] for k in CLASSIFIER_KINDS) + " |"
    lines = [header, "|" + " --- |" * (len(CLASSIFIER_KINDS) + 1)]
    for entry in report["datasets"]:
        if entry.get("error"):
            lines.append(f"| {dataset_title(entry)} |" + " error |" * len(CLASSIFIER_KINDS))
            continue
        cells = []
        for kind in CLASSIFIER_KINDS:
            res = entry["utility"].get(kind)
            if res is None:
                cells.append("-")
                continue
            cells.append(
                f"{res['mean']*100:.1f} ± {res['std']*100:.1f}{_arrow(entry, kind)}"
            )
        lines.append(f"| {dataset_title(entry)} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_mia_table(report: dict) -> str:
    lines = [
        "| Synthetic data | Shadow MIA AUC |",
        "| --- | --- |",
    ]
    for entry in report["datasets"]:
        if entry.get("error"):
            lines.append(f"| {dataset_title(entry)} | error |")
            continue
        mia = entry["mia"]
        lines.append(
            f"| {dataset_title(entry)} | {mia['mean_auc']:.2f} "
            f"({mia['ci_low']:.2f}, {mia['ci_high']:.2f}) |"
        )
    return "\n".join(lines) + "\n"


_SWEEP_LABELS = {
    "random_forest": "RF",
    "grad_boost": "GB",
    "ridge": "Ridge",
    "lasso": "Lasso",
    "mlp": "MLP",
}


def render_reconstruction_table(report: dict) -> str:
    lines = [
        "| Synthetic data | Best model | MSE (x1e-3) | rho | R2 | PRS |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for entry in report["datasets"]:
        if entry.get("error"):
            lines.append(f"| {dataset_title(entry)} | error | - | - | - | - |")
            continue
        rec = entry["reconstruction"]
        lines.append(
            f"| {dataset_title(entry)} | {_SWEEP_LABELS.get(rec['best_model'], rec['best_model'])} "
            f"| {rec['mse']*1e3:.2f} | {rec['pearson_rho']:.3f} "
            f"| {rec['r_squared']:.3f} | {rec['prs']:.2f} |"
        )
    return "\n".join(lines) + "\n"


def pareto_csv_text(report: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["dataset", "family", "regime", "prs", "macro_f1", "mia_auc"])
    for row in report["pareto"]["rows"]:
        writer.writerow([
            row["dataset"], row["family"], row["regime"],
            repr(row["prs"]), repr(row["macro_f1"]), repr(row["mia_auc"]),
        ])
    return out.getvalue()


def projection_csv_text(report: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["dataset", "source", "x", "y"])
    for entry in report["datasets"]:
        if entry.get("error") or entry["family"] == "real":
            continue
        for x, y, source in entry.get("projection", []):
            writer.writerow([entry["name"], source, repr(x), repr(y)])
    return out.getvalue()


def pareto_figure(report: dict, path) -> None:
    """Privacy-utility scatter with the non-dominated frontier highlighted."""
    fig, ax = plt.subplots(figsize=(7, 5))
    rows = report["pareto"]["rows"]
    frontier = set(report["pareto"]["frontier"])
    for i, row in enumerate(rows):
        dark = row["regime"] in ("full", "real")
        color = _FAMILY_COLORS.get(row["family"], "#333333")
        ax.scatter(
            row["prs"], row["macro_f1"] * 100,
            marker=_FAMILY_MARKERS.get(row["family"], "o"),
            s=150 if i in frontier else 80,
            c=color, alpha=0.95 if dark else 0.45,
            edgecolors="black" if i in frontier else "none",
            linewidths=1.2, zorder=3,
        )
        ax.annotate(row["dataset"], (row["prs"], row["macro_f1"] * 100),
                    textcoords="offset points", xytext=(5, 4), fontsize=7)
    front_rows = sorted((rows[i] for i in frontier), key=lambda r: r["prs"])
    if front_rows:
        ax.plot([r["prs"] for r in front_rows],
                [r["macro_f1"] * 100 for r in front_rows],
                "--", color="gray", linewidth=1, zorder=2)
    ax.set_xlabel("Privacy risk score (lower is safer)")
    ax.set_ylabel("Best macro-F1 (%)")
    ax.set_title("Privacy-utility trade-off")
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def projection_figure(report: dict, path) -> None:
    """Small-multiple overlays of real vs synthetic 2-D projections."""
    entries = [e for e in report["datasets"]
               if not e.get("error") and e["family"] != "real" and e.get("projection")]
    if not entries:
        return
    cols = min(4, len(entries))
    rows_n = (len(entries) + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(3.2 * cols, 3.0 * rows_n),
                             squeeze=False)
    for idx, entry in enumerate(entries):
        ax = axes[idx // cols][idx % cols]
        pts = entry["projection"]
        real_pts = [(x, y) for x, y, s in pts if s == "real"]
        syn_pts = [(x, y) for x, y, s in pts if s == "synthetic"]
        if real_pts:
            ax.scatter(*zip(*real_pts), s=6, c="#888888", alpha=0.5, label="real")
        if syn_pts:
            ax.scatter(*zip(*syn_pts), s=6, c=_FAMILY_COLORS.get(entry["family"], "red"),
                       alpha=0.5, label="synthetic")
        ax.set_title(dataset_title(entry), fontsize=8)
        ax.tick_params(labelsize=6)
    for idx in range(len(entries), rows_n * cols):
        axes[idx // cols][idx % cols].axis("off")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_outputs(report: dict, out_dir) -> list:
    """Write every report artifact; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []

    def _write(name, text):
        p = out_dir / name
        p.write_text(text, encoding="utf-8")
        created.append(p)

    _write("report.json", json.dumps(report, indent=1))
    _write("table_fidelity_utility.md", render_fidelity_utility_table(report))
    _write("table_utility.md", render_utility_table(report))
    _write("table_mia.md", render_mia_table(report))
    _write("table_reconstruction.md", render_reconstruction_table(report))
    _write("pareto.csv", pareto_csv_text(report))
    _write("projection_2d.csv", projection_csv_text(report))
    pareto_figure(report, out_dir / "pareto.png")
    created.append(out_dir / "pareto.png")
    projection_figure(report, out_dir / "projection_2d.png")
    if (out_dir / "projection_2d.png").exists():
        created.append(out_dir / "projection_2d.png")
    return created
