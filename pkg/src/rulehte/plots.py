"""Figure rendering for the report path.

Each function writes one PNG next to the delimited output it illustrates:
rule importance bars, outcome-by-tertile bars with standard-error whiskers,
a forest plot of per-rule subgroup effects, and a median-MSE summary for
simulation ledgers.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_importance_figure(report_rows, path) -> None:
    if not report_rows:
        return
    labels = [r.rule_text for r in report_rows][::-1]
    values = [r.normalized for r in report_rows][::-1]
    fig, ax = plt.subplots(figsize=(8, 0.4 * len(labels) + 1.5))
    ax.barh(np.arange(len(labels)), values, color="#d66")
    ax.set_yticks(np.arange(len(labels)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("rule importance (top rule = 100)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_tertile_figure(tertiles, path) -> None:
    groups = [t["group"] for t in tertiles]
    width = 0.35
    xs = np.arange(len(groups))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for offset, arm, color, label in ((-width / 2, "arm1", "#4a4", "target"),
                                      (width / 2, "arm0", "#d6a", "control")):
        means = [t[arm]["mean"] if t[arm] else np.nan for t in tertiles]
        ses = [t[arm]["se"] if t[arm] else 0.0 for t in tertiles]
        ax.bar(xs + offset, means, width, yerr=ses, capsize=4,
               color=color, label=label)
    ax.set_xticks(xs)
    ax.set_xticklabels(groups)
    ax.set_ylabel("outcome mean")
    ax.set_xlabel("estimated treatment-effect group")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_forest_figure(forest_rows, path) -> None:
    """forest_rows: dicts with rule, ate, ci_low, ci_high."""
    if not forest_rows:
        return
    ys = np.arange(len(forest_rows))[::-1]
    fig, ax = plt.subplots(figsize=(8, 0.45 * len(forest_rows) + 1.5))
    for y, row in zip(ys, forest_rows):
        ax.plot([row["ci_low"], row["ci_high"]], [y, y], color="#555")
        ax.plot(row["ate"], y, "s", color="#36c")
    ax.axvline(0.0, color="#aaa", linestyle="--", linewidth=1)
    ax.set_yticks(ys)
    ax.set_yticklabels([row["rule"] for row in forest_rows], fontsize=8)
    ax.set_xlabel("subgroup treatment effect (95% CI)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_simulation_figure(summary, path) -> None:
    """Median test MSE per scenario, one line per (n, p) cell."""
    rows = [s for s in summary if s["median_mse"] is not None]
    if not rows:
        return
    cells = sorted({(s["n"], s["p"]) for s in rows})
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for n, p in cells:
        pts = sorted((s["scenario"], s["median_mse"])
                     for s in rows if s["n"] == n and s["p"] == p)
        ax.plot([q[0] for q in pts], [q[1] for q in pts], "o-",
                label=f"n={n}, p={p}")
    ax.set_xlabel("scenario")
    ax.set_ylabel("median test MSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
