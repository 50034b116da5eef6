"""Figure rendering for emitted run reports.

The data-producing subcommands stay plot-free; this module consumes their
RunReport JSON files after the fact and writes PNG figures plus a delimited
summary (summary.csv) next to them.  Sweeps are recognised by grouping
reports of the same command: two or more `expected` reports become a
distance-versus-epsilon scaling figure, `noise` reports a distance-versus-
noise-rate figure, and each `sample` report gets its own stop-level
histogram against the per-segment oracle.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150
FIG_SIZE = (5.0, 3.4)

_SUMMARY_FIELDS = [
    "file", "command", "beta", "epsilon", "kappa", "m", "D", "lambda",
    "mean_tau", "runs_over_resets", "distance_closed_to_gibbs",
    "expected_tau_exact", "rel_error", "stat_error", "state_distance",
    "delta_upper",
]


def _load(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("command", "config", "derived", "results"):
        if key not in doc:
            raise ValueError(f"{path}: not a stopgibbs run report (missing {key!r})")
    doc["_file"] = str(path)
    return doc


def _new_axes():
    fig, ax = plt.subplots(figsize=FIG_SIZE, dpi=FIG_DPI)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI, metadata={"Software": "stopgibbs"})
    plt.close(fig)
    return path


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def plot_sample_histogram(report: dict, outdir: Path, stem: str) -> Path:
    res = report["results"]
    counts = np.asarray(res["stop_level_counts"], dtype=float)
    oracle = np.asarray(res["stop_level_probability"], dtype=float)
    segments = float(res["total_resets"])
    levels = np.arange(len(counts))
    fig, ax = _new_axes()
    ax.bar(levels, counts / segments, width=0.8, color="#4878a8", alpha=0.8,
           label="empirical (per segment)")
    ax.plot(levels, oracle, "k.-", lw=1.0, ms=4, label="oracle $w_n\\,\\mathrm{tr}K^{2n}/D$")
    ax.set_xlabel("stop level $n$")
    ax.set_ylabel("probability")
    ax.set_title(f"stop-level statistics, $\\beta$={report['config']['beta']}, "
                 f"$\\epsilon$={report['config']['epsilon']}")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, outdir / f"{stem}_stop_levels.png")


def plot_expected_sweep(reports: list[dict], outdir: Path) -> Path:
    pts = sorted(
        (r["config"]["epsilon"], r["results"]["distance_closed_to_gibbs"],
         r["results"]["gibbs_error_budget"])
        for r in reports if r["results"].get("distance_closed_to_gibbs") is not None
    )
    eps = [p[0] for p in pts]
    dist = [p[1] for p in pts]
    budget = [p[2] for p in pts]
    fig, ax = _new_axes()
    ax.loglog(eps, dist, "o-", color="#4878a8", label="trace distance to Gibbs")
    ax.loglog(eps, budget, "s--", color="#a84848", label="error budget")
    if len(eps) >= 2:
        ax.set_title(f"convergence scaling, fitted slope {_fit_slope(eps, dist):.3f}")
    ax.set_xlabel("$\\epsilon$")
    ax.set_ylabel("trace norm")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, outdir / "expected_scaling.png")


def plot_noise_sweep(reports: list[dict], outdir: Path) -> Path:
    pts = sorted((r["results"]["delta_upper"], r["results"]["state_distance"],
                  r["results"]["bound_value"]) for r in reports)
    delta = [p[0] for p in pts]
    dist = [p[1] for p in pts]
    bound = [p[2] for p in pts]
    fig, ax = _new_axes()
    ax.loglog(delta, dist, "o-", color="#4878a8", label="state distance")
    ax.loglog(delta, bound, "s--", color="#a84848", label="resilience bound")
    if len(delta) >= 2:
        ax.set_title(f"noise response, fitted slope {_fit_slope(delta, dist):.3f}")
    ax.set_xlabel("noise rate upper bound $\\delta$")
    ax.set_ylabel("trace norm")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, outdir / "noise_scaling.png")


def plot_partition(reports: list[dict], outdir: Path) -> Path:
    labels, rel, bound, stat = [], [], [], []
    for r in reports:
        labels.append(f"$\\epsilon$={r['config']['epsilon']}")
        rel.append(r["results"]["rel_error"])
        bound.append(r["results"]["bound"])
        stat.append(4.0 * r["results"]["stat_error"])
    x = np.arange(len(labels))
    fig, ax = _new_axes()
    ax.bar(x - 0.2, rel, width=0.4, color="#4878a8", label="$|\\hat{Z}/Z - 1|$")
    ax.bar(x + 0.2, np.asarray(bound) + np.asarray(stat), width=0.4, color="#a84848",
           alpha=0.7, label="budget + 4$\\sigma$")
    ax.set_xticks(x, labels, fontsize=8)
    ax.set_ylabel("relative error")
    ax.set_title("partition-function estimate")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, outdir / "partition_error.png")


def _summary_row(report: dict) -> dict:
    cfg, der, res = report["config"], report["derived"], report["results"]
    row = {k: "" for k in _SUMMARY_FIELDS}
    row.update({
        "file": Path(report["_file"]).name,
        "command": report["command"],
        "beta": cfg["beta"],
        "epsilon": cfg["epsilon"],
        "kappa": der["kappa"],
        "m": der["m"],
        "D": der["D"],
        "lambda": der["lambda"] if der["lambda"] is not None else "",
    })
    for key in ("mean_tau", "runs_over_resets", "distance_closed_to_gibbs",
                "expected_tau_exact", "rel_error", "stat_error", "state_distance",
                "delta_upper"):
        if res.get(key) is not None:
            row[key] = res[key]
    return row


def render_reports(paths: list[str], outdir: str | Path) -> list[Path]:
    """Render all applicable figures and the summary table; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    reports = [_load(p) for p in paths]
    groups: dict[str, list[dict]] = {}
    for r in reports:
        groups.setdefault(r["command"], []).append(r)

    written: list[Path] = []
    for i, rep in enumerate(groups.get("sample", [])):
        stem = Path(rep["_file"]).stem or f"sample{i}"
        written.append(plot_sample_histogram(rep, outdir, stem))
    expected = [r for r in groups.get("expected", [])
                if r["results"].get("distance_closed_to_gibbs") is not None]
    if len(expected) >= 2:
        written.append(plot_expected_sweep(expected, outdir))
    if len(groups.get("noise", [])) >= 2:
        written.append(plot_noise_sweep(groups["noise"], outdir))
    if groups.get("partition"):
        written.append(plot_partition(groups["partition"], outdir))

    summary = outdir / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(_summary_row(r))
    written.append(summary)
    return written
