"""Figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .kernel import EventLog  # noqa: E402


def plot_timeline(log: EventLog, path: Path) -> Path:
    """Who served each demand, with faults and restarts marked; learned threshold below."""
    demands = log.of_kind("demand")
    producers = sorted({r.sender or "(missed)" for r in demands})
    rows = {p: i for i, p in enumerate(producers)}
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 5), sharex=True,
                                      gridspec_kw={"height_ratios": [2, 1]})
    for p in producers:
        ts = [r.payload["issued"] for r in demands if (r.sender or "(missed)") == p]
        top.scatter(ts, [rows[p]] * len(ts), s=6, color="tab:red" if p == "(missed)" else "tab:blue")
    for r in log.of_kind("fault"):
        top.axvline(r.time, color="tab:orange", lw=0.8, ls="--")
    for r in log.of_kind("restart"):
        top.axvline(r.time, color="tab:green", lw=0.8)
    top.set_yticks(range(len(producers)), producers)
    top.set_ylabel("served by")
    top.set_title("demands (dashed: fault, solid: restart)")

    series: dict[str, tuple[list, list]] = {}
    for r in log.of_kind("decision"):
        for name, value in r.payload.get("params", {}).items():
            xs, ys = series.setdefault(f"{r.sender}.{name}", ([], []))
            xs.append(r.time)
            ys.append(value)
    for label, (xs, ys) in sorted(series.items()):
        bottom.step(xs, ys, where="post", label=label, lw=1)
    if series:
        bottom.legend(fontsize=7, loc="upper right")
    bottom.set_ylabel("threshold [s]")
    bottom.set_xlabel("virtual time [ms]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_coverage(report: dict, path: Path) -> Path:
    points = report["coverage"]["points"]
    labels, counts = [], []
    for name, p in points.items():
        for outcome, n in p["hits"].items():
            labels.append(f"{name}={outcome}")
            counts.append(n)
    fig, ax = plt.subplots(figsize=(9, 4))
    colors = ["tab:red" if n == 0 else "tab:blue" for n in counts]
    ax.barh(range(len(labels)), counts, color=colors)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("hits")
    ax.set_title(f"decision coverage {report['coverage']['ratio']:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_campaign(summary: dict, path: Path) -> Path:
    runs = summary["runs"]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar([str(r["seed"]) for r in runs], [r["availability"] for r in runs], color="tab:blue")
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("seed")
    ax.set_ylabel("availability")
    ax.set_title(f"mean availability {summary['aggregate']['mean_availability']:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
