"""Report figures written next to the CSV/JSON outputs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

METHOD_STYLE = {
    "M1": dict(color="tab:blue", marker="o"),
    "M2": dict(color="tab:orange", marker="s"),
    "M3": dict(color="tab:green", marker="^"),
}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_residuals(reports, path, tol=None):
    """Relative residual vs. outer iteration, one line per method."""
    fig = Figure(figsize=(5.5, 3.8))
    ax = fig.add_subplot()
    for rep in reports:
        hist = np.asarray(rep.residual_history, dtype=float)
        if hist.size == 0:
            continue
        rel = hist / hist[0] if hist[0] > 0 else hist
        ax.semilogy(np.arange(len(rel)), rel, label=f"{rep.method} ({rep.status})",
                    **METHOD_STYLE.get(rep.method, {}))
    if tol is not None:
        ax.axhline(tol, color="0.4", lw=0.8, ls="--", label="tol")
    ax.set_xlabel("outer iteration / cycle")
    ax.set_ylabel(r"$\|F - A(U^k)\| / \|F - A(U^0)\|$")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_contraction(report, path, q=None):
    fig = Figure(figsize=(5.5, 3.5))
    ax = fig.add_subplot()
    ratios = report.contraction_history
    ax.plot(np.arange(1, len(ratios) + 1), ratios, "o-", ms=3, label="observed")
    if q is not None:
        ax.axhline(q, color="tab:red", ls="--", lw=1, label=f"bound q = {q:.3g}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("error ratio")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_table(rows, path):
    """Iteration counts per sweep entry."""
    fig = Figure(figsize=(6, 3.8))
    ax = fig.add_subplot()
    labels = [f"N={r['N']}\nN_V={r['N_V']}" for r in rows]
    x = np.arange(len(rows))
    methods = [m for m in ("M1", "M2", "M3") if rows and f"{m}_iterations" in rows[0]]
    width = 0.8 / max(len(methods), 1)
    for i, m in enumerate(methods):
        its = [r[f"{m}_iterations"] for r in rows]
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, its, width, label=m,
               color=METHOD_STYLE[m]["color"])
    ax.set_xticks(x, labels, fontsize=7)
    ax.set_ylabel("outer iterations")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_speedup(rows, path):
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    threads = [r["threads"] for r in rows]
    times = [r["wall_time"] for r in rows]
    ax.plot(threads, times, "o-")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("threads")
    ax.set_ylabel("M1 wall time [s]")
    return _save(fig, path)
