"""Figure rendering for convergence reports (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_convergence_figure(report, out_path):
    """Log-log MMSE vs stepsize plot with the fitted and target slopes."""
    hs = np.array([h for _, h, _ in report.levels])
    mmse = np.array([m for _, _, m in report.levels])
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.loglog(hs, mmse, "o-", base=2, label=f"{report.scheme_id} (MMSE)")
    anchor = mmse[-1]
    ax.loglog(
        hs,
        anchor * (hs / hs[-1]) ** report.slope,
        "--",
        base=2,
        label=f"fit: slope {report.slope:.3f} ± {report.slope_stderr:.3f}",
    )
    ax.loglog(
        hs,
        anchor * (hs / hs[-1]) ** report.target_rate,
        ":",
        base=2,
        label=f"target rate {report.target_rate:.2f}",
    )
    ax.set_xlabel("stepsize h")
    ax.set_ylabel("maximum mean-square error")
    ax.set_title(
        f"{report.problem}, H={report.hurst}, {report.paths} paths"
    )
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
