"""Log-scale SVG charts of the mean per-strategy curves.

Output is byte-deterministic: a fixed SVG hash salt and no date metadata.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np

__all__ = ["emit_charts", "mean_curves", "METRICS"]

METRICS = ("regret", "fpr", "dist")
_FLOOR = 1e-16


def _read_run(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: np.array([float(r[key]) for r in rows]) for key in ("samples",) + METRICS}


def mean_curves(summary_csv) -> dict:
    """``{strategy: {"samples": ..., metric: mean curve}}`` over replications.

    Replications are truncated to the shortest run so the means line up.
    """
    from .experiment import read_summary, run_csv_path

    out_dir = Path(summary_csv).parent
    runs: dict = {}
    for row in read_summary(summary_csv):
        path = run_csv_path(out_dir, row["strategy"], row["rep"])
        if row["samples"] > 0 and path.exists():
            runs.setdefault(row["strategy"], []).append(_read_run(path))
    curves = {}
    for name, reps in runs.items():
        n = min(len(r["samples"]) for r in reps)
        if n == 0:
            continue
        curves[name] = {key: np.mean([r[key][:n] for r in reps], axis=0)
                        for key in ("samples",) + METRICS}
    return curves


def emit_charts(summary_csv, out_dir=None) -> list:
    """Write ``charts/{regret,fpr,dist}.svg`` next to ``summary_csv``; return the paths."""
    curves = mean_curves(summary_csv)
    if not curves:
        warnings.warn(f"no run data behind {summary_csv}; no charts written", RuntimeWarning, stacklevel=2)
        return []

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    target = Path(out_dir) if out_dir is not None else Path(summary_csv).parent / "charts"
    target.mkdir(parents=True, exist_ok=True)
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "skmsaa", "svg.fonttype": "none"}):
        for metric in METRICS:
            fig, ax = plt.subplots(figsize=(6, 4))
            plotted = False
            for name in sorted(curves):
                c = curves[name]
                y = np.clip(c[metric], _FLOOR, None)
                if np.isfinite(y).any():
                    ax.plot(c["samples"], y, label=name, linewidth=1.2)
                    plotted = True
            ax.set_xlabel("samples drawn")
            ax.set_ylabel(metric)
            if plotted:
                ax.set_xscale("log")
                ax.set_yscale("log")
                ax.legend(fontsize="small")
            else:
                # e.g. distance to the generator for sources without one
                ax.text(0.5, 0.5, f"{metric} not recorded", ha="center", va="center",
                        transform=ax.transAxes)
            fig.tight_layout()
            path = target / f"{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
