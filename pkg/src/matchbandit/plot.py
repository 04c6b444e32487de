"""Deterministic SVG regret curves."""
from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_regret(checkpoints: Sequence[int], mean_opt: np.ndarray, bounds: Sequence[Optional[float]], path) -> None:
    """Mean optimal-stable regret per player on a log round axis.

    Dashed lines mark each player's regret bound. Output bytes depend only on
    the inputs.
    """
    with matplotlib.rc_context({"svg.hashsalt": "matchbandit", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, series in enumerate(np.atleast_2d(mean_opt)):
            line, = ax.plot(checkpoints, series, marker="o", ms=3, label=f"p{i + 1}")
            b = bounds[i] if i < len(bounds) else None
            if b is not None and np.isfinite(b):
                ax.axhline(b, ls="--", lw=0.8, color=line.get_color())
        if len(checkpoints) > 1:
            ax.set_xscale("log", base=2)
        ax.set_xlabel("round")
        ax.set_ylabel("cumulative optimal-stable pseudo-regret")
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
