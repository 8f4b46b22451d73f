import logging
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gmfg.models import ConvergenceTable, DensityFlow, ResidualRecord  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt and no date keep SVG output byte-stable across reruns.
matplotlib.rcParams["svg.hashsalt"] = "gmfg"
SVG_METADATA = {"Date": None}


class PlotService:
    """SVG figures for run directories."""

    def __init__(self, figsize: tuple[float, float] = (6.0, 4.0)):
        self.figsize = figsize

    def _save(self, fig, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(fig)
        logger.debug(f"Wrote plot {path}")
        return path

    def residuals(self, residuals: Sequence[ResidualRecord], path: Path) -> Path:
        fig, ax = plt.subplots(figsize=self.figsize)
        iterations = [r.iteration for r in residuals]
        for attr, label in (("gradient_residual", "gradient"), ("density_residual", "density")):
            values = np.array([getattr(r, attr) for r in residuals], dtype=float)
            ax.semilogy(iterations, np.maximum(values, 1e-300), marker="o", ms=3, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("residual")
        ax.legend()
        ax.grid(True, which="both", alpha=0.3)
        return self._save(fig, path)

    def convergence(self, table: ConvergenceTable, path: Path) -> Path:
        """Each metric against n on log-log axes, slope in the legend."""
        fig, ax = plt.subplots(figsize=self.figsize)
        ns = np.array([run.n for run in table.records], dtype=float)
        for name, slope in table.slopes.items():
            values = np.array([run.metrics.get(name, np.nan) for run in table.records], dtype=float)
            positive = values > 0
            if not np.any(positive):
                continue
            ax.loglog(ns[positive], values[positive], marker="o", label=f"{name} (slope {slope:.2f})")
        ax.set_xlabel("n")
        ax.set_ylabel("value")
        ax.legend(fontsize="small")
        ax.grid(True, which="both", alpha=0.3)
        return self._save(fig, path)

    def flow(self, flow: DensityFlow, path: Path) -> Path:
        """Heat map of the label-averaged density over (t, x)."""
        grids = flow.grids
        fig, ax = plt.subplots(figsize=self.figsize)
        mesh = ax.pcolormesh(grids.edges, grids.times, flow.label_marginal(), shading="flat")
        fig.colorbar(mesh, ax=ax, label="density")
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        return self._save(fig, path)

    def graphon_study(self, ks: Sequence[int], series: Mapping[str, Sequence[float]], path: Path) -> Path:
        fig, ax = plt.subplots(figsize=self.figsize)
        for name, values in series.items():
            values = np.asarray(values, dtype=float)
            positive = values > 0
            if np.any(positive):
                ax.loglog(np.asarray(ks)[positive], values[positive], marker="s", label=name)
        ax.set_xlabel("blocks k")
        ax.legend(fontsize="small")
        ax.grid(True, which="both", alpha=0.3)
        return self._save(fig, path)
