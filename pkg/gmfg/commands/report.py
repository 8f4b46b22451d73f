import logging
import math
from collections import defaultdict
from pathlib import Path

from gmfg.data.run_session import run_session
from gmfg.models import ConvergenceRun, ConvergenceTable
from gmfg.repositories.run_repository import RunRepository
from gmfg.services.plot_service import PlotService

logger = logging.getLogger(__name__)


def load_convergence_table(source: RunRepository) -> ConvergenceTable:
    metrics: dict[int, dict[str, float]] = defaultdict(dict)
    for row in source.load_convergence():
        name = row["metric"]
        if name.endswith("_se"):
            continue
        t = float(row["t"])
        key = name if math.isnan(t) else f"{name}@t={t:g}"
        metrics[int(row["n"])][key] = float(row["value"])
    slopes = {row["metric"]: float(row["slope"]) for row in source.read_rows("slopes.csv")}
    return ConvergenceTable([ConvergenceRun(n, values) for n, values in sorted(metrics.items())], slopes)


def cmd_report(run: Path, out: Path) -> int:
    """Render the plots and a summary.json of an existing run into a new report directory."""
    source = RunRepository(run)
    meta = source.read_meta()
    plots = PlotService()
    with run_session("report", out) as session:
        session.meta["source_run"] = str(run)
        summary = {
            "source": str(run),
            "command": meta.get("command"),
            "status": meta.get("status"),
            "config_hash": meta.get("config_hash"),
            "wall_seconds": meta.get("wall_seconds"),
        }
        if (Path(run) / "residuals.csv").exists():
            residuals = source.load_residuals()
            plots.residuals(residuals, session.file("residuals.svg"))
            last = residuals[-1]
            summary["iterations"] = last.iteration
            summary["final_residuals"] = {"density": last.density_residual, "gradient": last.gradient_residual}
        if (Path(run) / "flow.csv").exists() and "grids" in meta:
            plots.flow(source.load_solution().flow, session.file("flow.svg"))
        if (Path(run) / "convergence.csv").exists():
            table = load_convergence_table(source)
            plots.convergence(table, session.file("convergence.svg"))
            summary["slopes"] = dict(table.slopes)
        for key in ("solution", "populations", "exploitability", "common_noise", "study", "monotonicity_max"):
            if key in meta:
                summary[key] = meta[key]
        RunRepository(session.path).save_json("summary.json", summary)
        logger.info(f"Report for {run} written to {session.path}")
    return 0
