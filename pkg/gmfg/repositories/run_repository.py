import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from gmfg.exceptions import ConfigError
from gmfg.models import (
    ConvergenceTable,
    DensityFlow,
    ExploitabilityReport,
    FeedbackControl,
    GradientField,
    Grids,
    MFGSolution,
    PayoffEstimate,
    ResidualRecord,
    Trajectory,
)

logger = logging.getLogger(__name__)


def fmt(value: Any) -> str:
    """Fixed text form: %.17g for floats so reruns write identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


class RunRepository:
    """Reads and writes the artifacts of one run directory."""

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)

    # -- generic ------------------------------------------------------------------------------

    def write_rows(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.run_dir / name
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(value) for value in row])
        logger.debug(f"Wrote {path}")
        return path

    def read_rows(self, name: str) -> list[dict[str, str]]:
        path = self.run_dir / name
        if not path.exists():
            raise ConfigError(f"run directory {self.run_dir} has no {name}")
        with path.open(newline="") as handle:
            return list(csv.DictReader(handle))

    def read_table(self, name: str) -> np.ndarray:
        """Numeric CSV body as a 2D float array."""
        path = self.run_dir / name
        if not path.exists():
            raise ConfigError(f"run directory {self.run_dir} has no {name}")
        return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))

    def read_meta(self) -> dict[str, Any]:
        path = self.run_dir / "meta.json"
        if not path.exists():
            raise ConfigError(f"{self.run_dir} is not a run directory (no meta.json)")
        return json.loads(path.read_text(encoding="utf-8"))

    # -- grid solution ------------------------------------------------------------------------

    def _write_field(self, name: str, column: str, grids: Grids, values: np.ndarray) -> Path:
        t, u, x = grids.times, grids.u, grids.x
        return self.write_rows(name, ["t", "u", "x", column], (
            (t[i], u[k], x[j], values[i, k, j])
            for i in range(grids.n_t + 1) for k in range(grids.labels) for j in range(grids.n_x)
        ))

    def _read_field(self, name: str, grids: Grids) -> np.ndarray:
        table = self.read_table(name)
        shape = (grids.n_t + 1, grids.labels, grids.n_x)
        if table.shape[0] != np.prod(shape):
            raise ConfigError(f"{name} does not match the grids recorded in meta.json",
                              payload={"rows": table.shape[0], "expected": int(np.prod(shape))})
        return table[:, 3].reshape(shape)

    def save_solution(self, solution: MFGSolution) -> None:
        grids = solution.grids
        self._write_field("flow.csv", "p", grids, solution.flow.p)
        self._write_field("gradient.csv", "v", grids, solution.gradient.v)
        if not solution.feedback.is_relaxed:
            self._write_field("feedback.csv", "alpha", grids, solution.feedback.values)
        self.save_residuals(solution.residuals)

    def save_residuals(self, residuals: Sequence[ResidualRecord]) -> Path:
        return self.write_rows(
            "residuals.csv", ["iteration", "gradient_residual", "density_residual", "damping"],
            ((r.iteration, r.gradient_residual, r.density_residual, r.damping) for r in residuals),
        )

    def load_residuals(self) -> list[ResidualRecord]:
        return [
            ResidualRecord(int(row["iteration"]), float(row["gradient_residual"]),
                           float(row["density_residual"]), float(row["damping"]))
            for row in self.read_rows("residuals.csv")
        ]

    def load_solution(self) -> MFGSolution:
        """Rebuild the solution of a solved run from meta.json and the field CSVs."""
        meta = self.read_meta()
        if "grids" not in meta:
            raise ConfigError(f"{self.run_dir} holds no grid solution")
        grids = Grids.from_dict(meta["grids"])
        solution_meta = meta.get("solution", {})
        gradient = GradientField(grids, self._read_field("gradient.csv", grids),
                                 float(solution_meta.get("clamp_fraction", 0.0)))
        logger.info(f"Loaded solution from {self.run_dir}")
        return MFGSolution(
            flow=DensityFlow(grids, self._read_field("flow.csv", grids)),
            gradient=gradient,
            feedback=FeedbackControl.strict(grids, self._read_field("feedback.csv", grids)),
            residuals=self.load_residuals(),
            payoff=float(solution_meta.get("payoff", float("nan"))),
            converged=meta.get("status") == "ok",
            flags=list(solution_meta.get("flags", [])),
            meta=solution_meta,
        )

    # -- particles ----------------------------------------------------------------------------

    def save_trajectory(self, n: int, trajectory: Trajectory) -> Path:
        path = self.run_dir / f"trajectory_n{n}.npy"
        np.save(path, trajectory.positions)
        return path

    def save_empirical_flow(self, rows: Iterable[tuple]) -> Path:
        """Rows (n, t, player, label, x)."""
        return self.write_rows("empirical_flow.csv", ["n", "t", "player", "label", "x"], rows)

    def save_payoffs(self, estimates: dict[int, PayoffEstimate], labels: dict[int, np.ndarray]) -> Path:
        return self.write_rows("payoffs.csv", ["n", "player", "label", "mean", "se"], (
            (n, i, labels[n][i], est.means[i], est.standard_errors[i])
            for n, est in estimates.items() for i in range(len(est.means))
        ))

    def save_exploitability(self, reports: Sequence[ExploitabilityReport]) -> Path:
        return self.write_rows(
            "exploitability.csv",
            ["n", "method", "player", "label", "j_base", "j_dev", "delta", "se"],
            ((r.n, r.method, p, u, jb, jd, d, se)
             for r in reports
             for p, u, jb, jd, d, se in zip(r.players, r.labels, r.j_base, r.j_dev, r.delta, r.standard_errors)),
        )

    # -- diagnostics --------------------------------------------------------------------------

    def save_monotonicity(self, values: Sequence[float]) -> Path:
        return self.write_rows("monotonicity.csv", ["pair", "value"], enumerate(values))

    def save_convergence(self, rows: Iterable[tuple], table: ConvergenceTable) -> tuple[Path, Path]:
        """Rows (n, t, metric, value); t is NaN for time-free metrics."""
        data = self.write_rows("convergence.csv", ["n", "t", "metric", "value"], rows)
        slopes = self.write_rows("slopes.csv", ["metric", "slope"], sorted(table.slopes.items()))
        return data, slopes

    def load_convergence(self) -> list[dict[str, str]]:
        return self.read_rows("convergence.csv")

    def save_json(self, name: str, data: dict[str, Any]) -> Path:
        path = self.run_dir / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=fmt), encoding="utf-8")
        return path
