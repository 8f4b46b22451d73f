import logging
from pathlib import Path
from typing import Optional

import numpy as np

from gmfg.data.run_session import run_session
from gmfg.models import ConvergenceRun
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from gmfg.utilities.dependencies import get_kernel
from .common import build_experiment, describe_solution, population_seed, record_indices, solution_for

logger = logging.getLogger(__name__)


def cmd_convergence(config: ExperimentConfig, out: Path, run: Optional[Path] = None,
                    exploitability: bool = True) -> int:
    """Flow distance, payoff gap and exploitability against n, with log-log slopes."""
    experiment = build_experiment(config)
    services = experiment.services
    particles, nash, metrics = services.particle_service, services.nash_service, services.metrics_service
    sim = config.simulation
    horizon, dt = experiment.grids.horizon, config.time_step

    with run_session("convergence", out, config) as session:
        session.record_seed("simulation", sim.seed)
        repo = RunRepository(session.path)
        solution = solution_for(experiment, run)
        describe_solution(session, solution)
        initial = experiment.initial_law
        best_response = None
        if exploitability and config.nash.method == "mean-field-BR":
            _, best_response, _ = services.meanfield_service.best_response(
                solution.flow, experiment.deterministic_model, experiment.graphon
            )

        runs, rows = [], []
        for n in sim.n:
            kernel = get_kernel(config, n)
            interaction = services.graphon_service.sample_matrix(experiment.graphon, n)
            system = particles.build_system(interaction, kernel, population_seed(sim.seed, n), initial=initial)
            profile = nash.construct_profile(solution, n, experiment.model.control_set)
            trajectory = particles.simulate(system, profile, experiment.model, horizon, dt, sim.record)

            records = [r for r in record_indices(trajectory.times, config.outputs.record_times, horizon)
                       if trajectory.times[r] > 0]
            series = metrics.flow_distance_series(trajectory, solution.flow, records)
            values: dict[str, float] = {}
            for t, w1 in zip(series.times, series.values):
                values[f"w1@t={t:g}"] = float(w1)
                rows.append((n, t, "w1", w1))

            estimate = particles.payoff_estimate(
                experiment.model, system, profile, sim.reps, horizon, dt, sim.seed, initial
            )
            values["payoff_gap"] = abs(estimate.average - solution.payoff)
            rows.append((n, float("nan"), "payoff_gap", values["payoff_gap"]))
            rows.append((n, float("nan"), "payoff_gap_se", estimate.average_se))

            if exploitability:
                report = nash.exploitability(
                    experiment.model, experiment.graphon, kernel, solution, n, config.nash.reps,
                    method=config.nash.method, dt=dt, master_seed=sim.seed, initial=initial,
                    best_response=best_response,
                )
                values["exploitability"] = report.average
                rows.append((n, float("nan"), "exploitability", report.average))
                rows.append((n, float("nan"), "exploitability_se", report.average_se))
            logger.info(f"n={n}: " + ", ".join(f"{k}={v:.3e}" for k, v in values.items()))
            runs.append(ConvergenceRun(n, values))

        table = metrics.convergence_table(runs)
        repo.save_convergence(rows, table)
        session.meta["slopes"] = {k: (None if np.isnan(v) else v) for k, v in table.slopes.items()}
        if config.outputs.plots:
            services.plot_service.convergence(table, session.file("convergence.svg"))
    return 0
