import logging
from pathlib import Path
from typing import Optional

from gmfg.data.run_session import run_session
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from gmfg.utilities.dependencies import get_kernel
from .common import build_experiment, describe_solution, population_seed, record_indices, solution_for

logger = logging.getLogger(__name__)


def cmd_simulate(config: ExperimentConfig, out: Path, run: Optional[Path] = None) -> int:
    """Simulate the n-player game under the constructed profile for every n in the config."""
    experiment = build_experiment(config)
    services = experiment.services
    particles, nash = services.particle_service, services.nash_service
    sim = config.simulation
    horizon, dt = experiment.grids.horizon, config.time_step

    with run_session("simulate", out, config) as session:
        session.record_seed("simulation", sim.seed)
        if run is not None:
            session.meta["source_run"] = str(run)
        repo = RunRepository(session.path)
        solution = solution_for(experiment, run)
        describe_solution(session, solution)
        initial = experiment.initial_law

        estimates, labels, empirical, summary = {}, {}, [], {}
        for n in sim.n:
            interaction = services.graphon_service.sample_matrix(experiment.graphon, n)
            kernel = get_kernel(config, n)
            system = particles.build_system(interaction, kernel, population_seed(sim.seed, n), initial=initial)
            profile = nash.construct_profile(solution, n, experiment.model.control_set)
            trajectory = particles.simulate(system, profile, experiment.model, horizon, dt, sim.record)
            repo.save_trajectory(n, trajectory)
            for r in record_indices(trajectory.times, config.outputs.record_times, horizon):
                positions, player_labels = trajectory.empirical_flow(r)
                empirical.extend(
                    (n, trajectory.times[r], i, player_labels[i], positions[i]) for i in range(n)
                )

            estimate = particles.payoff_estimate(
                experiment.model, system, profile, sim.reps, horizon, dt, sim.seed, initial
            )
            estimates[n], labels[n] = estimate, system.labels
            gap = abs(estimate.average - solution.payoff)
            summary[str(n)] = {
                "bandwidth": kernel.bandwidth,
                "average_payoff": estimate.average,
                "average_payoff_se": estimate.average_se,
                "payoff_gap": gap,
            }
            logger.info(f"n={n}: average payoff {estimate.average:.6f} ± {estimate.average_se:.1e}, "
                        f"gap to J {gap:.3e}")

        repo.save_empirical_flow(empirical)
        repo.save_payoffs(estimates, labels)
        session.meta["populations"] = summary
    return 0
