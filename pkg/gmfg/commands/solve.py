import logging
from pathlib import Path

import numpy as np

from gmfg.data.run_session import run_session
from gmfg.models import GridDensity, MFGSolution
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from .common import Experiment, build_experiment, describe_solution, solve

logger = logging.getLogger(__name__)


def common_noise_audit(experiment: Experiment, solution: MFGSolution, repo: RunRepository) -> dict:
    """Solve along sampled common paths and compare with the shifted deterministic flow."""
    services = experiment.services
    meanfield, metrics = services.meanfield_service, services.metrics_service
    config, grids = experiment.config, experiment.grids
    rows, worst_shift, worst_retranslation = [], 0.0, 0.0
    for index in range(config.common_noise.paths):
        seed = np.random.SeedSequence(entropy=config.common_noise.seed, spawn_key=(index,))
        path = meanfield.sample_common_path(grids, experiment.model.common_diffusion, seed)
        result = meanfield.common_noise_solve(
            experiment.model, experiment.graphon, path, experiment.initial, grids
        )
        shifted = meanfield.translate_flow(solution.flow, path)
        for i, t in enumerate(grids.times):
            error = max(
                metrics.wasserstein1_1d(GridDensity(grids.edges, result.translated.p[i, k]),
                                        GridDensity(grids.edges, shifted.p[i, k]))
                for k in range(grids.labels)
            )
            worst_shift = max(worst_shift, error)
            rows.append((index, t, path[i], result.translated.mean()[i], error))
        worst_retranslation = max(worst_retranslation, result.retranslation_error)
    repo.write_rows("common_noise.csv", ["path", "t", "c", "mean", "shift_w1"], rows)
    logger.info(f"Common-noise audit over {config.common_noise.paths} paths: worst W1 {worst_shift:.3e}")
    return {
        "paths": config.common_noise.paths,
        "max_shift_w1": worst_shift,
        "max_retranslation_error": worst_retranslation,
        "tolerance": 2.0 * grids.dx,
        "within_tolerance": worst_shift <= 2.0 * grids.dx,
    }


def cmd_solve(config: ExperimentConfig, out: Path) -> int:
    """Solve the mean-field fixed point and store flow, gradient, feedback and residuals."""
    experiment = build_experiment(config)
    with run_session("solve", out, config) as session:
        session.record_seed("simulation", config.simulation.seed)
        repo = RunRepository(session.path)
        solution = solve(experiment)
        repo.save_solution(solution)
        describe_solution(session, solution)

        if config.common_noise.paths > 0:
            if experiment.model.common_diffusion == 0:
                logger.warning("common_noise.paths is set but the model has no common noise; audit skipped")
            else:
                session.record_seed("common_noise", config.common_noise.seed)
                session.meta["common_noise"] = common_noise_audit(experiment, solution, repo)

        if config.outputs.plots:
            plots = experiment.services.plot_service
            plots.residuals(solution.residuals, session.file("residuals.svg"))
            plots.flow(solution.flow, session.file("flow.svg"))

        if not solution.converged:
            session.status = "non-converged"
            logger.warning(f"Solve finished without convergence; see {session.path}")
            return 2
        logger.info(f"Solve converged in {solution.meta['iterations']} iterations, J = {solution.payoff:.6f}")
        return 0
