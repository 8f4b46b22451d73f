import logging
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from gmfg.data.run_session import run_session
from gmfg.exceptions import NotApplicableError
from gmfg.models import FeedbackControl
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from gmfg.utilities.dependencies import get_kernel
from .common import Experiment, build_experiment, describe_solution, solution_for

logger = logging.getLogger(__name__)


def monotonicity_pairs(experiment: Experiment, solution, controls: int = 5):
    """The solution flow and flows driven by constant controls, paired every way."""
    meanfield = experiment.services.meanfield_service
    grids = solution.grids
    cs = experiment.model.control_set
    flows = [solution.flow] + [
        meanfield.fp_forward(FeedbackControl.constant(grids, a), experiment.deterministic_model,
                             experiment.graphon, solution.flow.p[0])
        for a in np.linspace(cs.lower[0], cs.upper[0], controls)
    ]
    return list(combinations(flows, 2))


def cmd_nash(config: ExperimentConfig, out: Path, run: Optional[Path] = None) -> int:
    """Exploitability of the constructed profile for each n, plus the monotonicity audit."""
    experiment = build_experiment(config)
    services = experiment.services
    sim, nash_cfg = config.simulation, config.nash

    with run_session("nash", out, config) as session:
        session.record_seed("simulation", sim.seed)
        repo = RunRepository(session.path)
        solution = solution_for(experiment, run)
        describe_solution(session, solution)

        best_response = None
        if nash_cfg.method == "mean-field-BR":
            _, best_response, _ = services.meanfield_service.best_response(
                solution.flow, experiment.deterministic_model, experiment.graphon
            )
        reports = []
        for n in sim.n:
            report = services.nash_service.exploitability(
                experiment.model, experiment.graphon, get_kernel(config, n), solution, n, nash_cfg.reps,
                method=nash_cfg.method, dt=config.time_step, master_seed=sim.seed,
                initial=experiment.initial_law, best_response=best_response,
            )
            if not report.is_coherent():
                logger.warning(f"n={n}: some deviation gains are significantly negative")
            reports.append(report)
        repo.save_exploitability(reports)
        session.meta["exploitability"] = {
            str(r.n): {"average": r.average, "average_se": r.average_se,
                       "relative": r.average / abs(solution.payoff) if solution.payoff else None}
            for r in reports
        }

        try:
            values = services.nash_service.monotonicity_values(
                experiment.deterministic_model, experiment.graphon, monotonicity_pairs(experiment, solution)
            )
        except NotApplicableError as e:
            logger.info(f"Monotonicity audit skipped: {e.detail}")
        else:
            repo.save_monotonicity(values)
            session.meta["monotonicity_max"] = max(values)
    return 0
