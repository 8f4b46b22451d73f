import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from gmfg.data.run_session import RunSession
from gmfg.models import Graphon, GridDensity, Grids, MFGSolution, ModelSpec
from gmfg.repositories.run_repository import RunRepository
from gmfg.schemas import ExperimentConfig
from gmfg.utilities.dependencies import (
    Services,
    get_graphon,
    get_grids,
    get_initial,
    get_model,
    get_services,
)

logger = logging.getLogger(__name__)


@dataclass
class Experiment:
    """Everything a command needs, built once from the validated config."""

    config: ExperimentConfig
    services: Services
    model: ModelSpec
    graphon: Graphon
    grids: Grids
    initial: np.ndarray

    @property
    def initial_law(self) -> GridDensity:
        return GridDensity(self.grids.edges, self.initial)

    @property
    def deterministic_model(self) -> ModelSpec:
        """The model with its common noise switched off."""
        if self.model.common_diffusion == 0:
            return self.model
        return replace(self.model, common_diffusion=0.0)


def build_experiment(config: ExperimentConfig) -> Experiment:
    grids = get_grids(config)
    return Experiment(
        config=config,
        services=get_services(config),
        model=get_model(config),
        graphon=get_graphon(config),
        grids=grids,
        initial=get_initial(config, grids),
    )


def solve(experiment: Experiment) -> MFGSolution:
    model = experiment.deterministic_model
    experiment.services.model_service.audit_nondegeneracy(
        model, experiment.grids.horizon, experiment.grids.x_lo, experiment.grids.x_hi
    )
    return experiment.services.meanfield_service.mfg_fixed_point(
        model, experiment.graphon, experiment.initial, experiment.grids
    )


def solution_for(experiment: Experiment, run: Optional[Path]) -> MFGSolution:
    """Load the solution of ``run`` or solve in-process when no run is given."""
    if run is None:
        logger.info("No --run given; solving the mean-field game first")
        return solve(experiment)
    solution = RunRepository(run).load_solution()
    if solution.grids.to_dict() != experiment.grids.to_dict():
        logger.warning(f"Grids of {run} differ from the config; using the run's grids")
    return solution


def describe_solution(session: RunSession, solution: MFGSolution) -> None:
    session.meta["grids"] = solution.grids.to_dict()
    session.meta["solution"] = {
        **solution.meta,
        "payoff": solution.payoff,
        "flags": list(solution.flags),
        "status": solution.status,
    }


def record_indices(times: np.ndarray, record_times, horizon: float) -> list[int]:
    """Recorded trajectory indices nearest to the requested times (default 0, T/2, T)."""
    wanted = list(record_times) or [0.0, 0.5 * horizon, horizon]
    return sorted({int(np.argmin(np.abs(times - t))) for t in wanted})


def population_seed(master: int, n: int) -> np.random.SeedSequence:
    """Seed of the recorded n-player run; disjoint from the per-rep payoff seeds."""
    return np.random.SeedSequence(entropy=master, spawn_key=(n, 0))
