from dataclasses import dataclass
from typing import Optional

import numpy as np

from gmfg.models import Graphon, Grids, KernelSpec, ModelSpec
from gmfg.repositories.graphon_repository import GraphonRepository
from gmfg.repositories.model_repository import ModelRepository
from gmfg.schemas import ExperimentConfig
from gmfg.services.feynman_kac_solver import FeynmanKacSolver
from gmfg.services.fokker_planck_solver import FokkerPlanckSolver
from gmfg.services.graphon_service import GraphonService
from gmfg.services.meanfield_service import MeanFieldService, initial_density
from gmfg.services.metrics_service import MetricsService
from gmfg.services.model_service import ModelService
from gmfg.services.nash_service import NashService
from gmfg.services.particle_service import ParticleService
from gmfg.services.plot_service import PlotService


@dataclass
class Services:
    """Every service wired for one experiment."""

    model_service: ModelService
    graphon_service: GraphonService
    meanfield_service: MeanFieldService
    particle_service: ParticleService
    nash_service: NashService
    metrics_service: MetricsService
    plot_service: PlotService


# Repository dependencies
def get_model_repository() -> ModelRepository:
    return ModelRepository()


def get_graphon_repository() -> GraphonRepository:
    return GraphonRepository()


# Domain objects from config
def get_model(config: ExperimentConfig, repository: Optional[ModelRepository] = None) -> ModelSpec:
    repository = repository or get_model_repository()
    params = dict(config.model.parameters)
    if config.model.free_terminal:
        params["target"] = None
    return repository.get_by_name(config.model.name, **params)


def get_graphon(config: ExperimentConfig, repository: Optional[GraphonRepository] = None) -> Graphon:
    repository = repository or get_graphon_repository()
    return repository.resolve(config.graphon.spec)


def get_grids(config: ExperimentConfig, labels: Optional[int] = None) -> Grids:
    g = config.grids
    return Grids(g.horizon, g.n_t, g.n_x, g.x_lo, g.x_hi, g.labels if labels is None else labels)


def get_initial(config: ExperimentConfig, grids: Grids) -> np.ndarray:
    return initial_density(grids, config.initial.mean, config.initial.std)


def get_kernel(config: ExperimentConfig, n: int) -> KernelSpec:
    k = config.kernel
    return KernelSpec.for_population(k.family, n, scale=k.scale, exponent=k.exponent)


# Service dependencies
def get_services(config: ExperimentConfig) -> Services:
    """Build the service graph with solver settings and worker counts from ``config``."""
    solver = config.solver
    workers = config.outputs.threads
    model_service = ModelService()
    graphon_service = GraphonService(seed=config.simulation.seed)
    fk_solver = FeynmanKacSolver(
        model_service, graphon_service, quadrature=solver.quadrature, lookup=solver.lookup, v_max=solver.v_max
    )
    fp_solver = FokkerPlanckSolver(graphon_service)
    meanfield_service = MeanFieldService(
        model_service, graphon_service, fk_solver, fp_solver,
        damping=solver.damping, tol_v=solver.tol_v, tol_m=solver.tol_m, max_iter=solver.max_iter,
    )
    particle_service = ParticleService(graphon_service, workers=workers)
    nash_service = NashService(
        graphon_service, meanfield_service, particle_service,
        deviators=config.nash.deviators, workers=workers,
    )
    return Services(
        model_service=model_service,
        graphon_service=graphon_service,
        meanfield_service=meanfield_service,
        particle_service=particle_service,
        nash_service=nash_service,
        metrics_service=MetricsService(),
        plot_service=PlotService(),
    )
