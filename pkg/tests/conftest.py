import numpy as np
import pytest

from gmfg.models import Grids
from gmfg.services.feynman_kac_solver import FeynmanKacSolver
from gmfg.services.fokker_planck_solver import FokkerPlanckSolver
from gmfg.services.graphon_service import GraphonService
from gmfg.services.meanfield_service import MeanFieldService, initial_density
from gmfg.services.metrics_service import MetricsService
from gmfg.services.model_service import ModelService
from gmfg.services.nash_service import NashService
from gmfg.services.particle_service import ParticleService


@pytest.fixture
def model_service():
    return ModelService()


@pytest.fixture
def graphon_service():
    return GraphonService()


@pytest.fixture
def fk_solver(model_service, graphon_service):
    return FeynmanKacSolver(model_service, graphon_service, quadrature=21)


@pytest.fixture
def fp_solver(graphon_service):
    return FokkerPlanckSolver(graphon_service)


@pytest.fixture
def meanfield_service(model_service, graphon_service, fk_solver, fp_solver):
    return MeanFieldService(model_service, graphon_service, fk_solver, fp_solver, max_iter=60)


@pytest.fixture
def particle_service(graphon_service):
    return ParticleService(graphon_service, chunk=64)


@pytest.fixture
def nash_service(graphon_service, meanfield_service, particle_service):
    return NashService(graphon_service, meanfield_service, particle_service, deviators=2)


@pytest.fixture
def metrics_service():
    return MetricsService()


@pytest.fixture
def small_grids():
    """Coarse grids for solver smoke tests."""
    return Grids(horizon=0.5, n_t=10, n_x=60, x_lo=-4.0, x_hi=4.0, labels=2)


@pytest.fixture
def small_initial(small_grids):
    return initial_density(small_grids, 0.0, 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
