from .model_service import ModelService
from .graphon_service import GraphonService
from .feynman_kac_solver import FeynmanKacSolver
from .fokker_planck_solver import FokkerPlanckSolver
from .meanfield_service import MeanFieldService
from .particle_service import ParticleService
from .nash_service import NashService
from .metrics_service import MetricsService
from .plot_service import PlotService

__all__ = [
    "ModelService",
    "GraphonService",
    "FeynmanKacSolver",
    "FokkerPlanckSolver",
    "MeanFieldService",
    "ParticleService",
    "NashService",
    "MetricsService",
    "PlotService",
]
