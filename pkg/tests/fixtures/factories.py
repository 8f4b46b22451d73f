"""factory-boy factories for config sections, plus small hand-built models for oracle tests."""
from typing import Callable, Optional, Union

import factory
import numpy as np

from gmfg.models import ControlSet, ModelSpec, SeparatedForm
from gmfg.schemas import (
    ExperimentConfig,
    GraphonSection,
    GridsSection,
    InitialSection,
    ModelSection,
    NashSection,
    OutputsSection,
    SimulationSection,
    SolverSection,
    StudySection,
)


class ModelSectionFactory(factory.Factory):
    class Meta:
        model = ModelSection

    name = "lq-congestion"
    parameters = factory.LazyFunction(lambda: {"congestion": 0.0, "crowding": 0.0})


class GraphonSectionFactory(factory.Factory):
    class Meta:
        model = GraphonSection

    spec = "constant:1"


class GridsSectionFactory(factory.Factory):
    class Meta:
        model = GridsSection

    horizon = 0.5
    n_t = 10
    n_x = 60
    x_lo = -4.0
    x_hi = 4.0
    labels = 2


class InitialSectionFactory(factory.Factory):
    class Meta:
        model = InitialSection

    mean = 0.0
    std = 0.6


class SolverSectionFactory(factory.Factory):
    class Meta:
        model = SolverSection

    damping = 0.5
    tol_v = 1e-4
    tol_m = 1e-4
    max_iter = 30
    quadrature = 15


class SimulationSectionFactory(factory.Factory):
    class Meta:
        model = SimulationSection

    n = factory.LazyFunction(lambda: [20, 40, 80])
    reps = 2
    seed = 7
    record = 1


class NashSectionFactory(factory.Factory):
    class Meta:
        model = NashSection

    method = "mean-field-BR"
    deviators = 2
    reps = 2


class StudySectionFactory(factory.Factory):
    class Meta:
        model = StudySection

    ks = factory.LazyFunction(lambda: [1, 2, 4])
    reference_labels = 8


class OutputsSectionFactory(factory.Factory):
    class Meta:
        model = OutputsSection

    record_times = factory.LazyFunction(list)
    plots = False
    threads = 1


class ExperimentConfigFactory(factory.Factory):
    class Meta:
        model = ExperimentConfig

    model = factory.SubFactory(ModelSectionFactory)
    graphon = factory.SubFactory(GraphonSectionFactory)
    grids = factory.SubFactory(GridsSectionFactory)
    initial = factory.SubFactory(InitialSectionFactory)
    solver = factory.SubFactory(SolverSectionFactory)
    simulation = factory.SubFactory(SimulationSectionFactory)
    nash = factory.SubFactory(NashSectionFactory)
    study = factory.SubFactory(StudySectionFactory)
    outputs = factory.SubFactory(OutputsSectionFactory)


def _like(x, a=0.0, p=0.0):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a), np.shape(p)))


def make_model(
    name: str = "custom",
    drift: Callable = lambda t, x, p, stats, a: np.asarray(a, dtype=float) + 0.0 * np.asarray(x, dtype=float),
    running: Callable = lambda t, x, p, stats, a: _like(x, a, p),
    terminal: Callable = lambda x: np.zeros(np.shape(x)),
    sigma: float = 1.0,
    bound: float = 2.0,
    maximizer: Optional[Callable] = None,
    concave: bool = True,
    common_noise: float = 0.0,
    separated: Optional[SeparatedForm] = None,
) -> ModelSpec:
    """Model with constant σ; ``terminal`` only sees the state."""
    return ModelSpec(
        name=name,
        control_set=ControlSet.interval(-bound, bound),
        drift=drift,
        running_reward=running,
        terminal_reward=lambda x, stats: np.asarray(terminal(np.asarray(x, dtype=float)), dtype=float),
        diffusion=lambda t, x: np.full(np.shape(x), sigma, dtype=float),
        common_diffusion=common_noise,
        nondegeneracy_floor=max(sigma * sigma, 1e-12),
        maximizer=maximizer,
        concave=concave,
        separated=separated,
    )


def zero_hamiltonian_model(terminal: Callable, sigma: float = 1.0) -> ModelSpec:
    """b ≡ 0, L ≡ 0: H ≡ 0 and v reduces to the terminal Gaussian integral."""
    return make_model(
        name="zero-hamiltonian",
        drift=lambda t, x, p, stats, a: _like(x, a, p),
        terminal=terminal,
        sigma=sigma,
        maximizer=lambda t, x, p, stats, z: np.zeros(np.shape(z)),
    )


def constant_drift_model(b: float, sigma: float = 1.0, running: float = 0.0,
                         terminal: Union[float, Callable] = 0.0) -> ModelSpec:
    """b ≡ const, L ≡ running, g ≡ terminal (a constant or a function of x), every control optimal."""
    g = terminal if callable(terminal) else (lambda x: terminal + np.zeros(np.shape(x)))
    return make_model(
        name="constant-drift",
        drift=lambda t, x, p, stats, a: b + _like(x, a, p),
        running=lambda t, x, p, stats, a: running + _like(x, a, p),
        terminal=g,
        sigma=sigma,
        maximizer=lambda t, x, p, stats, z: np.zeros(np.shape(z)),
    )
