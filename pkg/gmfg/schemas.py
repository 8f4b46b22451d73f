from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(Section):
    name: str = "monotone"
    parameters: dict[str, float] = Field(default_factory=dict)
    # TOML has no null: a free terminal condition means g = -crowding (translation invariant)
    free_terminal: bool = False


class GraphonSection(Section):
    spec: str = "sbm:2:0.25:1.0"

    @field_validator("spec")
    @classmethod
    def validate_spec(cls, v):
        if not v.strip():
            raise ValueError("graphon spec cannot be empty")
        return v.strip()


class GridsSection(Section):
    horizon: float = 1.0
    n_t: int = 100
    n_x: int = 200
    x_lo: float = -4.0
    x_hi: float = 4.0
    labels: int = 8

    @field_validator("horizon")
    @classmethod
    def validate_horizon(cls, v):
        if v <= 0:
            raise ValueError("horizon must be positive")
        return v

    @field_validator("n_t", "labels")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("n_x")
    @classmethod
    def validate_cells(cls, v):
        if v < 2:
            raise ValueError("n_x must be at least 2")
        return v

    @model_validator(mode="after")
    def validate_domain(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("domain must be nonempty (x_lo < x_hi)")
        return self


class InitialSection(Section):
    mean: float = 0.0
    std: float = 0.5

    @field_validator("std")
    @classmethod
    def validate_std(cls, v):
        if v <= 0:
            raise ValueError("std must be positive")
        return v


class KernelSection(Section):
    family: Literal["triangle", "epanechnikov", "gaussian"] = "epanechnikov"
    scale: float = 1.0
    exponent: Optional[float] = None

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v):
        if v <= 0:
            raise ValueError("kernel scale must be positive")
        return v

    @field_validator("exponent")
    @classmethod
    def validate_exponent(cls, v):
        if v is not None and not 0 < v < 1:
            raise ValueError("bandwidth exponent must lie in (0, 1)")
        return v


class SolverSection(Section):
    damping: float = 0.5
    tol_v: float = 1e-4
    tol_m: float = 1e-4
    max_iter: int = 200
    quadrature: int = 21
    v_max: float = 1e6
    lookup: Literal["hamiltonian", "inputs"] = "hamiltonian"

    @field_validator("damping")
    @classmethod
    def validate_damping(cls, v):
        if not 0 < v <= 1:
            raise ValueError("damping must lie in (0, 1]")
        return v

    @field_validator("tol_v", "tol_m", "v_max")
    @classmethod
    def validate_tolerance(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("max_iter", "quadrature")
    @classmethod
    def validate_count(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v


class SimulationSection(Section):
    n: list[int] = Field(default_factory=lambda: [100, 400, 1600])
    dt: Optional[float] = None
    reps: int = 8
    seed: int = 0
    record: int = 1

    @field_validator("n")
    @classmethod
    def validate_n(cls, v):
        if not v:
            raise ValueError("at least one population size is required")
        if any(n < 2 for n in v):
            raise ValueError("every population size must be at least 2")
        return v

    @field_validator("dt")
    @classmethod
    def validate_dt(cls, v):
        if v is not None and v <= 0:
            raise ValueError("dt must be positive")
        return v

    @field_validator("reps", "record")
    @classmethod
    def validate_count(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v


class NashSection(Section):
    method: Literal["mean-field-BR", "deviation-grid"] = "mean-field-BR"
    deviators: int = 8
    reps: int = 32

    @field_validator("reps")
    @classmethod
    def validate_reps(cls, v):
        if v < 1:
            raise ValueError("reps must be at least 1")
        return v


class StudySection(Section):
    ks: list[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    reference_labels: int = 64

    @field_validator("ks")
    @classmethod
    def validate_ks(cls, v):
        if not v or any(k < 1 for k in v):
            raise ValueError("block counts must be positive")
        return sorted(v)

    @model_validator(mode="after")
    def validate_against_reference(self):
        if max(self.ks) > self.reference_labels:
            raise ValueError("block counts cannot exceed the reference label count")
        return self


class CommonNoiseSection(Section):
    paths: int = 0
    seed: int = 0

    @field_validator("paths")
    @classmethod
    def validate_paths(cls, v):
        if v < 0:
            raise ValueError("paths cannot be negative")
        return v


class OutputsSection(Section):
    record_times: list[float] = Field(default_factory=list)
    plots: bool = True
    threads: int = 1

    @field_validator("threads")
    @classmethod
    def validate_threads(cls, v):
        if v < 1:
            raise ValueError("threads must be at least 1")
        return v


class ExperimentConfig(Section):
    model: ModelSection = Field(default_factory=ModelSection)
    graphon: GraphonSection = Field(default_factory=GraphonSection)
    grids: GridsSection = Field(default_factory=GridsSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    nash: NashSection = Field(default_factory=NashSection)
    study: StudySection = Field(default_factory=StudySection)
    common_noise: CommonNoiseSection = Field(default_factory=CommonNoiseSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)

    @model_validator(mode="after")
    def validate_record_times(self):
        horizon = self.grids.horizon
        if any(not 0 <= t <= horizon for t in self.outputs.record_times):
            raise ValueError("record times must lie in [0, horizon]")
        return self

    @property
    def time_step(self) -> float:
        """Simulation Δt, defaulting to the solver time step."""
        return self.simulation.dt if self.simulation.dt is not None else self.grids.horizon / self.grids.n_t
