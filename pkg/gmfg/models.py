"""Domain types shared by the grid solver, the particle simulator and the run repository."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from gmfg.exceptions import ContractViolationError

Array = np.ndarray


# ---------------------------------------------------------------------------
# Model coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlSet:
    """Compact box A = [lower, upper] of admissible controls."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) == 0 or len(self.lower) != len(self.upper):
            raise ContractViolationError("control set needs matching, nonempty bounds")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ContractViolationError(
                    "control set bounds must satisfy lower < upper",
                    {"lower": lo, "upper": hi},
                )

    @classmethod
    def interval(cls, lower: float, upper: float) -> "ControlSet":
        return cls((float(lower),), (float(upper),))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def clip(self, a: Array) -> Array:
        if self.dim == 1:
            return np.clip(a, self.lower[0], self.upper[0])
        return np.clip(a, np.asarray(self.lower), np.asarray(self.upper))

    def contains(self, a: Array, atol: float = 1e-12) -> bool:
        a = np.asarray(a, dtype=float)
        lo = self.lower[0] if self.dim == 1 else np.asarray(self.lower)
        hi = self.upper[0] if self.dim == 1 else np.asarray(self.upper)
        return bool(np.all(a >= lo - atol) and np.all(a <= hi + atol))

    def grid(self, points: int = 33) -> list[Array]:
        """Uniform grid per control dimension."""
        return [np.linspace(lo, hi, points) for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class EnvStats:
    """Finite statistics of a measure r on E x R^d.

    w0 = ∫ e r, xbar = ∫ e·y r, m1 = ∫ y r, xbar2 = ∫ e·y² r.
    Fields are floats or numpy arrays; coefficient callbacks rely on broadcasting.
    """

    w0: Any
    xbar: Any
    m1: Any
    xbar2: Any

    @classmethod
    def zeros(cls) -> "EnvStats":
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_moments(cls, e: Array, m0: Array, m1: Array, m2: Array) -> "EnvStats":
        """Statistics of Σ_a mass_a δ(e_a, y_a) grouped into atoms/classes.

        ``e`` has shape (rows, classes): interaction weight of each class seen from each row.
        ``m0, m1, m2`` are the zeroth, first and second state moments carried by each class.
        The grid form (classes = labels) and the particle form (classes = players) both go
        through here.
        """
        e = np.asarray(e, dtype=float)
        return cls(
            w0=e @ m0,
            xbar=e @ m1,
            m1=np.broadcast_to(np.sum(m1, axis=0), (e.shape[0],) + np.shape(m1)[1:]).copy(),
            xbar2=e @ m2,
        )

    def shifted(self, c: Any) -> "EnvStats":
        """Statistics of the push-forward (e, y) -> (e, y + c)."""
        return EnvStats(
            w0=self.w0,
            xbar=self.xbar + c * self.w0,
            m1=self.m1 + c,
            xbar2=self.xbar2 + 2.0 * c * self.xbar + c * c * self.w0,
        )

    def select(self, index: Any) -> "EnvStats":
        return EnvStats(
            np.asarray(self.w0)[index],
            np.asarray(self.xbar)[index],
            np.asarray(self.m1)[index],
            np.asarray(self.xbar2)[index],
        )

    def expand(self, axes: int = 1) -> "EnvStats":
        """Append trailing axes so per-row stats broadcast against (rows, points, ...) arrays."""
        index = (Ellipsis,) + (None,) * axes
        return EnvStats(
            np.asarray(self.w0)[index],
            np.asarray(self.xbar)[index],
            np.asarray(self.m1)[index],
            np.asarray(self.xbar2)[index],
        )


@dataclass(frozen=True)
class SeparatedForm:
    """b = b̄(t,x,a), L = L̄(t,x,a) + underline-L(t,x,p,stats)."""

    control_drift: Callable[..., Array]
    control_reward: Callable[..., Array]
    coupling_reward: Callable[..., Array]


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient bundle (b, σ, σ∘, L, g).

    Callbacks are vectorized: ``drift(t, x, p, stats, a)``, ``running_reward(t, x, p, stats, a)``,
    ``terminal_reward(x, stats)``, ``diffusion(t, x)``. For d = 1 the diffusion returns the scalar
    σ broadcast like ``x``; for d >= 2 it returns (..., d, d) matrices.
    """

    name: str
    control_set: ControlSet
    drift: Callable[..., Array]
    running_reward: Callable[..., Array]
    terminal_reward: Callable[..., Array]
    diffusion: Callable[..., Array]
    common_diffusion: float = 0.0
    nondegeneracy_floor: float = 1.0
    maximizer: Optional[Callable[..., Array]] = None
    concave: bool = False
    dim: int = 1
    separated: Optional[SeparatedForm] = None
    translation_invariant: bool = False
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.nondegeneracy_floor <= 0:
            raise ContractViolationError("nondegeneracy floor θ must be positive")

    @property
    def has_oracle(self) -> bool:
        return self.maximizer is not None


@dataclass(frozen=True)
class HamiltonianEval:
    value: Array
    maximizer: Array


# ---------------------------------------------------------------------------
# Graphons
# ---------------------------------------------------------------------------

class Graphon:
    """Symmetric-or-not kernel G: [0,1]² -> E ⊂ [0, e_max]."""

    name: str = "graphon"
    e_max: float = 1.0

    def evaluate(self, u: Array, v: Array) -> Array:
        raise NotImplementedError

    def label_matrix(self, labels: Array) -> Array:
        """G(u_k, u_l) on a label grid."""
        labels = np.asarray(labels, dtype=float)
        return np.asarray(self.evaluate(labels[:, None], labels[None, :]), dtype=float)

    def __call__(self, u: Array, v: Array) -> Array:
        return self.evaluate(u, v)


class AnalyticGraphon(Graphon):
    def __init__(self, name: str, fn: Callable[[Array, Array], Array], e_max: float):
        self.name = name
        self._fn = fn
        self.e_max = float(e_max)

    def evaluate(self, u: Array, v: Array) -> Array:
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        return np.asarray(self._fn(u, v), dtype=float) * np.ones_like(u)

    def __repr__(self) -> str:
        return f"<AnalyticGraphon(name={self.name}, e_max={self.e_max})>"


class SampledGraphon(Graphon):
    """Dense K×K samples at cell midpoints, bilinear inside, nearest beyond the outer midpoints."""

    def __init__(self, values: Array, e_max: Optional[float] = None, name: str = "sampled"):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ContractViolationError("sampled graphon needs a square grid")
        self.values = values
        self.name = name
        self.e_max = float(values.max() if e_max is None else e_max)
        k = values.shape[0]
        self._nodes = (np.arange(k) + 0.5) / k
        self._interp = RegularGridInterpolator(
            (self._nodes, self._nodes), values, method="linear", bounds_error=False, fill_value=None
        ) if k > 1 else None

    def evaluate(self, u: Array, v: Array) -> Array:
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        if self._interp is None:
            return np.full(u.shape, self.values[0, 0])
        lo, hi = self._nodes[0], self._nodes[-1]
        pts = np.stack([np.clip(u, lo, hi), np.clip(v, lo, hi)], axis=-1)
        return self._interp(pts)


class StepGraphon(Graphon):
    """Piecewise-constant graphon on the uniform k×k partition."""

    def __init__(self, values: Array, anchors: Optional[Array] = None, name: str = "step"):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ContractViolationError("step graphon needs a square value matrix")
        if np.any(values < 0):
            raise ContractViolationError("step graphon values must lie in E ⊂ R+")
        self.values = values
        self.k = values.shape[0]
        self.name = name
        self.e_max = float(values.max()) if values.size else 0.0
        self.anchors = (np.arange(self.k) + 0.5) / self.k if anchors is None else np.asarray(anchors, float)

    @property
    def partition(self) -> Array:
        return np.linspace(0.0, 1.0, self.k + 1)

    def cell_index(self, u: Array) -> Array:
        # cells ((i-1)/k, i/k]; u = 0 belongs to the first cell
        idx = np.ceil(np.asarray(u, dtype=float) * self.k - 1e-9).astype(int) - 1
        return np.clip(idx, 0, self.k - 1)

    def evaluate(self, u: Array, v: Array) -> Array:
        return self.values[self.cell_index(u), self.cell_index(v)]

    def __repr__(self) -> str:
        return f"<StepGraphon(k={self.k}, e_max={self.e_max})>"


@dataclass(frozen=True)
class InteractionMatrix:
    """Deterministic n×n interaction weights ξⁿ with labels uᵢ = i/n."""

    values: Array
    e_max: float

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ContractViolationError("interaction matrix must be square")
        if np.any(self.values < 0) or np.any(self.values > self.e_max + 1e-12):
            raise ContractViolationError("interaction entries must lie in [0, e_max]")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @cached_property
    def labels(self) -> Array:
        return np.arange(1, self.n + 1) / self.n

    def as_step_graphon(self) -> StepGraphon:
        return StepGraphon(self.values, anchors=self.labels, name="matrix")


# ---------------------------------------------------------------------------
# Grid solver state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grids:
    """Uniform time × space (d = 1) × label discretization."""

    horizon: float
    n_t: int
    n_x: int
    x_lo: float
    x_hi: float
    labels: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n_t < 1 or self.n_x < 2 or self.labels < 1:
            raise ContractViolationError("grids need T > 0, n_t >= 1, n_x >= 2, labels >= 1")
        if not self.x_lo < self.x_hi:
            raise ContractViolationError("space domain must be nonempty")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_x

    @cached_property
    def times(self) -> Array:
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    @cached_property
    def edges(self) -> Array:
        return np.linspace(self.x_lo, self.x_hi, self.n_x + 1)

    @cached_property
    def x(self) -> Array:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @cached_property
    def u(self) -> Array:
        return (np.arange(self.labels) + 0.5) / self.labels

    @property
    def label_weights(self) -> Array:
        return np.full(self.labels, 1.0 / self.labels)

    def with_labels(self, labels: int) -> "Grids":
        return Grids(self.horizon, self.n_t, self.n_x, self.x_lo, self.x_hi, labels)

    def refined(self) -> "Grids":
        return Grids(self.horizon, 2 * self.n_t, 2 * self.n_x, self.x_lo, self.x_hi, self.labels)

    def time_index(self, t: float) -> int:
        """Left grid point of t."""
        return int(min(max(np.floor(t / self.dt + 1e-9), 0), self.n_t))

    def label_index(self, u: Array) -> Array:
        """Nearest label cell of u ∈ [0, 1]."""
        idx = np.ceil(np.asarray(u, dtype=float) * self.labels - 1e-9).astype(int) - 1
        return np.clip(idx, 0, self.labels - 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon, "n_t": self.n_t, "n_x": self.n_x,
            "x_lo": self.x_lo, "x_hi": self.x_hi, "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Grids":
        return cls(
            float(data["horizon"]), int(data["n_t"]), int(data["n_x"]),
            float(data["x_lo"]), float(data["x_hi"]), int(data["labels"]),
        )


@dataclass(frozen=True)
class DensityFlow:
    """Label-resolved density p[t_i, u_k, x_j]; each (t, u) slice is a probability density."""

    grids: Grids
    p: Array

    def __post_init__(self):
        g = self.grids
        if self.p.shape != (g.n_t + 1, g.labels, g.n_x):
            raise ContractViolationError(
                "density flow shape does not match grids",
                {"shape": self.p.shape, "expected": (g.n_t + 1, g.labels, g.n_x)},
            )

    @classmethod
    def constant(cls, grids: Grids, initial: Array) -> "DensityFlow":
        """The initial density held fixed in time, replicated over labels."""
        initial = np.asarray(initial, dtype=float)
        if initial.ndim == 1:
            initial = np.broadcast_to(initial, (grids.labels, grids.n_x))
        p = np.broadcast_to(initial, (grids.n_t + 1, grids.labels, grids.n_x)).copy()
        return cls(grids, p)

    def mass(self) -> Array:
        return self.p.sum(axis=-1) * self.grids.dx

    def validate(self, tol: float = 1e-8) -> None:
        if np.any(self.p < 0):
            raise ContractViolationError("density flow has negative entries", {"min": float(self.p.min())})
        err = float(np.max(np.abs(self.mass() - 1.0)))
        if err > tol:
            raise ContractViolationError("density flow is not normalized per (t, u)", {"mass_error": err})

    def label_marginal(self) -> Array:
        """x-marginal Σ_k w_k p(t, u_k, ·)."""
        return np.einsum("k,tkx->tx", self.grids.label_weights, self.p)

    def mean(self) -> Array:
        return self.label_marginal() @ self.grids.x * self.grids.dx

    def l1_distance(self, other: "DensityFlow") -> float:
        """sup over time of the label-averaged L¹ distance."""
        diff = np.abs(self.p - other.p).sum(axis=-1) * self.grids.dx
        return float(np.max(diff @ self.grids.label_weights))

    def boundary_mass(self, cells: int = 1) -> float:
        edge = self.p[..., :cells].sum(axis=-1) + self.p[..., -cells:].sum(axis=-1)
        return float(np.max(edge) * self.grids.dx)

    def blend(self, other: "DensityFlow", weight: float) -> "DensityFlow":
        """(1 - weight)·self + weight·other."""
        return DensityFlow(self.grids, (1.0 - weight) * self.p + weight * other.p)


@dataclass(frozen=True)
class GradientField:
    """Decoupling field v[t_i, u_k, x_j] (d = 1)."""

    grids: Grids
    v: Array
    clamp_fraction: float = 0.0

    def sup_distance(self, other: "GradientField") -> float:
        return float(np.max(np.abs(self.v - other.v)))


@dataclass(frozen=True)
class FeedbackControl:
    """Strict feedback α[t, u, x] or a relaxed one given as mixture weights over a control grid."""

    grids: Grids
    values: Optional[Array] = None
    control_grid: Optional[Array] = None
    weights: Optional[Array] = None

    def __post_init__(self):
        if (self.values is None) == (self.weights is None):
            raise ContractViolationError("feedback must be either strict or relaxed")
        if self.weights is not None:
            if self.control_grid is None or self.weights.shape[-1] != len(self.control_grid):
                raise ContractViolationError("relaxed weights must match the control grid")
            if np.any(self.weights < 0) or np.max(np.abs(self.weights.sum(axis=-1) - 1.0)) > 1e-12:
                raise ContractViolationError("relaxed weights must be a probability vector")

    @classmethod
    def strict(cls, grids: Grids, values: Array) -> "FeedbackControl":
        return cls(grids=grids, values=np.asarray(values, dtype=float))

    @classmethod
    def constant(cls, grids: Grids, value: float) -> "FeedbackControl":
        return cls.strict(grids, np.full((grids.n_t + 1, grids.labels, grids.n_x), float(value)))

    @classmethod
    def relaxed(cls, grids: Grids, control_grid: Array, weights: Array) -> "FeedbackControl":
        return cls(grids=grids, control_grid=np.asarray(control_grid, float), weights=np.asarray(weights, float))

    @property
    def is_relaxed(self) -> bool:
        return self.weights is not None

    def shifted(self, offset: float) -> "FeedbackControl":
        if self.is_relaxed:
            raise ContractViolationError("only strict feedback can be shifted")
        return FeedbackControl.strict(self.grids, self.values + offset)


@dataclass(frozen=True)
class ResidualRecord:
    iteration: int
    gradient_residual: float
    density_residual: float
    damping: float


@dataclass
class MFGSolution:
    flow: DensityFlow
    gradient: GradientField
    feedback: FeedbackControl
    residuals: list[ResidualRecord]
    payoff: float
    converged: bool
    flags: list[str] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "converged" if self.converged else "non-converged"

    @property
    def grids(self) -> Grids:
        return self.flow.grids


@dataclass(frozen=True)
class CommonNoiseSolution:
    path: Array
    frozen: MFGSolution
    translated: DensityFlow
    retranslation_error: float


# ---------------------------------------------------------------------------
# Particle system
# ---------------------------------------------------------------------------

def _triangle(y: Array) -> Array:
    return np.maximum(0.0, 1.0 - np.abs(y))


def _epanechnikov(y: Array) -> Array:
    return np.where(np.abs(y) <= 1.0, 0.75 * (1.0 - y * y), 0.0)


_GAUSS_NORM = 0.9973002039367398  # P(|Z| <= 3)


def _gaussian_truncated(y: Array) -> Array:
    return np.where(np.abs(y) <= 3.0, np.exp(-0.5 * y * y) / np.sqrt(2.0 * np.pi) / _GAUSS_NORM, 0.0)


KERNEL_PROFILES: dict[str, tuple[Callable[[Array], Array], float]] = {
    "triangle": (_triangle, 1.0),
    "epanechnikov": (_epanechnikov, 1.0),
    "gaussian": (_gaussian_truncated, 3.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """Moderate kernel Vₙ(x) = V(x/ε)/ε^d with a product profile for d >= 2."""

    family: str
    bandwidth: float
    dim: int = 1

    def __post_init__(self):
        if self.family not in KERNEL_PROFILES:
            raise ContractViolationError(f"unknown kernel family '{self.family}'")
        if self.bandwidth <= 0:
            raise ContractViolationError("kernel bandwidth must be positive")

    @classmethod
    def for_population(cls, family: str, n: int, dim: int = 1, scale: float = 1.0,
                       exponent: Optional[float] = None) -> "KernelSpec":
        """εₙ = c·n^(-exponent), default exponent 1/(2d+2)."""
        exponent = 1.0 / (2 * dim + 2) if exponent is None else exponent
        return cls(family, scale * float(n) ** (-exponent), dim)

    @property
    def support_radius(self) -> float:
        """Support radius of Vₙ per coordinate."""
        return KERNEL_PROFILES[self.family][1] * self.bandwidth

    def profile(self, y: Array) -> Array:
        """V evaluated at y; y has shape (...,) for d = 1 or (..., d)."""
        fn = KERNEL_PROFILES[self.family][0]
        y = np.asarray(y, dtype=float)
        if self.dim == 1:
            return fn(y)
        return np.prod(fn(y), axis=-1)

    def __call__(self, y: Array) -> Array:
        return self.profile(np.asarray(y, dtype=float) / self.bandwidth) / self.bandwidth ** self.dim


@dataclass
class ParticleSystem:
    """n-player state: positions (n, d), labels i/n, interaction matrix, kernel, seed."""

    positions: Array
    interaction: InteractionMatrix
    kernel: KernelSpec
    seed: np.random.SeedSequence

    def __post_init__(self):
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if self.positions.shape[0] != self.interaction.n:
            raise ContractViolationError("interaction matrix size must equal the player count")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def labels(self) -> Array:
        return self.interaction.labels


Rule = Callable[[float, Array], Array]


@dataclass
class Profile:
    """Markovian feedback per player: a shared rule plus optional per-player overrides.

    ``shared(t, X)`` returns the controls of all players given positions X of shape (n,) for
    d = 1; an override ``rule(t, x)`` receives the single player's position as a length-1 array.
    """

    shared: Rule
    overrides: dict[int, Rule] = field(default_factory=dict)

    def controls(self, t: float, positions: Array) -> Array:
        a = np.array(self.shared(t, positions), dtype=float, copy=True)
        for i, rule in self.overrides.items():
            a[i] = np.asarray(rule(t, positions[i:i + 1]), dtype=float)[0]
        return a

    def with_override(self, player: int, rule: Rule) -> "Profile":
        return Profile(self.shared, {**self.overrides, player: rule})


@dataclass(frozen=True)
class Trajectory:
    times: Array
    positions: Array
    labels: Array
    running: Array
    terminal: Array

    @property
    def payoffs(self) -> Array:
        return self.terminal + self.running

    def empirical_flow(self, record: int) -> tuple[Array, Array]:
        """Weighted samples (Xᵢ, uᵢ) of μⁿ at a recorded time; weights are 1/n."""
        return self.positions[record], self.labels


@dataclass(frozen=True)
class PayoffEstimate:
    means: Array
    standard_errors: Array
    average: float
    average_se: float
    reps: int


@dataclass(frozen=True)
class ExploitabilityReport:
    """Per-player lower bounds δᵢ on the gain of a unilateral deviation."""

    n: int
    method: str
    players: Array
    labels: Array
    j_base: Array
    j_dev: Array
    delta: Array
    standard_errors: Array
    average_se: float

    @property
    def average(self) -> float:
        return float(np.mean(self.delta))

    def is_coherent(self, slack: float = 3.0) -> bool:
        return bool(np.all(self.delta >= -slack * self.standard_errors - 1e-12))


@dataclass(frozen=True)
class WeightedSamples:
    """Atomic 1D measure Σ weights_i δ(points_i); equal weights when ``weights`` is None."""

    points: Array
    weights: Optional[Array] = None

    def normalized_weights(self) -> Array:
        n = len(self.points)
        return np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant 1D density on cells delimited by ``edges``."""

    edges: Array
    density: Array

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


@dataclass(frozen=True)
class FlowDistanceSeries:
    times: Array
    values: Array
    per_label: Optional[Array] = None


@dataclass(frozen=True)
class ConvergenceRun:
    n: int
    metrics: Mapping[str, float]


@dataclass(frozen=True)
class ConvergenceTable:
    records: Sequence[ConvergenceRun]
    slopes: Mapping[str, float]
