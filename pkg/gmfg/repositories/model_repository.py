"""Catalog of built-in models.

The coefficients below are artifact choices (no concrete b, L, g is fixed by the underlying
theory); every model records its parameters under ``ModelSpec.parameters`` so outputs can label
them.
"""
from typing import Optional

import numpy as np

from gmfg.models import ControlSet, EnvStats, ModelSpec, SeparatedForm
from .base_repository import BaseRepository


def _crowding(x, stats: EnvStats):
    """∫ e (x - y)² r(de, dy) = x² w0 - 2 x xbar + xbar2."""
    return x * x * stats.w0 - 2.0 * x * stats.xbar + stats.xbar2


def _constant_sigma(sigma: float):
    def diffusion(t, x):
        return np.full(np.shape(x), sigma, dtype=float)
    return diffusion


def _clamped_oracle(control_set: ControlSet, sigma: float):
    # b = a + (terms free of a), L = -a²/2 + (terms free of a)  =>  a* = clamp(z / σ)
    def maximizer(t, x, p, stats, z):
        return control_set.clip(np.asarray(z, dtype=float) / sigma)
    return maximizer


def _terminal(target: Optional[float], weight: float):
    if target is None:
        def g(x, stats):
            return -weight * _crowding(x, stats)
    else:
        def g(x, stats):
            return -weight * (x - target) ** 2 * np.ones_like(np.asarray(x, dtype=float) + stats.w0)
    return g


def lq_congestion(
    congestion: float = 1.0,
    crowding: float = 0.0,
    target: Optional[float] = 0.0,
    terminal_weight: float = 1.0,
    control_bound: float = 2.0,
    sigma: float = 1.0,
    common_noise: float = 0.0,
) -> ModelSpec:
    """b = a, L = -a²/2 - c_p·p - c_s·∫e(x-y)² r, g = -(x - x_T)².

    With ``target=None`` the terminal reward is the terminal crowding term instead, which makes
    every coefficient translation invariant.
    """
    control_set = ControlSet.interval(-control_bound, control_bound)

    def drift(t, x, p, stats, a):
        return np.asarray(a, dtype=float) * np.ones_like(np.asarray(x, dtype=float))

    def running_reward(t, x, p, stats, a):
        return -0.5 * a * a - congestion * p - crowding * _crowding(x, stats)

    return ModelSpec(
        name="lq-congestion",
        control_set=control_set,
        drift=drift,
        running_reward=running_reward,
        terminal_reward=_terminal(target, terminal_weight),
        diffusion=_constant_sigma(sigma),
        common_diffusion=common_noise,
        nondegeneracy_floor=sigma * sigma,
        maximizer=_clamped_oracle(control_set, sigma),
        concave=True,
        translation_invariant=target is None,
        parameters={
            "congestion": congestion, "crowding": crowding,
            "target": float("nan") if target is None else target,
            "terminal_weight": terminal_weight, "control_bound": control_bound,
            "sigma": sigma, "common_noise": common_noise,
        },
    )


def monotone(
    congestion: float = 1.0,
    target: Optional[float] = 0.0,
    terminal_weight: float = 1.0,
    control_bound: float = 2.0,
    sigma: float = 1.0,
    common_noise: float = 0.0,
) -> ModelSpec:
    """Separated form b = a, L = -a²/2 + underline-L, underline-L = -c·p.

    Satisfies the Lasry–Lions inequality for c > 0 and positive semidefinite graphons; c < 0
    gives the sign-flipped (anti-monotone) variant.
    """
    control_set = ControlSet.interval(-control_bound, control_bound)

    def control_drift(t, x, a):
        return np.asarray(a, dtype=float) * np.ones_like(np.asarray(x, dtype=float))

    def control_reward(t, x, a):
        return -0.5 * np.asarray(a, dtype=float) ** 2 * np.ones_like(np.asarray(x, dtype=float))

    def coupling_reward(t, x, p, stats):
        return -congestion * np.asarray(p, dtype=float) * np.ones_like(np.asarray(x, dtype=float))

    def drift(t, x, p, stats, a):
        return control_drift(t, x, a)

    def running_reward(t, x, p, stats, a):
        return control_reward(t, x, a) + coupling_reward(t, x, p, stats)

    return ModelSpec(
        name="monotone",
        control_set=control_set,
        drift=drift,
        running_reward=running_reward,
        terminal_reward=_terminal(target, terminal_weight),
        diffusion=_constant_sigma(sigma),
        common_diffusion=common_noise,
        nondegeneracy_floor=sigma * sigma,
        maximizer=_clamped_oracle(control_set, sigma),
        concave=True,
        separated=SeparatedForm(control_drift, control_reward, coupling_reward),
        translation_invariant=target is None,
        parameters={
            "congestion": congestion,
            "target": float("nan") if target is None else target,
            "terminal_weight": terminal_weight, "control_bound": control_bound,
            "sigma": sigma, "common_noise": common_noise,
        },
    )


def kinetic_bounded(
    attraction: float = 0.5,
    repulsion: float = 0.5,
    target: Optional[float] = 0.0,
    terminal_weight: float = 1.0,
    control_bound: float = 2.0,
    sigma: float = 1.0,
    common_noise: float = 0.0,
) -> ModelSpec:
    """b = a + κ_a·tanh(∫e(y - x) r) - κ_r·tanh(p): bounded, Lipschitz in (p, stats)."""
    control_set = ControlSet.interval(-control_bound, control_bound)

    def drift(t, x, p, stats, a):
        pull = np.tanh(stats.xbar - stats.w0 * x)
        return a + attraction * pull - repulsion * np.tanh(p)

    def running_reward(t, x, p, stats, a):
        return -0.5 * np.asarray(a, dtype=float) ** 2 * np.ones_like(np.asarray(x, dtype=float) + p)

    return ModelSpec(
        name="kinetic-bounded",
        control_set=control_set,
        drift=drift,
        running_reward=running_reward,
        terminal_reward=_terminal(target, terminal_weight),
        diffusion=_constant_sigma(sigma),
        common_diffusion=common_noise,
        nondegeneracy_floor=sigma * sigma,
        maximizer=_clamped_oracle(control_set, sigma),
        concave=True,
        translation_invariant=target is None,
        parameters={
            "attraction": attraction, "repulsion": repulsion,
            "target": float("nan") if target is None else target,
            "terminal_weight": terminal_weight, "control_bound": control_bound,
            "sigma": sigma, "common_noise": common_noise,
        },
    )


class ModelRepository(BaseRepository[ModelSpec]):
    """Repository for built-in and code-registered models."""

    def __init__(self):
        super().__init__()
        self.register("lq-congestion", lq_congestion)
        self.register("monotone", monotone)
        self.register("kinetic-bounded", kinetic_bounded)

    @property
    def kind(self) -> str:
        return "model"


def builtin_models() -> dict[str, ModelSpec]:
    """Default-parameter instance of every catalog model."""
    repo = ModelRepository()
    return {name: repo.get_by_name(name) for name in repo.list_names()}
