"""Backward Feynman–Kac sweep for the decoupling field v.

v(t_i, x, u) = E[g(x + σW_τ, R_T(u)) W_τ/τ] + Σ_l Δt E[H(s_l, x + σW_{τ_l}, ...) W_{τ_l}/τ_l],
with τ = T - t_i, s_l = t_{i+l}, τ_l = lΔt and τ_1 = Δt/2. Gaussian expectations use
Gauss–Hermite nodes; spatial lookups use monotone cubic (PCHIP) interpolation clamped to the grid.
"""
import logging
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import sparse
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from gmfg.exceptions import ContractViolationError, NumericalBlowUpError
from gmfg.models import DensityFlow, Graphon, GradientField, Grids, ModelSpec
from .graphon_service import GraphonService
from .model_service import ModelService

logger = logging.getLogger(__name__)

LOOKUP_MODES = ("hamiltonian", "inputs")


@lru_cache(maxsize=16)
def gauss_hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights for E[φ(Z)], Z ~ N(0, 1)."""
    z, w = hermegauss(nodes)
    return z, w / w.sum()


def lag_taus(grids: Grids) -> np.ndarray:
    taus = grids.dt * np.arange(1, grids.n_t + 1, dtype=float)
    taus[0] = 0.5 * grids.dt
    return taus


@lru_cache(maxsize=8)
def lag_operators(grids: Grids, nodes: int, sigma: float) -> tuple[list, np.ndarray]:
    """Per-lag sparse maps [H, H'] ↦ E[H(x + σW_τ) W_τ/τ] on the cell centres.

    Hermite interpolation is linear in (values, slopes), so with PCHIP slopes supplied at run
    time each lag reduces to one sparse (n_x, 2 n_x) product. Also returns, per lag, the
    quadrature mass that falls outside [x_lo, x_hi] and gets clamped.
    """
    z, w = gauss_hermite(nodes)
    x = grids.x
    n_x = grids.n_x
    identity = np.eye(n_x)
    value_basis = CubicHermiteSpline(x, identity, np.zeros_like(identity), axis=0)
    slope_basis = CubicHermiteSpline(x, np.zeros_like(identity), identity, axis=0)
    operators = []
    clamp_mass = np.empty(grids.n_t)
    for lag, tau in enumerate(lag_taus(grids)):
        nodes_x = x[:, None] + sigma * np.sqrt(tau) * z[None, :]
        outside = (nodes_x < grids.x_lo) | (nodes_x > grids.x_hi)
        clamp_mass[lag] = float((outside * w).sum()) / n_x
        clamped = np.clip(nodes_x, x[0], x[-1]).ravel()
        weights = w * z / np.sqrt(tau)
        a = np.einsum("q,jqm->jm", weights, value_basis(clamped).reshape(n_x, len(z), n_x))
        b = np.einsum("q,jqm->jm", weights, slope_basis(clamped).reshape(n_x, len(z), n_x))
        operators.append(sparse.csr_matrix(np.hstack([a, b])))
    return operators, clamp_mass


class FeynmanKacSolver:
    """Computes the GradientField of a frozen density flow by one backward sweep."""

    def __init__(self, model_service: ModelService, graphon_service: GraphonService,
                 quadrature: int = 21, lookup: str = "hamiltonian", v_max: float = 1e6,
                 clamp_threshold: float = 0.01, fd_step: float = 1e-5):
        if lookup not in LOOKUP_MODES:
            raise ContractViolationError(f"unknown lookup mode '{lookup}'", {"modes": LOOKUP_MODES})
        self.model_service = model_service
        self.graphon_service = graphon_service
        self.quadrature = quadrature
        self.lookup = lookup
        self.v_max = v_max
        self.clamp_threshold = clamp_threshold
        self.fd_step = fd_step

    def constant_sigma(self, model: ModelSpec, grids: Grids) -> float:
        if model.dim != 1:
            raise ContractViolationError("the grid solver handles d = 1 only", {"dim": model.dim})
        tt, xx = np.meshgrid(grids.times, grids.x, indexing="ij")
        sigma = np.asarray(model.diffusion(tt, xx), dtype=float)
        if np.ptp(sigma) > 1e-12 * max(1.0, float(np.abs(sigma).max())):
            raise ContractViolationError(
                "the backward sweep needs a constant diffusion coefficient",
                {"model": model.name, "range": float(np.ptp(sigma))},
            )
        return float(sigma.flat[0])

    def terminal_gradient(self, model: ModelSpec, grids: Grids, stats, sigma: float) -> np.ndarray:
        """v(T, x, u) = σ ∂ₓg(x, R_T(u)) by central differences."""
        x, h = grids.x, self.fd_step
        up = model.terminal_reward(x + h, stats)
        down = model.terminal_reward(x - h, stats)
        return np.broadcast_to(sigma * (up - down) / (2.0 * h), (grids.labels, grids.n_x)).copy()

    def backward(self, flow: DensityFlow, model: ModelSpec, graphon: Graphon) -> GradientField:
        grids = flow.grids
        sigma = self.constant_sigma(model, grids)
        z, w = gauss_hermite(self.quadrature)
        x, dt, n_t = grids.x, grids.dt, grids.n_t
        pbar, stats = self.graphon_service.flow_environment(graphon, flow)
        operators, clamp_mass = lag_operators(grids, self.quadrature, sigma)

        v = np.empty((n_t + 1, grids.labels, grids.n_x))
        stats_T = stats.select(n_t).expand(1)
        v[n_t] = self.terminal_gradient(model, grids, stats_T, sigma)

        stacks: dict[int, np.ndarray] = {}
        taus = lag_taus(grids)
        for i in range(n_t - 1, -1, -1):
            s = i + 1
            if self.lookup == "hamiltonian":
                stacks[s] = self._layer_stack(model, grids, s, pbar[s], stats.select(s), v[s])
            tau = grids.horizon - grids.times[i]
            nodes_x = x[:, None] + sigma * np.sqrt(tau) * z[None, :]
            g = np.broadcast_to(
                model.terminal_reward(nodes_x, stats.select(n_t).expand(2)),
                (grids.labels, grids.n_x, len(z)),
            )
            layer = g @ (w * z) / np.sqrt(tau)
            if self.lookup == "hamiltonian":
                for lag in range(1, n_t - i + 1):
                    layer += dt * (operators[lag - 1] @ stacks[i + lag]).T
            else:
                for lag in range(1, n_t - i + 1):
                    layer += dt * self._node_expectation(
                        model, grids, i + lag, taus[lag - 1], sigma, pbar, stats, v
                    )
            if not np.all(np.isfinite(layer)) or np.max(np.abs(layer)) > self.v_max:
                raise NumericalBlowUpError(
                    "decoupling field exceeds v_max",
                    {"t": float(grids.times[i]), "v_max": self.v_max,
                     "max": float(np.nanmax(np.abs(layer)))},
                )
            v[i] = layer

        uses = n_t - np.arange(1, n_t + 1) + 1
        fraction = float(clamp_mass @ uses / uses.sum())
        if fraction > self.clamp_threshold:
            logger.warning(
                f"{100 * fraction:.2f}% of the quadrature mass was clamped to the space domain"
            )
        return GradientField(grids, v, clamp_fraction=fraction)

    def _layer_stack(self, model, grids, s, pbar_s, stats_s, v_s) -> np.ndarray:
        """[H; PCHIP slopes of H] at time s, shaped (2 n_x, K) for the lag operators."""
        h = self.model_service.maximize_h(
            model, grids.times[s], grids.x, pbar_s, stats_s.expand(1), v_s
        ).value
        h = np.broadcast_to(h, (grids.labels, grids.n_x))
        slopes = PchipInterpolator(grids.x, h, axis=-1).derivative()(grids.x)
        return np.concatenate([h.T, slopes.T], axis=0)

    def _node_expectation(self, model, grids, s, tau, sigma, pbar, stats, v) -> np.ndarray:
        z, w = gauss_hermite(self.quadrature)
        x = grids.x
        nodes_x = x[:, None] + sigma * np.sqrt(tau) * z[None, :]
        clamped = np.clip(nodes_x, x[0], x[-1])
        p_nodes = PchipInterpolator(x, pbar[s], axis=-1)(clamped)
        v_nodes = PchipInterpolator(x, v[s], axis=-1)(clamped)
        h = self.model_service.maximize_h(
            model, grids.times[s], nodes_x, p_nodes, stats.select(s).expand(2), v_nodes
        ).value
        return h @ (w * z) / np.sqrt(tau)
