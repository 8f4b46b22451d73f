import logging
import math
from typing import Optional

import numpy as np

from gmfg.exceptions import ContractViolationError, NumericalBlowUpError, SchemeViolationError
from gmfg.models import DensityFlow, EnvStats, FeedbackControl, Graphon, ModelSpec
from .graphon_service import GraphonService

logger = logging.getLogger(__name__)


class FokkerPlanckSolver:
    """Conservative finite-volume forward solver for the label-resolved Fokker–Planck equation.

    Upwind drift flux on interface-averaged drift, centred diffusion flux, no-flux boundaries and
    explicit Euler sub-steps under Δt_sub ≤ cfl·min(Δx/|b|, Δx²/σ²).
    """

    def __init__(self, graphon_service: GraphonService, cfl: float = 0.4,
                 max_substeps: int = 10_000, negative_tolerance: float = 1e-12):
        self.graphon_service = graphon_service
        self.cfl = cfl
        self.max_substeps = max_substeps
        self.negative_tolerance = negative_tolerance

    def forward(self, feedback: FeedbackControl, model: ModelSpec, graphon: Graphon,
                initial: np.ndarray, environment: Optional[DensityFlow] = None,
                min_substeps: int = 1) -> DensityFlow:
        """Evolve the initial density under ``feedback``.

        Without ``environment`` the flow is self-coupled: p̄ and the environment statistics are
        recomputed from the current slice at every sub-step. With it, they are read from the
        frozen environment flow at the left grid time (deviating-player dynamics).
        """
        grids = feedback.grids
        x, dx, dt = grids.x, grids.dx, grids.dt
        p = self._initial(grids, initial)
        e = graphon.label_matrix(grids.u)
        frozen = None
        if environment is not None:
            frozen = self.graphon_service.flow_environment(graphon, environment)

        out = np.empty((grids.n_t + 1, grids.labels, grids.n_x))
        out[0] = p
        clipped = 0
        for i in range(grids.n_t):
            t = grids.times[i]
            sigma2 = np.broadcast_to(np.asarray(model.diffusion(t, x), dtype=float) ** 2, x.shape)
            diffusion = 0.25 * (sigma2[:-1] + sigma2[1:])
            drift = self._drift(model, feedback, i, t, x, *self._env(e, p, grids, frozen, i))
            b_max = float(np.max(np.abs(drift)))
            limits = [dx * dx / float(sigma2.max())] if sigma2.max() > 0 else []
            if b_max > 0:
                limits.append(dx / b_max)
            dt_max = self.cfl * min(limits) if limits else dt
            substeps = max(min_substeps, math.ceil(dt / dt_max - 1e-12))
            if substeps > self.max_substeps:
                raise NumericalBlowUpError(
                    "CFL condition needs too many sub-steps",
                    {"t": float(t), "substeps": substeps, "limit": self.max_substeps, "b_max": b_max},
                )
            h = dt / substeps
            for sub in range(substeps):
                if sub > 0 and frozen is None:
                    drift = self._drift(model, feedback, i, t + sub * h, x, *self._env(e, p, grids, None, i))
                p = self._substep(p, drift, diffusion, dx, h)
                low = float(p.min())
                if low < -self.negative_tolerance:
                    raise SchemeViolationError(
                        "negative density produced by the forward scheme",
                        {"t": float(t + (sub + 1) * h), "min": low},
                    )
                if low < 0:
                    clipped += int(np.count_nonzero(p < 0))
                    p = np.maximum(p, 0.0)
            logger.debug(f"FP step {i}: {substeps} sub-steps, |b|max={b_max:.3g}")
            out[i + 1] = p
        if clipped:
            logger.warning(f"Clipped {clipped} slightly negative density values to zero")
        return DensityFlow(grids, out)

    @staticmethod
    def _initial(grids, initial: np.ndarray) -> np.ndarray:
        initial = np.asarray(initial, dtype=float)
        p = np.broadcast_to(initial, (grids.labels, grids.n_x)).copy()
        if np.any(p < 0):
            raise ContractViolationError("initial density must be nonnegative")
        mass = p.sum(axis=-1) * grids.dx
        if np.max(np.abs(mass - 1.0)) > 1e-8:
            raise ContractViolationError("initial density must integrate to 1", {"mass": mass.tolist()})
        return p

    def _env(self, e, p, grids, frozen, i) -> tuple[np.ndarray, EnvStats]:
        if frozen is not None:
            pbar, stats = frozen
            return pbar[i], stats.select(i)
        return self.graphon_service.environment(e, p, grids.x, grids.dx)

    @staticmethod
    def _drift(model: ModelSpec, feedback: FeedbackControl, i: int, t: float, x: np.ndarray,
               pbar: np.ndarray, stats: EnvStats) -> np.ndarray:
        if feedback.is_relaxed:
            per_control = model.drift(
                t, x[:, None], pbar[..., None], stats.expand(2), feedback.control_grid
            )
            per_control = np.broadcast_to(per_control, feedback.weights[i].shape)
            return np.sum(feedback.weights[i] * per_control, axis=-1)
        drift = model.drift(t, x, pbar, stats.expand(1), feedback.values[i])
        return np.broadcast_to(drift, pbar.shape)

    @staticmethod
    def _substep(p: np.ndarray, drift: np.ndarray, diffusion: np.ndarray, dx: float, h: float) -> np.ndarray:
        b = 0.5 * (drift[:, :-1] + drift[:, 1:])
        flux = (np.maximum(b, 0.0) * p[:, :-1] + np.minimum(b, 0.0) * p[:, 1:]
                - diffusion * (p[:, 1:] - p[:, :-1]) / dx)
        divergence = np.zeros_like(p)
        divergence[:, :-1] += flux
        divergence[:, 1:] -= flux
        return p - (h / dx) * divergence
