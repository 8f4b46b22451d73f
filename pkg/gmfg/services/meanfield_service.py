import logging
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from gmfg.exceptions import (
    ContractViolationError,
    DomainTooSmallError,
    OscillationError,
)
from gmfg.models import (
    CommonNoiseSolution,
    DensityFlow,
    FeedbackControl,
    GradientField,
    Graphon,
    Grids,
    MFGSolution,
    ModelSpec,
    ResidualRecord,
    SeparatedForm,
    StepGraphon,
)
from .feynman_kac_solver import FeynmanKacSolver
from .fokker_planck_solver import FokkerPlanckSolver
from .graphon_service import GraphonService
from .model_service import ModelService

logger = logging.getLogger(__name__)


def initial_density(grids: Grids, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Normal law truncated to the space domain, as a normalized cell density."""
    p = norm.pdf(grids.x, loc=mean, scale=std)
    return p / (p.sum() * grids.dx)


class MeanFieldService:
    """Fixed-point solver for the limiting game: backward gradient sweep, forward FP, damping."""

    def __init__(self, model_service: ModelService, graphon_service: GraphonService,
                 fk_solver: FeynmanKacSolver, fp_solver: FokkerPlanckSolver,
                 damping: float = 0.5, tol_v: float = 1e-4, tol_m: float = 1e-4,
                 max_iter: int = 200, oscillation_window: int = 5, boundary_tolerance: float = 1e-6):
        self.model_service = model_service
        self.graphon_service = graphon_service
        self.fk_solver = fk_solver
        self.fp_solver = fp_solver
        self.damping = damping
        self.tol_v = tol_v
        self.tol_m = tol_m
        self.max_iter = max_iter
        self.oscillation_window = oscillation_window
        self.boundary_tolerance = boundary_tolerance

    # -- single passes ------------------------------------------------------------------------

    def fk_backward(self, flow: DensityFlow, model: ModelSpec, graphon: Graphon) -> GradientField:
        return self.fk_solver.backward(flow, model, graphon)

    def fp_forward(self, feedback: FeedbackControl, model: ModelSpec, graphon: Graphon,
                   initial: np.ndarray, environment: Optional[DensityFlow] = None,
                   min_substeps: int = 1) -> DensityFlow:
        return self.fp_solver.forward(feedback, model, graphon, initial, environment, min_substeps)

    def feedback_from_gradient(self, gradient: GradientField, flow: DensityFlow, model: ModelSpec,
                               graphon: Graphon) -> FeedbackControl:
        """α*(t, x, u) = α̂(t, x, p̄, R(u), v) on every grid layer."""
        grids = flow.grids
        pbar, stats = self.graphon_service.flow_environment(graphon, flow)
        values = np.empty_like(gradient.v)
        for i, t in enumerate(grids.times):
            a = self.model_service.maximize_h(
                model, t, grids.x, pbar[i], stats.select(i).expand(1), gradient.v[i]
            ).maximizer
            values[i] = np.broadcast_to(a, values[i].shape)
        return FeedbackControl.strict(grids, values)

    def payoff(self, flow: DensityFlow, control: FeedbackControl, model: ModelSpec,
               graphon: Graphon) -> float:
        """J of ``control`` played against the frozen environment ``flow``.

        The player's own density q comes from a forward pass against the frozen environment,
        started from the environment's initial law.
        """
        grids = flow.grids
        q = self.fp_forward(control, model, graphon, flow.p[0], environment=flow).p
        pbar, stats = self.graphon_service.flow_environment(graphon, flow)
        x, dx, w = grids.x, grids.dx, grids.label_weights

        terminal = np.broadcast_to(
            model.terminal_reward(x, stats.select(grids.n_t).expand(1)), q[-1].shape
        )
        total = float(w @ np.sum(terminal * q[-1], axis=-1)) * dx
        running = 0.0
        for i in range(grids.n_t):
            reward = self._expected_reward(model, control, i, grids.times[i], x, pbar[i], stats.select(i))
            running += float(w @ np.sum(reward * q[i], axis=-1)) * dx
        return total + grids.dt * running

    @staticmethod
    def _expected_reward(model, control: FeedbackControl, i, t, x, pbar_i, stats_i) -> np.ndarray:
        if control.is_relaxed:
            per_control = model.running_reward(
                t, x[:, None], pbar_i[..., None], stats_i.expand(2), control.control_grid
            )
            per_control = np.broadcast_to(per_control, control.weights[i].shape)
            return np.sum(control.weights[i] * per_control, axis=-1)
        reward = model.running_reward(t, x, pbar_i, stats_i.expand(1), control.values[i])
        return np.broadcast_to(reward, pbar_i.shape)

    def best_response(self, env_flow: DensityFlow, model: ModelSpec,
                      graphon: Graphon) -> tuple[float, FeedbackControl, GradientField]:
        gradient = self.fk_backward(env_flow, model, graphon)
        feedback = self.feedback_from_gradient(gradient, env_flow, model, graphon)
        return self.payoff(env_flow, feedback, model, graphon), feedback, gradient

    def audit_best_response(self, solution: MFGSolution, model: ModelSpec, graphon: Graphon,
                            controls: Sequence[float]) -> np.ndarray:
        """Payoffs of constant deviations against the solution flow."""
        return np.array([
            self.payoff(solution.flow, FeedbackControl.constant(solution.grids, c), model, graphon)
            for c in controls
        ])

    # -- fixed point --------------------------------------------------------------------------

    def mfg_fixed_point(self, model: ModelSpec, graphon: Graphon, initial: np.ndarray, grids: Grids,
                        damping: Optional[float] = None, tol_v: Optional[float] = None,
                        tol_m: Optional[float] = None, max_iter: Optional[int] = None,
                        guess: Optional[DensityFlow] = None) -> MFGSolution:
        """Damped fixed point m ← (1 - λ)m + λ·FP(α̂(FK(m))).

        Iteration 0 replaces the internal guess by the first best-response flow; residuals are
        measured from iteration 1 on. The returned triple (m, v, α) is mutually consistent:
        v and α are computed from m, and the residual measures FP(α) against m.
        """
        damping = self.damping if damping is None else damping
        tol_v = self.tol_v if tol_v is None else tol_v
        tol_m = self.tol_m if tol_m is None else tol_m
        max_iter = self.max_iter if max_iter is None else max_iter
        if not 0.0 < damping <= 1.0:
            raise ContractViolationError("damping must lie in (0, 1]", {"damping": damping})
        if model.common_diffusion != 0:
            raise ContractViolationError(
                "the deterministic fixed point needs σ∘ = 0; use common_noise_solve",
                {"model": model.name, "common_diffusion": model.common_diffusion},
            )
        started = time.perf_counter()

        m = guess if guess is not None else DensityFlow.constant(grids, initial)
        v_prev: Optional[GradientField] = None
        residuals: list[ResidualRecord] = []
        best: Optional[tuple[float, DensityFlow, GradientField, FeedbackControl]] = None
        decayed_at: Optional[int] = None
        rising = 0
        converged = False

        for iteration in range(max_iter + 1):
            v = self.fk_backward(m, model, graphon)
            alpha = self.feedback_from_gradient(v, m, model, graphon)
            m_plus = self.fp_forward(alpha, model, graphon, initial)
            density_residual = m_plus.l1_distance(m)
            gradient_residual = float("inf") if v_prev is None else v.sup_distance(v_prev)
            step = 1.0 if iteration == 0 else self._damping(damping, iteration, decayed_at)
            residuals.append(ResidualRecord(iteration, gradient_residual, density_residual, step))
            logger.info(
                f"Iteration {iteration}: density residual {density_residual:.3e}, "
                f"gradient residual {gradient_residual:.3e}, damping {step:.3f}"
            )

            if iteration > 0:
                score = max(density_residual / tol_m, gradient_residual / tol_v)
                if best is None or score < best[0]:
                    best = (score, m, v, alpha)
                if density_residual <= tol_m and gradient_residual <= tol_v:
                    converged = True
                    break
                previous = residuals[-2].density_residual
                rising = rising + 1 if iteration > 1 and density_residual > previous else 0
                if rising >= self.oscillation_window:
                    if decayed_at is not None:
                        raise OscillationError(
                            "fixed-point residuals keep growing after damping decay",
                            {"iteration": iteration, "suggested_damping": damping / 4.0},
                        )
                    decayed_at = iteration
                    rising = 0
                    logger.warning(
                        f"Residuals increased {self.oscillation_window} times in a row; "
                        f"switching to damping {damping}/(1+i/20)"
                    )
            v_prev = v
            m = m_plus if iteration == 0 else m.blend(m_plus, self._damping(damping, iteration, decayed_at))

        if converged:
            flow, gradient, feedback = m, v, alpha
        else:
            _, flow, gradient, feedback = best if best is not None else (None, m, v, alpha)
            logger.warning(f"Fixed point did not converge within {max_iter} iterations")

        flags = self._audit_flags(flow, gradient)
        solution = MFGSolution(
            flow=flow, gradient=gradient, feedback=feedback, residuals=residuals,
            payoff=self.payoff(flow, feedback, model, graphon), converged=converged, flags=flags,
            meta={
                "iterations": len(residuals) - 1,
                "damping": damping,
                "damping_decayed_at": decayed_at,
                "tol_v": tol_v, "tol_m": tol_m, "max_iter": max_iter,
                "clamp_fraction": gradient.clamp_fraction,
                "boundary_mass": flow.boundary_mass(),
                "solve_seconds": time.perf_counter() - started,
            },
        )
        return solution

    @staticmethod
    def _damping(damping: float, iteration: int, decayed_at: Optional[int]) -> float:
        if decayed_at is None:
            return damping
        return damping / (1.0 + (iteration - decayed_at) / 20.0)

    def _audit_flags(self, flow: DensityFlow, gradient: GradientField) -> list[str]:
        flags = []
        if gradient.clamp_fraction > self.fk_solver.clamp_threshold:
            flags.append("quadrature-clamp")
        boundary = flow.boundary_mass()
        if boundary > self.boundary_tolerance:
            logger.warning(f"Boundary mass {boundary:.2e} exceeds {self.boundary_tolerance:.0e}; widen the domain")
            flags.append("boundary-mass")
        return flags

    def mfg_fixed_point_stepgraphon(self, model: ModelSpec, step_graphon: StepGraphon,
                                    initial: np.ndarray, grids: Grids, **kwargs) -> MFGSolution:
        """The fixed point with one label per block of the step graphon."""
        return self.mfg_fixed_point(model, step_graphon, initial, grids.with_labels(step_graphon.k), **kwargs)

    def refinement_study(self, model: ModelSpec, graphon: Graphon, grids: Grids,
                         mean: float = 0.0, std: float = 1.0, **kwargs) -> dict[str, float]:
        """Solve on ``grids`` and on the grid with Δt, Δx halved; report C = ‖m_h - m_{h/2}‖/(Δx + Δt)."""
        coarse = self.mfg_fixed_point(model, graphon, initial_density(grids, mean, std), grids, **kwargs)
        fine_grids = grids.refined()
        fine = self.mfg_fixed_point(model, graphon, initial_density(fine_grids, mean, std), fine_grids, **kwargs)
        restricted = 0.5 * (fine.flow.p[::2, :, 0::2] + fine.flow.p[::2, :, 1::2])
        distance = DensityFlow(grids, restricted).l1_distance(coarse.flow)
        return {"distance": distance, "constant": distance / (grids.dx + grids.dt)}

    # -- common noise -------------------------------------------------------------------------

    @staticmethod
    def sample_common_path(grids: Grids, sigma0: float, seed) -> np.ndarray:
        """c(t_i) = σ∘ W∘(t_i) on the time grid, c(0) = 0."""
        rng = np.random.Generator(np.random.Philox(seed))
        increments = sigma0 * np.sqrt(grids.dt) * rng.standard_normal(grids.n_t)
        return np.concatenate([[0.0], np.cumsum(increments)])

    @staticmethod
    def translated_model(model: ModelSpec, path: np.ndarray, grids: Grids) -> ModelSpec:
        """Coefficients seen in coordinates y = x - c(t): b^c(t, y, ...) = b(t, y + c(t), ..., shifted R)."""
        times = grids.times
        c_T = float(path[-1])

        def shift(t):
            return float(np.interp(t, times, path))

        def drift(t, y, p, stats, a):
            c = shift(t)
            return model.drift(t, y + c, p, stats.shifted(c), a)

        def running_reward(t, y, p, stats, a):
            c = shift(t)
            return model.running_reward(t, y + c, p, stats.shifted(c), a)

        def terminal_reward(y, stats):
            return model.terminal_reward(y + c_T, stats.shifted(c_T))

        def diffusion(t, y):
            return model.diffusion(t, y + shift(t))

        maximizer = None
        if model.maximizer is not None:
            def maximizer(t, y, p, stats, z):
                c = shift(t)
                return model.maximizer(t, y + c, p, stats.shifted(c), z)

        separated = None
        if model.separated is not None:
            sep = model.separated
            separated = SeparatedForm(
                control_drift=lambda t, y, a: sep.control_drift(t, y + shift(t), a),
                control_reward=lambda t, y, a: sep.control_reward(t, y + shift(t), a),
                coupling_reward=lambda t, y, p, stats: sep.coupling_reward(
                    t, y + shift(t), p, stats.shifted(shift(t))
                ),
            )
        return replace(
            model, name=f"{model.name}@common-path", drift=drift, running_reward=running_reward,
            terminal_reward=terminal_reward, diffusion=diffusion, maximizer=maximizer,
            separated=separated, common_diffusion=0.0,
        )

    def translate_flow(self, flow: DensityFlow, path: np.ndarray, sign: float = 1.0) -> DensityFlow:
        """Shift every slice by sign·c(t_i) on the x-grid (linear resampling, renormalized)."""
        grids = flow.grids
        x, dx = grids.x, grids.dx
        p = np.empty_like(flow.p)
        for i, c in enumerate(sign * np.asarray(path, dtype=float)):
            source = x - c
            inside = (source >= grids.x_lo) & (source <= grids.x_hi)
            for k in range(grids.labels):
                row = flow.p[i, k]
                lost = float(row[(x + c < grids.x_lo) | (x + c > grids.x_hi)].sum() * dx)
                if lost > self.boundary_tolerance:
                    raise DomainTooSmallError(
                        "common-noise shift pushes mass out of the space domain",
                        {"t": float(grids.times[i]), "lost_mass": lost,
                         "required_x_lo": grids.x_lo + min(0.0, float(np.min(sign * path))),
                         "required_x_hi": grids.x_hi + max(0.0, float(np.max(sign * path)))},
                    )
                shifted = np.where(inside, np.interp(source, x, row, left=0.0, right=0.0), 0.0)
                p[i, k] = shifted / (shifted.sum() * dx)
        return DensityFlow(grids, p)

    def common_noise_solve(self, model: ModelSpec, graphon: Graphon, path: np.ndarray,
                           initial: np.ndarray, grids: Grids, **kwargs) -> CommonNoiseSolution:
        """Freeze the common path, solve the translated deterministic game, translate back."""
        path = np.asarray(path, dtype=float)
        if model.common_diffusion == 0:
            raise ContractViolationError("common_noise_solve needs a model with σ∘ ≠ 0", {"model": model.name})
        if path.shape != (grids.n_t + 1,) or path[0] != 0.0:
            raise ContractViolationError("common path must live on the time grid with c(0) = 0")
        frozen = self.mfg_fixed_point(self.translated_model(model, path, grids), graphon, initial, grids, **kwargs)
        translated = self.translate_flow(frozen.flow, path)
        recovered = self.translate_flow(translated, path, sign=-1.0)
        error = recovered.l1_distance(frozen.flow)
        logger.info(f"Common-noise retranslation error {error:.3e}")
        return CommonNoiseSolution(path=path, frozen=frozen, translated=translated, retranslation_error=error)
