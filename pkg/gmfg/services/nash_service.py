import logging
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from gmfg.exceptions import ContractViolationError, NotApplicableError
from gmfg.models import (
    DensityFlow,
    ExploitabilityReport,
    FeedbackControl,
    Graphon,
    GridDensity,
    KernelSpec,
    MFGSolution,
    ModelSpec,
    Profile,
)
from gmfg.utilities.workers import ordered_map
from .graphon_service import GraphonService
from .meanfield_service import MeanFieldService
from .particle_service import ParticleService

logger = logging.getLogger(__name__)

METHODS = ("mean-field-BR", "deviation-grid")
DEVIATION_SHIFTS = (-1.0, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 1.0)
DEVIATION_GAINS = (0.0, 0.5, 0.75, 0.9, 1.1, 1.25, 1.5, 2.0)


class FeedbackRule:
    """Markovian rule x ↦ α(t, x, uᵢ) read off a strict grid feedback.

    Labels map to their nearest label cell, states are interpolated with PCHIP (clamped to the
    cell centres) and time uses the left grid point.
    """

    def __init__(self, feedback: FeedbackControl, labels: np.ndarray, control_set,
                 gain: float = 1.0, shift: float = 0.0):
        if feedback.is_relaxed:
            raise ContractViolationError("profiles are built from strict feedback only")
        self.feedback = feedback
        self.grids = feedback.grids
        self.cells = self.grids.label_index(np.asarray(labels, dtype=float))
        self.control_set = control_set
        self.gain = gain
        self.shift = shift
        self._layers: dict[int, PchipInterpolator] = {}

    def _layer(self, index: int) -> PchipInterpolator:
        layer = self._layers.get(index)
        if layer is None:
            layer = PchipInterpolator(self.grids.x, self.feedback.values[index], axis=-1)
            self._layers[index] = layer
        return layer

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.grids.x[0], self.grids.x[-1])
        layer = self._layer(self.grids.time_index(t))
        values = np.empty(len(x))
        for cell in np.unique(self.cells):
            mine = self.cells == cell
            values[mine] = layer(x[mine])[cell]
        return self.control_set.clip(self.gain * values + self.shift)

    def variant(self, labels: np.ndarray, gain: float = 1.0, shift: float = 0.0) -> "FeedbackRule":
        rule = FeedbackRule(self.feedback, labels, self.control_set, gain, shift)
        rule._layers = self._layers
        return rule


class NashService:
    """Approximate-Nash profiles from a mean-field solution and their exploitability."""

    def __init__(self, graphon_service: GraphonService, meanfield_service: MeanFieldService,
                 particle_service: ParticleService, deviators: int = 8, workers: int = 1):
        self.graphon_service = graphon_service
        self.meanfield_service = meanfield_service
        self.particle_service = particle_service
        self.deviators = deviators
        self.workers = workers

    def construct_profile(self, solution: MFGSolution, n: int, control_set) -> Profile:
        """Player i plays α(t, x, uᵢⁿ) with uᵢⁿ = i/n."""
        labels = np.arange(1, n + 1) / n
        return Profile(FeedbackRule(solution.feedback, labels, control_set))

    def deviator_sample(self, n: int) -> np.ndarray:
        if self.deviators <= 0 or self.deviators >= n:
            return np.arange(n)
        return np.unique(np.round(np.linspace(0, n - 1, self.deviators)).astype(int))

    def exploitability(self, model: ModelSpec, graphon: Graphon, kernel: KernelSpec,
                       solution: MFGSolution, n: int, reps: int, method: str = "mean-field-BR",
                       horizon: Optional[float] = None, dt: Optional[float] = None, master_seed: int = 0,
                       initial: Optional[GridDensity] = None,
                       best_response: Optional[FeedbackControl] = None) -> ExploitabilityReport:
        """Lower bounds δᵢ on the gain of a unilateral deviation, common random numbers across arms."""
        if method not in METHODS:
            raise ContractViolationError(f"unknown exploitability method '{method}'", {"methods": METHODS})
        if not solution.converged:
            logger.warning("Exploitability requested for a non-converged solution")
        grids = solution.grids
        horizon = grids.horizon if horizon is None else horizon
        dt = grids.dt if dt is None else dt
        if initial is None:
            initial = GridDensity(grids.edges, solution.flow.p[0, 0])

        ps = self.particle_service
        interaction = self.graphon_service.sample_matrix(graphon, n)
        seed = np.random.SeedSequence(master_seed)
        template = ps.build_system(interaction, kernel, seed, initial=initial)
        profile = self.construct_profile(solution, n, model.control_set)
        base = ps.payoff_samples(model, template, profile, reps, horizon, dt, master_seed, initial)

        players = self.deviator_sample(n)
        labels = (players + 1) / n
        if method == "mean-field-BR" and best_response is None:
            _, best_response, _ = self.meanfield_service.best_response(solution.flow, model, graphon)
        reference = profile.shared if method == "deviation-grid" else FeedbackRule(
            best_response, np.array([0.0]), model.control_set
        )

        def candidates(u: float) -> list[FeedbackRule]:
            label = np.array([u])
            if method == "mean-field-BR":
                return [reference.variant(label)]
            return ([reference.variant(label, shift=s) for s in DEVIATION_SHIFTS]
                    + [reference.variant(label, gain=g) for g in DEVIATION_GAINS])

        def deviate(index: int) -> tuple[float, float, float]:
            player, u = int(players[index]), float(labels[index])
            best = (-np.inf, 0.0, 0.0)
            for candidate in candidates(u):
                deviated = profile.with_override(player, candidate)
                samples = ps.payoff_samples(model, template, deviated, reps, horizon, dt, master_seed, initial)
                gaps = samples[:, player] - base[:, player]
                se = float(gaps.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
                if gaps.mean() > best[0]:
                    best = (float(gaps.mean()), float(samples[:, player].mean()), se)
            return best

        results = ordered_map(deviate, range(len(players)), self.workers)
        delta = np.array([r[0] for r in results])
        report = ExploitabilityReport(
            n=n, method=method, players=players, labels=labels,
            j_base=base[:, players].mean(axis=0), j_dev=np.array([r[1] for r in results]),
            delta=delta, standard_errors=np.array([r[2] for r in results]),
            average_se=self._average_se(results, reps),
        )
        logger.info(f"Exploitability n={n} ({method}): average δ = {report.average:.3e} ± {report.average_se:.1e}")
        return report

    @staticmethod
    def _average_se(results, reps: int) -> float:
        if reps <= 1 or not results:
            return 0.0
        return float(np.sqrt(np.sum(np.square([r[2] for r in results]))) / len(results))

    def deviation_gap(self, model: ModelSpec, template, profile: Profile, player: int, rule,
                      reps: int, horizon: float, dt: float, master_seed: int = 0,
                      initial: Optional[GridDensity] = None) -> np.ndarray:
        """Per-rep payoff gain of ``player`` switching to ``rule``, common random numbers."""
        ps = self.particle_service
        base = ps.payoff_samples(model, template, profile, reps, horizon, dt, master_seed, initial)
        deviated = ps.payoff_samples(model, template, profile.with_override(player, rule), reps,
                                     horizon, dt, master_seed, initial)
        return deviated[:, player] - base[:, player]

    def monotonicity_check(self, model: ModelSpec, graphon: Graphon,
                           flow_pairs: Sequence[tuple[DensityFlow, DensityFlow]]) -> float:
        """max over pairs of the discrete Lasry–Lions pairing (≤ 0 for monotone couplings)."""
        return max(self.monotonicity_values(model, graphon, flow_pairs))

    def monotonicity_values(self, model: ModelSpec, graphon: Graphon,
                            flow_pairs: Sequence[tuple[DensityFlow, DensityFlow]]) -> list[float]:
        if model.separated is None:
            raise NotApplicableError(
                f"model '{model.name}' does not declare a separated form", {"model": model.name}
            )
        if not flow_pairs:
            raise ContractViolationError("monotonicity_check needs at least one flow pair")
        coupling = model.separated.coupling_reward
        values = []
        for m, m_prime in flow_pairs:
            grids = m.grids
            if m_prime.grids != grids:
                raise ContractViolationError("flow pairs must share their grids")
            x, dx, w = grids.x, grids.dx, grids.label_weights
            pbar, stats = self.graphon_service.flow_environment(graphon, m)
            pbar_p, stats_p = self.graphon_service.flow_environment(graphon, m_prime)
            diff = m.p - m_prime.p
            terminal = (model.terminal_reward(x, stats.select(grids.n_t).expand(1))
                        - model.terminal_reward(x, stats_p.select(grids.n_t).expand(1)))
            total = float(w @ np.sum(np.broadcast_to(terminal, diff[-1].shape) * diff[-1], axis=-1)) * dx
            for i in range(grids.n_t):
                t = grids.times[i]
                gap = (coupling(t, x, pbar[i], stats.select(i).expand(1))
                       - coupling(t, x, pbar_p[i], stats_p.select(i).expand(1)))
                total += grids.dt * float(w @ np.sum(gap * diff[i], axis=-1)) * dx
            values.append(total)
        return values
