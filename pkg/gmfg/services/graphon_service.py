import logging
import math
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from gmfg.exceptions import ContractViolationError, CutNormSizeError
from gmfg.models import DensityFlow, EnvStats, Graphon, InteractionMatrix, StepGraphon

logger = logging.getLogger(__name__)

EXACT_CUT_LIMIT = 12
REFINEMENT_LIMIT = 2048

DEFAULT_TEST_FAMILY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda e: e,
    "min1": lambda e: np.minimum(e, 1.0),
    "saturating": lambda e: e / (1.0 + e),
}


def midpoints(k: int) -> np.ndarray:
    return (np.arange(k) + 0.5) / k


class GraphonService:
    """Graphon operator, environment statistics and cut-norm distances."""

    def __init__(self, reference_resolution: int = 256, restarts: int = 32, seed: int = 0):
        self.reference_resolution = reference_resolution
        self.restarts = restarts
        self.seed = seed

    # -- sampling -----------------------------------------------------------------------------

    def sample_matrix(self, graphon: Graphon, n: int) -> InteractionMatrix:
        """ξⁿᵢⱼ = G(i/n, j/n)."""
        if n < 1:
            raise ContractViolationError("sample_matrix needs n >= 1", {"n": n})
        labels = np.arange(1, n + 1) / n
        return InteractionMatrix(graphon.label_matrix(labels), graphon.e_max)

    def step_approximation(self, graphon: Graphon, k: int) -> StepGraphon:
        """Gᵏ(u, v) = G(uᵢᵏ, uⱼᵏ) on Iᵢᵏ × Iⱼᵏ with midpoint anchors."""
        if k < 1:
            raise ContractViolationError("step_approximation needs k >= 1", {"k": k})
        anchors = midpoints(k)
        return StepGraphon(graphon.label_matrix(anchors), anchors=anchors, name=f"{graphon.name}@{k}")

    # -- operator and environment -------------------------------------------------------------

    def label_operator(self, graphon: Graphon, labels: int) -> np.ndarray:
        """G(u_k, u_l)·w_l on the midpoint label grid."""
        return graphon.label_matrix(midpoints(labels)) / labels

    def weighted_density(self, graphon: Graphon, p_slice: np.ndarray) -> np.ndarray:
        """p̄(x, u_k) = Σ_l w_l G(u_k, u_l) p(x, u_l); labels along axis -2, space along -1."""
        p_slice = np.asarray(p_slice, dtype=float)
        if np.any(p_slice < 0):
            raise ContractViolationError(
                "weighted_density needs a nonnegative density", {"min": float(p_slice.min())}
            )
        return self.apply_operator(self.label_operator(graphon, p_slice.shape[-2]), p_slice)

    @staticmethod
    def apply_operator(operator: np.ndarray, p_slice: np.ndarray) -> np.ndarray:
        return np.einsum("kl,...lx->...kx", operator, p_slice)

    @staticmethod
    def stats_from_samples(e: np.ndarray, positions: np.ndarray,
                           weights: Optional[np.ndarray] = None) -> EnvStats:
        """Statistics of Σⱼ weightⱼ δ(e[i, j], Xⱼ) for every row i of ``e``.

        ``positions`` is (n,) or (n, d); the second moment uses |Xⱼ|².
        """
        positions = np.asarray(positions, dtype=float)
        n = positions.shape[0]
        weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        if positions.ndim == 1:
            first, second = weights * positions, weights * positions ** 2
        else:
            first = weights[:, None] * positions
            second = weights * np.sum(positions ** 2, axis=-1)
        return EnvStats.from_moments(np.atleast_2d(e), weights, first, second)

    def grid_moments(self, p_slice: np.ndarray, x: np.ndarray, dx: float) -> tuple[np.ndarray, ...]:
        """Label-weighted moments (w_l·mass, w_l·mean, w_l·second) of a (K, n_x) density slice."""
        w = 1.0 / p_slice.shape[-2]
        return (w * p_slice.sum(axis=-1) * dx,
                w * (p_slice @ x) * dx,
                w * (p_slice @ (x * x)) * dx)

    def env_law_stats(self, graphon: Graphon, m_slice, u, x: Optional[np.ndarray] = None) -> EnvStats:
        """EnvStats of R(u) = Law(S, G(u, V)) for each label in ``u``.

        ``m_slice`` is either a (K, n_x) density on the midpoint label grid (``x`` holds the cell
        centres) or a tuple (positions, labels) of equally weighted samples.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if isinstance(m_slice, tuple):
            positions, labels = m_slice
            e = graphon.evaluate(u[:, None], np.asarray(labels, dtype=float)[None, :])
            return self.stats_from_samples(e, positions)
        if x is None:
            raise ContractViolationError("grid form of env_law_stats needs the space grid")
        p_slice = np.asarray(m_slice, dtype=float)
        e = graphon.evaluate(u[:, None], midpoints(p_slice.shape[-2])[None, :])
        return EnvStats.from_moments(e, *self.grid_moments(p_slice, x, float(x[1] - x[0])))

    def flow_stats(self, e: np.ndarray, p: np.ndarray, x: np.ndarray, dx: float) -> EnvStats:
        """Per-(time, label) EnvStats of a (..., K, n_x) flow with e = G(u_k, u_l)."""
        m0, m1, m2 = self.grid_moments(p, x, dx)
        return EnvStats(
            w0=m0 @ e.T, xbar=m1 @ e.T,
            m1=np.broadcast_to(m1.sum(axis=-1, keepdims=True), m0.shape).copy(),
            xbar2=m2 @ e.T,
        )

    def environment(self, e: np.ndarray, p: np.ndarray, x: np.ndarray,
                    dx: float) -> tuple[np.ndarray, EnvStats]:
        """(p̄, EnvStats) felt by every label of a (..., K, n_x) density with e = G(u_k, u_l)."""
        return self.apply_operator(e / e.shape[0], p), self.flow_stats(e, p, x, dx)

    def flow_environment(self, graphon: Graphon, flow: DensityFlow) -> tuple[np.ndarray, EnvStats]:
        g = flow.grids
        return self.environment(graphon.label_matrix(g.u), flow.p, g.x, g.dx)

    # -- cut norm -----------------------------------------------------------------------------

    def cut_norm(self, kernel: Union[np.ndarray, StepGraphon], mode: str = "exact") -> float:
        """‖T‖_□ of a step kernel given by its k×k block values on uniform cells."""
        values = kernel.values if isinstance(kernel, StepGraphon) else np.asarray(kernel, dtype=float)
        k = values.shape[0]
        if mode == "auto":
            mode = "exact" if k <= EXACT_CUT_LIMIT else "heuristic"
        if mode == "exact":
            return self._cut_norm_exact(values)
        if mode == "heuristic":
            return self._cut_norm_heuristic(values)
        raise ContractViolationError(f"unknown cut-norm mode '{mode}'")

    def _cut_norm_exact(self, values: np.ndarray) -> float:
        k = values.shape[0]
        if k > EXACT_CUT_LIMIT:
            raise CutNormSizeError(
                "exact cut norm enumerates 2^k row subsets and is limited to small k",
                {"k": k, "limit": EXACT_CUT_LIMIT},
            )
        subsets = (np.arange(2 ** k)[:, None] >> np.arange(k)[None, :]) & 1
        column_sums = subsets @ values
        # for a fixed row set the best column set keeps one sign of the column sums
        best = np.maximum(np.maximum(column_sums, 0.0).sum(axis=1), np.maximum(-column_sums, 0.0).sum(axis=1))
        return float(best.max()) / (k * k)

    def _cut_norm_heuristic(self, values: np.ndarray) -> float:
        k = values.shape[0]
        rng = np.random.Generator(np.random.Philox(self.seed))
        starts = [np.ones(k, dtype=bool)]
        starts += [np.eye(k, dtype=bool)[j] for j in range(k)] if k <= 64 else []
        starts += [rng.random(k) < 0.5 for _ in range(self.restarts)]
        best = 0.0
        for sign in (1.0, -1.0):
            signed = sign * values
            for cols in starts:
                best = max(best, self._alternate(signed, cols.copy()))
        return best / (k * k)

    @staticmethod
    def _alternate(values: np.ndarray, cols: np.ndarray, max_rounds: int = 100) -> float:
        """Alternating maximization of Σ_{A×B} T starting from column set B."""
        current = -np.inf
        for _ in range(max_rounds):
            rows = values[:, cols].sum(axis=1) > 0
            cols = values[rows].sum(axis=0) > 0
            total = float(values[np.ix_(rows, cols)].sum())
            if total <= current + 1e-15:
                break
            current = total
        return max(current, 0.0)

    def common_refinement(self, left: StepGraphon, right: StepGraphon) -> tuple[np.ndarray, np.ndarray]:
        """Block values of two step graphons on one uniform partition."""
        k = math.lcm(left.k, right.k)
        if k <= REFINEMENT_LIMIT:
            return self._refine(left.values, k), self._refine(right.values, k)
        k0 = self.reference_resolution
        logger.debug(f"Refinement lcm({left.k}, {right.k}) = {k} too large; resampling at {k0}")
        return left.label_matrix(midpoints(k0)), right.label_matrix(midpoints(k0))

    @staticmethod
    def _refine(values: np.ndarray, k: int) -> np.ndarray:
        factor = k // values.shape[0]
        return np.repeat(np.repeat(values, factor, axis=0), factor, axis=1)

    def cut_convergence_detail(self, step: StepGraphon, graphon: Graphon,
                               test_family: Optional[Mapping[str, Callable]] = None,
                               mode: str = "auto") -> dict[str, float]:
        """Cut distance of f∘Gⁿ to f∘G for each test map f."""
        family = dict(DEFAULT_TEST_FAMILY if test_family is None else test_family)
        if not family:
            raise ContractViolationError("cut convergence needs a nonempty test family")
        reference = graphon if isinstance(graphon, StepGraphon) else self.step_approximation(
            graphon, self.reference_resolution
        )
        left, right = self.common_refinement(step, reference)
        return {name: self.cut_norm(f(left) - f(right), mode) for name, f in family.items()}

    def cut_convergence_metric(self, step: StepGraphon, graphon: Graphon,
                               test_family: Optional[Mapping[str, Callable]] = None,
                               mode: str = "auto") -> float:
        detail = self.cut_convergence_detail(step, graphon, test_family, mode)
        worst = max(detail, key=detail.get)
        logger.debug(f"Cut distance {detail[worst]:.3e} attained by test map '{worst}'")
        return detail[worst]

    def lipschitz_gap(self, graphon: Graphon, step: StepGraphon, probes: int = 100) -> float:
        """sup |Gᵏ − G| on a probes × probes grid."""
        grid = (np.arange(probes) + 0.5) / probes
        return float(np.max(np.abs(step.label_matrix(grid) - graphon.label_matrix(grid))))

    def sweep(self, graphon: Graphon, ks: Sequence[int], mode: str = "auto") -> list[tuple[int, float]]:
        """Cut distance of the k-step approximations of a graphon, one entry per k."""
        return [(k, self.cut_convergence_metric(self.step_approximation(graphon, k), graphon, mode=mode))
                for k in ks]
