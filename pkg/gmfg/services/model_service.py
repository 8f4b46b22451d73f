import logging
from typing import Optional

import numpy as np

from gmfg.exceptions import (
    ContractViolationError,
    MaximizerAmbiguityError,
    NondegeneracyError,
)
from gmfg.models import EnvStats, HamiltonianEval, ModelSpec

logger = logging.getLogger(__name__)

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


class ModelService:
    """Hamiltonian machinery on top of the coefficient callbacks of a ModelSpec."""

    def __init__(self, control_points: int = 33, control_tolerance: float = 1e-10,
                 tie_tolerance: float = 1e-9):
        self.control_points = control_points
        self.control_tolerance = control_tolerance
        self.tie_tolerance = tie_tolerance

    def evaluate_h(self, model: ModelSpec, t, x, p, stats: EnvStats, z, a) -> np.ndarray:
        """h = b·(z σ⁻¹) + L."""
        sigma = model.diffusion(t, x)
        drift = model.drift(t, x, p, stats, a)
        reward = model.running_reward(t, x, p, stats, a)
        if model.dim == 1:
            sigma = np.asarray(sigma, dtype=float)
            if np.any(sigma * sigma < model.nondegeneracy_floor * (1.0 - 1e-12)):
                raise NondegeneracyError(
                    f"σ(t,x) violates the non-degeneracy floor of model '{model.name}'",
                    {"min_sigma2": float(np.min(sigma * sigma)), "theta": model.nondegeneracy_floor},
                )
            return drift * (np.asarray(z, dtype=float) / sigma) + reward
        try:
            z_scaled = np.linalg.solve(np.swapaxes(sigma, -1, -2), np.asarray(z, dtype=float)[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise NondegeneracyError(f"singular σ(t,x) in model '{model.name}'") from e
        return np.sum(drift * z_scaled, axis=-1) + reward

    def maximize_h(self, model: ModelSpec, t, x, p, stats: EnvStats, z,
                   use_oracle: bool = True) -> HamiltonianEval:
        """Unique maximizer a* of h over the control box and H = h(a*)."""
        if use_oracle and model.maximizer is not None:
            a_star = model.control_set.clip(model.maximizer(t, x, p, stats, z))
        elif model.concave or model.maximizer is not None:
            a_star = self._search(model, t, x, p, stats, z)
        else:
            raise ContractViolationError(
                f"model '{model.name}' has neither an argmax oracle nor a concavity flag"
            )
        return HamiltonianEval(self.evaluate_h(model, t, x, p, stats, z, a_star), a_star)

    def _search(self, model: ModelSpec, t, x, p, stats, z) -> np.ndarray:
        """Coarse grid (33 points per dimension) + golden-section refinement."""
        shape = np.broadcast_shapes(np.shape(x), np.shape(p), np.shape(z))
        cs = model.control_set
        if cs.dim == 1:
            return self._search_1d(
                lambda a: self.evaluate_h(model, t, x, p, stats, z, a),
                cs.lower[0], cs.upper[0], shape,
            )
        # coordinate ascent, one golden-section line search per control dimension
        a = np.broadcast_to(0.5 * (np.asarray(cs.lower) + np.asarray(cs.upper)), shape + (cs.dim,)).copy()
        for _ in range(3):
            for k in range(cs.dim):
                def h_k(ak, k=k):
                    trial = np.broadcast_to(a, np.broadcast_shapes(np.shape(ak) + (cs.dim,), a.shape)).copy()
                    trial[..., k] = ak
                    return self.evaluate_h(model, t, x, p, stats, z, trial)
                a[..., k] = self._search_1d(h_k, cs.lower[k], cs.upper[k], shape)
        return a

    def _search_1d(self, h, lower: float, upper: float, shape) -> np.ndarray:
        grid = np.linspace(lower, upper, self.control_points)
        values = np.stack([np.broadcast_to(h(np.full(shape, a)), shape) for a in grid])
        best = np.argmax(values, axis=0)
        top = values.max(axis=0)
        near = values >= top - self.tie_tolerance
        # ties are only acceptable between neighbouring grid cells
        idx = np.arange(len(grid)).reshape((-1,) + (1,) * len(shape))
        spread = np.where(near, idx, -1).max(axis=0) - np.where(near, idx, len(grid)).min(axis=0)
        if np.any(spread > 1):
            raise MaximizerAmbiguityError(
                "h has separated near-maximal controls; the maximizer is not unique",
                {"points": int(np.count_nonzero(spread > 1))},
            )
        step = grid[1] - grid[0]
        lo = np.clip(grid[best] - step, lower, upper)
        hi = np.clip(grid[best] + step, lower, upper)
        c = hi - _INV_PHI * (hi - lo)
        d = lo + _INV_PHI * (hi - lo)
        hc, hd = h(c), h(d)
        while np.max(hi - lo) > self.control_tolerance:
            left = hc >= hd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            c_new = hi - _INV_PHI * (hi - lo)
            d_new = lo + _INV_PHI * (hi - lo)
            c, d = c_new, d_new
            hc, hd = h(c), h(d)
        a = 0.5 * (lo + hi)
        # the box boundary may beat the interior refinement
        for edge in (lower, upper):
            edge_arr = np.full(shape, edge)
            a = np.where(h(edge_arr) > h(a), edge_arr, a)
        return a

    def audit_argmax(self, model: ModelSpec, t, x, p, stats: EnvStats, z) -> float:
        """Largest gap between the analytic oracle and the generic search."""
        if model.maximizer is None:
            return 0.0
        oracle = self.maximize_h(model, t, x, p, stats, z, use_oracle=True).maximizer
        generic = self._search(model, t, x, p, stats, z)
        return float(np.max(np.abs(oracle - generic)))

    def audit_nondegeneracy(self, model: ModelSpec, horizon: float, x_lo: float, x_hi: float,
                            points: int = 50) -> float:
        """Minimum eigenvalue of σσᵀ on a points×points (t, x) probe grid."""
        tt, xx = np.meshgrid(np.linspace(0.0, horizon, points), np.linspace(x_lo, x_hi, points), indexing="ij")
        if model.dim == 1:
            sigma = np.asarray(model.diffusion(tt, xx), dtype=float)
            smallest = float(np.min(sigma * sigma))
        else:
            probes = np.repeat(xx[..., None], model.dim, axis=-1)
            sigma = np.asarray(model.diffusion(tt, probes), dtype=float)
            smallest = float(np.min(np.linalg.eigvalsh(sigma @ np.swapaxes(sigma, -1, -2))))
        if smallest < model.nondegeneracy_floor * (1.0 - 1e-12):
            raise NondegeneracyError(
                f"σσᵀ drops below θ for model '{model.name}'",
                {"min_eigenvalue": smallest, "theta": model.nondegeneracy_floor},
            )
        return smallest

    def lipschitz_probe(self, model: ModelSpec, rng: Optional[np.random.Generator] = None,
                        probes: int = 200, step: float = 1e-6, scale: float = 2.0) -> float:
        """Largest finite-difference slope of b in (p, stats) over random probes."""
        rng = rng or np.random.default_rng(0)
        cs = model.control_set
        t = rng.uniform(0.0, 1.0, probes)
        x = rng.uniform(-scale, scale, probes)
        p = rng.uniform(0.0, scale, probes)
        a = rng.uniform(cs.lower[0], cs.upper[0], probes)
        stats = EnvStats(*(rng.uniform(-scale, scale, probes) for _ in range(4)))
        stats = EnvStats(np.abs(stats.w0), stats.xbar, stats.m1, np.abs(stats.xbar2))
        base = model.drift(t, x, p, stats, a)
        slopes = [np.abs(model.drift(t, x, p + step, stats, a) - base) / step]
        for name in ("w0", "xbar", "m1", "xbar2"):
            bumped = EnvStats(**{
                key: getattr(stats, key) + (step if key == name else 0.0)
                for key in ("w0", "xbar", "m1", "xbar2")
            })
            slopes.append(np.abs(model.drift(t, x, p, bumped, a) - base) / step)
        return float(np.max(slopes))
