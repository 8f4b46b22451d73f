import logging
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.stats import linregress

from gmfg.exceptions import ContractViolationError
from gmfg.models import (
    ConvergenceRun,
    ConvergenceTable,
    DensityFlow,
    FlowDistanceSeries,
    GridDensity,
    Trajectory,
    WeightedSamples,
)

logger = logging.getLogger(__name__)

Measure = Union[WeightedSamples, GridDensity]


def _piece_abs_integral(d0: np.ndarray, d1: np.ndarray, h: np.ndarray) -> np.ndarray:
    """∫|D| over pieces where D is linear from d0 to d1 on a width h."""
    a0, a1 = np.abs(d0), np.abs(d1)
    same = d0 * d1 >= 0
    total = a0 + a1
    crossing = np.divide(d0 * d0 + d1 * d1, 2.0 * total, out=np.zeros_like(total), where=total > 0)
    return h * np.where(same, 0.5 * total, crossing)


class MetricsService:
    """Distances between empirical measures and grid densities, and log-log convergence fits."""

    def __init__(self, mass_tolerance: float = 1e-8):
        self.mass_tolerance = mass_tolerance

    # -- 1D Wasserstein -----------------------------------------------------------------------

    def _check(self, measure: Measure, name: str) -> None:
        if isinstance(measure, GridDensity):
            if np.any(np.asarray(measure.density) < 0):
                raise ContractViolationError(f"{name}: density has negative entries")
            mass = measure.mass
        else:
            weights = measure.normalized_weights()
            if len(measure.points) == 0 or np.any(weights < 0):
                raise ContractViolationError(f"{name}: samples need nonnegative weights")
            mass = float(weights.sum())
        if abs(mass - 1.0) > self.mass_tolerance:
            raise ContractViolationError(f"{name} is not normalized", {"mass": mass})

    @staticmethod
    def _breakpoints(measure: Measure) -> np.ndarray:
        if isinstance(measure, GridDensity):
            return np.asarray(measure.edges, dtype=float)
        return np.asarray(measure.points, dtype=float)

    @staticmethod
    def _cdf_ends(measure: Measure, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """CDF values at the left and right ends of each piece [z_k, z_{k+1}] seen from inside."""
        if isinstance(measure, GridDensity):
            edges = np.asarray(measure.edges, dtype=float)
            cdf = np.concatenate([[0.0], np.cumsum(measure.density * np.diff(edges))])
            values = np.interp(z, edges, cdf)
            return values[:-1], values[1:]
        order = np.argsort(measure.points, kind="stable")
        points = np.asarray(measure.points, dtype=float)[order]
        cumulative = np.concatenate([[0.0], np.cumsum(measure.normalized_weights()[order])])
        mid = 0.5 * (z[:-1] + z[1:])
        values = cumulative[np.searchsorted(points, mid, side="right")]
        return values, values

    def wasserstein1_1d(self, a: Measure, b: Measure) -> float:
        """Exact W1 = ∫|F_a − F_b| by integrating the CDF difference piece by piece."""
        self._check(a, "first measure")
        self._check(b, "second measure")
        z = np.unique(np.concatenate([self._breakpoints(a), self._breakpoints(b)]))
        if len(z) < 2:
            return 0.0
        a0, a1 = self._cdf_ends(a, z)
        b0, b1 = self._cdf_ends(b, z)
        return float(np.sum(_piece_abs_integral(a0 - b0, a1 - b1, np.diff(z))))

    def triangle_gap(self, a: Measure, b: Measure, c: Measure) -> float:
        """W1(a, c) − W1(a, b) − W1(b, c); never above rounding level for a metric."""
        return self.wasserstein1_1d(a, c) - self.wasserstein1_1d(a, b) - self.wasserstein1_1d(b, c)

    # -- flows --------------------------------------------------------------------------------

    def label_resolved_w1(self, positions: np.ndarray, labels: np.ndarray, flow: DensityFlow,
                          time_index: int) -> tuple[float, np.ndarray]:
        """Σ_k w_k W1(players binned to label cell k, p(t, ·, u_k)); also returns the per-bin terms."""
        grids = flow.grids
        positions = np.asarray(positions, dtype=float)
        cells = grids.label_index(labels)
        filled = np.unique(cells)
        if len(filled) == 0:
            raise ContractViolationError("no particles to compare against the flow")
        per_label = np.empty(grids.labels)
        for k in range(grids.labels):
            source = k
            if k not in filled:
                source = int(filled[np.argmin(np.abs(filled - k))])
                logger.warning(f"Label bin {k} is empty; using samples of bin {source}")
            samples = WeightedSamples(positions[cells == source])
            target = GridDensity(grids.edges, flow.p[time_index, k])
            per_label[k] = self.wasserstein1_1d(samples, target)
        return float(grids.label_weights @ per_label), per_label

    def flow_distance_series(self, trajectory: Trajectory, flow: DensityFlow,
                             records: Optional[Iterable[int]] = None) -> FlowDistanceSeries:
        """Label-resolved W1 between μⁿ_t and m_t at recorded times (nearest solver time)."""
        grids = flow.grids
        records = range(len(trajectory.times)) if records is None else list(records)
        times, values, per_label = [], [], []
        for r in records:
            t = float(trajectory.times[r])
            index = int(min(max(round(t / grids.dt), 0), grids.n_t))
            positions, labels = trajectory.empirical_flow(r)
            value, terms = self.label_resolved_w1(positions, labels, flow, index)
            times.append(t)
            values.append(value)
            per_label.append(terms)
        return FlowDistanceSeries(np.array(times), np.array(values), np.array(per_label))

    @staticmethod
    def density_distance_series(flow: DensityFlow, other: DensityFlow) -> FlowDistanceSeries:
        """Label-averaged L¹ distance between two grid flows at every solver time."""
        if flow.grids != other.grids:
            raise ContractViolationError("density flows must share their grids")
        grids = flow.grids
        per_label = np.abs(flow.p - other.p).sum(axis=-1) * grids.dx
        return FlowDistanceSeries(grids.times.copy(), per_label @ grids.label_weights, per_label)

    # -- convergence --------------------------------------------------------------------------

    def convergence_table(self, runs: Sequence[ConvergenceRun],
                          metrics: Optional[Sequence[str]] = None) -> ConvergenceTable:
        """Sort runs by n and fit the least-squares slope of log(metric) against log(n)."""
        records = sorted(runs, key=lambda run: run.n)
        ns = np.array([run.n for run in records], dtype=float)
        if len(np.unique(ns)) < 3:
            raise ContractViolationError("a convergence fit needs at least three values of n",
                                         {"n": ns.tolist()})
        if metrics is None:
            metrics = sorted({key for run in records for key in run.metrics})
        slopes = {}
        for name in metrics:
            values = np.array([run.metrics.get(name, np.nan) for run in records], dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                logger.warning(f"Metric '{name}' has non-positive or missing values; slope not fitted")
                slopes[name] = float("nan")
                continue
            slopes[name] = float(linregress(np.log(ns), np.log(values)).slope)
            logger.info(f"Convergence slope for {name}: {slopes[name]:.3f}")
        return ConvergenceTable(records, slopes)
