import logging
from dataclasses import replace
from typing import Optional

import numpy as np

from gmfg.exceptions import ContractViolationError, NumericalBlowUpError
from gmfg.models import (
    EnvStats,
    GridDensity,
    InteractionMatrix,
    KernelSpec,
    ModelSpec,
    ParticleSystem,
    PayoffEstimate,
    Profile,
    Trajectory,
)
from gmfg.utilities.workers import ordered_map
from .graphon_service import GraphonService

logger = logging.getLogger(__name__)

INITIAL_STREAM = 0
DYNAMICS_STREAM = 1
COMMON_STREAM = 2


def child_seed(seed: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Stable child of ``seed``; unlike SeedSequence.spawn it does not depend on call history."""
    return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + key)


def stream(seed: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


class ParticleService:
    """n-player simulator with moderate local interactions and graphon weights."""

    def __init__(self, graphon_service: GraphonService, chunk: int = 512, workers: int = 1):
        self.graphon_service = graphon_service
        self.chunk = chunk
        self.workers = workers

    # -- setup --------------------------------------------------------------------------------

    @staticmethod
    def quantile_sample(initial: GridDensity, uniforms: np.ndarray) -> np.ndarray:
        """Exact inverse-CDF sampling of a piecewise-constant density."""
        cdf = np.concatenate([[0.0], np.cumsum(initial.density * np.diff(initial.edges))])
        return np.interp(uniforms, cdf / cdf[-1], initial.edges)

    def sample_initial(self, initial: GridDensity, seed: np.random.SeedSequence, n: int,
                       dim: int = 1) -> np.ndarray:
        uniforms = np.stack([
            stream(child_seed(seed, i, INITIAL_STREAM)).random(dim) for i in range(n)
        ])
        return self.quantile_sample(initial, uniforms)

    def build_system(self, interaction: InteractionMatrix, kernel: KernelSpec,
                     seed: np.random.SeedSequence, initial: Optional[GridDensity] = None,
                     positions: Optional[np.ndarray] = None) -> ParticleSystem:
        if positions is None:
            if initial is None:
                raise ContractViolationError("a particle system needs positions or an initial law")
            positions = self.sample_initial(initial, seed, interaction.n, kernel.dim)
        return ParticleSystem(np.asarray(positions, dtype=float), interaction, kernel, seed)

    def noise(self, system: ParticleSystem, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Standard normal increments: (n_steps, n, d) idiosyncratic and (n_steps, d) common."""
        idio = np.empty((n_steps, system.n, system.d))
        for i in range(system.n):
            idio[:, i, :] = stream(child_seed(system.seed, i, DYNAMICS_STREAM)).standard_normal((n_steps, system.d))
        common = stream(child_seed(system.seed, 0, COMMON_STREAM)).standard_normal((n_steps, system.d))
        return idio, common

    # -- interaction fields -------------------------------------------------------------------

    def local_field(self, system: ParticleSystem, i: int, x) -> float:
        """V̂ᵢ(x) = (1/n) Σⱼ ξᵢⱼ Vₙ(x - Xⱼ), self term included."""
        query = np.asarray(x, dtype=float).reshape(1, system.d)
        return float(self.local_fields(system, query, np.array([i]))[0])

    def local_fields(self, system: ParticleSystem, queries: np.ndarray, rows: np.ndarray,
                     method: str = "auto") -> np.ndarray:
        queries = np.asarray(queries, dtype=float).reshape(-1, system.d)
        rows = np.asarray(rows, dtype=int)
        if method == "auto":
            method = "bucket" if system.d == 1 else "direct"
        if method == "bucket":
            if system.d != 1:
                raise ContractViolationError("the bucket index supports d = 1 only")
            return self._bucket_fields(system, queries[:, 0], rows)
        return self._direct_fields(system, queries, rows)

    def _direct_fields(self, system: ParticleSystem, queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
        xi = system.interaction.values
        out = np.empty(len(rows))
        positions = system.positions if system.d > 1 else system.positions[:, 0]
        for start in range(0, len(rows), self.chunk):
            stop = start + self.chunk
            q = queries[start:stop] if system.d > 1 else queries[start:stop, 0]
            diff = q[:, None] - positions[None, :]
            out[start:stop] = np.sum(xi[rows[start:stop]] * system.kernel(diff), axis=1)
        return out / system.n

    def _bucket_fields(self, system: ParticleSystem, queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
        xi = system.interaction.values
        x = system.positions[:, 0]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        radius = system.kernel.support_radius
        out = np.empty(len(rows))
        for start in range(0, len(rows), self.chunk):
            q = queries[start:start + self.chunk]
            r = rows[start:start + self.chunk]
            lo = np.searchsorted(xs, q - radius, side="left")
            hi = np.searchsorted(xs, q + radius, side="right")
            counts = hi - lo
            owner = np.repeat(np.arange(len(q)), counts)
            offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            neighbours = order[lo[owner] + offsets]
            contributions = xi[r[owner], neighbours] * system.kernel(q[owner] - x[neighbours])
            out[start:start + self.chunk] = np.bincount(owner, weights=contributions, minlength=len(q))
        return out / system.n

    def env_empirical(self, system: ParticleSystem, i=slice(None)) -> EnvStats:
        """Statistics of Rⁿᵢ = (1/n) Σⱼ δ(ξᵢⱼ, Xⱼ); ``i`` may select several players."""
        positions = system.positions[:, 0] if system.d == 1 else system.positions
        return self.graphon_service.stats_from_samples(system.interaction.values[i], positions)

    # -- dynamics -----------------------------------------------------------------------------

    def _advance(self, system: ParticleSystem, profile: Profile, model: ModelSpec, t: float, dt: float,
                 idio: np.ndarray, common: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Explicit Euler–Maruyama step; returns the new positions and the pre-step running reward."""
        positions = system.positions
        state = positions[:, 0] if system.d == 1 else positions
        field = self.local_fields(system, positions, np.arange(system.n))
        stats = self.env_empirical(system)
        if system.d > 1:
            stats = stats.expand(1)
        controls = profile.controls(t, state)
        drift = model.drift(t, state, field, stats, controls)
        reward = model.running_reward(t, state, field, stats, controls)
        sigma = model.diffusion(t, state)
        root = np.sqrt(dt)
        if system.d == 1:
            moved = state + drift * dt + sigma * root * idio[:, 0] + model.common_diffusion * root * common[0]
            moved = moved[:, None]
        else:
            moved = (state + drift * dt + root * np.einsum("nij,nj->ni", sigma, idio)
                     + model.common_diffusion * root * common[None, :])
        bad = ~np.all(np.isfinite(moved), axis=1)
        if np.any(bad):
            player = int(np.argmax(bad))
            raise NumericalBlowUpError(
                "particle position became non-finite", {"player": player, "t": float(t + dt)}
            )
        return moved, np.broadcast_to(reward, (system.n,))

    def step(self, system: ParticleSystem, profile: Profile, model: ModelSpec, t: float, dt: float,
             noise: Optional[tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        """Positions after one step; ``noise`` = (idiosyncratic (n, d), common (d,)) increments."""
        if dt <= 0:
            raise ContractViolationError("step needs Δt > 0", {"dt": dt})
        if noise is None:
            idio, common = self.noise(system, 1)
            noise = (idio[0], common[0])
        moved, _ = self._advance(system, profile, model, t, dt, *noise)
        return moved

    def simulate(self, system: ParticleSystem, profile: Profile, model: ModelSpec, horizon: float,
                 dt: float, record: int = 1) -> Trajectory:
        n_steps = int(round(horizon / dt))
        if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ContractViolationError("T/Δt must be an integer", {"T": horizon, "dt": dt})
        if record < 1 or n_steps % record:
            raise ContractViolationError("record stride must divide the step count",
                                         {"steps": n_steps, "record": record})
        idio, common = self.noise(system, n_steps)
        current = replace(system, positions=system.positions.copy())
        recorded = [current.positions.copy()]
        running = np.zeros(system.n)
        for k in range(n_steps):
            moved, reward = self._advance(current, profile, model, k * dt, dt, idio[k], common[k])
            running += reward * dt
            current = replace(current, positions=moved)
            if (k + 1) % record == 0:
                recorded.append(moved.copy())
        state = current.positions[:, 0] if system.d == 1 else current.positions
        stats = self.env_empirical(current)
        terminal = np.broadcast_to(
            model.terminal_reward(state, stats if system.d == 1 else stats.expand(1)), (system.n,)
        ).astype(float)
        positions = np.stack(recorded)
        if system.d == 1:
            positions = positions[..., 0]
        times = dt * record * np.arange(len(recorded))
        return Trajectory(times, positions, system.labels, running, terminal)

    # -- payoffs ------------------------------------------------------------------------------

    def rep_system(self, template: ParticleSystem, master_seed: int, rep: int,
                   initial: Optional[GridDensity] = None) -> ParticleSystem:
        seed = np.random.SeedSequence(entropy=master_seed, spawn_key=(rep,))
        positions = template.positions if initial is None else self.sample_initial(
            initial, seed, template.n, template.d
        )
        return ParticleSystem(positions.copy(), template.interaction, template.kernel, seed)

    def payoff_samples(self, model: ModelSpec, template: ParticleSystem, profile: Profile, reps: int,
                       horizon: float, dt: float, master_seed: int = 0,
                       initial: Optional[GridDensity] = None) -> np.ndarray:
        """Per-rep, per-player realized payoffs, shape (reps, n). Seeds depend only on (master, rep)."""
        if reps < 1:
            raise ContractViolationError("payoff estimation needs reps >= 1", {"reps": reps})

        def run(rep: int) -> np.ndarray:
            system = self.rep_system(template, master_seed, rep, initial)
            return self.simulate(system, profile, model, horizon, dt).payoffs

        return np.stack(ordered_map(run, range(reps), self.workers))

    def payoff_estimate(self, model: ModelSpec, template: ParticleSystem, profile: Profile, reps: int,
                        horizon: float, dt: float, master_seed: int = 0,
                        initial: Optional[GridDensity] = None) -> PayoffEstimate:
        samples = self.payoff_samples(model, template, profile, reps, horizon, dt, master_seed, initial)
        averages = samples.mean(axis=1)
        if reps > 1:
            se = samples.std(axis=0, ddof=1) / np.sqrt(reps)
            average_se = float(averages.std(ddof=1) / np.sqrt(reps))
        else:
            se, average_se = np.zeros(template.n), 0.0
        return PayoffEstimate(samples.mean(axis=0), se, float(averages.mean()), average_se, reps)
