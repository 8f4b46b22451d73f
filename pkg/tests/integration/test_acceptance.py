"""Desk-scale acceptance experiments: slower end-to-end checks of the solver properties."""
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from gmfg.commands.common import build_experiment, solve
from gmfg.commands.convergence import cmd_convergence
from gmfg.commands.graphon_study import on_labels
from gmfg.commands.solve import cmd_solve
from gmfg.models import DensityFlow, FeedbackControl, Grids, InteractionMatrix, KernelSpec, ParticleSystem, Profile
from gmfg.repositories.graphon_repository import constant, product, sbm
from gmfg.repositories.model_repository import lq_congestion, monotone
from gmfg.repositories.run_repository import RunRepository
from gmfg.services.graphon_service import GraphonService
from gmfg.services.meanfield_service import initial_density
from gmfg.utilities.config import load_experiment_config
from gmfg.utilities.dependencies import get_kernel
from tests.fixtures.factories import constant_drift_model

pytestmark = [pytest.mark.integration, pytest.mark.slow]

CONFIGS = Path(__file__).resolve().parents[2] / "configs"
POPULATIONS = (100, 400, 1600)


@pytest.fixture
def grids():
    return Grids(horizon=0.5, n_t=10, n_x=60, x_lo=-4.0, x_hi=4.0, labels=1)


@pytest.fixture(scope="module")
def monotone_config():
    return load_experiment_config(
        CONFIGS / "monotone.toml", {"simulation.reps": 32, "nash.reps": 32, "outputs.plots": False}
    )


class TestMonotoneGame:
    def test_two_initial_guesses_reach_the_same_flow(self, meanfield_service, grids):
        model = monotone(congestion=1.0)
        initial = initial_density(grids, 0.0, 0.6)
        tol = 1e-7
        first = meanfield_service.mfg_fixed_point(model, constant(1.0), initial, grids,
                                                  tol_m=tol, tol_v=1e-6, max_iter=200)
        other = DensityFlow.constant(grids, initial_density(grids, 1.5, 0.4))
        second = meanfield_service.mfg_fixed_point(model, constant(1.0), initial, grids,
                                                   tol_m=tol, tol_v=1e-6, max_iter=200, guess=other)
        assert first.converged and second.converged
        assert first.flow.l1_distance(second.flow) <= 2 * tol

    def test_random_flow_pairs_are_monotone(self, meanfield_service, nash_service, grids, rng):
        model = monotone(congestion=1.0)
        graphon = constant(1.0)
        initial = initial_density(grids, 0.0, 0.6)
        flows = [
            meanfield_service.fp_forward(FeedbackControl.constant(grids, a), model, graphon, initial)
            for a in rng.uniform(-2.0, 2.0, size=15)
        ]
        pairs = [(flows[i], flows[j]) for i in range(len(flows)) for j in range(i + 1, len(flows))]
        assert len(pairs) >= 100
        assert nash_service.monotonicity_check(model, graphon, pairs) <= 1e-10

    def test_quadratic_pairing_matches_hand_sum(self, meanfield_service, nash_service, grids):
        c = 0.7
        model = monotone(congestion=c)
        graphon = constant(1.0)
        initial = initial_density(grids, 0.0, 0.6)
        m = meanfield_service.fp_forward(FeedbackControl.constant(grids, 1.0), model, graphon, initial)
        m_prime = meanfield_service.fp_forward(FeedbackControl.constant(grids, -0.5), model, graphon, initial)
        diff = m.p - m_prime.p
        expected = -c * grids.dt * grids.dx * float(np.sum(diff[:-1] ** 2))
        value = nash_service.monotonicity_check(model, graphon, [(m, m_prime)])
        assert value == pytest.approx(expected, abs=1e-10)

    def test_equilibrium_is_optimal_and_consistent(self, meanfield_service, rng):
        grids = Grids(horizon=1.0, n_t=100, n_x=200, x_lo=-5.0, x_hi=5.0, labels=8)
        model = monotone(congestion=1.0)
        graphon = sbm(2, 0.25, 1.0)
        initial = initial_density(grids, 0.0, 0.5)
        tol_m = 1e-4
        solution = meanfield_service.mfg_fixed_point(model, graphon, initial, grids,
                                                     tol_m=tol_m, tol_v=1e-4, max_iter=200)
        assert solution.converged

        value, _, _ = meanfield_service.best_response(solution.flow, model, graphon)
        assert value == pytest.approx(solution.payoff, abs=5e-3)
        deviations = meanfield_service.audit_best_response(solution, model, graphon,
                                                           rng.uniform(-2.0, 2.0, size=20))
        assert deviations.shape == (20,)
        assert np.all(deviations <= solution.payoff + 5e-3)

        replayed = meanfield_service.fp_forward(solution.feedback, model, graphon, initial)
        assert replayed.l1_distance(solution.flow) <= tol_m


class TestGraphonStability:
    def test_step_solutions_approach_the_reference(self, meanfield_service, graphon_service, grids):
        model = monotone(congestion=2.0)
        graphon = product()
        initial = initial_density(grids, 0.0, 0.6)
        options = {"tol_m": 1e-8, "tol_v": 1e-7, "max_iter": 200}
        reference_labels = 64
        reference = meanfield_service.mfg_fixed_point_stepgraphon(
            model, graphon_service.step_approximation(graphon, reference_labels), initial, grids, **options
        )
        distances = []
        for k in (2, 4, 8, 16):
            step = graphon_service.step_approximation(graphon, k)
            solution = meanfield_service.mfg_fixed_point_stepgraphon(model, step, initial, grids, **options)
            distances.append(on_labels(solution.flow, reference_labels).l1_distance(reference.flow))
        assert all(later <= earlier for earlier, later in zip(distances, distances[1:]))
        assert distances[-1] < distances[0]


class TestCutNorm:
    def test_sign_symmetry_on_random_kernels(self, graphon_service, rng):
        for _ in range(50):
            kernel = rng.uniform(-1.0, 1.0, size=(6, 6))
            exact = graphon_service.cut_norm(kernel, mode="exact")
            assert graphon_service.cut_norm(-kernel, mode="exact") == pytest.approx(exact, abs=1e-12)
            assert exact >= abs(kernel.mean()) - 1e-12

    def test_heuristic_reaches_the_exact_value_on_small_kernels(self, rng):
        service = GraphonService(restarts=256)
        trials, hits = 200, 0
        for _ in range(trials):
            k = int(rng.integers(2, 13))
            kernel = rng.uniform(-1.0, 1.0, size=(k, k))
            exact = service.cut_norm(kernel, mode="exact")
            heuristic = service.cut_norm(kernel, mode="heuristic")
            assert heuristic <= exact + 1e-12
            hits += exact - heuristic <= 1e-9
        assert hits >= 0.95 * trials


class TestCommonNoise:
    def test_translation_invariant_model_ignores_the_path(self, meanfield_service):
        grids = Grids(horizon=0.5, n_t=10, n_x=80, x_lo=-6.0, x_hi=6.0, labels=1)
        model = lq_congestion(congestion=0.5, crowding=0.2, target=None, common_noise=0.5)
        initial = initial_density(grids, 0.0, 0.6)
        options = {"tol_m": 1e-9, "tol_v": 1e-8, "max_iter": 200}
        frozen = [
            meanfield_service.common_noise_solve(
                model, constant(1.0), meanfield_service.sample_common_path(grids, 0.5, seed),
                initial, grids, **options,
            ).frozen.flow
            for seed in (1, 2)
        ]
        assert frozen[0].l1_distance(frozen[1]) < 1e-6

    def test_solve_shifts_the_flow_along_eight_paths(self, tmp_path):
        config = load_experiment_config(
            CONFIGS / "common_noise.toml", {"common_noise.paths": 8, "outputs.plots": False}
        )
        assert cmd_solve(config, tmp_path) == 0
        repo = RunRepository(next(tmp_path.glob("solve-*")))
        audit = repo.read_meta()["common_noise"]
        dx = (config.grids.x_hi - config.grids.x_lo) / config.grids.n_x
        assert audit["paths"] == 8
        assert audit["tolerance"] == pytest.approx(2 * dx)
        assert audit["within_tolerance"]
        assert audit["max_shift_w1"] <= 2 * dx
        rows = repo.read_rows("common_noise.csv")
        assert {row["path"] for row in rows} == {str(i) for i in range(8)}

    def test_particles_translate_rigidly(self, particle_service):
        n, dt, steps = 30, 0.05, 10
        positions = np.linspace(-1.0, 1.0, n)
        profile = Profile(lambda t, x: np.full(len(x), 0.2))

        def run(sigma0):
            system = ParticleSystem(positions.copy(), InteractionMatrix(np.ones((n, n)), 1.0),
                                    KernelSpec("triangle", 0.5), np.random.SeedSequence(5))
            model = lq_congestion(congestion=0.3, crowding=0.2, target=None, common_noise=sigma0)
            return system, particle_service.simulate(system, profile, model, steps * dt, dt)

        system, shaken = run(1.0)
        _, still = run(0.0)
        _, common = particle_service.noise(system, steps)
        path = np.concatenate([[0.0], np.cumsum(np.sqrt(dt) * common[:, 0])])
        np.testing.assert_allclose(shaken.positions, still.positions + path[:, None], atol=1e-12)
        np.testing.assert_allclose(shaken.payoffs, still.payoffs, atol=1e-9)


class TestForwardScheme:
    def test_substep_refinement_is_first_order(self, fp_solver):
        grids = Grids(horizon=0.5, n_t=10, n_x=40, x_lo=-4.0, x_hi=4.0, labels=1)
        model = constant_drift_model(0.5)
        feedback = FeedbackControl.constant(grids, 0.0)
        initial = initial_density(grids, 0.0, 0.6)

        def forward(substeps):
            return fp_solver.forward(feedback, model, constant(1.0), initial, min_substeps=substeps)

        reference = forward(512)
        errors = [forward(s).l1_distance(reference) for s in (8, 16, 32)]
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 0.8)


class TestGridRefinement:
    def test_refinement_constant_is_stable(self, meanfield_service):
        coarse = Grids(horizon=0.5, n_t=10, n_x=40, x_lo=-4.0, x_hi=4.0, labels=1)
        model = monotone(congestion=0.5)
        options = {"tol_m": 1e-8, "tol_v": 1e-7, "max_iter": 200}
        first = meanfield_service.refinement_study(model, constant(1.0), coarse, std=0.6, **options)
        second = meanfield_service.refinement_study(model, constant(1.0), coarse.refined(), std=0.6, **options)
        assert first["distance"] > second["distance"] > 0
        assert 0.25 <= second["constant"] / first["constant"] <= 4.0


class TestModerateField:
    def test_local_field_error_shrinks_with_the_population(self, particle_service, graphon_service, rng):
        # two blocks that only see each other: no self term, non-constant row weights
        graphon = sbm(2, 1.0, 0.0)

        def median_error(n, populations):
            interaction = graphon_service.sample_matrix(graphon, n)
            weight = interaction.values.mean(axis=1)
            kernel = KernelSpec.for_population("triangle", n)
            errors = []
            for _ in range(populations):
                positions = rng.standard_normal(n)
                system = ParticleSystem(positions, interaction, kernel, np.random.SeedSequence(n))
                fields = particle_service.local_fields(system, positions, np.arange(n))
                errors.append(np.abs(fields - weight * norm.pdf(positions)))
            return float(np.median(np.concatenate(errors)))

        ratio = median_error(400, 256) / median_error(6400, 96)
        assert 1.6 <= ratio <= 3.0


class TestPopulationLimit:
    def test_empirical_flow_and_payoff_approach_the_mean_field(self, monotone_config, tmp_path):
        assert cmd_convergence(monotone_config, tmp_path, exploitability=False) == 0
        rows = RunRepository(next(tmp_path.glob("convergence-*"))).load_convergence()
        w1, gap, se = defaultdict(dict), {}, {}
        for row in rows:
            n, value = int(row["n"]), float(row["value"])
            if row["metric"] == "w1":
                w1[round(float(row["t"]), 6)][n] = value
            elif row["metric"] == "payoff_gap":
                gap[n] = value
            elif row["metric"] == "payoff_gap_se":
                se[n] = value

        assert sorted(w1) == [0.5, 1.0]
        for by_n in w1.values():
            distances = [by_n[n] for n in POPULATIONS]
            for earlier, later in zip(distances, distances[1:]):
                assert later < 1.1 * earlier
            assert distances[-1] < distances[0]
        for small, large in zip(POPULATIONS, POPULATIONS[1:]):
            assert gap[large] <= 1.1 * gap[small] + 3.0 * np.hypot(se[small], se[large])

    def test_exploitability_shrinks_with_the_population(self, monotone_config):
        experiment = build_experiment(monotone_config)
        solution = solve(experiment)
        assert solution.converged
        nash, seed = experiment.services.nash_service, monotone_config.simulation.seed
        reports = [
            nash.exploitability(
                experiment.model, experiment.graphon, get_kernel(monotone_config, n), solution, n,
                monotone_config.nash.reps, method="mean-field-BR", dt=monotone_config.time_step,
                master_seed=seed, initial=experiment.initial_law,
            )
            for n in POPULATIONS
        ]
        for small, large in zip(reports, reports[1:]):
            assert large.average <= small.average + 3.0 * np.hypot(small.average_se, large.average_se)
        assert reports[-1].average < 0.02 * abs(solution.payoff)
