import logging
from dataclasses import replace

import numpy as np
import pytest

from gmfg.exceptions import ContractViolationError, NumericalBlowUpError
from gmfg.models import DensityFlow, Grids
from gmfg.repositories.graphon_repository import constant
from gmfg.repositories.model_repository import lq_congestion
from gmfg.services.feynman_kac_solver import FeynmanKacSolver, gauss_hermite, lag_taus
from gmfg.services.meanfield_service import initial_density
from tests.fixtures.factories import constant_drift_model, make_model, zero_hamiltonian_model

pytestmark = pytest.mark.unit


@pytest.fixture
def frozen_flow(small_grids, small_initial):
    return DensityFlow.constant(small_grids, small_initial)


def test_gauss_hermite_weights_are_probabilities():
    z, w = gauss_hermite(21)
    assert w.sum() == pytest.approx(1.0)
    assert w @ (z * z) == pytest.approx(1.0)


def test_first_lag_is_half_step(small_grids):
    taus = lag_taus(small_grids)
    assert taus[0] == pytest.approx(0.5 * small_grids.dt)
    assert taus[-1] == pytest.approx(small_grids.horizon)


class TestZeroHamiltonian:
    def test_linear_terminal(self, fk_solver, frozen_flow):
        field = fk_solver.backward(frozen_flow, zero_hamiltonian_model(lambda x: x), constant(1.0))
        np.testing.assert_allclose(field.v, 1.0, atol=1e-6)

    def test_quadratic_terminal(self, fk_solver, frozen_flow, small_grids):
        field = fk_solver.backward(frozen_flow, zero_hamiltonian_model(lambda x: x * x), constant(1.0))
        np.testing.assert_allclose(field.v, np.broadcast_to(2.0 * small_grids.x, field.v.shape), atol=1e-6)

    def test_sine_terminal_is_damped(self, fk_solver, frozen_flow, small_grids):
        field = fk_solver.backward(frozen_flow, zero_hamiltonian_model(np.sin), constant(1.0))
        tau = small_grids.horizon - small_grids.times
        expected = np.exp(-tau / 2.0)[:, None, None] * np.cos(small_grids.x)[None, None, :]
        np.testing.assert_allclose(field.v, np.broadcast_to(expected, field.v.shape), atol=1e-6)

    def test_diffusion_scales_the_field(self, fk_solver, frozen_flow):
        field = fk_solver.backward(frozen_flow, zero_hamiltonian_model(lambda x: x, sigma=0.5), constant(1.0))
        np.testing.assert_allclose(field.v, 0.5, atol=1e-6)

    def test_field_is_linear_in_the_terminal_reward(self, fk_solver, frozen_flow):
        def field(terminal):
            return fk_solver.backward(frozen_flow, zero_hamiltonian_model(terminal), constant(1.0)).v

        sine, cosine = field(np.sin), field(np.cos)
        np.testing.assert_allclose(field(lambda x: 2.0 * np.sin(x)), 2.0 * sine, rtol=0, atol=1e-10)
        np.testing.assert_allclose(field(lambda x: np.sin(x) + np.cos(x)), sine + cosine, rtol=0, atol=1e-10)


class TestWithHamiltonian:
    @pytest.fixture
    def grids(self):
        return Grids(horizon=0.5, n_t=40, n_x=160, x_lo=-6.0, x_hi=6.0, labels=1)

    @pytest.mark.parametrize("lookup", ["hamiltonian", "inputs"])
    def test_constant_drift_transports_the_terminal_gradient(self, model_service, graphon_service, grids, lookup):
        b = 0.5
        solver = FeynmanKacSolver(model_service, graphon_service, quadrature=21, lookup=lookup)
        flow = DensityFlow.constant(grids, initial_density(grids, 0.0, 1.0))
        field = solver.backward(flow, constant_drift_model(b, running=0.3, terminal=np.sin), constant(1.0))
        inside = np.abs(grids.x) <= 2.0
        tau = grids.horizon
        expected = np.exp(-tau / 2.0) * np.cos(grids.x[inside] + b * tau)
        np.testing.assert_allclose(field.v[0, 0, inside], expected, atol=2e-2)

    def test_lookup_modes_agree_when_h_is_quadratic_in_the_gradient(self, model_service, graphon_service, grids):
        model = lq_congestion(congestion=0.5, crowding=0.0, control_bound=10.0)
        flow = DensityFlow.constant(grids, initial_density(grids, 0.0, 1.0))
        fields = {
            lookup: FeynmanKacSolver(model_service, graphon_service, quadrature=21, lookup=lookup)
            .backward(flow, model, constant(1.0)).v
            for lookup in ("hamiltonian", "inputs")
        }
        inside = np.abs(grids.x) <= 3.0
        assert np.max(np.abs(fields["inputs"][..., inside])) > 1.0
        np.testing.assert_allclose(fields["hamiltonian"][..., inside], fields["inputs"][..., inside], atol=2e-2)


class TestGuards:
    def test_blow_up(self, model_service, graphon_service, frozen_flow):
        solver = FeynmanKacSolver(model_service, graphon_service, v_max=1e-3)
        with pytest.raises(NumericalBlowUpError):
            solver.backward(frozen_flow, zero_hamiltonian_model(lambda x: x), constant(1.0))

    def test_unknown_lookup(self, model_service, graphon_service):
        with pytest.raises(ContractViolationError):
            FeynmanKacSolver(model_service, graphon_service, lookup="splines")

    def test_state_dependent_diffusion_is_rejected(self, fk_solver, frozen_flow):
        model = replace(make_model(terminal=lambda x: x), diffusion=lambda t, x: 1.0 + 0.1 * np.abs(x))
        with pytest.raises(ContractViolationError):
            fk_solver.backward(frozen_flow, model, constant(1.0))

    def test_clamped_quadrature_mass_is_reported(self, fk_solver, caplog):
        grids = Grids(horizon=1.0, n_t=5, n_x=20, x_lo=-1.0, x_hi=1.0, labels=1)
        flow = DensityFlow.constant(grids, np.full(grids.n_x, 0.5))
        with caplog.at_level(logging.WARNING):
            field = fk_solver.backward(flow, zero_hamiltonian_model(lambda x: x), constant(1.0))
        assert field.clamp_fraction > fk_solver.clamp_threshold
        assert "clamped" in caplog.text
