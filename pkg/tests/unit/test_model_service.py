from dataclasses import replace

import numpy as np
import pytest

from gmfg.exceptions import ContractViolationError, MaximizerAmbiguityError, NondegeneracyError
from gmfg.models import EnvStats
from gmfg.repositories.model_repository import builtin_models, kinetic_bounded, lq_congestion
from tests.fixtures.factories import make_model

pytestmark = pytest.mark.unit


@pytest.fixture
def lq():
    return lq_congestion(congestion=0.0, crowding=0.0)


@pytest.fixture
def congestion():
    return lq_congestion(congestion=2.0, crowding=0.0)


class TestEvaluateH:
    def test_lq_substitution(self, model_service, lq):
        h = model_service.evaluate_h(lq, 0.0, 0.0, 0.0, EnvStats.zeros(), 1.0, 1.0)
        assert float(h) == pytest.approx(0.5)

    def test_zero_gradient_and_reward(self, model_service):
        model = make_model()
        h = model_service.evaluate_h(model, 0.0, 0.3, 0.1, EnvStats.zeros(), 0.0, 1.7)
        assert float(h) == 0.0

    def test_congestion_term(self, model_service, congestion):
        h = model_service.evaluate_h(congestion, 0.0, 0.0, 0.3, EnvStats.zeros(), 0.0, 0.0)
        assert float(h) == pytest.approx(-0.6)

    def test_degenerate_sigma_rejected(self, model_service):
        model = make_model(sigma=0.5)
        broken = replace(model, nondegeneracy_floor=1.0)
        with pytest.raises(NondegeneracyError):
            model_service.evaluate_h(broken, 0.0, 0.0, 0.0, EnvStats.zeros(), 1.0, 0.0)


class TestMaximizeH:
    @pytest.mark.parametrize("use_oracle", [True, False])
    def test_interior_maximizer(self, model_service, lq, use_oracle):
        result = model_service.maximize_h(lq, 0.0, 0.0, 0.0, EnvStats.zeros(), 0.7, use_oracle=use_oracle)
        assert float(result.maximizer) == pytest.approx(0.7, abs=1e-8)
        assert float(result.value) == pytest.approx(0.245, abs=1e-12)

    @pytest.mark.parametrize("use_oracle", [True, False])
    def test_clamped_to_box(self, model_service, lq, use_oracle):
        result = model_service.maximize_h(lq, 0.0, 0.0, 0.0, EnvStats.zeros(), 5.0, use_oracle=use_oracle)
        assert float(result.maximizer) == pytest.approx(2.0)
        assert float(result.value) == pytest.approx(8.0)

    def test_additive_constant_shifts_value_only(self, model_service, congestion):
        result = model_service.maximize_h(congestion, 0.0, 0.0, 0.5, EnvStats.zeros(), 1.0)
        assert float(result.maximizer) == pytest.approx(1.0)
        assert float(result.value) == pytest.approx(-0.5)

    def test_vectorized_search_matches_oracle(self, model_service, lq):
        z = np.linspace(-3.0, 3.0, 41)
        assert model_service.audit_argmax(lq, 0.0, np.zeros_like(z), 0.0, EnvStats.zeros(), z) < 1e-8

    def test_two_separated_maxima_are_ambiguous(self, model_service):
        model = make_model(running=lambda t, x, p, stats, a: np.asarray(a, dtype=float) ** 2 + 0.0 * np.asarray(x))
        model = replace(model, drift=lambda t, x, p, stats, a: 0.0 * np.asarray(a))
        with pytest.raises(MaximizerAmbiguityError):
            model_service.maximize_h(model, 0.0, np.array([0.0]), 0.0, EnvStats.zeros(), np.array([0.0]))

    def test_no_oracle_and_not_concave(self, model_service):
        model = make_model(concave=False)
        with pytest.raises(ContractViolationError):
            model_service.maximize_h(model, 0.0, 0.0, 0.0, EnvStats.zeros(), 1.0)

    @pytest.mark.parametrize("use_oracle", [True, False])
    def test_value_is_h_at_the_maximizer(self, model_service, rng, use_oracle):
        model = kinetic_bounded()
        x, p, z = rng.uniform(-2.0, 2.0, 50), rng.uniform(0.0, 1.0, 50), rng.uniform(-3.0, 3.0, 50)
        stats = EnvStats(w0=rng.uniform(0.0, 1.0, 50), xbar=rng.uniform(-1.0, 1.0, 50),
                         m1=rng.uniform(-1.0, 1.0, 50), xbar2=rng.uniform(0.0, 2.0, 50))
        result = model_service.maximize_h(model, 0.3, x, p, stats, z, use_oracle=use_oracle)
        direct = model_service.evaluate_h(model, 0.3, x, p, stats, z, result.maximizer)
        np.testing.assert_allclose(direct, result.value, rtol=0, atol=1e-12)


class TestAudits:
    def test_nondegeneracy_minimum(self, model_service, lq):
        assert model_service.audit_nondegeneracy(lq, 1.0, -2.0, 2.0) == pytest.approx(1.0)

    def test_nondegeneracy_violation(self, model_service):
        model = make_model(sigma=0.5)
        broken = replace(model, nondegeneracy_floor=1.0)
        with pytest.raises(NondegeneracyError):
            model_service.audit_nondegeneracy(broken, 1.0, -1.0, 1.0)

    def test_lipschitz_probe_of_decoupled_model_is_zero(self, model_service, lq):
        assert model_service.lipschitz_probe(lq) == 0.0

    def test_nondegeneracy_holds_across_the_catalog(self, model_service):
        for name, model in builtin_models().items():
            smallest = model_service.audit_nondegeneracy(model, 1.0, -5.0, 5.0)
            assert smallest >= model.nondegeneracy_floor * (1.0 - 1e-12), name
