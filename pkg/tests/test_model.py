import json

import numpy as np
import pytest
from scipy import stats

from hybrid_safety import ConfigError, ContractViolation
from hybrid_safety.model import (
    HybridState,
    compute_lipschitz_constants,
    continuous_transition_density,
    load_model,
    model_from_dict,
    observation_density,
    sample_observation,
    sample_transition,
    thermostat_config_path,
)


def thermostat_doc():
    return json.loads(thermostat_config_path().read_text())


class TestThermostatConfig:
    def test_benchmark_parameters(self, thermostat):
        # x' = (1 - b) x + c x_a q' + b x_a with b = 0.0167, c = 0.8, x_a = 6
        b, c, xa = 0.0167, 0.8, 6.0
        np.testing.assert_allclose(thermostat.A[:, 0, 0], [1 - b, 1 - b])
        np.testing.assert_allclose(thermostat.g[0, :, 0], [b * xa] * 2)
        np.testing.assert_allclose(thermostat.g[1, :, 0], [b * xa + c] * 2)
        np.testing.assert_allclose(thermostat.safe_lo, [[17.5], [17.5]])
        np.testing.assert_allclose(thermostat.safe_hi, [[22.0], [22.0]])
        assert thermostat.horizon == 5
        np.testing.assert_allclose(thermostat.safe_volume(), [4.5, 4.5])

    def test_json_roundtrip_and_hash(self, thermostat):
        again = model_from_dict(thermostat.to_json())
        assert again.content_hash() == thermostat.content_hash()
        assert thermostat.with_initial(mu0=[19.0]).content_hash() != thermostat.content_hash()


class TestValidation:
    @pytest.mark.parametrize("field,value,path", [
        ("A", [[[1.0, 0.0]]], "A"),
        ("V", [[1.0, 2.0], [0.0, 1.0]], "V"),
        ("W", [[-1.0]], "W"),
        ("Tq", [[[0.5, 0.4], [0.3, 0.7]], [[0.1, 0.9], [0, 1]]], "Tq"),
        ("horizon", -1, "horizon"),
    ])
    def test_bad_field_reports_path(self, field, value, path):
        doc = thermostat_doc()
        doc[field] = value
        with pytest.raises(ConfigError) as info:
            model_from_dict(doc)
        assert info.value.path.startswith(path)

    def test_empty_safe_box(self):
        doc = thermostat_doc()
        doc["safe_set"][1] = [[22.0, 17.5]]
        with pytest.raises(ConfigError, match=r"safe_set\[1\]"):
            model_from_dict(doc)

    def test_missing_field(self):
        doc = thermostat_doc()
        del doc["rho"]["P0"]
        with pytest.raises(ConfigError, match="rho.P0"):
            model_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_model(p)

    def test_gaussian_pipeline_needs_invertible_A(self):
        doc = thermostat_doc()
        doc["A"] = [[[0.0]], [[0.9833]]]
        with pytest.raises(ContractViolation):
            model_from_dict(doc).check_gaussian_pipeline()


class TestDensities:
    def test_transition_density(self, thermostat):
        x, u = np.array([19.0]), 1
        val = continuous_transition_density(thermostat, [19.5], 1, x, u)
        mean = 0.9833 * 19.0 + 0.9002
        np.testing.assert_allclose(val, stats.norm(mean, np.sqrt(0.5)).pdf(19.5), rtol=1e-12)

    def test_observation_density_zero_for_other_symbol(self, thermostat):
        assert observation_density(thermostat, [19.0], 1, [19.0], 0) == 0.0

    def test_bad_mode_rejected(self, thermostat):
        with pytest.raises(ContractViolation):
            observation_density(thermostat, [19.0], 0, [19.0], 5)


class TestLipschitz:
    def test_scalar_derivative_peak(self, thermostat):
        lip = compute_lipschitz_constants(thermostat)
        z = np.linspace(-5, 5, 200001)
        deriv = np.max(np.abs(np.gradient(stats.norm(0, np.sqrt(0.5)).pdf(z), z)))
        np.testing.assert_allclose(lip.h_x1, deriv, rtol=1e-6)
        np.testing.assert_allclose(lip.h_x2, 0.9833 * deriv, rtol=1e-6)
        np.testing.assert_allclose(lip.phi_v_star, stats.norm(0, np.sqrt(0.5)).pdf(0))
        assert lip.h_q == 0.0


class TestSampling:
    def test_transition_moments(self, thermostat):
        rng = np.random.default_rng(0)
        s = HybridState(np.array([19.0]), 0)
        xs, qs = [], []
        for _ in range(20000):
            t = sample_transition(thermostat, s, 1, rng)
            xs.append(t.x[0])
            qs.append(t.q)
        qs = np.array(qs)
        xs = np.array(xs)
        np.testing.assert_allclose(qs.mean(), 0.9, atol=0.01)
        on = xs[qs == 1]
        np.testing.assert_allclose(on.mean(), 0.9833 * 19 + 0.9002, atol=0.03)
        np.testing.assert_allclose(on.var(), 0.5, rtol=0.05)

    def test_observation_symbol_follows_mode(self, thermostat):
        rng = np.random.default_rng(1)
        y_x, y_q = sample_observation(thermostat, HybridState(np.array([20.0]), 1), rng)
        assert y_q == 1 and y_x.shape == (1,)
