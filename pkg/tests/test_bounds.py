import json
import math

import numpy as np
import pytest

from hybrid_safety import bounds as B
from hybrid_safety.finite import build_state_grid
from hybrid_safety.pbvi import sample_belief_sets, solve


@pytest.fixture(scope="module")
def thermo_constants(thermostat, thermo_obs, finite_backend):
    return B.compute_constants(thermostat, finite_backend.grid, thermo_obs)


class TestConstants:
    def test_beta1_scalar_example(self):
        assert B.beta1(np.array([[0.1]]), np.array([[1.0]]), 1.0) == pytest.approx(2.1)

    def test_beta1_degenerate_map(self):
        assert B.beta1(np.array([[0.3, 0.2]]), np.zeros((2, 2)), 0.25) == pytest.approx(1.0)  # (2 * 0.5)^2

    def test_thermostat(self, thermo_constants):
        c = thermo_constants
        assert c.lam == pytest.approx(4.5)
        assert c.lam_bar == pytest.approx(8.0)
        assert c.beta1_y == pytest.approx(0.1 + 2 * math.sqrt(0.5))
        assert c.beta1_x == pytest.approx(0.9833 * 0.1 + 2 * math.sqrt(0.5))
        assert c.beta2_y == pytest.approx(c.lip.phi_w_star * 1.0)
        assert c.beta2_x == pytest.approx(c.lip.phi_v_star * 0.9833)
        assert all(v >= 0 for v in c.as_dict().values() if isinstance(v, float))


class TestGridBound:
    def test_zero_and_linear(self, thermo_constants):
        assert B.grid_abstraction_bound(thermo_constants, 0.0, 5) == 0.0
        assert B.grid_abstraction_bound(thermo_constants, 0.1, 10) == pytest.approx(2 * B.grid_abstraction_bound(thermo_constants, 0.1, 5))

    def test_monotone_in_grid_size(self, thermostat, thermo_obs):
        vals = []
        for dx in (0.05, 0.1, 0.3):
            c = B.compute_constants(thermostat, build_state_grid(thermostat, dx), thermo_obs)
            vals.append(B.grid_abstraction_bound(c, dx, 5))
        assert vals[0] < vals[1] < vals[2]

    def test_hand_value(self, thermo_constants):
        c = thermo_constants
        per_step = c.beta1_y * c.lip.h_y2 + c.beta1_x * c.lip.h_x2 + c.beta2_y + c.beta2_x
        assert B.grid_abstraction_bound(c, 0.1, 5) == pytest.approx(2 * 5 * per_step * 0.1)


class TestEtaSigma:
    def test_empty_trace(self, thermo_constants):
        np.testing.assert_array_equal(B.eta_sigma_trace(thermo_constants, []), [0.0])

    def test_one_step(self, thermo_constants):
        c = thermo_constants
        eta = B.eta_sigma_trace(c, [0.5])
        # h_q = 0 here, so c1 = 2 (phi_v h_y2 + phi_w h_x2)
        c1 = 2 * (c.lip.phi_v_star * c.lip.h_y2 + c.lip.phi_w_star * c.lip.h_x2)
        np.testing.assert_allclose(eta, [0.0, c1])

    def test_two_steps(self, thermo_constants):
        c = thermo_constants
        eta = B.eta_sigma_trace(c, [0.5, 0.25])
        k1 = c.lip.phi_v_star * c.lip.h_y2 + c.lip.phi_w_star * c.lip.h_x2
        k2 = c.lip.phi_w_star * c.n_modes * c.lam
        np.testing.assert_allclose(eta[2], 2 * k1 * 4 * k2 + 4 * k1)

    def test_value_gap_addends(self, thermo_constants):
        c = thermo_constants
        a1, a2 = B.value_gap_addends(c, 0.3, 1, 5)
        assert a1 == pytest.approx(2 * 4.5 * 0.3)
        assert a2 == pytest.approx(B.grid_abstraction_bound(c, 1.0, 4))


class TestMixtureBound:
    def test_zero_cases(self, thermo_constants):
        assert B.mixture_abstraction_bound(thermo_constants, 0.0, [1] * 6, [0.5] * 6, 5)["value_bound"] == 0.0
        assert B.mixture_abstraction_bound(thermo_constants, 0.1, [1.0], [0.5], 0)["value_bound"] == 0.0

    def test_one_step_hand_value(self, thermo_constants):
        c = thermo_constants
        out = B.mixture_abstraction_bound(c, 0.2, [0.9, 1.1], [0.4, 0.7], 1)
        # k = 1 only: (λ φ_v)^0 ᾱ_1 φ_σ0 N_q δ^I
        assert out["value_bound"] == pytest.approx(1.1 * 0.4 * 2 * 0.2)
        assert out["literal_gamma0_delta_I"] == 0.0

    def test_gamma_sigma(self):
        assert B.gamma_sigma(0.5, [2.0, 4.0], 2) == pytest.approx(0.5 * 2 + 0.25 * 4)
        assert B.gamma_sigma(0.5, [2.0], 0) == 0.0


class TestObservationBound:
    def test_zero(self, thermo_constants):
        assert B.observation_bound(thermo_constants, 0.0, 0.0, 5, "finite") == 0.0

    def test_gaussian_reduces_to_finite(self, thermo_constants):
        f = B.observation_bound(thermo_constants, 0.5, 0.01, 5, "finite")
        g = B.observation_bound(thermo_constants, 0.5, 0.01, 5, "gaussian", [1.0] * 6)
        assert f == pytest.approx(g)

    def test_linear_in_horizon(self, thermo_constants):
        one = B.observation_bound(thermo_constants, 0.5, 0.0, 1, "finite")
        assert B.observation_bound(thermo_constants, 0.5, 0.0, 5, "finite") == pytest.approx(5 * one)

    def test_monotone_in_delta_y_and_epsilon(self, thermo_constants):
        f = lambda dy, e: B.observation_bound(thermo_constants, dy, e, 5, "finite")
        assert f(0.25, 0.01) < f(0.5, 0.01) < f(0.5, 0.02)


class TestPbviBound:
    def test_examples(self):
        assert B.pbvi_bound(0.0, 5) == 0.0
        assert B.pbvi_bound(0.3, 0) == 0.0
        assert B.pbvi_bound(0.01, 5) == pytest.approx(0.05)


class TestReport:
    def test_finite_report(self, thermostat, finite_backend):
        beliefs = sample_belief_sets(thermostat, finite_backend, 10, 0)
        res = solve(thermostat, finite_backend, beliefs)
        rep = B.assemble_report(thermostat, finite_backend, res.policy, beliefs, res.value, 0.1)
        assert rep.total >= 0
        lo, hi = rep.interval
        assert lo <= hi
        assert rep.pbvi_proxy_bound == pytest.approx(0.5)
        doc = rep.to_json()
        json.dumps(doc)
        assert doc["schema"] == "hybrid_safety.bounds/1"
        assert len(doc["extra"]["value_gap_addends_n0"]) == 2
        assert "heuristic total" in rep.table()
        assert rep.run_conditional["max eta_sigma_N"] > 0

    def test_gaussian_report(self, thermostat, gaussian_backend):
        beliefs = sample_belief_sets(thermostat.with_initial(horizon=1), gaussian_backend, 2, 0)
        res = solve(thermostat, gaussian_backend, beliefs)
        rep = B.assemble_report(thermostat, gaussian_backend, res.policy, beliefs, res.value)
        assert rep.delta_I == gaussian_backend.rbf.delta_I
        assert rep.abstraction_bound > 0
        assert rep.pbvi_proxy_bound is None
        assert len(rep.alpha_bar) == 2
