"""Mixture abstraction: closed forms against brute-force quadrature, structure counts, indicator fit."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from hybrid_safety.errors import ContractViolation
from hybrid_safety.gaussian import box_prob_arrays, gauss
from hybrid_safety.gm import (
    RbfIndicator,
    alpha_term,
    fit_indicator_rbf,
    gamma_g_weight,
    gm_alpha_backup,
    gm_belief_update,
    initial_belief,
    terminal_value,
)

from conftest import random_mode_mixture, random_rbf, scalar_model
from oracles import XS, quad_alpha_term, quad_belief_update, rel_l1

def _two_mode_model():
    return scalar_model(n_modes=2, g=((0.5, -0.3), (0.7, 0.2)),
                        tq=[[[0.6, 0.4], [0.3, 0.7]], [[0.0, 1.0], [0.5, 0.5]]])


def closure_case(n_modes, iq, count, seed=0):
    rng = np.random.default_rng(seed)
    model = _two_mode_model() if n_modes == 2 else scalar_model()
    return model, random_rbf(rng, model, iq), random_mode_mixture(rng, n_modes, count)


class TestClosureCounts:
    @pytest.mark.parametrize("n_modes,iq,L", [(1, 1, 1), (2, 3, 5)])
    def test_belief_update(self, n_modes, iq, L):
        model, rbf, sigma = closure_case(n_modes, iq, L)
        out = gm_belief_update(model, rbf, sigma, 0, ([1.7], 0), cap=None)
        assert out.counts() == [n_modes * iq * L] * n_modes

    @pytest.mark.parametrize("n_modes,iq,M", [(1, 1, 1), (2, 3, 5)])
    def test_alpha_term(self, n_modes, iq, M):
        model, rbf, alpha = closure_case(n_modes, iq, M, seed=1)
        out = alpha_term(model, rbf, alpha, 1 if n_modes == 2 else 0, [[2.1]], [0.5], 0)
        assert out.counts() == [n_modes * iq * M] * n_modes

    def test_capped_update_respects_cap(self):
        model, rbf, sigma = closure_case(2, 3, 5)
        out = gm_belief_update(model, rbf, sigma, 0, ([1.7], 0), cap=4)
        assert max(out.counts()) <= 4


class TestQuadratureEquivalence:
    """Closed forms on scalar one-mode instances against direct integration on a mesh."""

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000), y=st.floats(0.0, 4.0))
    def test_belief_update(self, seed, y):
        rng = np.random.default_rng(seed)
        model = scalar_model(a=rng.uniform(0.6, 1.1), v=rng.uniform(0.1, 0.6), w=rng.uniform(0.1, 0.6))
        rbf = random_rbf(rng, model, 3)
        sigma = random_mode_mixture(rng, 1, 2)
        closed = gm_belief_update(model, rbf, sigma, 0, ([y], 0), cap=None).modes[0].evaluate(XS[:, None])
        assert rel_l1(closed, quad_belief_update(model, rbf, sigma, 0, y)) < 1e-5

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_alpha_term(self, seed):
        rng = np.random.default_rng(seed)
        model = scalar_model(a=rng.uniform(0.6, 1.1), v=rng.uniform(0.1, 0.6), w=rng.uniform(0.1, 0.6))
        rbf = random_rbf(rng, model, 3)
        alpha_next = random_mode_mixture(rng, 1, 3)
        nodes = rng.uniform(0, 4, size=(3, 1))
        cw = rng.uniform(0.05, 0.3, 3)
        closed = alpha_term(model, rbf, alpha_next, 0, nodes, cw, 0).modes[0].evaluate(XS[:, None])
        assert rel_l1(closed, quad_alpha_term(model, rbf, alpha_next, 0, nodes, cw)) < 1e-5


class TestIndicatorFit:
    def test_error_decreases(self, thermostat):
        errs = [fit_indicator_rbf(thermostat, iq).delta_I for iq in (10, 30, 100)]
        assert errs[0] > errs[1] > errs[2] > 0

    def test_fit_is_close_inside_box(self, thermostat):
        rbf = fit_indicator_rbf(thermostat, 30)
        x = np.linspace(18.0, 21.5, 50)[:, None]
        np.testing.assert_allclose(rbf.mixture.evaluate(x, 0), 1.0, atol=0.05)

    def test_invalid_counts(self, thermostat):
        with pytest.raises(ContractViolation):
            fit_indicator_rbf(thermostat, 0)
        with pytest.raises(ContractViolation):
            fit_indicator_rbf(thermostat, 4000)

    def test_json_roundtrip(self, rbf10):
        back = RbfIndicator.from_json(rbf10.to_json(), 2, 1)
        assert back.delta_I == rbf10.delta_I
        np.testing.assert_array_equal(back.mixture.modes[1].weights, rbf10.mixture.modes[1].weights)

    def test_deterministic(self, thermostat, rbf10):
        again = fit_indicator_rbf(thermostat, 10)
        np.testing.assert_array_equal(again.mixture.modes[0].weights, rbf10.mixture.modes[0].weights)


class TestObservationWeights:
    def test_under_approximate_cell_mass(self, thermostat, thermo_obs, gaussian_backend):
        rng = np.random.default_rng(0)
        mesh = gaussian_backend.mesh
        for x in rng.uniform(17.5, 22.0, 40):
            for q in (0, 1):
                total = 0.0
                for w in range(thermo_obs.n_cells):
                    approx = gamma_g_weight(thermostat, thermo_obs, mesh, w, q, [x])
                    exact = (thermo_obs.symbol[w] == q) * box_prob_arrays(
                        thermo_obs.cell_lo[w], thermo_obs.cell_hi[w], np.array([x]), thermostat.W)
                    # constraints hold exactly at the LP probes; allow slack between probes
                    assert approx <= exact + 1e-6
                    total += approx
                assert total > 0.97


class TestBackend:
    def test_terminal_value_of_initial_belief(self, thermostat, rbf10):
        sigma = initial_belief(thermostat)
        xs = np.linspace(10, 30, 20001)
        ref = trapezoid(rbf10.mixture.evaluate(xs[:, None], 0) * gauss(xs[:, None], np.array([18.0]), np.eye(1)), xs)
        np.testing.assert_allclose(terminal_value(rbf10, sigma), ref, rtol=1e-8)

    def test_normalized_update(self, gaussian_backend):
        rng = np.random.default_rng(5)
        s = gaussian_backend.initial_belief(np.array([19.0]))
        for _ in range(3):
            y = gaussian_backend.sample_observation(s, 1, rng)
            s, lik = gaussian_backend.update(s, 1, y)
            s = gaussian_backend.normalized(s)
            np.testing.assert_allclose(s.total_weights().sum(), 1.0, atol=1e-9)
            assert max(s.counts()) <= gaussian_backend.cap

    def test_backup_reports_its_value(self, thermostat, gaussian_backend):
        sigma = gaussian_backend.initial_belief(np.array([19.0]))
        alpha, value = gaussian_backend.backup([gaussian_backend.terminal_alpha()], sigma)
        np.testing.assert_allclose(value, gaussian_backend.value(alpha, sigma))
        assert 0.0 < value < 1.0
        assert alpha.sup >= np.max(alpha.mixture.evaluate(np.array([[19.0]]), 0))

    def test_empty_gamma_rejected(self, thermostat, thermo_obs, gaussian_backend):
        with pytest.raises(ContractViolation):
            gm_alpha_backup(thermostat, gaussian_backend.rbf, thermo_obs, gaussian_backend.mesh, [],
                            gaussian_backend.initial_belief(None))
