import numpy as np
import pytest

from hybrid_safety import thermostat_model
from hybrid_safety.finite import FiniteBackend
from hybrid_safety.gaussian import Mixture, ModeMixture
from hybrid_safety.gm import GaussianBackend, RbfIndicator, fit_indicator_rbf
from hybrid_safety.model import model_from_dict
from hybrid_safety.pbvi import build_obs_grid


def scalar_model(a=0.9, g=((0.5,),), v=0.3, c=1.0, w=0.2, lo=0.0, hi=4.0, n_modes=1,
                 tq=None, horizon=2, mu0=2.0, p0=0.5):
    """Small scalar model document; ``g`` is indexed ``[q'][u]``."""
    n_inputs = len(g[0])
    if tq is None:
        tq = [np.eye(n_modes).tolist() for _ in range(n_inputs)]
    rq = [1.0] + [0.0] * (n_modes - 1)
    doc = {
        "A": [[[a]] for _ in range(n_modes)],
        "g": [[[gu] if np.isscalar(gu) else list(gu) for gu in gq] for gq in g],
        "V": [[v]],
        "C": [[[c]] for _ in range(n_modes)],
        "W": [[w]],
        "Tq": tq,
        "Yq": np.eye(n_modes).tolist(),
        "safe_set": [[[lo, hi]] for _ in range(n_modes)],
        "rho": {"Rq": rq, "mu0": [mu0], "P0": [[p0]]},
        "horizon": horizon,
    }
    return model_from_dict(doc)


def random_rbf(rng, model, iq):
    """Unfitted indicator mixture with ``iq`` positive components per mode."""
    modes = []
    for q in range(model.n_modes):
        lo, hi = model.safe_lo[q, 0], model.safe_hi[q, 0]
        means = rng.uniform(lo, hi, size=(iq, 1))
        covs = rng.uniform(0.1, 0.6, size=(iq, 1, 1))
        modes.append(Mixture(rng.uniform(0.2, 1.0, iq), means, covs))
    return RbfIndicator(ModeMixture(tuple(modes)), 0.0, (iq,) * model.n_modes, 1.0)


def random_mode_mixture(rng, n_modes, count, lo=0.0, hi=4.0):
    modes = []
    for _ in range(n_modes):
        modes.append(Mixture(rng.uniform(0.1, 1.0, count), rng.uniform(lo, hi, size=(count, 1)),
                             rng.uniform(0.1, 0.8, size=(count, 1, 1))))
    return ModeMixture(tuple(modes))


@pytest.fixture(scope="session")
def thermostat():
    return thermostat_model()


@pytest.fixture(scope="session")
def thermo_obs(thermostat):
    return build_obs_grid(thermostat, 0.5, box=[16, 24])


@pytest.fixture(scope="session")
def finite_backend(thermostat, thermo_obs):
    return FiniteBackend(thermostat, 0.1, thermo_obs)


@pytest.fixture(scope="session")
def rbf10(thermostat):
    return fit_indicator_rbf(thermostat, 10)


@pytest.fixture(scope="session")
def gaussian_backend(thermostat, thermo_obs, rbf10):
    return GaussianBackend(thermostat, rbf10, thermo_obs, cap=10)
