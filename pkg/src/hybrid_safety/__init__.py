"""Safety probabilities and safe controllers for partially observable
switched-affine stochastic hybrid systems."""

from .errors import ConfigError, ContractViolation, DegenerateObservationError
from .model import HybridState, LipschitzConstants, PodtshsModel, load_model, thermostat_model

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DegenerateObservationError",
    "HybridState",
    "LipschitzConstants",
    "PodtshsModel",
    "load_model",
    "thermostat_model",
]

__version__ = "0.1.0"
