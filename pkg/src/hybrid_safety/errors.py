"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an input violates a documented precondition or invariant."""


class ConfigError(ContractViolation):
    """Raised when a configuration document is invalid.

    ``path`` names the offending field, e.g. ``"Tq[1][0]"``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DegenerateObservationError(RuntimeError):
    """Raised when an observation has (numerically) zero likelihood under a belief."""
