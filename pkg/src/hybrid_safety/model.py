"""Partially observable switched-affine stochastic hybrid systems.

The hybrid state is ``s = (x, q)`` with continuous part ``x`` in R^m and mode
``q`` in {0, ..., N_q - 1}. One step under input index ``u``:

* the mode jumps, ``q' ~ Tq[u, q, :]`` (optionally depending on ``x`` for the
  finite pipeline),
* the continuous state moves, ``x' = A[q'] x + g[q', u] + v`` with ``v ~ N(0, V)``,
* the hybrid observation is ``(y^x, y^q)`` with ``y^x = C[q'] x' + w``,
  ``w ~ N(0, W)`` and ``y^q ~ Yq[q', :]``.

Models are immutable once built and validate every structural invariant at
construction time.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigError, ContractViolation
from .gaussian import gauss, gauss_peak

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class HybridState:
    """A hybrid state ``(x, q)``."""

    x: np.ndarray
    q: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "q", int(self.q))
        if self.q < 0:
            raise ContractViolation("mode index must be nonnegative")


@dataclass(frozen=True)
class LipschitzConstants:
    """Lipschitz constants of the Gaussian kernels and their peak densities."""

    h_x1: float
    h_x2: float
    h_y1: float
    h_y2: float
    h_q: float
    phi_v_star: float
    phi_w_star: float

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def _check_spd(name: str, M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(name, f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(name, "contains non-finite entries")
    if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
        raise ConfigError(name, "is not symmetric")
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise ConfigError(name, "is not positive definite")


def _check_stochastic(name: str, table: np.ndarray) -> None:
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        idx = tuple(int(i) for i in np.argwhere(~(table >= 0))[0])
        raise ConfigError(f"{name}{list(idx)}", "entries must be finite and nonnegative")
    sums = table.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        idx = [int(i) for i in bad[0]]
        raise ConfigError(f"{name}{idx}", f"row sums to {sums[tuple(idx)]!r}, expected 1")


@dataclass(frozen=True, eq=False)
class PodtshsModel:
    """Switched-affine PODTSHS with per-mode box safe sets.

    Array shapes (``Nq`` modes, ``m`` state dims, ``l`` observation dims,
    ``nU`` inputs, ``nY`` discrete observation symbols):

    ============  ======================
    ``A``         ``(Nq, m, m)``
    ``g``         ``(Nq, nU, m)``, indexed ``g[q', u]``
    ``V``         ``(m, m)``
    ``C``         ``(Nq, l, m)``
    ``W``         ``(l, l)``
    ``Tq``        ``(nU, Nq, Nq)``, indexed ``Tq[u, q, q']``
    ``Yq``        ``(Nq, nY)``, indexed ``Yq[q, y^q]``
    ``safe_lo``   ``(Nq, m)``
    ``safe_hi``   ``(Nq, m)``
    ``Rq``        ``(Nq,)``
    ``mu0``       ``(m,)``
    ``P0``        ``(m, m)``
    ============  ======================

    ``tq_fn`` optionally overrides ``Tq`` with an ``x``-dependent kernel
    ``tq_fn(q, x, u) -> (Nq,)`` probabilities; only the finite pipeline
    accepts such models, and ``h_q`` must then bound its Lipschitz constant.
    """

    A: np.ndarray
    g: np.ndarray
    V: np.ndarray
    C: np.ndarray
    W: np.ndarray
    Tq: np.ndarray
    Yq: np.ndarray
    safe_lo: np.ndarray
    safe_hi: np.ndarray
    Rq: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray
    horizon: int
    inputs: tuple = ()
    tq_fn: Optional[Callable[[int, np.ndarray, int], np.ndarray]] = None
    h_q: float = 0.0
    name: str = "model"

    def __post_init__(self):
        conv = {k: np.asarray(getattr(self, k), dtype=float) for k in (
            "A", "g", "V", "C", "W", "Tq", "Yq", "safe_lo", "safe_hi", "Rq", "mu0", "P0")}
        conv["mu0"] = np.atleast_1d(conv["mu0"])
        for k in ("V", "W", "P0"):
            conv[k] = np.atleast_2d(conv[k])
        for k, v in conv.items():
            object.__setattr__(self, k, v)
        if not self.inputs:
            object.__setattr__(self, "inputs", tuple(range(self.Tq.shape[0])))
        else:
            object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "horizon", int(self.horizon))
        self._validate()
        for v in conv.values():
            v.setflags(write=False)

    # ------------------------------------------------------------ validation

    def _validate(self) -> None:
        if self.A.ndim != 3 or self.A.shape[1] != self.A.shape[2]:
            raise ConfigError("A", f"expected shape (Nq, m, m), got {self.A.shape}")
        Nq, m = self.A.shape[0], self.A.shape[1]
        nU = len(self.inputs)
        if Nq < 1 or m < 1:
            raise ConfigError("A", "needs at least one mode and one dimension")
        if self.g.shape != (Nq, nU, m):
            raise ConfigError("g", f"expected shape {(Nq, nU, m)}, got {self.g.shape}")
        _check_spd("V", self.V)
        if self.V.shape != (m, m):
            raise ConfigError("V", f"expected shape {(m, m)}")
        if self.C.ndim != 3 or self.C.shape[0] != Nq or self.C.shape[2] != m:
            raise ConfigError("C", f"expected shape (Nq, l, m), got {self.C.shape}")
        l = self.C.shape[1]
        if l > m or l < 1:
            raise ConfigError("C", "observation dimension l must satisfy 1 <= l <= m")
        _check_spd("W", self.W)
        if self.W.shape != (l, l):
            raise ConfigError("W", f"expected shape {(l, l)}")
        if self.Tq.shape != (nU, Nq, Nq):
            raise ConfigError("Tq", f"expected shape {(nU, Nq, Nq)}, got {self.Tq.shape}")
        _check_stochastic("Tq", self.Tq)
        if self.Yq.ndim != 2 or self.Yq.shape[0] != Nq:
            raise ConfigError("Yq", f"expected shape (Nq, nY), got {self.Yq.shape}")
        _check_stochastic("Yq", self.Yq)
        for name, box in (("safe_set.lo", self.safe_lo), ("safe_set.hi", self.safe_hi)):
            if box.shape != (Nq, m) or not np.all(np.isfinite(box)):
                raise ConfigError(name, f"expected finite shape {(Nq, m)}, got {box.shape}")
        bad = np.argwhere(self.safe_hi <= self.safe_lo)
        if bad.size:
            raise ConfigError(f"safe_set[{bad[0][0]}]", "box must be nonempty (lo < hi on every axis)")
        if self.Rq.shape != (Nq,):
            raise ConfigError("rho.Rq", f"expected shape {(Nq,)}")
        _check_stochastic("rho.Rq", self.Rq[None, :])
        if self.mu0.shape != (m,):
            raise ConfigError("rho.mu0", f"expected shape {(m,)}")
        _check_spd("rho.P0", self.P0)
        if self.P0.shape != (m, m):
            raise ConfigError("rho.P0", f"expected shape {(m, m)}")
        if self.horizon < 0:
            raise ConfigError("horizon", "must be >= 0")
        if self.h_q < 0:
            raise ConfigError("h_q", "must be >= 0")

    def check_gaussian_pipeline(self) -> None:
        """Raise unless A(q), C(q) are invertible and Tq does not depend on x."""
        for q in range(self.n_modes):
            if abs(np.linalg.det(self.A[q])) < 1e-10:
                raise ContractViolation(f"A[{q}] is singular; the Gaussian pipeline needs invertible A")
            if self.C.shape[1] != self.C.shape[2] or abs(np.linalg.det(self.C[q])) < 1e-10:
                raise ContractViolation(f"C[{q}] is not invertible; the Gaussian pipeline needs invertible C")
        if self.tq_fn is not None:
            raise ContractViolation("the Gaussian pipeline needs a mode kernel independent of x")

    # ------------------------------------------------------------ properties

    @property
    def n_modes(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.C.shape[1]

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def n_obs_symbols(self) -> int:
        return self.Yq.shape[1]

    def safe_volume(self) -> np.ndarray:
        """Lebesgue measure of each K_q."""
        return np.prod(self.safe_hi - self.safe_lo, axis=1)

    def in_safe_set(self, x, q: int) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self.safe_lo[q]) and np.all(x <= self.safe_hi[q]))

    def mode_kernel(self, q: int, x, u: int) -> np.ndarray:
        """Probabilities over q' for the jump from ``(x, q)`` under input ``u``."""
        if self.tq_fn is not None:
            p = np.asarray(self.tq_fn(q, np.asarray(x, float), u), dtype=float)
            if p.shape != (self.n_modes,) or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
                raise ContractViolation("tq_fn must return a probability vector over modes")
            return p
        return self.Tq[u, q]

    def mean_next(self, x, q_next: int, u: int) -> np.ndarray:
        return self.A[q_next] @ np.asarray(x, float) + self.g[q_next, u]

    def with_initial(self, mu0=None, P0=None, Rq=None, horizon=None) -> "PodtshsModel":
        """Copy of the model with a different initial distribution or horizon."""
        kw = self.to_arrays()
        if mu0 is not None:
            kw["mu0"] = np.atleast_1d(np.asarray(mu0, float))
        if P0 is not None:
            kw["P0"] = np.atleast_2d(np.asarray(P0, float))
        if Rq is not None:
            kw["Rq"] = np.asarray(Rq, float)
        if horizon is not None:
            kw["horizon"] = int(horizon)
        return PodtshsModel(**kw)

    def to_arrays(self) -> dict:
        return dict(
            A=self.A, g=self.g, V=self.V, C=self.C, W=self.W, Tq=self.Tq, Yq=self.Yq,
            safe_lo=self.safe_lo, safe_hi=self.safe_hi, Rq=self.Rq, mu0=self.mu0, P0=self.P0,
            horizon=self.horizon, inputs=self.inputs, tq_fn=self.tq_fn, h_q=self.h_q, name=self.name,
        )

    # ---------------------------------------------------------- serialization

    def to_json(self) -> dict:
        if self.tq_fn is not None:
            raise ContractViolation("models with an x-dependent mode kernel cannot be serialized")
        Nq = self.n_modes
        return {
            "schema": "hybrid_safety.model/1",
            "name": self.name,
            "inputs": list(self.inputs),
            "A": self.A.tolist(),
            "g": self.g.tolist(),
            "V": self.V.tolist(),
            "C": self.C.tolist(),
            "W": self.W.tolist(),
            "Tq": self.Tq.tolist(),
            "Yq": self.Yq.tolist(),
            "safe_set": [[[float(a), float(b)] for a, b in zip(self.safe_lo[q], self.safe_hi[q])] for q in range(Nq)],
            "rho": {"Rq": self.Rq.tolist(), "mu0": self.mu0.tolist(), "P0": self.P0.tolist()},
            "horizon": self.horizon,
            "h_q": self.h_q,
        }

    def content_hash(self) -> str:
        """Stable SHA-256 of the serialized model (hex, first 16 chars)."""
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _field(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(key, "missing field")
    return doc[key]


def _as_array(path: str, value, ndim: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"not a numeric array ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(path, f"expected {ndim}-d array, got {arr.ndim}-d")
    return arr


def model_from_dict(doc: dict[str, Any]) -> PodtshsModel:
    """Build and validate a model from a JSON-style document."""
    safe = _field(doc, "safe_set")
    if not isinstance(safe, list) or not safe:
        raise ConfigError("safe_set", "expected a non-empty list of per-mode boxes")
    lo, hi = [], []
    for q, box in enumerate(safe):
        b = _as_array(f"safe_set[{q}]", box, 2)
        if b.shape[1] != 2:
            raise ConfigError(f"safe_set[{q}]", "each axis must be given as [lo, hi]")
        lo.append(b[:, 0])
        hi.append(b[:, 1])
    rho = _field(doc, "rho")
    for key in ("Rq", "mu0", "P0"):
        if key not in rho:
            raise ConfigError(f"rho.{key}", "missing field")
    return PodtshsModel(
        A=_as_array("A", _field(doc, "A"), 3),
        g=_as_array("g", _field(doc, "g"), 3),
        V=_as_array("V", _field(doc, "V"), 2),
        C=_as_array("C", _field(doc, "C"), 3),
        W=_as_array("W", _field(doc, "W"), 2),
        Tq=_as_array("Tq", _field(doc, "Tq"), 3),
        Yq=_as_array("Yq", _field(doc, "Yq"), 2),
        safe_lo=np.array(lo),
        safe_hi=np.array(hi),
        Rq=_as_array("rho.Rq", rho["Rq"], 1),
        mu0=_as_array("rho.mu0", rho["mu0"], 1),
        P0=_as_array("rho.P0", rho["P0"], 2),
        horizon=int(_field(doc, "horizon")),
        inputs=tuple(doc.get("inputs", ())),
        h_q=float(doc.get("h_q", 0.0)),
        name=str(doc.get("name", "model")),
    )


def load_model(path) -> PodtshsModel:
    """Load a model config from a JSON file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    return model_from_dict(doc)


def thermostat_config_path() -> Path:
    return Path(__file__).with_name("data") / "thermostat.json"


def thermostat_model(**overrides) -> PodtshsModel:
    """The bundled room-heater benchmark (see ``data/thermostat.json``)."""
    model = load_model(thermostat_config_path())
    if overrides:
        model = model.with_initial(**overrides)
    return model


# ------------------------------------------------------------------ densities


def _check_dim(name: str, v: np.ndarray, n: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape[-1] != n:
        raise ContractViolation(f"{name} has dimension {v.shape[-1]}, expected {n}")
    return v


def _check_mode(model: PodtshsModel, q: int) -> int:
    if not 0 <= int(q) < model.n_modes:
        raise ContractViolation(f"mode {q} out of range [0, {model.n_modes})")
    return int(q)


def _check_input(model: PodtshsModel, u: int) -> int:
    if not 0 <= int(u) < model.n_inputs:
        raise ContractViolation(f"input index {u} out of range [0, {model.n_inputs})")
    return int(u)


def continuous_transition_density(model: PodtshsModel, x_next, q_next: int, x, u: int) -> float:
    """phi(x'; A(q') x + g(q', u), V)."""
    x_next = _check_dim("x_next", x_next, model.dim)
    x = _check_dim("x", x, model.dim)
    q_next = _check_mode(model, q_next)
    u = _check_input(model, u)
    return float(gauss(x_next, model.mean_next(x, q_next, u), model.V))


def observation_density(model: PodtshsModel, y_x, y_q: int, x, q: int) -> float:
    """phi(y^x; C(q) x, W) * Yq(y^q | q)."""
    y_x = _check_dim("y_x", y_x, model.obs_dim)
    x = _check_dim("x", x, model.dim)
    q = _check_mode(model, q)
    if not 0 <= int(y_q) < model.n_obs_symbols:
        raise ContractViolation(f"unknown discrete observation symbol {y_q}")
    p = model.Yq[q, int(y_q)]
    if p == 0.0:
        return 0.0
    return float(gauss(y_x, model.C[q] @ x, model.W) * p)


def _deriv_peak(cov: np.ndarray) -> float:
    # max over z of |d/dz phi(z; 0, cov)| bound: e^{-1/2} / ((2 pi)^{k/2} |cov|^{1/2} sqrt(lam))
    k = cov.shape[0]
    lam = float(np.min(np.linalg.eigvalsh(cov)))
    return math.exp(-0.5) / ((2 * math.pi) ** (k / 2) * math.sqrt(np.linalg.det(cov)) * math.sqrt(lam))


def compute_lipschitz_constants(model: PodtshsModel) -> LipschitzConstants:
    """Lipschitz constants of the transition and observation kernels.

    ``h_x2``/``h_y2`` bound the variation in the conditioning state (scaled by
    the spectral norms of ``A``/``C``), ``h_x1``/``h_y1`` the variation in the
    density argument. The derivative peak uses the smallest covariance
    eigenvalue, which reduces to the usual scalar formula and stays an upper
    bound for anisotropic covariances.
    """
    for name, cov in (("V", model.V), ("W", model.W)):
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise ContractViolation(f"{name} is singular")
    dv = _deriv_peak(model.V)
    dw = _deriv_peak(model.W)
    normA = max(np.linalg.norm(model.A[q], 2) for q in range(model.n_modes))
    normC = max(np.linalg.norm(model.C[q], 2) for q in range(model.n_modes))
    return LipschitzConstants(
        h_x1=dv,
        h_x2=normA * dv,
        h_y1=dw,
        h_y2=normC * dw,
        h_q=float(model.h_q) if model.tq_fn is not None else 0.0,
        phi_v_star=float(gauss_peak(model.V)),
        phi_w_star=float(gauss_peak(model.W)),
    )


# -------------------------------------------------------------------- sampling


def sample_initial(model: PodtshsModel, rng: np.random.Generator) -> HybridState:
    q = int(rng.choice(model.n_modes, p=model.Rq))
    x = rng.multivariate_normal(model.mu0, model.P0)
    return HybridState(x, q)


def sample_transition(model: PodtshsModel, s: HybridState, u: int, rng: np.random.Generator) -> HybridState:
    p = model.mode_kernel(s.q, s.x, u)
    q_next = int(rng.choice(model.n_modes, p=p))
    x_next = model.mean_next(s.x, q_next, u) + rng.multivariate_normal(np.zeros(model.dim), model.V)
    return HybridState(x_next, q_next)


def sample_observation(model: PodtshsModel, s: HybridState, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    y_q = int(rng.choice(model.n_obs_symbols, p=model.Yq[s.q]))
    y_x = model.C[s.q] @ s.x + rng.multivariate_normal(np.zeros(model.obs_dim), model.W)
    return y_x, y_q
