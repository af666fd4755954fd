"""Error-bound constants and plug-in bound formulas.

All formulas are evaluated exactly as stated, so several of them are vacuous
(larger than one) at practical grid sizes; they are still reported because
their trend in the grid parameters is informative. Constants that depend on
realized observation likelihoods are only available for a concrete run and
are labeled "run-conditional".
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import LipschitzConstants, PodtshsModel, compute_lipschitz_constants


@dataclass(frozen=True)
class BoundConstants:
    n_modes: int
    lam: float
    lam_bar: float
    beta1_y: Optional[float]
    beta2_y: float
    beta1_x: Optional[float]
    beta2_x: float
    lip: LipschitzConstants
    lam_max_W: float
    lam_max_V: float

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "lip"}
        d.update(self.lip.as_dict())
        return d


def beta1(edges: np.ndarray, M: np.ndarray, lam_max: float) -> float:
    """Measure of the box image of a cell under ``M``, grown by ``sqrt(lam_max)`` on every side.

    ``edges`` holds cell edge lengths, shape ``(n_cells, m)``. The image of a
    box under ``M`` fits in a box with edges ``|M| @ edges``; the result is the
    largest product of ``(edge + 2 sqrt(lam_max))`` over cells.
    """
    edges = np.atleast_2d(edges)
    img = edges @ np.abs(M).T
    return float(np.max(np.prod(img + 2.0 * math.sqrt(lam_max), axis=1)))


def compute_constants(model: PodtshsModel, grid=None, obs=None) -> BoundConstants:
    """Constants for the bound formulas.

    ``grid`` (a finite-abstraction state grid) is needed for the β1 constants;
    ``obs`` (the observation grid) for the largest observation-box measure.
    """
    lip = compute_lipschitz_constants(model)
    lam_W = float(np.max(np.linalg.eigvalsh(model.W)))
    lam_V = float(np.max(np.linalg.eigvalsh(model.V)))
    normC = max(np.linalg.norm(model.C[q], 2) for q in range(model.n_modes))
    normA = max(np.linalg.norm(model.A[q], 2) for q in range(model.n_modes))
    b1y = b1x = None
    if grid is not None:
        edges = grid.cell_hi - grid.cell_lo
        b1y = max(beta1(edges[grid.mode == q], model.C[q], lam_W) for q in range(model.n_modes))
        b1x = max(beta1(edges[grid.mode == q], model.A[qn], lam_V)
                  for q in range(model.n_modes) for qn in range(model.n_modes))
    lam_bar = float(np.max(obs.box_volumes())) if obs is not None else float("nan")
    return BoundConstants(
        n_modes=model.n_modes,
        lam=float(np.max(model.safe_volume())),
        lam_bar=lam_bar,
        beta1_y=b1y,
        beta2_y=float(lip.phi_w_star * normC),
        beta1_x=b1x,
        beta2_x=float(lip.phi_v_star * normA),
        lip=lip,
        lam_max_W=lam_W,
        lam_max_V=lam_V,
    )


def _per_step(c: BoundConstants) -> float:
    return c.beta1_y * c.lip.h_y2 + c.beta1_x * c.lip.h_x2 + c.beta2_y + c.beta2_x


def grid_abstraction_bound(c: BoundConstants, delta_x: float, N: int) -> float:
    """``N_q N (β1^y h_y2 + β1^x h_x2 + β2^y + β2^x) δ^x``."""
    if c.beta1_y is None:
        raise ValueError("grid_abstraction_bound needs constants computed with a state grid")
    return c.n_modes * N * _per_step(c) * delta_x


def eta_sigma_trace(c: BoundConstants, likelihoods: Sequence[float]) -> np.ndarray:
    """``η_n^σ`` for ``n = 0 .. len(likelihoods)`` along one realized trajectory.

    ``likelihoods[i]`` is the realized ``p(y_{i+1} | σ_i, u_i)``; only the
    abstract filter's likelihood is available, so it stands in for the
    minimum over the exact and abstract filters.
    """
    lip = c.lip
    inv = np.array([1.0 / p if p > 0 else np.inf for p in likelihoods])
    k1 = lip.phi_v_star * lip.h_y2 + lip.phi_w_star * lip.h_x2 + lip.phi_w_star * lip.phi_v_star * lip.h_q
    k2 = lip.phi_w_star * c.n_modes * c.lam
    c1 = inv * k1
    c2 = inv * k2
    eta = np.zeros(len(inv) + 1)
    for n in range(1, len(inv) + 1):
        eta[n] = sum(c1[i] * np.prod(c2[i + 1:n]) for i in range(n))
    return eta


def value_gap_addends(c: BoundConstants, eta_sigma_n: float, n: int, N: int) -> tuple[float, float]:
    """The two addends of ``η_n^α = N_q λ η_n^σ + (N - n) N_q (β1^y h_y2 + β1^x h_x2 + β2^y + β2^x)``."""
    return c.n_modes * c.lam * eta_sigma_n, (N - n) * c.n_modes * _per_step(c)


def gamma_sigma(phi_w_star: float, phi_sigma: Sequence[float], n: int) -> float:
    """``γ_n^σ = sum_{j<n} (φ*_w)^{j+1} φ*_{σ,j}``."""
    return float(sum(phi_w_star ** (j + 1) * phi_sigma[j] for j in range(n)))


def mixture_abstraction_bound(c: BoundConstants, delta_I: float, alpha_bar: Sequence[float],
                   phi_sigma: Sequence[float], N: int) -> dict:
    """Gaussian-mixture abstraction error at ``n = 0``.

    ``alpha_bar[n]`` estimates ``max ||α_n||_inf`` for ``n = 0 .. N`` (index
    ``N + 1`` is taken as 1) and ``phi_sigma[j]`` is the largest component
    peak density of the information states at level ``j``. Returns the
    value-function bound and, separately, the literal safety-probability
    statement ``γ_0^σ δ^I`` (always zero since the sum is empty).
    """
    a = list(alpha_bar) + [1.0]
    lp = c.lam * c.lip.phi_v_star
    tail = sum(lp ** (N - k) * a[N - k + 1] for k in range(1, N + 1))
    g0 = gamma_sigma(c.lip.phi_w_star, phi_sigma, 0)
    value = tail * phi_sigma[0] * c.n_modes * delta_I + a[0] * g0 * c.n_modes * delta_I
    return {"value_bound": float(value), "literal_gamma0_delta_I": float(g0 * delta_I)}


def observation_bound(c: BoundConstants, delta_y: float, epsilon: float, N: int,
                      backend: str, alpha_bar: Optional[Sequence[float]] = None) -> float:
    """Discretized-observation error at ``n = 0``.

    ``finite``: ``N N_q λ̄ h_y1 δ^y + ε``;
    ``gaussian``: ``N_q λ̄ h_y1 (sum_{i=1..N} ᾱ_i) δ^y + ε``.
    """
    base = c.n_modes * c.lam_bar * c.lip.h_y1 * delta_y
    if backend == "finite":
        return N * base + epsilon
    if backend == "gaussian":
        if alpha_bar is None:
            raise ValueError("the Gaussian observation bound needs the ᾱ sequence")
        return base * float(sum(alpha_bar[1:N + 1])) + epsilon
    raise ValueError(f"unknown backend {backend!r}")


def pbvi_bound(delta_sigma_proxy: float, N: int) -> float:
    """``N δ^σ`` evaluated with an empirical δ^σ (a proxy, not a certificate)."""
    return N * delta_sigma_proxy


@dataclass
class BoundReport:
    backend: str
    value: float
    delta_x: Optional[float]
    delta_y: float
    delta_I: Optional[float]
    epsilon: float
    delta_sigma_proxy: Optional[float]
    alpha_bar: list
    constants: dict
    abstraction_bound: float
    abstraction_label: str
    observation_bound: float
    pbvi_proxy_bound: Optional[float]
    run_conditional: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        """Heuristic sum of every component (not itself a proven bound)."""
        return self.abstraction_bound + self.observation_bound + (self.pbvi_proxy_bound or 0.0)

    @property
    def interval(self) -> tuple[float, float]:
        return self.value, self.value + self.total

    def to_json(self) -> dict:
        d = asdict(self)
        d["schema"] = "hybrid_safety.bounds/1"
        d["heuristic_total"] = self.total
        d["interval"] = list(self.interval)
        return json.loads(json.dumps(d, default=_jsonable))

    def table(self) -> str:
        rows = [
            ("backend", self.backend),
            ("reported value", f"{self.value:.6f}"),
            (f"abstraction bound ({self.abstraction_label})", f"{self.abstraction_bound:.6g}"),
            ("observation bound", f"{self.observation_bound:.6g}"),
            ("PBVI bound (proxy)", "n/a" if self.pbvi_proxy_bound is None else f"{self.pbvi_proxy_bound:.6g}"),
            ("heuristic total", f"{self.total:.6g}"),
            ("interval", f"[{self.interval[0]:.6f}, {self.interval[1]:.6g}]"),
        ]
        for k, v in self.run_conditional.items():
            rows.append((f"run-conditional {k}", f"{v:.6g}" if isinstance(v, float) else str(v)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ------------------------------------------------------------ run assembly


def alpha_bar_sequence(policy) -> list[float]:
    """``ᾱ_n`` for ``n = 0 .. N``: largest sup-norm estimate over each level of the policy."""
    out = []
    for level in policy.gammas:
        sups = [a.sup if hasattr(a, "sup") else float(np.max(a.values)) for a in level]
        out.append(float(max(sups)))
    return out


def phi_sigma_sequence(backend, belief_sets) -> list[float]:
    """Largest component peak density of the sampled information states, per level."""
    return [max(backend.peak_density(b) for b in level) for level in belief_sets.levels]


def assemble_report(model, backend, policy, belief_sets, value: float,
                    delta_sigma_proxy: Optional[float] = None) -> BoundReport:
    """Evaluate every applicable bound for a solved run.

    The abstraction bound is the grid bound for the ``finite`` backend and
    the mixture bound for the ``gaussian`` backend; the observation bound is
    chosen the same way.
    """
    N = policy.horizon
    obs = backend.obs
    grid = getattr(backend, "grid", None)
    c = compute_constants(model, grid, obs)
    abar = alpha_bar_sequence(policy)
    run: dict = {}
    extra: dict = {}
    if backend.name == "finite":
        dx = grid.delta_x
        dI = None
        abstraction = grid_abstraction_bound(c, dx, N)
        label = "grid abstraction"
        obs_b = observation_bound(c, obs.delta_y, obs.epsilon, N, "finite")
        etas = [eta_sigma_trace(c, tr) for tr in belief_sets.likelihoods]
        worst = np.max(np.stack(etas), axis=0) if etas else np.zeros(N + 1)
        run["max eta_sigma_N"] = float(worst[-1])
        a1, a2 = value_gap_addends(c, float(worst[0]), 0, N)
        extra["eta_sigma_max_per_step"] = worst.tolist()
        extra["value_gap_addends_n0"] = [a1, a2]
    elif backend.name == "gaussian":
        dx = None
        dI = backend.rbf.delta_I
        phis = phi_sigma_sequence(backend, belief_sets)
        t4 = mixture_abstraction_bound(c, dI, abar, phis, N)
        abstraction = t4["value_bound"]
        label = "mixture abstraction"
        obs_b = observation_bound(c, obs.delta_y, obs.epsilon, N, "gaussian", abar)
        run["max phi_sigma_0"] = float(phis[0])
        run["gamma_sigma_N"] = gamma_sigma(c.lip.phi_w_star, phis, N)
        extra["phi_sigma_per_level"] = phis
        extra["literal_gamma0_delta_I"] = t4["literal_gamma0_delta_I"]
    else:
        raise ValueError(f"no bound formulas for backend {backend.name!r}")
    return BoundReport(
        backend=backend.name,
        value=float(value),
        delta_x=dx,
        delta_y=obs.delta_y,
        delta_I=dI,
        epsilon=obs.epsilon,
        delta_sigma_proxy=delta_sigma_proxy,
        alpha_bar=abar,
        constants=c.as_dict(),
        abstraction_bound=float(abstraction),
        abstraction_label=label,
        observation_bound=float(obs_b),
        pbvi_proxy_bound=None if delta_sigma_proxy is None else pbvi_bound(delta_sigma_proxy, N),
        run_conditional=run,
        extra=extra,
    )
