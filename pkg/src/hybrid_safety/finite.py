"""Finite-state abstraction of a PODTSHS.

Each safe box ``K_q`` is cut into a uniform grid of cells. Abstract states are
the cells of every mode (indices ``0 .. K-1``) plus one absorbing symbol
``psi_s`` (index ``K``) collecting every unsafe state. Beliefs are probability
vectors over all ``K + 1`` symbols; α-vectors live on the ``K`` safe cells and
are implicitly zero on ``psi_s``.
"""

from __future__ import annotations

import hashlib
import itertools
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DegenerateObservationError
from .gaussian import box_prob_arrays, gauss, interval_prob
from .pbvi import ObsGrid

LIKELIHOOD_FLOOR = 1e-300


@dataclass(frozen=True)
class StateGrid:
    """Uniform partition of every safe box.

    ``cell_lo``/``cell_hi``/``rep`` have shape ``(K, m)`` and ``mode`` gives the
    mode of each cell. ``counts[q]`` is the per-axis cell count of mode ``q``.
    """

    cell_lo: np.ndarray
    cell_hi: np.ndarray
    rep: np.ndarray
    mode: np.ndarray
    counts: np.ndarray  # (Nq, m)
    offsets: np.ndarray  # (Nq,)
    safe_lo: np.ndarray
    safe_hi: np.ndarray
    representative: str

    @property
    def n_cells(self) -> int:
        return self.mode.size

    @property
    def psi_s(self) -> int:
        return self.n_cells

    @property
    def n_states(self) -> int:
        return self.n_cells + 1

    def diameters(self) -> np.ndarray:
        return np.linalg.norm(self.cell_hi - self.cell_lo, axis=1)

    @property
    def delta_x(self) -> float:
        return float(np.max(self.diameters()))

    def xi(self, x, q: int) -> int:
        """Index of the cell containing ``(x, q)``; ``psi_s`` outside ``K_q``."""
        x = np.atleast_1d(np.asarray(x, float))
        lo, hi = self.safe_lo[q], self.safe_hi[q]
        if np.any(x < lo) or np.any(x > hi):
            return self.psi_s
        n = self.counts[q]
        idx = np.minimum(np.floor((x - lo) / (hi - lo) * n).astype(int), n - 1)
        return int(self.offsets[q] + np.ravel_multi_index(tuple(idx), tuple(n)))

    def cell(self, z: int) -> tuple[np.ndarray, np.ndarray, int]:
        """Box and mode of cell ``z`` (the inverse map to regions)."""
        if not 0 <= z < self.n_cells:
            raise ContractViolation(f"{z} is not a safe cell index")
        return self.cell_lo[z], self.cell_hi[z], int(self.mode[z])


def build_state_grid(model, delta_x: float, representative: str = "lower") -> StateGrid:
    """Partition each ``K_q`` into equal cells with edge at most ``delta_x`` on every axis.

    ``representative`` is ``"lower"`` (the lower corner of each cell) or
    ``"center"``.
    """
    if delta_x <= 0:
        raise ContractViolation("delta_x must be positive")
    if representative not in ("lower", "center"):
        raise ContractViolation("representative must be 'lower' or 'center'")
    lo_all, hi_all, rep_all, mode_all, counts, offsets = [], [], [], [], [], []
    total = 0
    for q in range(model.n_modes):
        lo, hi = model.safe_lo[q], model.safe_hi[q]
        if np.any(hi <= lo):
            raise ContractViolation(f"safe box of mode {q} is degenerate")
        n = np.maximum(1, np.ceil((hi - lo) / delta_x - 1e-9).astype(int))
        edges = [np.linspace(lo[a], hi[a], n[a] + 1) for a in range(lo.size)]
        for idx in itertools.product(*[range(k) for k in n]):
            clo = np.array([edges[a][i] for a, i in enumerate(idx)])
            chi = np.array([edges[a][i + 1] for a, i in enumerate(idx)])
            lo_all.append(clo)
            hi_all.append(chi)
            rep_all.append(clo if representative == "lower" else 0.5 * (clo + chi))
            mode_all.append(q)
        counts.append(n)
        offsets.append(total)
        total += int(np.prod(n))
    m = model.dim
    return StateGrid(
        cell_lo=np.array(lo_all).reshape(-1, m),
        cell_hi=np.array(hi_all).reshape(-1, m),
        rep=np.array(rep_all).reshape(-1, m),
        mode=np.array(mode_all, dtype=int),
        counts=np.array(counts),
        offsets=np.array(offsets, dtype=int),
        safe_lo=model.safe_lo.copy(),
        safe_hi=model.safe_hi.copy(),
        representative=representative,
    )


def _cell_probs(cell_lo, cell_hi, means, cov) -> np.ndarray:
    """P(X in cell_j) for X ~ N(means_i, cov): returns (len(means), len(cells))."""
    diag = np.allclose(cov, np.diag(np.diag(cov)), atol=0.0, rtol=0.0)
    if diag:
        sd = np.sqrt(np.diag(cov))
        out = np.ones((means.shape[0], cell_lo.shape[0]))
        for a in range(means.shape[1]):
            out *= interval_prob(cell_lo[None, :, a], cell_hi[None, :, a], means[:, None, a], sd[a])
        return out
    return box_prob_arrays(cell_lo[None, :, :], cell_hi[None, :, :], means[:, None, :], cov)


def _cache_key(model, grid: StateGrid) -> str:
    h = hashlib.sha256()
    h.update(model.content_hash().encode())
    for arr in (grid.cell_lo, grid.cell_hi, grid.rep):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:20]


def tau_delta_table(model, grid: StateGrid, cache_dir: Optional[os.PathLike] = None) -> np.ndarray:
    """Transition kernel over abstract states, shape ``(nU, K+1, K+1)``.

    ``T[u, z, z']`` is the probability of landing in cell ``z'`` from the
    representative point of ``z`` (mode jump times Gaussian cell mass); the
    column ``psi_s`` receives the mass that leaves every safe box and the row
    ``psi_s`` is absorbing. With ``cache_dir`` the table is stored as raw
    row-major float64 keyed by a hash of the model and grid.
    """
    K = grid.n_cells
    nU = model.n_inputs
    path = None
    if cache_dir is not None and model.tq_fn is None:
        path = Path(cache_dir) / f"tau_{_cache_key(model, grid)}.bin"
        if path.exists():
            data = np.fromfile(path, dtype=np.float64)
            if data.size == nU * (K + 1) ** 2:
                return data.reshape(nU, K + 1, K + 1)
    T = np.zeros((nU, K + 1, K + 1))
    for u in range(nU):
        for qn in range(model.n_modes):
            dest = np.flatnonzero(grid.mode == qn)
            means = grid.rep @ model.A[qn].T + model.g[qn, u]
            mass = _cell_probs(grid.cell_lo[dest], grid.cell_hi[dest], means, model.V)
            if model.tq_fn is None:
                jump = model.Tq[u, grid.mode, qn]
            else:
                jump = np.array([model.mode_kernel(int(q), x, u)[qn] for q, x in zip(grid.mode, grid.rep)])
            T[u, :K, dest] = (jump[:, None] * mass).T
        T[u, :K, K] = np.clip(1.0 - T[u, :K, :K].sum(axis=1), 0.0, 1.0)
        T[u, K, K] = 1.0
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(T).tofile(path)
    return T


def tau_delta(T: np.ndarray, z_next: int, z: int, u: int) -> float:
    """Entry ``tau_delta(z' | z, u)`` of a precomputed table."""
    return float(T[u, z, z_next])


def rho_delta(model, grid: StateGrid, mu0=None, P0=None) -> np.ndarray:
    """Initial abstract belief: cell masses of ``Rq(q) N(mu0, P0)``, remainder on ``psi_s``."""
    mu0 = model.mu0 if mu0 is None else np.atleast_1d(np.asarray(mu0, float))
    P0 = model.P0 if P0 is None else np.atleast_2d(np.asarray(P0, float))
    b = np.zeros(grid.n_states)
    mass = _cell_probs(grid.cell_lo, grid.cell_hi, mu0[None, :], P0)[0]
    b[: grid.n_cells] = model.Rq[grid.mode] * mass
    b[grid.psi_s] = max(0.0, 1.0 - b[: grid.n_cells].sum())
    return b


def obs_kernel_table(model, grid: StateGrid, obs: ObsGrid) -> np.ndarray:
    """Discretized observation kernel ``G[w, z]`` over safe cells, shape ``(n_cells_y + 1, K)``.

    Rows are observation cells (exact Gaussian cell mass at the representative
    state times the discrete-symbol probability); the last row is the
    residual for observations outside the observation boxes.
    """
    K = grid.n_cells
    G = np.zeros((obs.n_symbols, K))
    for qn in range(model.n_modes):
        cols = np.flatnonzero(grid.mode == qn)
        means = grid.rep[cols] @ model.C[qn].T
        mass = _cell_probs(obs.cell_lo, obs.cell_hi, means, model.W)  # (cells_z, cells_y)
        G[: obs.n_cells, cols] = (model.Yq[qn, obs.symbol][None, :] * mass).T
    G[obs.psi_y] = np.clip(1.0 - G[: obs.n_cells].sum(axis=0), 0.0, 1.0)
    return G


# ---------------------------------------------------------------- α-vectors


@dataclass(frozen=True)
class FiniteAlpha:
    """Values on the safe cells (zero on ``psi_s``) and the action that produced them."""

    values: np.ndarray
    u: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "u", int(self.u))


def alpha_value(alpha: FiniteAlpha, b: np.ndarray) -> float:
    return float(alpha.values @ b[: alpha.values.size])


def select_and_assemble(T_u: np.ndarray, G: np.ndarray, A: np.ndarray, b: np.ndarray):
    """One-action backup of stacked α rows ``A`` (n_alpha, K) at belief ``b``.

    Returns ``(values, chosen, score)`` where ``chosen[w]`` indexes the
    maximizing α for observation ``w`` (first index on ties).
    """
    K = A.shape[1]
    Tk = T_u[:K, :K]
    pb = b[:K] @ Tk
    M = A @ (G * pb).T  # (n_alpha, n_w)
    chosen = np.argmax(M, axis=0)
    beta = np.einsum("wk,wk->k", A[chosen], G)
    values = Tk @ beta
    return values, chosen, float(values @ b[:K])


def finite_alpha_backup_arrays(T: np.ndarray, G: np.ndarray, gamma_next: Sequence[FiniteAlpha], b: np.ndarray) -> FiniteAlpha:
    """Backup over every action; the action with the largest ``<α, b>`` wins (lowest index on ties)."""
    if not gamma_next:
        raise ContractViolation("the next-level α set must be nonempty")
    A = np.stack([a.values for a in gamma_next])
    best = None
    for u in range(T.shape[0]):
        vals, _, score = select_and_assemble(T[u], G, A, b)
        if best is None or score > best[1]:
            best = (vals, score, u)
    return FiniteAlpha(np.clip(best[0], 0.0, 1.0), best[2])


def finite_alpha_backup(grid: StateGrid, model, obs: ObsGrid, gamma_next: Sequence[FiniteAlpha], b: np.ndarray,
                        T: Optional[np.ndarray] = None, G: Optional[np.ndarray] = None) -> FiniteAlpha:
    """Backup at belief ``b`` with discretized observations."""
    T = tau_delta_table(model, grid) if T is None else T
    G = obs_kernel_table(model, grid, obs) if G is None else G
    return finite_alpha_backup_arrays(T, G, gamma_next, b)


# ----------------------------------------------------------------- updates


def bayes_update(T_u: np.ndarray, lik: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Abstract Bayes step with observation likelihood ``lik`` over the safe cells.

    Mass that reaches ``psi_s`` keeps its predicted share and the safe part is
    rescaled to fill the rest, i.e. the observation carries no information
    about ``psi_s``. Returns the new belief and ``p(y | b, u)``, the
    normalizer of the safe part. A belief that is entirely on ``psi_s`` stays
    there with likelihood 0.
    """
    K = lik.size
    pred = b @ T_u
    m_psi = float(pred[K])
    num = lik * pred[:K]
    s = float(num.sum())
    out = np.zeros_like(b)
    if m_psi >= 1.0 - 1e-15 or pred[:K].sum() <= 0.0:
        out[K] = 1.0
        return out, 0.0
    if s < LIKELIHOOD_FLOOR:
        raise DegenerateObservationError(f"observation likelihood {s:.3g} is below {LIKELIHOOD_FLOOR}")
    p = s / (1.0 - m_psi)
    out[:K] = num / p
    out[K] = m_psi
    return out, p


def observation_likelihoods(model, grid: StateGrid, y_x, y_q: int) -> np.ndarray:
    """gamma(y | z') at every safe cell's representative point."""
    y_x = np.atleast_1d(np.asarray(y_x, float))
    means = np.einsum("kij,kj->ki", model.C[grid.mode], grid.rep)
    return gauss(y_x, means, model.W) * model.Yq[grid.mode, int(y_q)]


def finite_belief_update(grid: StateGrid, model, b: np.ndarray, u: int, y, T: Optional[np.ndarray] = None):
    """Continuous-observation update ``y = (y_x, y_q)``; returns ``(belief, p(y | b, u))``."""
    T = tau_delta_table(model, grid) if T is None else T
    y_x, y_q = y
    return bayes_update(T[u], observation_likelihoods(model, grid, y_x, y_q), b)


# ------------------------------------------------------------------ backends


class FinitePomdpBackend:
    """Plain finite POMDP with an absorbing zero-value last state.

    ``T`` has shape ``(nU, Z, Z)`` with ``Z - 1`` the absorbing state, ``G``
    shape ``(nW, Z - 1)`` gives discrete observation probabilities, and
    ``rho`` the initial belief. Observations are integer symbols.
    """

    name = "finite-pomdp"

    def __init__(self, T: np.ndarray, G: np.ndarray, rho: np.ndarray):
        self.T = np.asarray(T, float)
        self.G = np.asarray(G, float)
        self.rho = np.asarray(rho, float)
        Z = self.T.shape[1]
        if self.T.shape[2] != Z or self.G.shape[1] != Z - 1 or self.rho.shape != (Z,):
            raise ContractViolation("inconsistent finite POMDP shapes")

    @property
    def n_safe(self) -> int:
        return self.G.shape[1]

    def initial_belief(self, mu0=None) -> np.ndarray:
        return self.rho.copy()

    def terminal_alpha(self) -> FiniteAlpha:
        return FiniteAlpha(np.ones(self.n_safe), 0)

    def update(self, b, u, w):
        return bayes_update(self.T[u], self.G[int(w)], b)

    def sample_observation(self, b, u, rng):
        pred = b @ self.T[u]
        K = self.n_safe
        p = pred[:K] / max(pred[:K].sum(), 1e-300)
        z = int(rng.choice(K, p=p))
        return int(rng.choice(self.G.shape[0], p=self.G[:, z] / self.G[:, z].sum()))

    def backup(self, gamma_next, b):
        alpha = finite_alpha_backup_arrays(self.T, self.G, gamma_next, b)
        return alpha, alpha_value(alpha, b)

    def value(self, alpha, b) -> float:
        return alpha_value(alpha, b)

    def alpha_to_json(self, alpha: FiniteAlpha) -> dict:
        return {"u": alpha.u, "values": alpha.values.tolist()}

    def alpha_from_json(self, doc: dict) -> FiniteAlpha:
        return FiniteAlpha(np.asarray(doc["values"], float), int(doc["u"]))


class FiniteBackend(FinitePomdpBackend):
    """Grid abstraction of a PODTSHS: discretized observations for backups,
    continuous observations for filtering."""

    name = "finite"

    def __init__(self, model, delta_x: float, obs: ObsGrid, representative: str = "lower",
                 cache_dir: Optional[os.PathLike] = None):
        self.model = model
        self.grid = build_state_grid(model, delta_x, representative)
        self.obs = obs
        T = tau_delta_table(model, self.grid, cache_dir)
        G = obs_kernel_table(model, self.grid, obs)
        super().__init__(T, G, rho_delta(model, self.grid))

    def initial_belief(self, mu0=None) -> np.ndarray:
        if mu0 is None:
            return self.rho.copy()
        return rho_delta(self.model, self.grid, mu0)

    def update(self, b, u, y):
        y_x, y_q = y
        return bayes_update(self.T[u], observation_likelihoods(self.model, self.grid, y_x, y_q), b)

    def update_discrete(self, b, u, w: int):
        return bayes_update(self.T[u], self.G[int(w)], b)

    def sample_observation(self, b, u, rng):
        from .model import HybridState, sample_observation, sample_transition

        K = self.grid.n_cells
        mass = b[:K]
        if mass.sum() <= 0:
            raise DegenerateObservationError("belief has no mass on safe cells")
        z = int(rng.choice(K, p=mass / mass.sum()))
        lo, hi, q = self.grid.cell(z)
        s = HybridState(rng.uniform(lo, hi), q)
        s_next = sample_transition(self.model, s, u, rng)
        return sample_observation(self.model, s_next, rng)

    def belief_distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.abs(a - b).sum())
