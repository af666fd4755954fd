"""Point-based value iteration over belief-space abstractions.

The solver is generic: anything implementing :class:`Backend` can be plugged
in, including both abstractions shipped here and plain finite POMDPs. Values are safety probabilities, so the terminal α is the
indicator of the safe set and every backup multiplies by it again.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

import numpy as np
from scipy import special

from .errors import ContractViolation, DegenerateObservationError
from .gaussian import box_prob_arrays

POLICY_SCHEMA = "hybrid_safety.policy/1"
MAX_OBS_RETRIES = 50


# ------------------------------------------------------------ observation grid


@dataclass(frozen=True)
class ObsGrid:
    """Partition of an expanded observation box, one box per discrete symbol.

    Cells are stored flat: ``cell_lo[w]``, ``cell_hi[w]``, ``rep[w]`` and the
    discrete symbol ``symbol[w]``. Index ``n_cells`` is the residual symbol
    for observations outside every box.
    """

    box_lo: np.ndarray  # (nY, l)
    box_hi: np.ndarray  # (nY, l)
    cell_lo: np.ndarray  # (n_cells, l)
    cell_hi: np.ndarray  # (n_cells, l)
    rep: np.ndarray  # (n_cells, l)
    symbol: np.ndarray  # (n_cells,)
    delta_y: float
    epsilon: float

    @property
    def n_cells(self) -> int:
        return self.symbol.size

    @property
    def psi_y(self) -> int:
        return self.n_cells

    @property
    def n_symbols(self) -> int:
        return self.n_cells + 1

    def box_volumes(self) -> np.ndarray:
        return np.prod(self.box_hi - self.box_lo, axis=1)

    def locate(self, y_x, y_q: int) -> int:
        """Index of the cell containing ``(y_x, y_q)``, or ``psi_y``."""
        y_x = np.atleast_1d(np.asarray(y_x, float))
        idx = np.flatnonzero(
            (self.symbol == y_q)
            & np.all(self.cell_lo <= y_x, axis=1)
            & np.all(y_x <= self.cell_hi, axis=1)
        )
        return int(idx[0]) if idx.size else self.psi_y


def _tail_mass(model, box_lo, box_hi) -> float:
    """Largest probability, over safe states, of observing outside the boxes."""
    worst = 0.0
    for q in range(model.n_modes):
        lo, hi = model.safe_lo[q], model.safe_hi[q]
        verts = np.array(list(itertools.product(*zip(lo, hi))))
        means = verts @ model.C[q].T
        inside = np.zeros(len(verts))
        for yq in range(model.n_obs_symbols):
            p = model.Yq[q, yq]
            if p > 0:
                inside += p * box_prob_arrays(box_lo[yq], box_hi[yq], means, model.W)
        # P(inside) is log-concave in x, so its minimum over the box is at a vertex
        worst = max(worst, float(np.max(1.0 - inside)))
    return max(worst, 0.0)


def build_obs_grid(model, delta_y: float, epsilon: float = 1e-3, box=None) -> ObsGrid:
    """Uniform partition of the expanded observation region.

    Without ``box`` each symbol's region is the bounding box of ``C(q) K_q``
    over the modes that can emit it, inflated per axis by
    ``Phi^-1(1 - epsilon / (2 l)) * sqrt(W_aa)``. ``box`` may be given as
    ``[lo, hi]`` (scalar observations) or per-axis pairs, and is then used for
    every symbol. Representatives sit at the cell corner farthest from the
    centre of the image of ``K``, which is where the observation density is
    smallest within the cell. The realized tail mass is stored in ``epsilon``.
    """
    if delta_y <= 0:
        raise ContractViolation("delta_y must be positive")
    if not 0 < epsilon < 1:
        raise ContractViolation("epsilon must lie in (0, 1)")
    l = model.obs_dim
    nY = model.n_obs_symbols
    img_lo = np.zeros((nY, l))
    img_hi = np.zeros((nY, l))
    for yq in range(nY):
        lo_list, hi_list = [], []
        for q in range(model.n_modes):
            if model.Yq[q, yq] <= 0:
                continue
            verts = np.array(list(itertools.product(*zip(model.safe_lo[q], model.safe_hi[q]))))
            img = verts @ model.C[q].T
            lo_list.append(img.min(axis=0))
            hi_list.append(img.max(axis=0))
        if lo_list:
            img_lo[yq] = np.min(lo_list, axis=0)
            img_hi[yq] = np.max(hi_list, axis=0)
    emitting = np.array([np.any(model.Yq[:, yq] > 0) for yq in range(nY)])
    if box is not None:
        b = np.asarray(box, float).reshape(-1, 2)
        if b.shape[0] != l or np.any(b[:, 1] <= b[:, 0]):
            raise ContractViolation("observation box must be [lo, hi] per axis with lo < hi")
        box_lo = np.tile(b[:, 0], (nY, 1))
        box_hi = np.tile(b[:, 1], (nY, 1))
    else:
        z = special.ndtri(1.0 - epsilon / (2.0 * l))
        infl = z * np.sqrt(np.diag(model.W))
        box_lo = img_lo - infl
        box_hi = img_hi + infl

    cell_lo, cell_hi, rep, sym = [], [], [], []
    for yq in range(nY):
        if not emitting[yq]:
            continue
        lo, hi = box_lo[yq], box_hi[yq]
        counts = np.maximum(1, np.ceil((hi - lo) / delta_y - 1e-9).astype(int))
        edges = [np.linspace(lo[a], hi[a], counts[a] + 1) for a in range(l)]
        centre = 0.5 * (img_lo[yq] + img_hi[yq])
        for idx in itertools.product(*[range(c) for c in counts]):
            clo = np.array([edges[a][i] for a, i in enumerate(idx)])
            chi = np.array([edges[a][i + 1] for a, i in enumerate(idx)])
            r = np.where(np.abs(clo - centre) >= np.abs(chi - centre), clo, chi)
            cell_lo.append(clo)
            cell_hi.append(chi)
            rep.append(r)
            sym.append(yq)
    cell_lo = np.array(cell_lo).reshape(-1, l)
    cell_hi = np.array(cell_hi).reshape(-1, l)
    diam = float(np.max(np.linalg.norm(cell_hi - cell_lo, axis=1)))
    eps = _tail_mass(model, box_lo, box_hi)
    return ObsGrid(
        box_lo=box_lo,
        box_hi=box_hi,
        cell_lo=cell_lo,
        cell_hi=cell_hi,
        rep=np.array(rep).reshape(-1, l),
        symbol=np.array(sym, dtype=int),
        delta_y=diam,
        epsilon=eps,
    )


# ------------------------------------------------------------------ backends


class Backend(Protocol):
    """What the solver needs from a belief-space abstraction."""

    name: str

    def initial_belief(self, mu0=None) -> Any: ...

    def terminal_alpha(self) -> Any: ...

    def update(self, belief, u: int, y) -> tuple[Any, float]: ...

    def sample_observation(self, belief, u: int, rng: np.random.Generator): ...

    def backup(self, gamma_next: Sequence[Any], belief) -> tuple[Any, float]: ...

    def value(self, alpha, belief) -> float: ...

    def alpha_to_json(self, alpha) -> dict: ...

    def alpha_from_json(self, doc: dict) -> Any: ...


# --------------------------------------------------------------- belief sets


@dataclass
class BeliefSet:
    """Sampled beliefs per time level with the (u, y) lineage of each."""

    levels: list[list[Any]]
    lineage: list[list[tuple]] = field(default_factory=list)
    likelihoods: list[list[float]] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.levels) - 1

    def __getitem__(self, n: int) -> list:
        return self.levels[n]


def sample_belief_sets(model, backend: Backend, count: int, seed: int, horizon: Optional[int] = None) -> BeliefSet:
    """Sample ``count`` belief trajectories.

    Trajectory ``i`` starts from the initial distribution with its mean drawn
    uniformly on the safe box of a mode drawn from ``Rq``, then follows
    uniformly random inputs and observations drawn from the current belief.
    Each trajectory uses its own RNG stream derived from ``(seed, i)``, so a
    set of ``count`` beliefs is a prefix of any larger set with the same seed.
    """
    if count < 1:
        raise ContractViolation("count must be >= 1")
    N = model.horizon if horizon is None else horizon
    levels: list[list[Any]] = [[] for _ in range(N + 1)]
    lineage: list[list[tuple]] = [[] for _ in range(N + 1)]
    likelihoods: list[list[float]] = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        q = int(rng.choice(model.n_modes, p=model.Rq))
        mu0 = rng.uniform(model.safe_lo[q], model.safe_hi[q])
        b = backend.initial_belief(mu0)
        levels[0].append(b)
        lineage[0].append((tuple(mu0.tolist()),))
        trace = []
        for n in range(N):
            u = int(rng.integers(model.n_inputs))
            for _attempt in range(MAX_OBS_RETRIES):
                y = backend.sample_observation(b, u, rng)
                try:
                    b_next, lik = backend.update(b, u, y)
                    break
                except DegenerateObservationError:
                    continue
            else:
                raise DegenerateObservationError(
                    f"could not draw a usable observation for trajectory {i} at step {n}"
                )
            b = b_next
            trace.append(float(lik))
            levels[n + 1].append(b)
            y_x, y_q = y
            lineage[n + 1].append((u, tuple(np.atleast_1d(y_x).tolist()), int(y_q)))
        likelihoods.append(trace)
    return BeliefSet(levels, lineage, likelihoods)


# ---------------------------------------------------------------------- policy


@dataclass
class Policy:
    """Per-level α stacks; ``gammas[n]`` is the set used at time ``n``."""

    gammas: list[list[Any]]
    backend: Backend
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.gammas) - 1

    def evaluate(self, n: int, belief) -> tuple[float, int]:
        return evaluate_value(self.gammas[n], belief, self.backend)

    def action(self, n: int, belief) -> int:
        return self.evaluate(n, belief)[1]

    def to_json(self) -> dict:
        return {
            "schema": POLICY_SCHEMA,
            "backend": self.backend.name,
            "meta": self.meta,
            "levels": [[self.backend.alpha_to_json(a) for a in level] for level in self.gammas],
        }

    @classmethod
    def from_json(cls, doc: dict, backend: Backend) -> "Policy":
        if doc.get("schema") != POLICY_SCHEMA:
            raise ContractViolation(f"unsupported policy schema {doc.get('schema')!r}")
        if doc.get("backend") != backend.name:
            raise ContractViolation(f"policy was built for backend {doc.get('backend')!r}, not {backend.name!r}")
        gammas = [[backend.alpha_from_json(a) for a in level] for level in doc["levels"]]
        return cls(gammas, backend, dict(doc.get("meta", {})))


def evaluate_value(level: Sequence[Any], belief, backend: Backend) -> tuple[float, int]:
    """max over α of <α, b> and the action tag of the first maximizer."""
    if not level:
        raise ContractViolation("cannot evaluate an empty α set")
    vals = np.array([backend.value(a, belief) for a in level])
    k = int(np.argmax(vals))
    return float(vals[k]), int(level[k].u)


@dataclass
class SolveResult:
    policy: Policy
    value: float
    action: int
    stats: dict


def solve(
    model,
    backend: Backend,
    belief_sets: BeliefSet,
    seed: int = 0,
    tol: float = 1e-12,
    initial_belief=None,
    progress: Optional[Callable[[str], None]] = None,
) -> SolveResult:
    """Backward Perseus-style sweep.

    At each level ``n = N-1 .. 0`` the backup target ``t(b)`` is computed for
    every sampled belief against the finished level ``n+1``. Beliefs are then
    visited in a seeded random order; a belief whose value under the α set
    built so far already reaches ``t(b) - tol`` is skipped, otherwise its
    backup α is added. Level ``N`` holds only the terminal α.
    """
    N = belief_sets.horizon
    gammas: list[list[Any]] = [[] for _ in range(N + 1)]
    gammas[N] = [backend.terminal_alpha()]
    stats = {"backups": [0] * N, "skipped": [0] * N}
    rng = np.random.default_rng([seed, 7919])
    for n in range(N - 1, -1, -1):
        beliefs = belief_sets[n]
        cands = []
        for b in beliefs:
            cands.append(backend.backup(gammas[n + 1], b))
        order = rng.permutation(len(beliefs))
        level: list[Any] = []
        for i in order:
            alpha, target = cands[i]
            if level:
                current = max(backend.value(a, beliefs[i]) for a in level)
                if current >= target - tol:
                    stats["skipped"][n] += 1
                    continue
            level.append(alpha)
            stats["backups"][n] += 1
        gammas[n] = level
        if progress:
            progress(f"level {n}: {len(level)} alpha, {stats['skipped'][n]} skipped")
    rho = backend.initial_belief(None) if initial_belief is None else initial_belief
    value, action = evaluate_value(gammas[0], rho, backend)
    policy = Policy(gammas, backend, {"seed": seed, "beliefs": len(belief_sets[0]), "horizon": N})
    return SolveResult(policy, value, action, stats)


# ---------------------------------------------------------------- δ^σ proxy


def hausdorff_delta_sigma(sampled: BeliefSet, probe: BeliefSet, distance: Callable[[Any, Any], float]) -> float:
    """Empirical stand-in for the belief-set density constant.

    For each level, the directed Hausdorff distance from ``probe`` to
    ``sampled`` (largest distance from a probe belief to its nearest sampled
    belief); the maximum over levels is returned. This is a proxy: it only
    sees the probe beliefs, not the full reachable set.
    """
    worst = 0.0
    for n in range(min(len(sampled.levels), len(probe.levels))):
        if not probe[n]:
            continue
        if not sampled[n]:
            raise ContractViolation(f"sampled level {n} is empty")
        for p in probe[n]:
            worst = max(worst, min(distance(p, s) for s in sampled[n]))
    return float(worst)


def config_hash(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]
