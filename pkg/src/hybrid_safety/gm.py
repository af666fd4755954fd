"""Gaussian-mixture abstraction.

The safe-set indicator is replaced by a radial-basis mixture
``1_{K_q}(x) ~ sum_i w_i(q) phi(x; mu_i(q), P_i(q))``. With Gaussian noise,
invertible ``A``/``C`` and an ``x``-independent mode kernel, both the
(unnormalized) information state and every α-function then stay Gaussian
mixtures, and the belief update and α backup have closed forms built from
two identities:

* product: ``phi(x; a, P) phi(x; b, Q) = phi(a; b, P + Q) phi(x; c, R)``,
* affine change of variables: ``phi(A x + g; mu, P) = |A^-1| phi(x; A^-1 (mu - g), A^-1 P A^-T)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog, nnls

from .errors import ContractViolation, DegenerateObservationError
from .gaussian import (
    Mixture,
    ModeMixture,
    box_prob_arrays,
    condition_arrays,
    gauss,
    gauss_peak,
    merge_groups,
    mixture_l1_error,
    mode_inner_product,
    product_arrays,
    reduce_mixture,
)
from .pbvi import ObsGrid

DEFAULT_CAP = 30
SUP_SAFETY = 1.05
SUP_MESH = 64


# ------------------------------------------------------------- RBF indicator


@dataclass(frozen=True)
class RbfIndicator:
    """Fitted indicator mixture with its L1 error ``delta_I`` and fit settings."""

    mixture: ModeMixture
    delta_I: float
    iq: tuple
    width_factor: float

    def to_json(self) -> dict:
        return {
            "schema": "hybrid_safety.rbf/1",
            "delta_I": self.delta_I,
            "iq": list(self.iq),
            "width_factor": self.width_factor,
            "components": self.mixture.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict, n_modes: int, dim: int) -> "RbfIndicator":
        mix = ModeMixture.from_json(doc["components"], n_modes, dim)
        return cls(mix, float(doc["delta_I"]), tuple(doc["iq"]), float(doc["width_factor"]))


def _rbf_centres(lo: np.ndarray, hi: np.ndarray, iq: int) -> tuple[np.ndarray, float]:
    m = lo.size
    per_axis = round(iq ** (1.0 / m))
    if per_axis**m != iq:
        raise ContractViolation(f"I_q={iq} must be a perfect {m}-th power for a {m}-d box")
    h = (hi - lo) / per_axis
    axes = [lo[a] + (np.arange(per_axis) + 0.5) * h[a] for a in range(m)]
    centres = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    return centres, float(np.min(h))


def fit_indicator_rbf(model, iq, width_factor: float = 1.0, mesh_points: int = 4000,
                      l1_tol: float = 1e-4) -> RbfIndicator:
    """Fit ``1_{K_q}`` by ``iq`` isotropic Gaussians per mode.

    Centres are the midpoints of a uniform ``iq``-cell split of ``K_q``; all
    components share the standard deviation ``width_factor * spacing``.
    Weights are nonnegative least squares against the indicator on a uniform
    mesh that covers ``K_q`` plus four bandwidths on each side.
    ``mesh_points`` is the total mesh size per mode (spread evenly over axes).
    """
    iqs = np.broadcast_to(np.atleast_1d(np.asarray(iq, dtype=int)), (model.n_modes,))
    if np.any(iqs < 1):
        raise ContractViolation("I_q must be >= 1")
    if width_factor <= 0:
        raise ContractViolation("width_factor must be positive")
    m = model.dim
    modes = []
    for q in range(model.n_modes):
        lo, hi = model.safe_lo[q], model.safe_hi[q]
        centres, h = _rbf_centres(lo, hi, int(iqs[q]))
        sd = width_factor * h
        per_axis = int(round(mesh_points ** (1.0 / m)))
        if per_axis < 4 * round(int(iqs[q]) ** (1.0 / m)):
            raise ContractViolation(
                f"I_q={iqs[q]} exceeds the mesh resolution ({per_axis} points per axis); raise mesh_points"
            )
        margin = 4.0 * sd
        grids = [np.linspace(lo[a] - margin, hi[a] + margin, per_axis) for a in range(m)]
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, m)
        target = np.all((mesh >= lo) & (mesh <= hi), axis=1).astype(float)
        cov = np.eye(m) * sd**2
        design = gauss(mesh[:, None, :], centres[None, :, :], cov)
        weights, _ = nnls(design, target, maxiter=50 * design.shape[1])
        covs = np.broadcast_to(cov, (centres.shape[0], m, m)).copy()
        modes.append(Mixture(weights, centres, covs))
    mix = ModeMixture(tuple(modes))
    delta = mixture_l1_error(mix, model.safe_lo, model.safe_hi, tol=l1_tol)
    return RbfIndicator(mix, delta, tuple(int(i) for i in iqs), float(width_factor))


# ------------------------------------------------------------- belief update


def initial_belief(model, mu0=None, P0=None) -> ModeMixture:
    """``Rq(q) N(mu0, P0)`` as a mode mixture (one component per mode with Rq > 0)."""
    mu0 = model.mu0 if mu0 is None else np.atleast_1d(np.asarray(mu0, float))
    P0 = model.P0 if P0 is None else np.atleast_2d(np.asarray(P0, float))
    modes = []
    for q in range(model.n_modes):
        if model.Rq[q] > 0:
            modes.append(Mixture(np.array([model.Rq[q]]), mu0[None, :], P0[None, :, :]))
        else:
            modes.append(Mixture.empty(model.dim))
    return ModeMixture(tuple(modes))


def _indicator_product(rbf: Mixture, sig: Mixture):
    """All pairwise products RBF_i * sigma_l, flattened with the RBF index of each."""
    I, L = len(rbf), len(sig)
    scale, mean, cov = product_arrays(
        rbf.means[:, None, :], rbf.covs[:, None], sig.means[None, :, :], sig.covs[None, :]
    )
    w = (rbf.weights[:, None] * sig.weights[None, :] * scale).reshape(-1)
    m = rbf.dim
    idx = np.repeat(np.arange(I), L)
    return w, mean.reshape(-1, m), np.broadcast_to(cov, (I, L, m, m)).reshape(-1, m, m), idx


def _propagate(model, w, mean, cov, q_next, u):
    A = model.A[q_next]
    m_next = mean @ A.T + model.g[q_next, u]
    S = np.einsum("ij,kjl,ml->kim", A, cov, A) + model.V
    return w, m_next, 0.5 * (S + np.swapaxes(S, -1, -2))


def predict(model, rbf: RbfIndicator, sigma: ModeMixture, u: int, premerge: bool = True) -> ModeMixture:
    """``sum_q Tq(q'|q,u) int phi(x'; A x + g, V) RBF_q(x) sigma(x, q) dx`` as a mixture in ``x'``."""
    parts = []
    for q in range(model.n_modes):
        sig = sigma.modes[q]
        rb = rbf.mixture.modes[q]
        if len(sig) == 0 or len(rb) == 0:
            parts.append(None)
            continue
        w, mu, P, idx = _indicator_product(rb, sig)
        if premerge:
            merged = merge_groups(w, mu, P, idx, len(rb))
            w, mu, P = merged.weights, merged.means, merged.covs
        parts.append((w, mu, P))
    out = []
    for qn in range(model.n_modes):
        mix = Mixture.empty(model.dim)
        for q, part in enumerate(parts):
            if part is None:
                continue
            w, mu, P = part
            t = model.Tq[u, q, qn]
            wn, mn, Pn = _propagate(model, w * t, mu, P, qn, u)
            mix = mix.concat(Mixture(wn, mn, Pn))
        out.append(mix)
    return ModeMixture(tuple(out))


def gm_belief_update(model, rbf: RbfIndicator, sigma: ModeMixture, u: int, y,
                     cap: Optional[int] = None) -> ModeMixture:
    """Closed-form unnormalized update of ``sigma`` after input ``u`` and observation ``y = (y_x, y_q)``.

    Without ``cap`` the exact result is returned: for every destination mode,
    one component per (source mode, RBF component, belief component), i.e.
    ``N_q * I_q * L`` components, zero weights included. With ``cap`` the
    products sharing an RBF component are moment-matched first and each mode
    is then greedily reduced to at most ``cap`` components.
    """
    y_x, y_q = y
    y_x = np.atleast_1d(np.asarray(y_x, float))
    pred = predict(model, rbf, sigma, u, premerge=cap is not None)
    out = []
    for qn, mix in enumerate(pred.modes):
        if len(mix) == 0:
            out.append(mix)
            continue
        ev, post_mu, post_P = condition_arrays(mix.means, mix.covs, model.C[qn], model.W, y_x)
        post = Mixture(mix.weights * ev * model.Yq[qn, int(y_q)], post_mu, post_P)
        if cap is not None:
            post = reduce_mixture(post.prune(0.0), cap)
        out.append(post)
    return ModeMixture(tuple(out))


def terminal_value(rbf: RbfIndicator, sigma: ModeMixture) -> float:
    """``sum_q int RBF_q(x) sigma(x, q) dx`` in closed form."""
    return mode_inner_product(rbf.mixture, sigma)


# ----------------------------------------------------------- γ_g weights


@dataclass(frozen=True)
class ObsMesh:
    """Quadrature nodes and weights per observation cell.

    ``nodes[w]`` has shape ``(M, l)`` and ``weights[w]`` shape ``(M,)``; the
    weights already include the scale factor that makes the quadrature an
    under-approximation of the true cell probability on the safe set.
    """

    nodes: tuple
    weights: tuple
    scale: np.ndarray


def _trap_nodes(lo, hi, n):
    l = lo.size
    axes, wts = [], []
    for a in range(l):
        pts = np.linspace(lo[a], hi[a], n)
        h = (hi[a] - lo[a]) / (n - 1)
        c = np.full(n, h)
        c[0] = c[-1] = 0.5 * h
        axes.append(pts)
        wts.append(c)
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, l)
    w = wts[0]
    for c in wts[1:]:
        w = np.multiply.outer(w, c)
    return nodes, w.reshape(-1)


def _probe_points(model, probes: int) -> list[np.ndarray]:
    out = []
    for q in range(model.n_modes):
        lo, hi = model.safe_lo[q], model.safe_hi[q]
        per_axis = max(2, int(round(probes ** (1.0 / model.dim))))
        grids = [np.linspace(lo[a], hi[a], per_axis) for a in range(model.dim)]
        out.append(np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, model.dim))
    return out


def build_obs_mesh(model, obs: ObsGrid, m_y: int = 3, probes: int = 201, method: str = "lp") -> ObsMesh:
    """Quadrature nodes and weights per observation cell that under-approximate the cell mass.

    Nodes are the trapezoid nodes of the cell (``m_y`` per axis); ``m_y == 1``
    uses the cell representative with weight equal to the cell volume. Let
    ``exact(x)`` be the Gaussian mass of the cell seen from state ``x`` and
    ``quad(x) = sum_j c_j phi(y_j; C x, W)``, with ``x`` ranging over a probe
    mesh of every safe box whose mode can emit the cell's symbol.

    * ``method="scaled"``: trapezoid weights times
      ``s_w = min(1, min_x exact(x) / quad(x))``.
    * ``method="lp"``: the nonnegative weights maximizing ``sum_x quad(x)``
      subject to ``quad(x) <= exact(x)`` at every probe (a small linear
      program), followed by the same safety rescaling.
    """
    if m_y < 1:
        raise ContractViolation("m_y must be >= 1")
    if method not in ("lp", "scaled"):
        raise ContractViolation("method must be 'lp' or 'scaled'")
    probe_sets = _probe_points(model, probes)
    nodes, weights, scales = [], [], []
    for w in range(obs.n_cells):
        lo, hi = obs.cell_lo[w], obs.cell_hi[w]
        if m_y == 1:
            nd = obs.rep[w][None, :]
            wt = np.array([np.prod(hi - lo)])
        else:
            nd, wt = _trap_nodes(lo, hi, m_y)
        rows, exact = [], []
        for q in range(model.n_modes):
            if model.Yq[q, obs.symbol[w]] <= 0:
                continue
            means = probe_sets[q] @ model.C[q].T
            exact.append(box_prob_arrays(lo, hi, means, model.W))
            rows.append(gauss(nd[None, :, :], means[:, None, :], model.W))
        if rows:
            exact = np.concatenate(exact)
            rows = np.concatenate(rows)
            keep = exact > 1e-250
            exact, rows = exact[keep], rows[keep]
        if method == "lp" and len(rows) and nd.shape[0] > 1:
            res = linprog(
                -rows.sum(axis=0),
                A_ub=rows / exact[:, None],
                b_ub=np.ones(exact.size),
                bounds=[(0, None)] * nd.shape[0],
                method="highs",
            )
            if res.status == 0:
                wt = np.maximum(res.x, 0.0)
        s = 1.0
        if len(rows):
            approx = rows @ wt
            ok = approx > 0
            if np.any(ok):
                s = min(s, float(np.min(exact[ok] / approx[ok])))
        nodes.append(nd)
        weights.append(wt * s)
        scales.append(s)
    return ObsMesh(tuple(nodes), tuple(weights), np.array(scales))


def gamma_g_weight(model, obs: ObsGrid, mesh: ObsMesh, w: int, q: int, x) -> float:
    """Gaussian-sum under-approximation of the probability of observation cell ``w`` from ``(x, q)``."""
    if w == obs.psi_y:
        raise ContractViolation("the residual observation symbol has no Gaussian-sum weight")
    x = np.atleast_1d(np.asarray(x, float))
    p = model.Yq[q, obs.symbol[w]]
    if p == 0:
        return 0.0
    vals = gauss(mesh.nodes[w], model.C[q] @ x, model.W)
    return float(p * vals @ mesh.weights[w])


# ------------------------------------------------------------------ α backup


@dataclass(frozen=True)
class GmAlpha:
    """α-function as a mode mixture, tagged with its action and sup-norm estimate."""

    mixture: ModeMixture
    u: int
    sup: float


def alpha_sup(model, mix: ModeMixture) -> float:
    """Sup-norm estimate: max over component means and a mesh of each safe box, times 1.05."""
    best = 0.0
    for q, comp in enumerate(mix.modes):
        if len(comp) == 0:
            continue
        lo, hi = model.safe_lo[q], model.safe_hi[q]
        per_axis = max(2, int(round(SUP_MESH ** (1.0 / model.dim))))
        grids = [np.linspace(lo[a], hi[a], per_axis) for a in range(model.dim)]
        pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, model.dim)
        pts = np.concatenate([pts, comp.means])
        best = max(best, float(np.max(comp.evaluate(pts))))
    return SUP_SAFETY * best


def _pushforward_terms(model, alpha_mode: Mixture, q_next: int, u: int, nodes: np.ndarray, cw: np.ndarray):
    """Components in x of ``sum_j c_j int alpha(x') phi(y_j; C x', W) phi(x'; A x + g, V) dx'``.

    Returns flattened ``(weights, means, covs)`` with one component per
    (α component, node).
    """
    C, W, A = model.C[q_next], model.W, model.A[q_next]
    M = len(alpha_mode)
    J = nodes.shape[0]
    ev, mu_hat, P_hat = condition_arrays(
        alpha_mode.means[:, None, :], alpha_mode.covs[:, None], C, W, nodes[None, :, :]
    )
    A_inv = np.linalg.inv(A)
    det = abs(np.linalg.det(A_inv))
    g = model.g[q_next, u]
    m = model.dim
    mean_x = (mu_hat - g) @ A_inv.T  # (M, J, m)
    cov_x = np.einsum("ij,kjl,ml->kim", A_inv, P_hat.reshape(-1, m, m) + model.V, A_inv)
    cov_x = np.broadcast_to(cov_x.reshape(M, -1, m, m), (M, J, m, m))
    weights = alpha_mode.weights[:, None] * ev * cw[None, :] * det
    return weights.reshape(-1), mean_x.reshape(-1, m), cov_x.reshape(-1, m, m)


def alpha_term(model, rbf: RbfIndicator, alpha_next: ModeMixture, u: int, nodes, cw, y_q: int) -> ModeMixture:
    """Raw (unreduced) α contribution of one observation cell.

    ``RBF_q(x) * sum_{q'} Tq(q'|q,u) Yq(y_q|q') sum_j c_j int alpha(x', q')
    phi(y_j; C x', W) phi(x'; A x + g, V) dx'``: for a single node this has
    ``N_q * I_q * M`` components per mode (``M`` components of ``alpha_next``
    per mode), zero weights included.
    """
    nodes = np.atleast_2d(np.asarray(nodes, float))
    cw = np.atleast_1d(np.asarray(cw, float))
    out = []
    for q in range(model.n_modes):
        rb = rbf.mixture.modes[q]
        ws, ms, Ps = [], [], []
        for qn in range(model.n_modes):
            a_mode = alpha_next.modes[qn]
            if len(a_mode) == 0:
                continue
            w, mu, P = _pushforward_terms(model, a_mode, qn, u, nodes, cw)
            ws.append(w * model.Tq[u, q, qn] * model.Yq[qn, int(y_q)])
            ms.append(mu)
            Ps.append(P)
        if not ws or len(rb) == 0:
            out.append(Mixture.empty(model.dim))
            continue
        H = Mixture(np.concatenate(ws), np.concatenate(ms), np.concatenate(Ps))
        scale, mean, cov = product_arrays(rb.means[:, None, :], rb.covs[:, None], H.means[None], H.covs[None])
        wts = rb.weights[:, None] * H.weights[None, :] * scale
        m = model.dim
        out.append(Mixture(wts.reshape(-1), mean.reshape(-1, m), cov.reshape(-1, m, m)))
    return ModeMixture(tuple(out))


def _selection_values(model, pred: ModeMixture, alphas: Sequence[GmAlpha], obs: ObsGrid, mesh: ObsMesh) -> np.ndarray:
    """v[k, w] = sum_{q'} Yq(y^q_w | q') sum_j c_j int alpha_k(x', q') phi(y_j; C x', W) pred(x', q') dx'."""
    K = len(alphas)
    V = np.zeros((K, obs.n_cells))
    for qn in range(model.n_modes):
        P = pred.modes[qn]
        if len(P) == 0:
            continue
        cells = np.flatnonzero(model.Yq[qn, obs.symbol] > 0)
        if cells.size == 0:
            continue
        nodes = np.concatenate([mesh.nodes[w] for w in cells])
        cw = np.concatenate([mesh.weights[w] for w in cells])
        owner = np.concatenate([np.full(len(mesh.nodes[w]), i) for i, w in enumerate(cells)])
        ev, mu_post, P_post = condition_arrays(P.means[:, None, :], P.covs[:, None], model.C[qn], model.W, nodes[None])
        # posterior covariance does not depend on the node
        P_post = P_post[:, 0]
        a_w = np.concatenate([a.mixture.modes[qn].weights for a in alphas])
        a_mu = np.concatenate([a.mixture.modes[qn].means for a in alphas])
        a_P = np.concatenate([a.mixture.modes[qn].covs for a in alphas])
        a_owner = np.concatenate([np.full(len(a.mixture.modes[qn]), k) for k, a in enumerate(alphas)])
        if a_w.size == 0:
            continue
        # overlap[p, j, c] = phi(a_mu_c; mu_post_pj, a_P_c + P_post_p)
        overlap = gauss(a_mu[None, None, :, :], mu_post[:, :, None, :], a_P[None, None] + P_post[:, None, None])
        contrib = np.einsum("p,pj,pjc,c->jc", P.weights, ev, overlap, a_w)  # (J, comps)
        per_alpha = np.zeros((nodes.shape[0], K))
        np.add.at(per_alpha.T, a_owner, contrib.T)
        per_alpha *= cw[:, None] * model.Yq[qn, obs.symbol[cells[owner]]][:, None]
        cell_vals = np.zeros((cells.size, K))
        np.add.at(cell_vals, owner, per_alpha)
        V[:, cells] += cell_vals.T
    return V


def _assemble(model, rbf: RbfIndicator, alphas: Sequence[GmAlpha], chosen: np.ndarray, u: int,
              obs: ObsGrid, mesh: ObsMesh, cap: int) -> ModeMixture:
    out = []
    parts_by_q = []
    for qn in range(model.n_modes):
        ws, ms, Ps = [], [], []
        cells = np.flatnonzero(model.Yq[qn, obs.symbol] > 0)
        for k in np.unique(chosen[cells]) if cells.size else []:
            a_mode = alphas[k].mixture.modes[qn]
            if len(a_mode) == 0:
                continue
            sel = cells[chosen[cells] == k]
            nodes = np.concatenate([mesh.nodes[w] for w in sel])
            cw = np.concatenate([mesh.weights[w] * model.Yq[qn, obs.symbol[w]] for w in sel])
            w, mu, P = _pushforward_terms(model, a_mode, qn, u, nodes, cw)
            ws.append(w)
            ms.append(mu)
            Ps.append(P)
        parts_by_q.append((ws, ms, Ps))
    for q in range(model.n_modes):
        rb = rbf.mixture.modes[q]
        ws, ms, Ps = [], [], []
        for qn in range(model.n_modes):
            t = model.Tq[u, q, qn]
            if t == 0:
                continue
            pw, pm, pP = parts_by_q[qn]
            for w, mu, P in zip(pw, pm, pP):
                ws.append(w * t)
                ms.append(mu)
                Ps.append(P)
        if not ws or len(rb) == 0:
            out.append(Mixture.empty(model.dim))
            continue
        Hw = np.concatenate(ws)
        Hm = np.concatenate(ms)
        HP = np.concatenate(Ps)
        keep = Hw > 0
        Hw, Hm, HP = Hw[keep], Hm[keep], HP[keep]
        scale, mean, cov = product_arrays(rb.means[:, None, :], rb.covs[:, None], Hm[None], HP[None])
        wts = rb.weights[:, None] * Hw[None, :] * scale
        m = model.dim
        idx = np.repeat(np.arange(len(rb)), Hw.size)
        mix = merge_groups(wts.reshape(-1), mean.reshape(-1, m),
                           np.broadcast_to(cov, wts.shape + (m, m)).reshape(-1, m, m), idx, len(rb))
        out.append(reduce_mixture(mix, cap))
    return ModeMixture(tuple(out))


def gm_alpha_backup(model, rbf: RbfIndicator, obs: ObsGrid, mesh: ObsMesh, gamma_next: Sequence[GmAlpha],
                    sigma: ModeMixture, cap: int = DEFAULT_CAP) -> tuple[GmAlpha, float]:
    """Point backup at ``sigma`` with discretized observations.

    For each input the predicted mixture is formed once, every next-level α is
    scored against every observation cell in closed form and the best one per
    cell is kept (lowest index on ties). The input with the largest score
    (lowest index on ties) is assembled: products with the RBF components are
    moment-matched per RBF component and reduced to ``cap``. The residual
    observation symbol is left out, which can only lower the α-function.
    Returns the α and its score ``<α, sigma>`` before reduction.
    """
    if not gamma_next:
        raise ContractViolation("the next-level α set must be nonempty")
    best = None
    for u in range(model.n_inputs):
        pred = predict(model, rbf, sigma, u, premerge=True)
        V = _selection_values(model, pred, gamma_next, obs, mesh)
        chosen = np.argmax(V, axis=0)
        score = float(V.max(axis=0).sum())
        if best is None or score > best[0]:
            best = (score, u, chosen)
    score, u, chosen = best
    mix = _assemble(model, rbf, gamma_next, chosen, u, obs, mesh, cap)
    return GmAlpha(mix, u, alpha_sup(model, mix)), score


# ------------------------------------------------------------------ backend


class GaussianBackend:
    """Gaussian-mixture abstraction plugged into the PBVI solver."""

    name = "gaussian"

    def __init__(self, model, rbf: RbfIndicator, obs: ObsGrid, cap: int = DEFAULT_CAP, m_y: int = 3):
        model.check_gaussian_pipeline()
        if cap < 1:
            raise ContractViolation("cap must be >= 1")
        self.model = model
        self.rbf = rbf
        self.obs = obs
        self.cap = int(cap)
        self.mesh = build_obs_mesh(model, obs, m_y)

    def initial_belief(self, mu0=None) -> ModeMixture:
        return initial_belief(self.model, mu0)

    def terminal_alpha(self) -> GmAlpha:
        return GmAlpha(self.rbf.mixture, 0, alpha_sup(self.model, self.rbf.mixture))

    def update(self, sigma: ModeMixture, u: int, y):
        out = gm_belief_update(self.model, self.rbf, sigma, u, y, cap=self.cap)
        before = sigma.total_weights().sum()
        after = out.total_weights().sum()
        if not after >= 1e-300:
            raise DegenerateObservationError(f"information state weight {after:.3g} underflowed")
        return out, float(after / before) if before > 0 else 0.0

    def normalized(self, sigma: ModeMixture) -> ModeMixture:
        tot = sigma.total_weights().sum()
        return sigma.scaled(1.0 / tot) if tot > 0 else sigma

    def sample_observation(self, sigma: ModeMixture, u: int, rng: np.random.Generator):
        from .model import HybridState, sample_observation, sample_transition

        w = np.concatenate([m.weights for m in sigma.modes])
        if w.sum() <= 0:
            raise DegenerateObservationError("information state has no mass")
        k = int(rng.choice(w.size, p=w / w.sum()))
        for q, mix in enumerate(sigma.modes):
            if k < len(mix):
                break
            k -= len(mix)
        x = rng.multivariate_normal(mix.means[k], mix.covs[k])
        s_next = sample_transition(self.model, HybridState(x, q), u, rng)
        return sample_observation(self.model, s_next, rng)

    def backup(self, gamma_next, sigma):
        alpha, _score = gm_alpha_backup(self.model, self.rbf, self.obs, self.mesh, gamma_next, sigma, self.cap)
        return alpha, self.value(alpha, sigma)

    def value(self, alpha: GmAlpha, sigma: ModeMixture) -> float:
        return mode_inner_product(alpha.mixture, sigma)

    def alpha_to_json(self, alpha: GmAlpha) -> dict:
        return {"u": alpha.u, "sup": alpha.sup, "components": alpha.mixture.to_json()}

    def alpha_from_json(self, doc: dict) -> GmAlpha:
        mix = ModeMixture.from_json(doc["components"], self.model.n_modes, self.model.dim)
        return GmAlpha(mix, int(doc["u"]), float(doc["sup"]))

    def peak_density(self, sigma: ModeMixture) -> float:
        """Largest normalized component density of ``sigma`` (0 if empty)."""
        peaks = [float(np.max(gauss_peak(m.covs))) for m in sigma.modes if len(m)]
        return max(peaks) if peaks else 0.0

    def belief_distance(self, a: ModeMixture, b: ModeMixture) -> float:
        """L1 distance between normalized information states on a mesh of the safe boxes."""
        a, b = self.normalized(a), self.normalized(b)
        total = 0.0
        for q in range(self.model.n_modes):
            lo, hi = self.model.safe_lo[q] - 3, self.model.safe_hi[q] + 3
            per_axis = max(2, int(round(2000 ** (1.0 / self.model.dim))))
            grids = [np.linspace(lo[d], hi[d], per_axis) for d in range(self.model.dim)]
            pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, self.model.dim)
            cell = np.prod((hi - lo) / (per_axis - 1))
            total += float(np.sum(np.abs(a.modes[q].evaluate(pts) - b.modes[q].evaluate(pts))) * cell)
        return total
