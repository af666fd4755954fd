"""Gaussian density and mixture algebra.

Components are stored as stacked arrays (means ``(K, m)`` next to covariances
``(K, m, m)``) so that the Gaussian identities vectorize over whole mixtures. Mixtures are unnormalized: weights of
value-function mixtures routinely exceed one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

from .errors import ContractViolation

COV_FLOOR = 1e-12
SYM_TOL = 1e-10


def regularize_cov(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and lift eigenvalues of one or many covariances to COV_FLOOR."""
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    evals = np.linalg.eigvalsh(cov)
    if np.all(evals > COV_FLOOR):
        return cov
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, COV_FLOOR)
    return np.einsum("...ij,...j,...kj->...ik", evecs, evals, evecs)


def _inv_logdet(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if cov.shape[-1] == 1:
        return 1.0 / cov, np.log(cov[..., 0, 0])
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise ContractViolation("covariance is not positive definite")
    return np.linalg.inv(cov), logdet


def log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log of phi(x; mean, cov), broadcasting over leading axes."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = cov.shape[-1]
    d = x - mean
    if m == 1:
        var = cov[..., 0, 0]
        return -0.5 * (d[..., 0] ** 2 / var + np.log(2.0 * np.pi * var))
    prec, logdet = _inv_logdet(cov)
    maha = np.einsum("...i,...ij,...j->...", d, prec, d)
    return -0.5 * (maha + logdet + m * np.log(2.0 * np.pi))


def gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """phi(x; mean, cov), broadcasting over leading axes."""
    return np.exp(log_gauss(x, mean, cov))


def gauss_peak(cov: np.ndarray) -> np.ndarray:
    """Maximum value (2 pi)^(-m/2) |cov|^(-1/2) of a normalized Gaussian."""
    cov = np.asarray(cov, dtype=float)
    m = cov.shape[-1]
    return (2.0 * np.pi) ** (-m / 2) / np.sqrt(np.linalg.det(cov))


def product_arrays(mu1, cov1, mu2, cov2):
    """Vectorized Gaussian product identity.

    Returns ``(scale, mean, cov)`` with
    ``phi(x; mu1, cov1) phi(x; mu2, cov2) = scale * phi(x; mean, cov)``.
    All inputs broadcast against each other.
    """
    mu1, mu2 = np.asarray(mu1, float), np.asarray(mu2, float)
    cov1, cov2 = np.asarray(cov1, float), np.asarray(cov2, float)
    scale = gauss(mu1, mu2, cov1 + cov2)
    if cov1.shape[-1] == 1:
        p1 = 1.0 / cov1
        p2 = 1.0 / cov2
        cov = 1.0 / (p1 + p2)
        mean = cov[..., 0] * (p1[..., 0] * mu1 + p2[..., 0] * mu2)
        return scale, mean, cov
    p1 = np.linalg.inv(cov1)
    p2 = np.linalg.inv(cov2)
    cov = np.linalg.inv(p1 + p2)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    info = np.einsum("...ij,...j->...i", p1, mu1) + np.einsum("...ij,...j->...i", p2, mu2)
    mean = np.einsum("...ij,...j->...i", cov, info)
    return scale, mean, cov


def condition_arrays(mean, cov, C, W, y):
    """Multiply phi(x; mean, cov) by the likelihood phi(y; C x, W).

    Returns ``(scale, post_mean, post_cov)`` where scale = phi(y; C mean, W + C cov C^T)
    is the evidence. ``C`` may be non-square; nothing is inverted except the
    innovation covariance.
    """
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    y = np.asarray(y, float)
    pred_y = np.einsum("ij,...j->...i", C, mean)
    S = np.einsum("ij,...jk,lk->...il", C, cov, C) + W
    scale = gauss(y, pred_y, S)
    if S.shape[-1] == 1:
        S_inv = 1.0 / S
    else:
        S_inv = np.linalg.inv(S)
    PCt = np.einsum("...ij,kj->...ik", cov, C)
    gain = np.einsum("...ik,...kl->...il", PCt, S_inv)
    post_mean = mean + np.einsum("...ik,...k->...i", gain, y - pred_y)
    post_cov = cov - np.einsum("...ik,...jk->...ij", gain, PCt)
    post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, -1, -2))
    return scale, post_mean, post_cov


@dataclass(frozen=True)
class GaussianComponent:
    """A weighted Gaussian density ``weight * phi(x; mean, cov)``."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractViolation(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        if np.max(np.abs(cov - cov.T)) > SYM_TOL * max(1.0, np.max(np.abs(cov))):
            raise ContractViolation("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", regularize_cov(cov))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def dim(self) -> int:
        return self.mean.size

    def density(self, x) -> np.ndarray:
        """Normalized density phi(x; mean, cov) (weight not applied)."""
        return gauss(np.asarray(x, float), self.mean, self.cov)

    def __call__(self, x) -> np.ndarray:
        return self.weight * self.density(x)


def product(a: GaussianComponent, b: GaussianComponent) -> tuple[float, GaussianComponent]:
    """Product of two normalized Gaussian densities.

    Returns ``(scale, out)`` such that ``a.density(x) * b.density(x) ==
    scale * out.density(x)``; ``out`` carries unit weight.
    """
    if a.dim != b.dim:
        raise ContractViolation("product of Gaussians with different dimensions")
    scale, mean, cov = product_arrays(a.mean, a.cov, b.mean, b.cov)
    return float(scale), GaussianComponent(1.0, mean, cov)


def affine_pushforward(A, b, cov, y) -> tuple[float, GaussianComponent]:
    """Rewrite phi(y; A x + b, cov), as a function of x, as a density in x.

    Returns ``(|det A^-1|, phi(x; A^-1 (y - b), A^-1 cov A^-T))``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    if abs(np.linalg.det(A)) < 1e-10:
        raise ContractViolation("affine_pushforward requires an invertible matrix")
    A_inv = np.linalg.inv(A)
    y = np.atleast_1d(np.asarray(y, float))
    b = np.atleast_1d(np.asarray(b, float))
    mean = A_inv @ (y - b)
    out_cov = A_inv @ np.atleast_2d(cov) @ A_inv.T
    return float(abs(np.linalg.det(A_inv))), GaussianComponent(1.0, mean, 0.5 * (out_cov + out_cov.T))


@dataclass(frozen=True)
class Mixture:
    """Unnormalized Gaussian mixture over R^m stored as stacked arrays."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.asarray(self.means, dtype=float)
        P = np.asarray(self.covs, dtype=float)
        if mu.ndim == 1:
            mu = mu.reshape(w.size, -1)
        if P.ndim == 2 and w.size:
            P = P.reshape(w.size, mu.shape[1], mu.shape[1])
        if mu.shape[0] != w.size or P.shape[:1] != (w.size,):
            raise ContractViolation("mixture arrays have inconsistent lengths")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", P)

    @classmethod
    def empty(cls, dim: int) -> "Mixture":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(cls, comps: Sequence[GaussianComponent], dim: int) -> "Mixture":
        if not comps:
            return cls.empty(dim)
        return cls(
            np.array([c.weight for c in comps]),
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
        )

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self) -> int:
        return self.weights.size

    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(w, m, P) for w, m, P in zip(self.weights, self.means, self.covs)]

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def evaluate(self, x) -> np.ndarray:
        """Mixture value at points ``x`` of shape ``(..., m)``."""
        x = np.asarray(x, float)
        if len(self) == 0:
            return np.zeros(x.shape[:-1])
        vals = gauss(x[..., None, :], self.means, self.covs)
        return vals @ self.weights

    def scaled(self, c: float) -> "Mixture":
        return Mixture(self.weights * c, self.means, self.covs)

    def concat(self, other: "Mixture") -> "Mixture":
        return Mixture(
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.means, other.means]),
            np.concatenate([self.covs, other.covs]),
        )

    def prune(self, rel_tol: float = 0.0) -> "Mixture":
        """Drop components whose weight is <= rel_tol * largest weight (exact zeros always)."""
        if len(self) == 0:
            return self
        keep = self.weights > rel_tol * np.max(np.abs(self.weights))
        keep &= self.weights != 0.0
        return Mixture(self.weights[keep], self.means[keep], self.covs[keep])

    def peak_values(self) -> np.ndarray:
        """Per-component maxima of the normalized densities."""
        if len(self) == 0:
            return np.zeros(0)
        return gauss_peak(self.covs)


@dataclass(frozen=True)
class ModeMixture:
    """A mixture per discrete mode: ``f(x, q) = modes[q].evaluate(x)``."""

    modes: tuple[Mixture, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.modes[0].dim

    def counts(self) -> list[int]:
        return [len(m) for m in self.modes]

    def total_weights(self) -> np.ndarray:
        return np.array([m.total_weight() for m in self.modes])

    def evaluate(self, x, q: int) -> np.ndarray:
        return self.modes[q].evaluate(x)

    def scaled(self, c: float) -> "ModeMixture":
        return ModeMixture(tuple(m.scaled(c) for m in self.modes))

    def __add__(self, other: "ModeMixture") -> "ModeMixture":
        return ModeMixture(tuple(a.concat(b) for a, b in zip(self.modes, other.modes)))

    def to_json(self) -> list[dict]:
        out = []
        for q, mix in enumerate(self.modes):
            for w, mu, P in zip(mix.weights, mix.means, mix.covs):
                out.append({"mode": q, "weight": float(w), "mean": mu.tolist(), "cov": P.tolist()})
        return out

    @classmethod
    def from_json(cls, records: list[dict], n_modes: int, dim: int) -> "ModeMixture":
        per_mode: list[list[GaussianComponent]] = [[] for _ in range(n_modes)]
        for r in records:
            per_mode[int(r["mode"])].append(GaussianComponent(r["weight"], r["mean"], r["cov"]))
        return cls(tuple(Mixture.from_components(c, dim) for c in per_mode))


def mixture_evaluate(mix: ModeMixture, state) -> float:
    """Value of a mode-indexed mixture at a hybrid state ``(x, q)``."""
    return float(mix.evaluate(np.asarray(state.x, float), state.q))


def inner_product(a: Mixture, b: Mixture) -> float:
    """Closed-form L2 inner product of two mixtures over R^m."""
    if len(a) == 0 or len(b) == 0:
        return 0.0
    s = gauss(a.means[:, None, :], b.means[None, :, :], a.covs[:, None] + b.covs[None, :])
    return float(a.weights @ s @ b.weights)


def mode_inner_product(a: ModeMixture, b: ModeMixture) -> float:
    """<a, b> = sum_q integral a(x, q) b(x, q) dx."""
    return sum(inner_product(ma, mb) for ma, mb in zip(a.modes, b.modes))


# ---------------------------------------------------------------- box integrals


def interval_prob(lo, hi, mean, sd) -> np.ndarray:
    """P(lo <= X <= hi) for X ~ N(mean, sd^2), accurate in both tails."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    upper = a > 0
    # evaluate in the tail that avoids cancellation
    p_up = special.ndtr(-a) - special.ndtr(-b)
    p_lo = special.ndtr(b) - special.ndtr(a)
    return np.clip(np.where(upper, p_up, p_lo), 0.0, 1.0)


def box_prob_arrays(lo, hi, means, covs) -> np.ndarray:
    """Probability mass of N(means, covs) inside axis-aligned boxes [lo, hi].

    Diagonal covariances use exact erf products; correlated ones fall back to
    scipy's multivariate normal CDF after whitening the coordinates that are
    not correlated.
    """
    means = np.asarray(means, float)
    covs = np.asarray(covs, float)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    m = covs.shape[-1]
    off = covs - np.einsum("...ii->...i", covs)[..., None] * np.eye(m)
    if m == 1 or np.all(np.abs(off) <= 1e-15):
        sd = np.sqrt(np.einsum("...ii->...i", covs))
        return np.prod(interval_prob(lo, hi, means, sd), axis=-1)
    shape = np.broadcast_shapes(lo.shape[:-1], hi.shape[:-1], means.shape[:-1], covs.shape[:-2])
    lo_b = np.broadcast_to(lo, shape + (m,)).reshape(-1, m)
    hi_b = np.broadcast_to(hi, shape + (m,)).reshape(-1, m)
    mu_b = np.broadcast_to(means, shape + (m,)).reshape(-1, m)
    P_b = np.broadcast_to(covs, shape + (m, m)).reshape(-1, m, m)
    out = np.empty(lo_b.shape[0])
    for k in range(out.size):
        dist = stats.multivariate_normal(mean=mu_b[k], cov=P_b[k])
        out[k] = dist.cdf(hi_b[k], lower_limit=lo_b[k])
    return np.clip(out.reshape(shape), 0.0, 1.0)


def box_integral(component: GaussianComponent, lo, hi) -> float:
    """Integral of the normalized density of ``component`` over the box [lo, hi]."""
    lo = np.broadcast_to(np.asarray(lo, float), component.mean.shape)
    hi = np.broadcast_to(np.asarray(hi, float), component.mean.shape)
    return float(box_prob_arrays(lo, hi, component.mean, component.cov))


# -------------------------------------------------------------- reduction


def moment_match(weights, means, covs) -> tuple[float, np.ndarray, np.ndarray]:
    """Weight-preserving moment-matched merge of a group of components."""
    w = np.asarray(weights, float)
    total = w.sum()
    if total <= 0.0:
        return 0.0, means.mean(axis=0), covs.mean(axis=0)
    a = w / total
    mu = a @ means
    d = means - mu
    cov = np.einsum("k,kij->ij", a, covs) + np.einsum("k,ki,kj->ij", a, d, d)
    return float(total), mu, 0.5 * (cov + cov.T)


def _pair_l2_sq(means, covs, self_ip) -> np.ndarray:
    cross = gauss(means[:, None, :], means[None, :, :], covs[:, None] + covs[None, :])
    return self_ip[:, None] + self_ip[None, :] - 2.0 * cross


def l2_distance(a: GaussianComponent, b: GaussianComponent) -> float:
    """L2 distance between the normalized densities of two components."""
    aa = gauss_peak(2.0 * a.cov)
    bb = gauss_peak(2.0 * b.cov)
    ab = gauss(a.mean, b.mean, a.cov + b.cov)
    return float(np.sqrt(max(aa + bb - 2.0 * ab, 0.0)))


def reduce_mixture(mix: Mixture, cap: int) -> Mixture:
    """Greedy reduction of one mixture to at most ``cap`` components.

    Repeatedly moment-matches the pair of components whose normalized
    densities are closest in L2, until the count is at most ``cap``. Total
    weight is preserved; zero-weight components are dropped first.
    """
    if cap < 1:
        raise ContractViolation("reduction cap must be >= 1")
    if len(mix) <= cap:
        return mix
    mix = mix.prune(0.0)
    n = len(mix)
    if n <= cap:
        return mix
    w = mix.weights.copy()
    mu = mix.means.copy()
    P = mix.covs.copy()
    alive = np.ones(n, dtype=bool)
    self_ip = gauss_peak(2.0 * P)
    D = _pair_l2_sq(mu, P, self_ip)
    np.fill_diagonal(D, np.inf)
    row_min = D.min(axis=1)
    row_arg = D.argmin(axis=1)
    count = n
    while count > cap:
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        i, j = min(i, j), max(i, j)
        w_ij, mu_ij, P_ij = moment_match(w[[i, j]], mu[[i, j]], P[[i, j]])
        w[i], mu[i], P[i] = w_ij, mu_ij, P_ij
        alive[j] = False
        w[j] = 0.0
        D[j, :] = np.inf
        D[:, j] = np.inf
        self_ip[i] = gauss_peak(2.0 * P[i])
        cross = gauss(mu[i], mu, P[i] + P)
        d_i = self_ip[i] + self_ip - 2.0 * cross
        d_i[~alive] = np.inf
        d_i[i] = np.inf
        D[i, :] = d_i
        D[:, i] = d_i
        row_min[j] = np.inf
        stale = alive & ((row_arg == i) | (row_arg == j))
        stale[i] = True
        for k in np.flatnonzero(stale):
            row_arg[k] = int(np.argmin(D[k]))
            row_min[k] = D[k, row_arg[k]]
        better = alive & (d_i < row_min)
        better[i] = False
        row_min[better] = d_i[better]
        row_arg[better] = i
        count -= 1
    return Mixture(w[alive], mu[alive], P[alive])


def mixture_reduce(mix: ModeMixture, cap: int) -> ModeMixture:
    """Reduce every mode of ``mix`` to at most ``cap`` components."""
    if cap < 1:
        raise ContractViolation("reduction cap must be >= 1")
    return ModeMixture(tuple(reduce_mixture(m, cap) for m in mix.modes))


def merge_groups(weights, means, covs, groups: np.ndarray, n_groups: int) -> Mixture:
    """Moment-match all components sharing a group label into one component each.

    Empty or zero-weight groups are dropped.
    """
    weights = np.asarray(weights, float)
    m = means.shape[-1]
    tot = np.bincount(groups, weights=weights, minlength=n_groups)
    keep = tot > 0
    safe = np.where(keep, tot, 1.0)
    a = weights / safe[groups]
    mu = np.zeros((n_groups, m))
    np.add.at(mu, groups, a[:, None] * means)
    d = means - mu[groups]
    cov = np.zeros((n_groups, m, m))
    np.add.at(cov, groups, a[:, None, None] * (covs + d[:, :, None] * d[:, None, :]))
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return Mixture(tot[keep], mu[keep], cov[keep])


# ------------------------------------------------------------ L1 error


def _trapz_weights(n: int, h: float) -> np.ndarray:
    c = np.full(n, h)
    c[0] = c[-1] = 0.5 * h
    return c


def mixture_l1_error(mix: ModeMixture, boxes_lo, boxes_hi, tol: float = 1e-4, max_level: int = 14) -> float:
    """max_q of || 1_{K_q} - mix_q ||_1 by refined tensor-product trapezoid quadrature.

    The integration domain covers the box and eight standard deviations around
    every component. The mesh is doubled until two successive estimates differ
    by less than ``tol``; box edges are always mesh nodes.
    """
    lo_all = np.atleast_2d(np.asarray(boxes_lo, float))
    hi_all = np.atleast_2d(np.asarray(boxes_hi, float))
    errors = []
    for q, comp in enumerate(mix.modes):
        lo, hi = lo_all[q], hi_all[q]
        if len(comp) == 0:
            errors.append(float(np.prod(hi - lo)))
            continue
        sd = np.sqrt(np.einsum("kii->ki", comp.covs))
        dom_lo = np.minimum(lo, (comp.means - 8 * sd).min(axis=0))
        dom_hi = np.maximum(hi, (comp.means + 8 * sd).max(axis=0))
        prev = None
        est = None
        min_sd = sd.min(axis=0)
        base = np.maximum(
            np.ceil((dom_hi - dom_lo) / np.maximum(min_sd, 1e-9) * 2).astype(int), 8
        )
        for level in range(max_level):
            axes = []
            wts = []
            for a in range(lo.size):
                n_inner = max(2, int(np.ceil(base[a] * 2**level * (hi[a] - lo[a]) / (dom_hi[a] - dom_lo[a]))))
                pieces = []
                pw = []
                for s_lo, s_hi, frac in (
                    (dom_lo[a], lo[a], (lo[a] - dom_lo[a]) / (dom_hi[a] - dom_lo[a])),
                    (lo[a], hi[a], None),
                    (hi[a], dom_hi[a], (dom_hi[a] - hi[a]) / (dom_hi[a] - dom_lo[a])),
                ):
                    if s_hi - s_lo <= 0:
                        continue
                    n = n_inner if frac is None else max(2, int(np.ceil(base[a] * 2**level * frac)))
                    pts = np.linspace(s_lo, s_hi, n + 1)
                    pieces.append(pts)
                    pw.append(_trapz_weights(n + 1, (s_hi - s_lo) / n))
                axes.append(pieces)
                wts.append(pw)
            est = _l1_on_pieces(comp, lo, hi, axes, wts)
            if prev is not None and abs(est - prev) < tol:
                break
            prev = est
            if np.prod([sum(p.size for p in pa) for pa in axes]) > 4_000_000:
                break
        errors.append(float(est))
    return max(errors)


def _l1_on_pieces(comp: Mixture, lo, hi, axes, wts) -> float:
    # each axis is split at the box edges so the indicator is constant per piece
    import itertools

    total = 0.0
    for combo in itertools.product(*[range(len(pa)) for pa in axes]):
        grids = [axes[a][i] for a, i in enumerate(combo)]
        weights = [wts[a][i] for a, i in enumerate(combo)]
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1)
        wmesh = weights[0]
        for wa in weights[1:]:
            wmesh = np.multiply.outer(wmesh, wa)
        centre = np.array([0.5 * (g[0] + g[-1]) for g in grids])
        inside = float(np.all((centre >= lo) & (centre <= hi)))
        vals = comp.evaluate(mesh.reshape(-1, lo.size)).reshape(mesh.shape[:-1])
        total += float(np.sum(wmesh * np.abs(inside - vals)))
    return total
