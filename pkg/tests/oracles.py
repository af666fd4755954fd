"""Independent reference computations used by the unit and acceptance tests.

Nothing here calls the package's solver or closed-form routines: the finite
oracle enumerates every conditional plan, and the mixture oracles integrate
the defining integrals on a dense mesh.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import trapezoid

from hybrid_safety.gaussian import gauss
from hybrid_safety.pbvi import BeliefSet

XS = np.linspace(-8.0, 12.0, 4001)


# ------------------------------------------------------------- finite POMDP


def tiny_pomdp(seed: int, n_safe: int = 5, n_obs: int = 2, n_inputs: int = 2):
    """Random finite safety POMDP: ``n_safe`` safe states plus an absorbing unsafe one."""
    rng = np.random.default_rng(seed)
    Z = n_safe + 1
    T = np.zeros((n_inputs, Z, Z))
    for u in range(n_inputs):
        T[u, :n_safe] = rng.dirichlet(np.full(Z, 0.7), size=n_safe)
        T[u, n_safe, n_safe] = 1.0
    G = rng.dirichlet(np.ones(n_obs), size=n_safe).T  # (n_obs, n_safe), strictly positive
    G = 0.9 * G + 0.1 / n_obs
    rho = np.append(rng.dirichlet(np.ones(n_safe)), 0.0)
    return T, G, rho


def enumerate_alpha_sets(T, G, N):
    """Every α-vector of every depth-``N`` conditional plan, level by level.

    ``out[n]`` lists ``(values, u)`` for all plans of length ``N - n``;
    ``out[N]`` is the terminal indicator of the safe states.
    """
    nU, Z, _ = T.shape
    K = Z - 1
    nW = G.shape[0]
    out = [None] * (N + 1)
    out[N] = [(np.ones(K), 0)]
    for n in range(N - 1, -1, -1):
        level = []
        nxt = [a for a, _ in out[n + 1]]
        for u in range(nU):
            for choice in itertools.product(range(len(nxt)), repeat=nW):
                beta = sum(G[w] * nxt[k] for w, k in enumerate(choice))
                level.append((T[u, :K, :K] @ beta, u))
        out[n] = level
    return out


def exact_value(alpha_set, b):
    K = alpha_set[0][0].size
    return max(float(a @ b[:K]) for a, _ in alpha_set)


def reachable_beliefs(backend, N):
    """All beliefs reachable from ``rho`` under every action/observation sequence."""
    levels = [[backend.initial_belief(None)]]
    lineage = [[("rho",)]]
    for n in range(N):
        lvl, lin = [], []
        for b in levels[n]:
            for u in range(backend.T.shape[0]):
                for w in range(backend.G.shape[0]):
                    b2, _ = backend.update(b, u, w)
                    lvl.append(b2)
                    lin.append((u, w))
        levels.append(lvl)
        lineage.append(lin)
    return BeliefSet(levels, lineage, [])


# ------------------------------------------------------------- mixture oracles


def quad_belief_update(model, rbf, sigma, u, y_x, xs=XS):
    """Mesh quadrature of the unnormalized mixture update for a scalar one-mode model."""
    a, g, V, W = model.A[0, 0, 0], model.g[0, u, 0], model.V[0, 0], model.W[0, 0]
    src = rbf.mixture.modes[0].evaluate(xs[:, None]) * sigma.modes[0].evaluate(xs[:, None])
    kern = gauss(xs[:, None, None], (a * xs + g)[None, :, None], np.array([[V]]))  # [x', x]
    pred = trapezoid(kern * src[None, :], xs, axis=1) * model.Tq[u, 0, 0]
    return pred * gauss(np.array([y_x]), xs[:, None], np.array([[W]])) * model.Yq[0, 0]


def quad_alpha_term(model, rbf, alpha_next, u, nodes, cw, xs=XS):
    """Mesh quadrature of one observation cell's α contribution for a scalar one-mode model."""
    a, g, V, W = model.A[0, 0, 0], model.g[0, u, 0], model.V[0, 0], model.W[0, 0]
    obs = gauss(np.asarray(nodes)[None, :, :], xs[:, None, None], np.array([[W]])) @ np.asarray(cw)
    inner = alpha_next.modes[0].evaluate(xs[:, None]) * obs
    kern = gauss(xs[None, :, None], (a * xs + g)[:, None, None], np.array([[V]]))  # [x, x']
    out = trapezoid(kern * inner[None, :], xs, axis=1) * model.Tq[u, 0, 0] * model.Yq[0, 0]
    return rbf.mixture.modes[0].evaluate(xs[:, None]) * out


def rel_l1(approx, ref, xs=XS):
    return float(trapezoid(np.abs(approx - ref), xs) / trapezoid(np.abs(ref), xs))
