"""Seeded generators for the synthetic studies.

Every generator draws from its own sub-stream of the experiment seed
(`pcgaug.linalg.make_rng`), so changing one part of a study never perturbs
the draws of another.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import linalg as la
from ..errors import BadMultiplicities, RankDeficient, UnstableSimulation
from ..structured import MvRglm, SurModel

log = logging.getLogger(__name__)

# sub-stream keys
_SIGMA, _REGRESSOR, _BETA, _NOISE, _VAR, _SUR = range(1, 7)


def gen_spectrum_sigma(dim, eigenvalues, multiplicities, seed):
    """Covariance ``Q diag(lambda) Q^T`` with Haar-random eigenvectors.

    Raises
    ------
    BadMultiplicities
        If the multiplicities do not sum to ``dim``.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    multiplicities = np.asarray(multiplicities, dtype=int)
    if eigenvalues.shape != multiplicities.shape:
        raise BadMultiplicities("one multiplicity per eigenvalue is required")
    if np.any(multiplicities < 0) or multiplicities.sum() != dim:
        raise BadMultiplicities(
            f"multiplicities sum to {multiplicities.sum()}, covariance dimension is {dim}"
        )
    if np.any(eigenvalues < 0):
        raise ValueError("eigenvalues must be non-negative")
    lam = np.repeat(eigenvalues, multiplicities)
    Q = la.random_orthogonal(dim, la.make_rng(seed, _SIGMA))
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def gen_regressor(m, n, seed, max_retries=10):
    """Constant first column, remaining entries i.i.d. ``N(0, m)``."""
    if not m > n >= 1:
        raise ValueError(f"need m > n >= 1, got m={m}, n={n}")
    for attempt in range(max_retries):
        rng = la.make_rng(seed, _REGRESSOR, attempt)
        X = np.empty((m, n))
        X[:, 0] = 1.0
        X[:, 1:] = np.sqrt(m) * rng.standard_normal((m, n - 1))
        try:
            la.qr_thin(X)
        except RankDeficient:
            log.warning("regressor draw %d rank deficient, redrawing", attempt)
            continue
        return X
    raise RankDeficient(f"no full-rank regressor after {max_retries} draws")


def draw_beta(n, seed):
    """Ground-truth coefficients, one standard-normal draw per experiment."""
    return la.make_rng(seed, _BETA).standard_normal(n)


def draw_response(X, beta, sigma_sqrt, seed, rep=0):
    """``y = X beta + sigma_sqrt @ e`` with ``e`` standard normal."""
    e = la.make_rng(seed, _NOISE, rep).standard_normal(X.shape[0])
    return X @ beta + sigma_sqrt @ e


def symmetric_sqrt(S):
    eig = la.sym_eig(S)
    lam = np.clip(eig.eigenvalues, 0.0, None)
    return (eig.eigenvectors * np.sqrt(lam)) @ eig.eigenvectors.T


# -- VAR models ---------------------------------------------------------------


@dataclass
class VarSpec:
    """Restricted VAR design: ``Y = Z0 B + U`` with ``Z0`` the lags of a VAR(p) series."""

    G: int = 6
    M: int = 100
    lags: int = 4
    lambda_max: float = 0.9
    sparsity: float = 0.26
    omega_cond: float = 4.48
    burn_in: int = 200

    def __post_init__(self):
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if self.omega_cond < 1:
            raise ValueError("omega_cond must be >= 1")

    @property
    def N(self):
        return self.G * self.lags


def companion(coefs):
    """Companion matrix of ``x_t = sum_j A_j x_{t-j}``."""
    p = len(coefs)
    G = coefs[0].shape[0]
    F = np.zeros((G * p, G * p))
    F[:G] = np.hstack(coefs)
    F[G:, :-G] = np.eye(G * (p - 1))
    return F


def largest_root(coefs):
    return float(np.max(np.abs(np.linalg.eigvals(companion(coefs)))))


def _log_spaced_cov(G, cond, rng):
    lam = np.logspace(0.0, np.log10(cond), G)
    Q = la.random_orthogonal(G, rng)
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def gen_var_model(spec: VarSpec, seed):
    """Restricted multivariate model built around a VAR(p) regressor.

    The VAR coefficients are rescaled, ``A_j -> s^j A_j``, which multiplies
    every companion root by ``s``, so the largest root is ``lambda_max`` by
    construction.  ``B`` is the stacked coefficient matrix with a fraction
    ``sparsity`` of its entries set to zero; the restrictions are exactly
    that zero pattern (each equation keeps at least one free regressor).

    Returns
    -------
    model : MvRglm
    B : ndarray, ``N x G``
    info : dict
        Achieved largest root, number of restrictions, regressor condition.
    """
    G, p, M = spec.G, spec.lags, spec.M
    rng = la.make_rng(seed, _VAR)
    coefs = [rng.standard_normal((G, G)) / (np.sqrt(G) * (j + 1)) for j in range(p)]
    s = spec.lambda_max / largest_root(coefs)
    coefs = [A * s ** (j + 1) for j, A in enumerate(coefs)]
    root = largest_root(coefs)

    # burn-in forgets the start-up only for a stationary series; an explosive
    # one has no limit to forget towards and burn-in just drives the lags collinear
    burn = spec.burn_in if spec.lambda_max < 1.0 else 0
    total = M + p + burn
    x = np.zeros((total, G))
    innov = rng.standard_normal((total, G))
    for t in range(p, total):
        x[t] = sum(coefs[j] @ x[t - j - 1] for j in range(p)) + innov[t]
        if not np.all(np.isfinite(x[t])) or np.abs(x[t]).max() > 1e150:
            raise UnstableSimulation(f"VAR series overflowed at step {t}")
    x = x[burn:]
    scale = np.abs(x).max()
    if scale > 1e6:
        # explosive series: one global rescale keeps the regressor's conditioning
        x = x / scale
    Z0 = np.hstack([x[p - j - 1: p - j - 1 + M] for j in range(p)])

    B = np.vstack([A.T for A in coefs])  # N x G, row block j holds A_j^T
    n_zero = int(round(spec.sparsity * B.size))
    restrictions = _sparsify(B, n_zero, rng)

    Omega0 = _log_spaced_cov(G, spec.omega_cond, rng)
    L = np.linalg.cholesky(Omega0)
    U = rng.standard_normal((M, G)) @ L.T
    Y = Z0 @ B + U
    model = MvRglm(Z0, Y, Omega0, restrictions)
    info = {
        "largest_root": root,
        "restrictions": model.k,
        "zero_count": int(np.sum(B == 0.0)),
        "cond_Z0": float(np.linalg.cond(Z0)),
        "cond_Omega0": float(np.linalg.cond(Omega0)),
    }
    return model, B, info


def _sparsify(B, n_zero, rng):
    """Zero ``n_zero`` entries of ``B`` in place, never a whole column."""
    N, G = B.shape
    n_zero = min(n_zero, G * (N - 1))
    keep = rng.integers(0, N, size=G)  # one protected regressor per equation
    candidates = [(r, c) for c in range(G) for r in range(N) if r != keep[c]]
    pick = rng.choice(len(candidates), size=n_zero, replace=False)
    restrictions = [[] for _ in range(G)]
    for idx in np.sort(pick):
        r, c = candidates[idx]
        B[r, c] = 0.0
        restrictions[c].append(r)
    return restrictions


# -- SUR models ---------------------------------------------------------------


def gen_sur_model(M, widths, seed, common_pool=None, sigma_cond=10.0, beta=None):
    """Synthetic SUR model with heterogeneous block widths.

    With ``common_pool = N`` every block is a column subset of one ``M x N``
    matrix ``Z0`` (the structure that also admits the restricted
    multivariate formulation); otherwise blocks are independent draws.

    Returns ``(SurModel, beta, Z0 or None, column lists or None)``.
    """
    rng = la.make_rng(seed, _SUR)
    G = len(widths)
    Z0 = cols = None
    if common_pool is not None:
        Z0 = rng.standard_normal((M, common_pool))
        cols = [np.sort(rng.choice(common_pool, size=k, replace=False)) for k in widths]
        blocks = [Z0[:, c] for c in cols]
    else:
        blocks = [rng.standard_normal((M, k)) for k in widths]
    Sigma0 = _log_spaced_cov(G, sigma_cond, rng)
    if beta is None:
        beta = rng.standard_normal(sum(widths))
    L = np.linalg.cholesky(Sigma0)
    U = rng.standard_normal((M, G)) @ L.T
    offs = np.cumsum([0] + list(widths))
    Y = np.column_stack([blocks[i] @ beta[offs[i]: offs[i + 1]] for i in range(G)]) + U
    return SurModel(blocks, Y, Sigma0), beta, Z0, cols
