"""Shared problem factories for the test suite."""

import numpy as np
import pytest

from pcgaug import Glm
from pcgaug import linalg as la


def spd_matrix(m, rng, cond=10.0):
    """SPD matrix with log-spaced eigenvalues in ``[1/cond, 1]``."""
    lam = np.logspace(0, -np.log10(cond), m)
    Q = la.random_orthogonal(m, rng)
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def random_glm(m, n, seed, cond=10.0):
    rng = la.make_rng(seed, 7)
    X = rng.standard_normal((m, n))
    S = spd_matrix(m, rng, cond)
    y = X @ rng.standard_normal(n) + np.linalg.cholesky(S) @ rng.standard_normal(m)
    return Glm(y, X, S)


def sweep_glm(seed):
    """One of the oracle-sweep problems: ``n <= 10``, ``m <= 60``, ``cond(Sigma) <= 1e6``."""
    rng = la.make_rng(seed, 99)
    n = int(rng.integers(1, 11))
    m = int(rng.integers(n + 2, 61))
    X = rng.standard_normal((m, n))
    cond = 10 ** rng.uniform(0, 6)
    lam = np.logspace(0, -np.log10(cond), m)
    Q = la.random_orthogonal(m, rng)
    S = (Q * lam) @ Q.T
    S = 0.5 * (S + S.T)
    y = X @ rng.standard_normal(n) + (Q * np.sqrt(lam)) @ rng.standard_normal(m)
    return Glm(y, X, S)


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def glm_small():
    return random_glm(12, 3, seed=1)


def constrained_gls_oracle(Z, zeta, Omega, C, gamma=None):
    """``min (zeta - Z b)^T Omega^-1 (zeta - Z b)`` subject to ``C b = gamma`` by the null-space method."""
    n = Z.shape[1]
    gamma = np.zeros(C.shape[0]) if gamma is None else gamma
    qr = la.qr_full(C.T)
    b0 = qr.qr_basis @ la.tri_solve(qr.r_factor, gamma, transpose=True)
    N = qr.null_basis
    L = np.linalg.cholesky(Omega)
    A = np.linalg.solve(L, Z @ N)
    rhs = np.linalg.solve(L, zeta - Z @ b0)
    theta = np.linalg.lstsq(A, rhs, rcond=None)[0]
    assert N.shape == (n, n - C.shape[0])
    return b0 + N @ theta


def random_rglm(seed, m=15, n=4, k=2, selection=True):
    from pcgaug import RestrictedGlm

    rng = la.make_rng(seed, 23)
    Z = rng.standard_normal((m, n))
    Om = spd_matrix(m, rng, cond=50.0)
    if selection:
        C = np.eye(n)[np.sort(rng.choice(n, size=k, replace=False))]
    else:
        C = rng.standard_normal((k, n))
    beta = rng.standard_normal(n)
    beta -= np.linalg.pinv(C) @ (C @ beta)
    zeta = Z @ beta + np.linalg.cholesky(Om) @ rng.standard_normal(m)
    return RestrictedGlm(Z, zeta, Om, C)


def spectrum_glm(m, n, eigenvalues, seed, coupling=0.1):
    """GLM whose ``H = I + (Sigma - I) Pi`` has exactly the given non-unit eigenvalues.

    In the basis ``[Q_R, Q_N]`` of the complete QR of ``X``, ``Sigma`` is
    ``[[A, B], [B^T, N]]`` with ``spec(N) = eigenvalues`` (cycled over
    ``m - n`` slots) and ``A`` chosen so that the Schur complement is ``I``.
    """
    rng = la.make_rng(seed, 31)
    X = rng.standard_normal((m, n))
    qr = la.qr_full(X)
    Q = qr.q
    mu = np.resize(np.asarray(eigenvalues, dtype=float), m - n)
    V = la.random_orthogonal(m - n, rng)
    N = (V * mu) @ V.T
    B = coupling * rng.standard_normal((n, m - n))
    A = np.eye(n) + B @ np.linalg.solve(N, B.T)
    T = np.block([[A, B], [B.T, N]])
    S = Q @ T @ Q.T
    S = 0.5 * (S + S.T)
    y = X @ rng.standard_normal(n) + np.linalg.cholesky(S) @ rng.standard_normal(m)
    return Glm(y, X, S)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
