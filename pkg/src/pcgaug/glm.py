"""General linear model, covariance operators and direct (oracle) estimators."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse.linalg as spla
from scipy.linalg import solve_triangular

from . import linalg as la
from .errors import NotSymmetric, NullspaceSingular, RankDeficient

PD_TOL = 1e-10


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    BREAKDOWN = "breakdown"
    STAGNATION = "stagnation"
    MAX_ITER = "max_iter"
    DIRECT = "direct"


# -- covariance operators ---------------------------------------------------


class SymmetricOperator:
    """Symmetric positive semi-definite ``m x m`` operator.

    Subclasses implement `apply` for vectors and for matrices whose columns
    are vectors.
    """

    dim: int

    def apply(self, v):
        raise NotImplementedError

    def __matmul__(self, v):
        return self.apply(v)

    def to_dense(self):
        return self.apply(np.eye(self.dim))

    def diagonal(self):
        return np.diag(self.to_dense())

    def norm_estimate(self, iters=30):
        """Power-iteration estimate of the spectral norm (deterministic probe)."""
        v = la.make_rng(12345).standard_normal(self.dim)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            u = self.apply(v)
            lam = np.linalg.norm(u)
            if lam == 0.0:
                return 0.0
            v = u / lam
        return float(lam)

    def scaled(self, alpha):
        raise NotImplementedError


class DenseSymmetric(SymmetricOperator):
    def __init__(self, matrix):
        S = np.asarray(matrix, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise NotSymmetric(f"covariance must be square, got {S.shape}")
        if not la.is_symmetric(S):
            raise NotSymmetric("covariance is not symmetric to tolerance")
        self.matrix = 0.5 * (S + S.T)
        self.dim = S.shape[0]

    def apply(self, v):
        return self.matrix @ v

    def to_dense(self):
        return self.matrix.copy()

    def diagonal(self):
        return np.diag(self.matrix).copy()

    def scaled(self, alpha):
        return DenseSymmetric(alpha * self.matrix)


class KroneckerIdentity(SymmetricOperator):
    """``core ⊗ I_block`` acting on equation-major stacked vectors.

    With ``u = vec(U)``, ``U`` of shape ``block x G``, the product is
    ``vec(U core)``; in the stacked layout that is ``core @ u.reshape(G, block)``.
    """

    def __init__(self, core, block):
        self.core = DenseSymmetric(core).matrix
        self.block = int(block)
        self.groups = self.core.shape[0]
        self.dim = self.groups * self.block

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        G, M = self.groups, self.block
        if v.ndim == 1:
            return (self.core @ v.reshape(G, M)).reshape(-1)
        k = v.shape[1]
        out = np.tensordot(self.core, v.reshape(G, M, k), axes=(1, 0))
        return out.reshape(G * M, k)

    def to_dense(self):
        return np.kron(self.core, np.eye(self.block))

    def diagonal(self):
        return np.repeat(np.diag(self.core), self.block)

    def scaled(self, alpha):
        return KroneckerIdentity(alpha * self.core, self.block)


class BlockZeroPadded(SymmetricOperator):
    """``diag(top, 0_k)``: the covariance of a model with ``k`` exact constraints."""

    def __init__(self, top, zero_rows):
        self.top = top if isinstance(top, SymmetricOperator) else DenseSymmetric(top)
        self.zero_rows = int(zero_rows)
        self.dim = self.top.dim + self.zero_rows

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        t = self.top.dim
        out = np.zeros_like(v)
        out[:t] = self.top.apply(v[:t])
        return out

    def to_dense(self):
        out = np.zeros((self.dim, self.dim))
        out[: self.top.dim, : self.top.dim] = self.top.to_dense()
        return out

    def diagonal(self):
        return np.concatenate([self.top.diagonal(), np.zeros(self.zero_rows)])

    def scaled(self, alpha):
        return BlockZeroPadded(self.top.scaled(alpha), self.zero_rows)


def as_operator(sigma):
    if isinstance(sigma, SymmetricOperator):
        return sigma
    return DenseSymmetric(sigma)


def dense_regressor(X):
    """Dense array for ``X``, which may be an array or a `LinearOperator`."""
    if isinstance(X, np.ndarray):
        return X
    return np.asarray(X @ np.eye(X.shape[1]))


# -- the model and its solutions --------------------------------------------


@dataclass
class Glm:
    """``y = X beta + eps`` with ``cov(eps) = sigma``.

    ``X`` is a dense array or a structured `scipy.sparse.linalg.LinearOperator`.
    """

    y: np.ndarray
    X: object
    sigma: SymmetricOperator

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if isinstance(self.X, np.ndarray) or not isinstance(self.X, spla.LinearOperator):
            self.X = np.asarray(self.X, dtype=float)
            if self.X.ndim == 1:
                self.X = self.X[:, None]
        self.sigma = as_operator(self.sigma)
        m, n = self.X.shape
        if self.y.shape[0] != m or self.sigma.dim != m:
            raise ValueError(
                f"inconsistent dimensions: y {self.y.shape}, X {self.X.shape}, "
                f"sigma {self.sigma.dim}"
            )
        if not m > n >= 1:
            raise ValueError(f"need m > n >= 1, got m={m}, n={n}")

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def dense_x(self):
        return dense_regressor(self.X)

    def scaled(self, alpha):
        return Glm(self.y, self.X, self.sigma.scaled(alpha))


@dataclass
class GlsSolution:
    b: np.ndarray
    w: np.ndarray
    iterations: int
    termination: Termination
    residual_seminorm: float = 0.0
    estimator_cov: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def aug_residual(self, glm):
        """``(||Sigma w + X b - y||, ||X^T w||)``."""
        res = glm.sigma @ self.w + glm.X @ self.b - glm.y
        return float(np.linalg.norm(res)), float(np.linalg.norm(glm.X.T @ self.w))


class NullspaceCheck(NamedTuple):
    ok: bool
    min_eig: float
    max_eig: float


# -- direct estimators ------------------------------------------------------


def ols_estimate(X, y, rank_tol=la.RANK_TOL) -> GlsSolution:
    X = dense_regressor(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    q, r = la.qr_thin(X, rank_tol)
    b = la.tri_solve(r, q.T @ y)
    return GlsSolution(b=b, w=np.zeros_like(y), iterations=0, termination=Termination.DIRECT)


def gls_estimate_direct(glm: Glm, with_cov=False) -> GlsSolution:
    """Textbook GLS through the Cholesky factor of a non-singular ``Sigma``.

    Raises `SingularCovariance` when ``Sigma`` is not positive definite.
    """
    L = la.cholesky(glm.sigma.to_dense())
    X = glm.dense_x()
    Xw = solve_triangular(L, X, lower=True)
    yw = solve_triangular(L, glm.y, lower=True)
    q, r = la.qr_thin(Xw)
    b = la.tri_solve(r, q.T @ yw)
    w = la.chol_solve(L, glm.y - X @ b)
    cov = None
    if with_cov:
        rinv = la.tri_solve(r, np.eye(glm.n))
        cov = rinv @ rinv.T
    return GlsSolution(b=b, w=w, iterations=0, termination=Termination.DIRECT, estimator_cov=cov)


def _nullspace_blocks(glm):
    qr = la.qr_full(glm.dense_x())
    S = glm.sigma.to_dense()
    sq_n = S @ qr.null_basis
    A = qr.null_basis.T @ sq_n
    return qr, S, 0.5 * (A + A.T)


def check_positivity_on_nullspace(glm: Glm, pd_tol=PD_TOL) -> NullspaceCheck:
    """Whether ``v^T Sigma v > 0`` for every non-zero ``v`` with ``X^T v = 0``."""
    _, _, A = _nullspace_blocks(glm)
    lam = la.sym_eig(A).eigenvalues
    top = float(lam[-1])
    low = float(lam[0])
    return NullspaceCheck(ok=bool(top > 0 and low > pd_tol * top), min_eig=low, max_eig=top)


def _nullspace_cholesky(A, pd_tol):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NullspaceSingular("Q_N^T Sigma Q_N is not positive definite") from exc
    d = np.diag(L) ** 2
    if d.min() <= pd_tol * np.max(np.diag(A)):
        raise NullspaceSingular("Q_N^T Sigma Q_N is numerically singular")
    return L


def blue_augmented_direct(glm: Glm, with_cov=False, pd_tol=PD_TOL) -> GlsSolution:
    """BLUE from the augmented system, valid for singular ``Sigma``.

    Rotating by the complete QR of ``X`` gives ``w = Q_N A^{-1} Q_N^T y`` and
    ``b = R^{-1}(y_R - Sigma_RN A^{-1} y_N)`` with ``A = Q_N^T Sigma Q_N``.
    """
    qr, S, A = _nullspace_blocks(glm)
    L = _nullspace_cholesky(A, pd_tol)
    QR, QN, R = qr.qr_basis, qr.null_basis, qr.r_factor
    y_r, y_n = QR.T @ glm.y, QN.T @ glm.y
    s_rn = QR.T @ S @ QN
    w_n = la.chol_solve(L, y_n)
    w = QN @ w_n
    b = la.tri_solve(R, y_r - s_rn @ w_n)
    cov = None
    if with_cov:
        s_rr = QR.T @ S @ QR
        inner = s_rr - s_rn @ la.chol_solve(L, s_rn.T)
        rinv = la.tri_solve(R, np.eye(glm.n))
        cov = rinv @ inner @ rinv.T
        cov = 0.5 * (cov + cov.T)
    return GlsSolution(b=b, w=w, iterations=0, termination=Termination.DIRECT, estimator_cov=cov)


def projector_pn(glm: Glm, pd_tol=PD_TOL) -> spla.LinearOperator:
    """``P_N = I - Sigma Q_N (Q_N^T Sigma Q_N)^{-1} Q_N^T`` as a linear operator."""
    qr, S, A = _nullspace_blocks(glm)
    L = _nullspace_cholesky(A, pd_tol)
    QN = qr.null_basis
    sq_n = S @ QN

    def matvec(v):
        v = np.asarray(v, dtype=float)
        return v - sq_n @ la.chol_solve(L, QN.T @ v)

    def rmatvec(v):
        v = np.asarray(v, dtype=float)
        return v - QN @ la.chol_solve(L, sq_n.T @ v)

    m = glm.m
    return spla.LinearOperator((m, m), matvec=matvec, rmatvec=rmatvec, matmat=matvec,
                               dtype=float)


def require_rank(X, rank_tol=la.RANK_TOL):
    """Raise `RankDeficient` unless ``X`` has full column rank."""
    la.qr_thin(dense_regressor(X), rank_tol)
    return True


__all__ = [
    "BlockZeroPadded",
    "DenseSymmetric",
    "Glm",
    "GlsSolution",
    "KroneckerIdentity",
    "NullspaceCheck",
    "RankDeficient",
    "SymmetricOperator",
    "Termination",
    "blue_augmented_direct",
    "check_positivity_on_nullspace",
    "gls_estimate_direct",
    "ols_estimate",
    "projector_pn",
]
