"""Dense linear-algebra kernel.

All matrices are ``numpy.float64`` arrays in C (row-major) order.  Stacked
vectors of multivariate models use equation-major layout: for an ``M x G``
matrix ``U`` the stacked vector is ``vec(U)``, i.e. column ``j`` of ``U``
occupies entries ``j*M:(j+1)*M``.  `vec` and `unvec` are the only places that
translate between the two views.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import NotSymmetric, RankDeficient, SingularCovariance, SingularTriangular

RANK_TOL = 1e-10
SYM_TOL = 1e-12

#: Identity of the random generator, recorded in every experiment output.
GENERATOR = "numpy.random.PCG64 via SeedSequence"


@dataclass(frozen=True)
class QrFull:
    """Complete QR factorisation ``A = [Q_R Q_N] [R; 0]``."""

    qr_basis: np.ndarray
    null_basis: np.ndarray
    r_factor: np.ndarray

    @property
    def q(self):
        return np.hstack([self.qr_basis, self.null_basis])


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def vec(U):
    """Stack the columns of ``U`` (``M x G``) into an ``M*G`` vector."""
    return np.ascontiguousarray(np.asarray(U, dtype=float).T).reshape(-1)


def unvec(u, rows):
    """Inverse of `vec`: rebuild the ``rows x G`` matrix."""
    u = np.asarray(u, dtype=float)
    return u.reshape(-1, rows).T.copy()


def _check_rank(r, rank_tol):
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return
    top = diag.max()
    if top == 0.0 or diag.min() <= rank_tol * top:
        raise RankDeficient(
            f"matrix is numerically rank deficient "
            f"(min/max |R_ii| = {diag.min() / top if top else 0.0:.3e})"
        )


def qr_full(A, rank_tol=RANK_TOL) -> QrFull:
    """Householder QR of an ``m x n`` matrix with ``m >= n``.

    Raises
    ------
    RankDeficient
        If ``min |R_ii| <= rank_tol * max |R_ii|``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("qr_full expects a 2-D array")
    m, n = A.shape
    if m < n:
        raise ValueError(f"qr_full needs m >= n, got {A.shape}")
    q, r = np.linalg.qr(A, mode="complete")
    r = r[:n]
    _check_rank(r, rank_tol)
    return QrFull(qr_basis=q[:, :n], null_basis=q[:, n:], r_factor=np.triu(r))


def qr_thin(A, rank_tol=RANK_TOL):
    """Economy QR ``A = q r`` with ``q`` semi-orthogonal and ``r`` upper triangular."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise ValueError(f"qr_thin needs a tall 2-D array, got shape {A.shape}")
    q, r = np.linalg.qr(A, mode="reduced")
    _check_rank(r, rank_tol)
    return q, np.triu(r)


def tri_solve(R, B, side="left", transpose=False):
    """Solve ``op(R) X = B`` (``side='left'``) or ``X op(R) = B`` (``side='right'``).

    ``R`` is upper triangular and ``op(R)`` is ``R`` or ``R^T``.
    """
    R = np.asarray(R, dtype=float)
    B = np.asarray(B, dtype=float)
    if R.size and np.any(np.diag(R) == 0.0):
        raise SingularTriangular("triangular factor has a zero diagonal entry")
    if side == "left":
        return sla.solve_triangular(R, B, lower=False, trans="T" if transpose else "N",
                                    check_finite=False)
    if side == "right":
        # X op(R) = B  <=>  op(R)^T X^T = B^T
        xt = sla.solve_triangular(R, B.T, lower=False, trans="N" if transpose else "T",
                                  check_finite=False)
        return xt.T
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def is_symmetric(S, tol=SYM_TOL):
    S = np.asarray(S)
    scale = np.max(np.abs(S)) if S.size else 0.0
    if scale == 0.0:
        return True
    return np.max(np.abs(S - S.T)) <= tol * scale


def sym_eig(S, tol=SYM_TOL) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {S.shape}")
    if not is_symmetric(S, tol):
        raise NotSymmetric("matrix is not symmetric to tolerance")
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    return SymEig(eigenvalues=lam, eigenvectors=V)


def cholesky(S):
    """Lower Cholesky factor; raises `SingularCovariance` if ``S`` is not PD."""
    try:
        return np.linalg.cholesky(np.asarray(S, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("matrix is not positive definite") from exc


def chol_solve(L, B):
    """Solve ``L L^T X = B`` given the lower Cholesky factor."""
    y = sla.solve_triangular(L, B, lower=True, check_finite=False)
    return sla.solve_triangular(L, y, lower=True, trans="T", check_finite=False)


def make_rng(seed, *keys):
    """Independent, reproducible generator for the sub-stream ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def seeded_gaussian(rows, cols, mean=0.0, stddev=1.0, seed=0):
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    rng = make_rng(seed)
    return mean + stddev * rng.standard_normal((rows, cols))


def random_orthogonal(dim, rng):
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def read_matrix_csv(path):
    """Read a matrix written by `write_matrix_csv` (first line: ``rows,cols``)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        rows, cols = (int(tok) for tok in header.split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if rows * cols else np.empty((0, 0))
    data = np.asarray(data, dtype=float).reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries")
    return data


def write_matrix_csv(path, A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    with Path(path).open("w") as fh:
        fh.write(f"{A.shape[0]},{A.shape[1]}\n")
        np.savetxt(fh, A, delimiter=",", fmt="%.17g")
