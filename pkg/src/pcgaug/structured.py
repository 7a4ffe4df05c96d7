"""Indefinite preconditioners and structured linear models.

Every preconditioner exposes the two operators the PCG-Aug iteration needs,
``Pi`` (an oblique projector onto the null space of ``X^T``) and ``X*^T``
(a pseudo-inverse of ``X``), for an auxiliary matrix ``D``::

    X* = D^{-1} X (X^T D^{-1} X)^{-1},      Pi = (I - X* X^T) D^{-1}

Applying ``X*^T`` and ``Pi`` to ``r`` is the GLS fit of the auxiliary model
``r = X g + eta``, ``cov(eta) = D``: coefficients and (scaled) residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import linalg as la
from .errors import RankDeficient, SingularD, SingularProjectedGram
from .glm import (
    BlockZeroPadded,
    DenseSymmetric,
    Glm,
    KroneckerIdentity,
    as_operator,
    dense_regressor,
)


@dataclass
class CostCounter:
    """Operation counts: factorisations at construction, multiplies per apply."""

    factorizations: int = 0
    pi_applies: int = 0
    xstar_applies: int = 0
    multiplies: int = 0
    per_apply: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "factorizations": self.factorizations,
            "pi_applies": self.pi_applies,
            "xstar_applies": self.xstar_applies,
            "multiplies": self.multiplies,
            "pi_multiplies_per_apply": self.per_apply.get("pi", 0),
            "xstar_multiplies_per_apply": self.per_apply.get("xstar", 0),
        }


def _columns(v):
    v = np.asarray(v, dtype=float)
    return 1 if v.ndim == 1 else v.shape[1]


class IndefinitePreconditioner:
    """Base class; subclasses implement ``_pi`` and ``_xstar_t``."""

    m: int
    n: int

    def __init__(self):
        self.counter = CostCounter()

    def apply_pi(self, xi):
        self.counter.pi_applies += _columns(xi)
        self.counter.multiplies += _columns(xi) * self.counter.per_apply.get("pi", 0)
        return self._pi(np.asarray(xi, dtype=float))

    def apply_xstar_t(self, xi):
        self.counter.xstar_applies += _columns(xi)
        self.counter.multiplies += _columns(xi) * self.counter.per_apply.get("xstar", 0)
        return self._xstar_t(np.asarray(xi, dtype=float))

    def apply_pi_seminorm(self, xi):
        """``(Pi xi, xi^T Pi xi)`` for a single vector.

        Positive definite ``D`` gives ``xi^T Pi xi = ||(I - Q Q^T) W xi||^2``
        in whitened coordinates, which is accurate to ``eps^2 ||xi||^2``
        where the plain inner product is only accurate to ``eps ||xi||^2``.
        """
        self.counter.pi_applies += 1
        self.counter.multiplies += self.counter.per_apply.get("pi", 0)
        return self._pi_seminorm(np.asarray(xi, dtype=float))

    def _pi_seminorm(self, xi):
        p = self._pi(xi)
        return p, float(xi @ p)

    def _pi(self, xi):
        raise NotImplementedError

    def _xstar_t(self, xi):
        raise NotImplementedError

    def d_dense(self):
        """The auxiliary matrix ``D`` as a dense array (diagnostics only)."""
        raise NotImplementedError

    def dense_pi(self):
        return self._pi(np.eye(self.m))

    def dense_xstar(self):
        return self._xstar_t(np.eye(self.m)).T


# -- D parametrisation --------------------------------------------------------


def _parse_d(D, m):
    """Normalise ``D`` to ``('identity'|'diag'|'dense', payload)``."""
    if D is None:
        return "diag", np.ones(m)
    if np.isscalar(D):
        return "diag", np.full(m, float(D))
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        if D.shape[0] != m:
            raise ValueError(f"diagonal D has length {D.shape[0]}, expected {m}")
        return "diag", D.copy()
    if D.shape != (m, m):
        raise ValueError(f"D has shape {D.shape}, expected {(m, m)}")
    if not la.is_symmetric(D):
        raise SingularD("D must be symmetric")
    return "dense", 0.5 * (D + D.T)


class DensePreconditioner(IndefinitePreconditioner):
    """``Pi`` and ``X*`` for a dense ``X`` and a general symmetric non-singular ``D``.

    ``D`` may be ``None`` (identity), a scalar, a diagonal given as a vector,
    or a full matrix.  Positive definite ``D`` is handled by whitening and a
    QR factorisation (``W X = Q R`` with ``W^T W = D^{-1}``), which gives
    ``X*^T = R^{-1} Q^T W`` and ``Pi = W^T (I - Q Q^T) W``.  Indefinite ``D``
    falls back to LU factorisations of ``D`` and ``X^T D^{-1} X``.
    """

    def __init__(self, X, D=None):
        super().__init__()
        X = dense_regressor(X)
        self.X = X
        self.m, self.n = X.shape
        kind, payload = _parse_d(D, self.m)
        self._kind = kind
        m, n = self.m, self.n
        c = self.counter
        if kind == "diag":
            if np.any(payload == 0.0):
                raise SingularD("D has a zero diagonal entry")
            if np.all(payload > 0):
                self._mode = "whiten-diag"
                self._d = payload
                self._wdiag = 1.0 / np.sqrt(payload)
                self._whiten_qr(self._wdiag[:, None] * X)
                c.per_apply = {"pi": 2 * m * n + 2 * m, "xstar": m * n + n * n // 2 + m}
            else:
                self._mode = "lu"
                self._d = payload
                self._lu_setup(np.diag(payload))
        else:
            self._d = payload
            try:
                L = np.linalg.cholesky(payload)
            except np.linalg.LinAlgError:
                L = None
            if L is not None:
                self._mode = "whiten-chol"
                self._L = L
                c.factorizations += 1
                self._whiten_qr(sla.solve_triangular(L, X, lower=True))
                c.per_apply = {"pi": 2 * m * n + m * m, "xstar": m * n + n * n // 2 + m * m // 2}
            else:
                self._mode = "lu"
                self._lu_setup(payload)

    def _whiten_qr(self, Xw):
        try:
            self._q, self._r = la.qr_thin(Xw)
        except RankDeficient as exc:
            raise SingularProjectedGram("X^T D^{-1} X is singular") from exc
        self.counter.factorizations += 1

    def _lu_setup(self, Dm):
        m, n = self.m, self.n
        try:
            self._dlu = sla.lu_factor(Dm, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularD("D is singular") from exc
        if np.any(np.diag(self._dlu[0]) == 0.0):
            raise SingularD("D is singular")
        self._f = sla.lu_solve(self._dlu, self.X)
        S = self.X.T @ self._f
        self._slu = sla.lu_factor(0.5 * (S + S.T), check_finite=False)
        if np.min(np.abs(np.diag(self._slu[0]))) <= 1e-14 * np.max(np.abs(S)):
            raise SingularProjectedGram("X^T D^{-1} X is singular")
        self.counter.factorizations += 2
        self.counter.per_apply = {"pi": 2 * m * m + 2 * m * n, "xstar": m * m + m * n + n * n}

    def _w(self, xi):
        if self._mode == "whiten-diag":
            return self._wdiag[:, None] * xi if xi.ndim == 2 else self._wdiag * xi
        return sla.solve_triangular(self._L, xi, lower=True, check_finite=False)

    def _wt(self, xi):
        if self._mode == "whiten-diag":
            return self._wdiag[:, None] * xi if xi.ndim == 2 else self._wdiag * xi
        return sla.solve_triangular(self._L, xi, lower=True, trans="T", check_finite=False)

    def _pi(self, xi):
        if self._mode == "lu":
            g = sla.lu_solve(self._dlu, xi, check_finite=False)
            return g - self._f @ sla.lu_solve(self._slu, self.X.T @ g, check_finite=False)
        t = self._w(xi)
        t = t - self._q @ (self._q.T @ t)
        return self._wt(t)

    def _pi_seminorm(self, xi):
        if self._mode == "lu":
            return super()._pi_seminorm(xi)
        t = self._w(xi)
        t = t - self._q @ (self._q.T @ t)
        return self._wt(t), float(t @ t)

    def _xstar_t(self, xi):
        if self._mode == "lu":
            return sla.lu_solve(self._slu, self._f.T @ xi, check_finite=False)
        return la.tri_solve(self._r, self._q.T @ self._w(xi))

    def d_dense(self):
        return np.diag(self._d) if self._kind == "diag" else self._d.copy()


def dense_preconditioner(X, D=None):
    return DensePreconditioner(X, D)


# -- block-diagonal regressors ------------------------------------------------


class BlockDiagonalRegressor(spla.LinearOperator):
    """``X = X_1 ⊕ ... ⊕ X_G`` acting on equation-major stacked vectors."""

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]
        self._rows = np.cumsum([0] + [b.shape[0] for b in self.blocks])
        self._cols = np.cumsum([0] + [b.shape[1] for b in self.blocks])
        super().__init__(dtype=np.float64, shape=(int(self._rows[-1]), int(self._cols[-1])))

    def _matmat(self, V):
        out = np.empty((self.shape[0], V.shape[1]))
        for i, B in enumerate(self.blocks):
            out[self._rows[i]: self._rows[i + 1]] = B @ V[self._cols[i]: self._cols[i + 1]]
        return out

    def _matvec(self, v):
        return self._matmat(np.asarray(v).reshape(-1, 1)).reshape(-1)

    def _rmatmat(self, U):
        out = np.empty((self.shape[1], U.shape[1]))
        for i, B in enumerate(self.blocks):
            out[self._cols[i]: self._cols[i + 1]] = B.T @ U[self._rows[i]: self._rows[i + 1]]
        return out

    def _rmatvec(self, u):
        return self._rmatmat(np.asarray(u).reshape(-1, 1)).reshape(-1)

    def _adjoint(self):
        return spla.LinearOperator(
            dtype=self.dtype, shape=(self.shape[1], self.shape[0]),
            matvec=self._rmatvec, rmatvec=self._matvec,
            matmat=self._rmatmat, rmatmat=self._matmat,
        )

    def to_dense(self):
        return sla.block_diag(*self.blocks)


class StackedRestrictedRegressor(spla.LinearOperator):
    """``X = [I_G ⊗ Z0; C_1 ⊕ ... ⊕ C_G]`` for exclusion restrictions.

    The parameter vector is ``vec(B)``; the ``k_i`` constraint rows of
    equation ``i`` select the restricted coefficients of column ``i`` of ``B``.
    """

    def __init__(self, Z0, restrictions):
        self.Z0 = np.asarray(Z0, dtype=float)
        self.restrictions = [np.asarray(r, dtype=int) for r in restrictions]
        self.G = len(self.restrictions)
        M, N = self.Z0.shape
        self.M, self.N = M, N
        self.k = int(sum(r.size for r in self.restrictions))
        self._flat = np.concatenate(
            [i * N + r for i, r in enumerate(self.restrictions)] or [np.empty(0, int)]
        ).astype(int)
        super().__init__(dtype=np.float64, shape=(self.G * M + self.k, self.G * N))

    def _matmat(self, V):
        G, M, N = self.G, self.M, self.N
        k = V.shape[1]
        top = np.einsum("mn,gnk->gmk", self.Z0, V.reshape(G, N, k)).reshape(G * M, k)
        return np.vstack([top, V[self._flat]])

    def _matvec(self, v):
        return self._matmat(np.asarray(v).reshape(-1, 1)).reshape(-1)

    def _rmatmat(self, U):
        G, M, N = self.G, self.M, self.N
        k = U.shape[1]
        out = np.einsum("mn,gmk->gnk", self.Z0, U[: G * M].reshape(G, M, k)).reshape(G * N, k)
        np.add.at(out, self._flat, U[G * M:])
        return out

    def _rmatvec(self, u):
        return self._rmatmat(np.asarray(u).reshape(-1, 1)).reshape(-1)

    def _adjoint(self):
        return spla.LinearOperator(
            dtype=self.dtype, shape=(self.shape[1], self.shape[0]),
            matvec=self._rmatvec, rmatvec=self._matvec,
            matmat=self._rmatmat, rmatmat=self._matmat,
        )

    def to_dense(self):
        return self._matmat(np.eye(self.shape[1]))


# -- structured models --------------------------------------------------------


def selection_matrix(indices, n):
    C = np.zeros((len(indices), n))
    C[np.arange(len(indices)), np.asarray(indices, dtype=int)] = 1.0
    return C


@dataclass
class RestrictedGlm:
    """``zeta = Z beta + eps``, ``C beta = gamma``, ``cov(eps) = Omega``."""

    Z: np.ndarray
    zeta: np.ndarray
    Omega: object
    C: np.ndarray
    gamma: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float).reshape(-1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.Z.shape[1])
        self.Omega = as_operator(self.Omega)
        k = self.C.shape[0]
        self.gamma = np.zeros(k) if self.gamma is None else np.asarray(self.gamma, float).reshape(-1)
        if self.gamma.shape[0] != k:
            raise ValueError("gamma must have one entry per restriction")

    @property
    def k(self):
        return self.C.shape[0]

    @property
    def selection_flag(self):
        C = self.C
        return bool(np.all((C == 0) | (C == 1)) and np.array_equal(C @ C.T, np.eye(self.k)))

    def to_glm(self) -> Glm:
        X = np.vstack([self.Z, self.C])
        return Glm(np.concatenate([self.zeta, self.gamma]), X,
                   BlockZeroPadded(self.Omega, self.k))


@dataclass
class MvRglm:
    """Multivariate model ``Y = Z0 B + U`` with exclusion restrictions.

    ``restrictions[i]`` lists the (0-based) rows of column ``i`` of ``B``
    that are fixed to zero.  Rows of ``U`` are i.i.d. with covariance
    ``Omega0``.
    """

    Z0: np.ndarray
    Y: np.ndarray
    Omega0: np.ndarray
    restrictions: list

    def __post_init__(self):
        self.Z0 = np.asarray(self.Z0, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.Omega0 = DenseSymmetric(self.Omega0).matrix
        self.restrictions = [np.unique(np.asarray(r, dtype=int)) for r in self.restrictions]
        if self.Y.shape != (self.M, self.G) or self.Omega0.shape != (self.G, self.G):
            raise ValueError("inconsistent MvRglm dimensions")
        for i, r in enumerate(self.restrictions):
            if r.size and (r.min() < 0 or r.max() >= self.N):
                raise ValueError(f"restriction index out of range in equation {i}")
            if r.size >= self.N:
                raise ValueError(f"equation {i} has no free regressor")

    @property
    def M(self):
        return self.Z0.shape[0]

    @property
    def N(self):
        return self.Z0.shape[1]

    @property
    def G(self):
        return len(self.restrictions)

    @property
    def k(self):
        return int(sum(r.size for r in self.restrictions))

    def selection(self, i):
        return selection_matrix(self.restrictions[i], self.N)

    def free_columns(self, i):
        return np.setdiff1d(np.arange(self.N), self.restrictions[i])

    def regressor(self):
        return StackedRestrictedRegressor(self.Z0, self.restrictions)

    def to_glm(self) -> Glm:
        sigma = BlockZeroPadded(KroneckerIdentity(self.Omega0, self.M), self.k)
        y = np.concatenate([la.vec(self.Y), np.zeros(self.k)])
        return Glm(y, self.regressor(), sigma)

    def to_sur(self) -> SurModel:
        blocks = [self.Z0[:, self.free_columns(i)] for i in range(self.G)]
        return SurModel(blocks, self.Y, self.Omega0)

    def expand(self, b_free):
        """Map SUR (free-parameter) coefficients to ``vec(B)`` with zeros."""
        out = np.zeros(self.G * self.N)
        pos = 0
        for i in range(self.G):
            cols = self.free_columns(i)
            out[i * self.N + cols] = b_free[pos: pos + cols.size]
            pos += cols.size
        return out

    def compress(self, vec_b):
        return np.concatenate([vec_b[i * self.N + self.free_columns(i)] for i in range(self.G)])


@dataclass
class SurModel:
    """``vec(Y) = (X_1 ⊕ ... ⊕ X_G) beta + eps``, ``cov(eps) = Sigma0 ⊗ I_M``."""

    blocks: list
    Y: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        self.blocks = [np.asarray(b, dtype=float) for b in self.blocks]
        self.Y = np.asarray(self.Y, dtype=float)
        self.Sigma0 = DenseSymmetric(self.Sigma0).matrix
        M = self.Y.shape[0]
        if any(b.shape[0] != M for b in self.blocks) or self.Y.shape[1] != len(self.blocks):
            raise ValueError("inconsistent SUR dimensions")
        if self.Sigma0.shape != (self.G, self.G):
            raise ValueError("Sigma0 must be G x G")

    @property
    def G(self):
        return len(self.blocks)

    @property
    def M(self):
        return self.Y.shape[0]

    @property
    def widths(self):
        return [b.shape[1] for b in self.blocks]

    def regressor(self):
        return BlockDiagonalRegressor(self.blocks)

    def to_glm(self, dense=False) -> Glm:
        X = self.regressor()
        sigma = KroneckerIdentity(self.Sigma0, self.M)
        if dense:
            X = X.to_dense()
            sigma = DenseSymmetric(sigma.to_dense())
        return Glm(la.vec(self.Y), X, sigma)


# -- structured preconditioners -------------------------------------------


class RglmPreconditioner(IndefinitePreconditioner):
    """Block auxiliary matrix ``D = diag(D_Z, D_C)`` for a restricted GLM.

    ``X*^T xi = S^{-1} (Z^T D_Z^{-1} xi_Z + C^T D_C^{-1} xi_C)`` with
    ``S = Z^T D_Z^{-1} Z + C^T D_C^{-1} C``; with identities and a selection
    ``C`` this is a ridge-type shrinkage of ``xi_Z`` on ``Z`` towards the
    constraint manifold.
    """

    def __init__(self, rglm: RestrictedGlm, D_Z=None, D_C=None):
        super().__init__()
        Z, C = rglm.Z, rglm.C
        self.mz, self.k = Z.shape[0], C.shape[0]
        self.m, self.n = self.mz + self.k, Z.shape[1]
        self._dz = self._factor(D_Z, self.mz)
        self._dc = self._factor(D_C, self.k)
        self._fz = self._dinv(self._dz, Z)
        self._fc = self._dinv(self._dc, C)
        S = Z.T @ self._fz + C.T @ self._fc
        try:
            self._ls = np.linalg.cholesky(0.5 * (S + S.T))
        except np.linalg.LinAlgError as exc:
            raise SingularProjectedGram("Z^T D_Z^-1 Z + C^T D_C^-1 C is singular") from exc
        self._Z, self._C = Z, C
        self.counter.factorizations += 1
        m, n = self.m, self.n
        self.counter.per_apply = {"pi": 2 * m * n + n * n + m, "xstar": m * n + n * n + m}

    def _factor(self, D, size):
        kind, payload = _parse_d(D, size)
        if kind == "diag":
            if np.any(payload <= 0):
                raise SingularD("D_Z and D_C must be positive definite")
            return ("diag", payload)
        try:
            L = np.linalg.cholesky(payload)
        except np.linalg.LinAlgError as exc:
            raise SingularD("D_Z and D_C must be positive definite") from exc
        self.counter.factorizations += 1
        return ("chol", L, payload)

    @staticmethod
    def _dinv(fac, v):
        if fac[0] == "diag":
            d = fac[1]
            return v / d[:, None] if v.ndim == 2 else v / d
        return la.chol_solve(fac[1], v)

    def _split(self, xi):
        return xi[: self.mz], xi[self.mz:]

    def _xstar_t(self, xi):
        xz, xc = self._split(xi)
        rhs = self._fz.T @ xz + self._fc.T @ xc
        return la.chol_solve(self._ls, rhs)

    def _pi(self, xi):
        xz, xc = self._split(xi)
        g = self._xstar_t(xi)
        return np.concatenate([self._dinv(self._dz, xz) - self._fz @ g,
                               self._dinv(self._dc, xc) - self._fc @ g])

    def _pi_seminorm(self, xi):
        p = self._pi(xi)
        pz, pc = self._split(p)

        def dmul(fac, v):
            return fac[1] * v if fac[0] == "diag" else fac[2] @ v

        # Pi D Pi = Pi, and D is positive definite here
        return p, float(pz @ dmul(self._dz, pz) + pc @ dmul(self._dc, pc))

    def d_dense(self):
        def dense(fac):
            return np.diag(fac[1]) if fac[0] == "diag" else fac[2]
        return sla.block_diag(dense(self._dz), dense(self._dc))


def rglm_preconditioner(rglm, D_Z=None, D_C=None):
    return RglmPreconditioner(rglm, D_Z, D_C)


def _per_equation(scale, G, name):
    if scale is None:
        return np.ones(G)
    s = np.broadcast_to(np.asarray(scale, dtype=float), (G,)).copy()
    if np.any(s <= 0):
        raise SingularD(f"{name} must be positive")
    return s


class MvRglmPreconditioner(IndefinitePreconditioner):
    """Per-equation updating QRDs for the multivariate restricted model.

    ``D`` is block diagonal with ``dz_scale[i] * I`` on the observations of
    equation ``i`` and ``dc_scale * I`` on the constraint rows, which keeps
    the operator separable by equation.  After ``Z0 = Q0 R0`` each equation
    needs the QRD ``[R0/sqrt(dz_i); C_i/sqrt(dc)] = Qt_i R_i``; block ``i`` of
    ``X*^T xi`` is then ``R_i^{-1} Qt_i^T [Q0^T xi_Z; xi_C]`` (whitened).
    """

    def __init__(self, mv: MvRglm, dz_scale=None, dc_scale=1.0):
        super().__init__()
        self.mv = mv
        G, M, N = mv.G, mv.M, mv.N
        self.G, self.M, self.N = G, M, N
        self.m, self.n = G * M + mv.k, G * N
        self.dz = _per_equation(dz_scale, G, "dz_scale")
        self.dc = float(dc_scale)
        if self.dc <= 0:
            raise SingularD("dc_scale must be positive")
        self.q0, self.r0 = la.qr_thin(mv.Z0)
        self.counter.factorizations += 1
        self._qt, self._r = [], []
        self._coff = np.cumsum([0] + [r.size for r in mv.restrictions])
        for i in range(G):
            stacked = np.vstack([self.r0 / np.sqrt(self.dz[i]),
                                 mv.selection(i) / np.sqrt(self.dc)])
            try:
                qt, r = la.qr_thin(stacked)
            except RankDeficient as exc:
                raise RankDeficient(f"[R0; C_{i}] is rank deficient", block=i) from exc
            self._qt.append(qt)
            self._r.append(r)
            self.counter.factorizations += 1
        kbar = mv.k / G
        self.counter.per_apply = {
            "pi": int(G * (4 * M * N + 2 * N * (N + kbar))),
            "xstar": int(G * (M * N + N * (N + kbar) + N * N // 2)),
        }

    def _blocks(self, xi):
        G, M = self.G, self.M
        lead = xi.shape[1:]
        xz = xi[: G * M].reshape((G, M) + lead)
        xc = xi[G * M:]
        return xz, xc

    def _whitened_local(self, xz_i, xc_i, i):
        top = self.q0.T @ xz_i / np.sqrt(self.dz[i])
        return np.concatenate([top, xc_i / np.sqrt(self.dc)], axis=0)

    def _xstar_t(self, xi):
        xz, xc = self._blocks(xi)
        out = []
        for i in range(self.G):
            c_i = xc[self._coff[i]: self._coff[i + 1]]
            t = self._whitened_local(xz[i], c_i, i)
            out.append(la.tri_solve(self._r[i], self._qt[i].T @ t))
        return np.concatenate(out, axis=0)

    def _pi(self, xi):
        return self._pi_seminorm_blocks(xi)[0]

    def _pi_seminorm(self, xi):
        return self._pi_seminorm_blocks(xi)

    def _pi_seminorm_blocks(self, xi):
        xz, xc = self._blocks(xi)
        N = self.N
        top = np.empty_like(xz)
        bottom = np.empty_like(xc)
        c = 0.0
        for i in range(self.G):
            sl = slice(self._coff[i], self._coff[i + 1])
            t_z = xz[i] / np.sqrt(self.dz[i])
            t_c = xc[sl] / np.sqrt(self.dc)
            local = np.concatenate([self.q0.T @ t_z, t_c], axis=0)
            proj = self._qt[i] @ (self._qt[i].T @ local)
            h_z = t_z - self.q0 @ proj[:N]
            h_c = t_c - proj[N:]
            if xi.ndim == 1:
                c += float(h_z @ h_z + h_c @ h_c)
            top[i] = h_z / np.sqrt(self.dz[i])
            bottom[sl] = h_c / np.sqrt(self.dc)
        lead = xi.shape[1:]
        return np.concatenate([top.reshape((self.G * self.M,) + lead), bottom], axis=0), c

    def d_dense(self):
        return np.diag(np.concatenate([np.repeat(self.dz, self.M), np.full(self.mv.k, self.dc)]))

    def diagonal_d(self):
        return np.diag(self.d_dense())


def mvrglm_preconditioner(mv, dz_scale=None, dc_scale=1.0):
    return MvRglmPreconditioner(mv, dz_scale, dc_scale)


class SurPreconditioner(IndefinitePreconditioner):
    """Block-diagonal ``Pi`` and ``X*`` from one QRD per SUR equation.

    Block ``i`` of ``X*^T xi`` is the OLS coefficient vector of ``xi_i`` on
    ``X_i`` and block ``i`` of ``Pi xi`` the OLS residual (``D = I``).  A
    diagonal ``D`` (per-row, or one scale per equation) whitens each block
    before its QRD.
    """

    def __init__(self, sur: SurModel, d=None):
        super().__init__()
        self.sur = sur
        G, M = sur.G, sur.M
        self.G, self.M = G, M
        self.m, self.n = G * M, sum(sur.widths)
        if d is None:
            wdiag = np.ones((G, M))
        else:
            d = np.asarray(d, dtype=float)
            if d.ndim == 0 or d.size == G:
                d = np.repeat(np.broadcast_to(d, (G,)), M)
            if d.shape != (G * M,) or np.any(d <= 0):
                raise SingularD("SUR auxiliary D must be a positive diagonal")
            wdiag = (1.0 / np.sqrt(d)).reshape(G, M)
        self._w = wdiag
        self._qs, self._rs = [], []
        for i, X_i in enumerate(sur.blocks):
            try:
                q, r = la.qr_thin(wdiag[i][:, None] * X_i)
            except RankDeficient as exc:
                raise RankDeficient(f"SUR block {i} is rank deficient", block=i) from exc
            self._qs.append(q)
            self._rs.append(r)
            self.counter.factorizations += 1
        self._cols = np.cumsum([0] + sur.widths)
        tot = sum(M * k for k in sur.widths)
        self.counter.per_apply = {
            "pi": int(2 * tot + 2 * G * M),
            "xstar": int(tot + sum(k * k // 2 for k in sur.widths) + G * M),
        }

    def _split(self, xi):
        lead = xi.shape[1:]
        return xi.reshape((self.G, self.M) + lead)

    def _scale(self, i, v):
        return self._w[i][:, None] * v if v.ndim == 2 else self._w[i] * v

    def _xstar_t(self, xi):
        parts = self._split(xi)
        return np.concatenate(
            [la.tri_solve(self._rs[i], self._qs[i].T @ self._scale(i, parts[i]))
             for i in range(self.G)],
            axis=0,
        )

    def _pi(self, xi):
        parts = self._split(xi)
        out = np.empty_like(parts)
        for i in range(self.G):
            t = self._scale(i, parts[i])
            out[i] = self._scale(i, t - self._qs[i] @ (self._qs[i].T @ t))
        return out.reshape(xi.shape)

    def _pi_seminorm(self, xi):
        parts = self._split(xi)
        out = np.empty_like(parts)
        c = 0.0
        for i in range(self.G):
            t = self._scale(i, parts[i])
            h = t - self._qs[i] @ (self._qs[i].T @ t)
            c += float(h @ h)
            out[i] = self._scale(i, h)
        return out.reshape(xi.shape), c

    def d_dense(self):
        return np.diag(1.0 / self._w.reshape(-1) ** 2)


def sur_preconditioner(sur, d=None):
    return SurPreconditioner(sur, d)


# -- model reductions -------------------------------------------------------


@dataclass
class ReductionRecord:
    original_rows: int
    reduced_rows: int
    transform: np.ndarray
    rank: int | None = None


def mv_reduce(mv: MvRglm):
    """Premultiply by ``Q0^T`` from ``Z0 = Q0 R0``: ``M`` rows become ``N``."""
    q0, r0 = la.qr_thin(mv.Z0)
    reduced = MvRglm(r0, q0.T @ mv.Y, mv.Omega0, [r.copy() for r in mv.restrictions])
    rec = ReductionRecord(original_rows=mv.G * mv.M, reduced_rows=mv.G * mv.N, transform=q0,
                          rank=mv.N)
    return reduced, rec


RANK_EIG_TOL = 1e-10


def numerical_rank(W, tol=RANK_EIG_TOL):
    """Rank and orthonormal range basis of ``W`` from the eigenvalues of ``W^T W``.

    An eigenvalue counts when it exceeds ``tol`` times the largest one.
    """
    W = np.asarray(W, dtype=float)
    eig = la.sym_eig(W.T @ W)
    lam = eig.eigenvalues[::-1]
    V = eig.eigenvectors[:, ::-1]
    if lam[0] <= 0:
        return 0, np.zeros((W.shape[0], 0))
    q = int(np.sum(lam > tol * lam[0]))
    basis, _ = la.qr_thin(W @ V[:, :q])
    return q, basis


def sur_reduce(sur: SurModel, tol=RANK_EIG_TOL):
    """Project every equation on the column space of ``W = [X_1 ... X_G]``.

    The orthogonal complement carries no regressor information and its
    disturbances are uncorrelated with the retained part, so dropping it
    leaves the GLS estimator unchanged.
    """
    W = np.hstack(sur.blocks)
    q, basis = numerical_rank(W, tol)
    if q >= sur.M:
        return sur, ReductionRecord(sur.G * sur.M, sur.G * sur.M, np.eye(sur.M), rank=sur.M)
    reduced = SurModel([basis.T @ X_i for X_i in sur.blocks], basis.T @ sur.Y, sur.Sigma0)
    return reduced, ReductionRecord(sur.G * sur.M, sur.G * q, basis, rank=q)


def cost_counters(precond: IndefinitePreconditioner):
    return precond.counter.as_dict()
