"""Preconditioned conjugate gradient solvers for GLM estimation.

`pcg_aug`, `pcg_aug_full` and `pcg_aug_alt` solve the augmented system
``[Sigma X; X^T 0] [w; z] = [y; 0]`` with the indefinite preconditioner
``K = [D X; X^T 0]^{-1}``.  Because ``X^T w_i = 0`` is preserved, the residual
has the form ``(r_i; 0)`` and every step reduces to one application of ``Pi``
and one of ``X*^T``, i.e. one GLS fit of the auxiliary model with covariance
``D``.  The parameter estimate is recovered from the dual iterate alone,
``z_hat = X*^T (y - Sigma w)``.

Since ``Pi X = 0`` only ``Pi r_i`` enters the iteration.  By default the
solvers carry ``t_i = Sigma w_i - y`` in place of ``r_i = t_i + X z_i`` and
evaluate ``r^T Pi r`` in whitened coordinates; ``PcgConfig(residual=
"recurrence")`` runs the unmodified recurrence, whose ``range(X)`` component
can grow and swamp ``Pi r`` in floating point.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import linalg as la
from .errors import NullspaceSingular, TooLarge
from .glm import Glm, GlsSolution, Termination, dense_regressor
from .structured import IndefinitePreconditioner

log = logging.getLogger(__name__)

RESIDUAL_MODES = ("range_free", "recurrence")

TRACE_COLUMNS = ("iter", "c_i", "aug_residual_norm", "dual_feas_norm", "rmse", "elapsed_ns")


@dataclass
class PcgConfig:
    """Stopping rules.

    The solver stops when ``c_{i+1} <= tol_rel**2 * c_1``.  ``max_iter``
    defaults to the system's finite-termination bound (``m - n + 1`` for the
    augmented solvers, ``n`` for the normal equations).
    """

    tol_rel: float = 1e-10
    max_iter: int | None = None
    breakdown_tol: float = 1e-14
    stagnation_window: int = 5
    record_z_every: int = 1
    store_iterates: bool = False
    precision_tol: float = 1.5e-8
    residual: str = "range_free"

    def __post_init__(self):
        if self.tol_rel <= 0:
            raise ValueError("tol_rel must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.residual not in RESIDUAL_MODES:
            raise ValueError(f"residual must be one of {RESIDUAL_MODES}")


@dataclass
class PcgTrace:
    method: str
    records: list = field(default_factory=list)
    termination: Termination | None = None
    breakdown_iter: int | None = None
    iterates: dict = field(default_factory=dict)
    sigma_errors: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.records) - 1

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], float)

    def write_csv(self, path, timing=True):
        cols = TRACE_COLUMNS if timing else TRACE_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for rec in self.records:
                writer.writerow(["" if rec[c] is None else _fmt(rec[c]) for c in cols])


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class _Recorder:
    """Per-iteration monitoring shared by the augmented solvers."""

    def __init__(self, method, glm, precond, config, beta_true, w_ref):
        self.trace = PcgTrace(method=method)
        self.glm, self.precond, self.cfg = glm, precond, config
        self.beta, self.w_ref = beta_true, w_ref
        self.t0 = time.perf_counter_ns()
        if config.store_iterates:
            self.trace.iterates = {"w": [], "z_hat": [], "r": [], "u": [], "z": []}

    def z_hat(self, w):
        # uncounted: monitoring must not pollute the cost counters
        return self.precond._xstar_t(self.glm.y - self.glm.sigma @ w)

    def record(self, i, c, w, r=None, u=None, z=None):
        glm = self.glm
        rec = dict(iter=i, c_i=float(c), aug_residual_norm=None, dual_feas_norm=None,
                   rmse=None, elapsed_ns=time.perf_counter_ns() - self.t0)
        rec["dual_feas_norm"] = float(np.linalg.norm(glm.X.T @ w))
        stride = self.cfg.record_z_every
        zh = None
        if stride and (i - 1) % stride == 0:
            sw = glm.sigma @ w
            zh = self.precond._xstar_t(glm.y - sw)
            rec["aug_residual_norm"] = float(np.linalg.norm(sw + glm.X @ zh - glm.y))
            if self.beta is not None:
                rec["rmse"] = float(np.linalg.norm(zh - self.beta) / np.sqrt(glm.n))
        if self.w_ref is not None:
            e = w - self.w_ref
            self.trace.sigma_errors.append(float(e @ (glm.sigma @ e)))
        self.trace.records.append(rec)
        it = self.trace.iterates
        if it:
            it["w"].append(w.copy())
            it["z_hat"].append(zh if zh is not None else self.z_hat(w))
            it["r"].append(None if r is None else r.copy())
            it["u"].append(None if u is None else u.copy())
            it["z"].append(None if z is None else z.copy())


class _Guard:
    """Breakdown and stagnation tests.

    On failure the solver returns its latest iterate: CG minimises the
    ``Sigma``-norm error of ``w`` over a growing Krylov space, so the newest
    iterate is the best one available, whereas ``c_i`` is not monotone.
    """

    def __init__(self, glm, config, c1):
        self.cfg = config
        self.sigma_norm = max(glm.sigma.norm_estimate(), np.finfo(float).tiny)
        self.c1 = c1
        self.last_good_w = None
        self.flat = 0

    def curvature_breakdown(self, d, u):
        uu = float(u @ u)
        return (not np.isfinite(d)) or d <= self.cfg.breakdown_tol * uu * self.sigma_norm

    def seminorm_breakdown(self, c):
        # c = r^T Pi r with Pi positive semi-definite: a negative value means the
        # recurrence has lost the positivity it relies on
        return (not np.isfinite(c)) or c < 0.0

    def update(self, c_old, c_new, w):
        # last iterate with a finite seminorm: fallback if the next one is lost
        self.last_good_w = w
        if abs(c_new - c_old) <= 1e-15 * abs(c_old):
            self.flat += 1
        else:
            self.flat = 0
        return self.flat >= self.cfg.stagnation_window

    def precision_lost(self, c, pr, r):
        # Pi r carries an absolute error of about eps*||r||; once ||Pi r|| falls to
        # sqrt(eps)*||r|| the search directions have lost half their digits
        # (the range-free residual has no such floor above the roundoff level)
        tol = self.cfg.precision_tol
        if not tol or self.cfg.residual != "recurrence" or self.converged(c):
            return False
        return float(np.linalg.norm(pr)) <= tol * float(np.linalg.norm(r))

    def converged(self, c):
        return c <= self.cfg.tol_rel ** 2 * self.c1


def _start(glm, precond, w1, z1, config, default_max):
    cfg = config or PcgConfig()
    if precond.m != glm.m or precond.n != glm.n:
        raise ValueError("preconditioner dimensions do not match the model")
    w = np.zeros(glm.m) if w1 is None else np.array(w1, dtype=float)
    z = np.zeros(glm.n) if z1 is None else np.array(z1, dtype=float)
    feas = np.linalg.norm(glm.X.T @ w)
    if feas > 1e-12 * max(np.linalg.norm(glm.y), 1.0):
        warnings.warn("X^T w1 != 0; projecting the starting dual iterate", stacklevel=3)
        q, _ = la.qr_thin(glm.dense_x())
        w = w - q @ (q.T @ w)
    max_iter = cfg.max_iter if cfg.max_iter is not None else default_max
    return cfg, w, z, max_iter


def _true_seminorm(glm, precond, w):
    t = glm.sigma @ w - glm.y
    return precond._pi_seminorm(t)[1]


def _finish(glm, precond, rec, guard, w, termination, c_last, i, z=None):
    trace = rec.trace
    trace.termination = termination
    if not np.all(np.isfinite(w)) and guard.last_good_w is not None:
        w = guard.last_good_w
    if termination != Termination.CONVERGED:
        c_last = _true_seminorm(glm, precond, w)
    z_hat = precond.apply_xstar_t(glm.y - glm.sigma @ w)
    sol = GlsSolution(b=z_hat, w=w, iterations=i, termination=termination,
                      residual_seminorm=float(c_last))
    sol.extras["z_hat"] = z_hat
    res, feas = sol.aug_residual(glm)
    sol.extras["aug_residual_norm"] = res
    sol.extras["dual_feas_norm"] = feas
    if z is not None:
        sol.extras["z"] = z
    if termination == Termination.BREAKDOWN:
        log.info("%s: breakdown at iteration %d; recovered residual %.3e",
                 trace.method, trace.breakdown_iter, res)
    return sol, trace


def _seminorm(precond, r, literal):
    """``(Pi r, r^T Pi r)``; the literal form takes the plain inner product."""
    if literal:
        pr = precond.apply_pi(r)
        return pr, float(r @ pr)
    return precond.apply_pi_seminorm(r)


def _initial_residual(glm, w, z, cfg):
    """``r_1 = Sigma w_1 + X z_1 - y``, without the ``X z`` term in range-free mode."""
    r = glm.sigma @ w - glm.y
    if cfg.residual == "recurrence":
        r = r + glm.X @ z
    return r


def pcg_aug(glm: Glm, precond: IndefinitePreconditioner, w1=None, z1=None, config=None,
            beta_true=None, w_ref=None):
    """PCG-Aug: the dual iterate drives the recursion, ``z`` is never propagated.

    Returns ``(GlsSolution, PcgTrace)``.  On breakdown, stagnation or
    ``max_iter`` the estimate is recovered from the latest dual iterate.
    """
    cfg, w, z, max_iter = _start(glm, precond, w1, z1, config, glm.m - glm.n + 1)
    X, sigma = glm.X, glm.sigma
    literal = cfg.residual == "recurrence"
    rec = _Recorder("pcg_aug", glm, precond, cfg, beta_true, w_ref)

    r = _initial_residual(glm, w, z, cfg)
    pr, c = _seminorm(precond, r, literal)
    u = pr
    v = precond.apply_xstar_t(r) if literal else None
    rec.record(1, c, w, r, u)
    guard = _Guard(glm, cfg, c)
    guard.last_good_w = w.copy()
    if c <= 0.0:
        return _finish(glm, precond, rec, guard, w, Termination.CONVERGED, c, 0)

    termination = Termination.MAX_ITER
    i = 0
    for i in range(1, max_iter + 1):
        su = sigma @ u
        d = float(u @ su)
        if guard.curvature_breakdown(d, u):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            i -= 1
            break
        lam = c / d
        w = w - lam * u
        r = r - lam * (su + X @ v) if literal else r - lam * su
        pr, c_new = _seminorm(precond, r, literal)
        rec.record(i + 1, c_new, w, r, u)
        if guard.seminorm_breakdown(c_new) or guard.precision_lost(c_new, pr, r):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            break
        stagnant = guard.update(c, c_new, w)
        if guard.converged(c_new):
            c, termination = c_new, Termination.CONVERGED
            break
        if stagnant:
            c, termination = c_new, Termination.STAGNATION
            break
        mu = c_new / c
        if literal:
            v = precond.apply_xstar_t(r) + mu * v
        u = pr + mu * u
        c = c_new
    return _finish(glm, precond, rec, guard, w, termination, c, i)


def pcg_aug_full(glm: Glm, precond: IndefinitePreconditioner, w1=None, z1=None, config=None,
                 beta_true=None, w_ref=None):
    """Augmented PCG that also propagates ``z_{i+1} = z_i - lambda_i v_i``.

    ``b`` is the estimate recovered from ``w``, as for `pcg_aug`; the
    propagated iterate is returned in ``extras['z']`` for comparison.
    In range-free mode ``r_i = t_i + X z_i`` is carried as ``t_i`` and
    ``X*^T r_i = X*^T t_i + z_i``.
    """
    cfg, w, z, max_iter = _start(glm, precond, w1, z1, config, glm.m - glm.n + 1)
    X, sigma = glm.X, glm.sigma
    literal = cfg.residual == "recurrence"
    rec = _Recorder("pcg_aug_full", glm, precond, cfg, beta_true, w_ref)

    r = _initial_residual(glm, w, z, cfg)
    pr, c = _seminorm(precond, r, literal)
    u = pr
    v = precond.apply_xstar_t(r) if literal else precond.apply_xstar_t(r) + z
    rec.record(1, c, w, r, u, z)
    guard = _Guard(glm, cfg, c)
    guard.last_good_w = w.copy()
    if c <= 0.0:
        return _finish(glm, precond, rec, guard, w, Termination.CONVERGED, c, 0, z)

    termination = Termination.MAX_ITER
    i = 0
    for i in range(1, max_iter + 1):
        su = sigma @ u
        d = float(u @ su)
        if guard.curvature_breakdown(d, u):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            i -= 1
            break
        lam = c / d
        with np.errstate(over="ignore", invalid="ignore"):
            # z is fed back through X*^T r and may drift; b comes from w
            z = z - lam * v
        w = w - lam * u
        r = r - lam * (su + X @ v) if literal else r - lam * su
        pr, c_new = _seminorm(precond, r, literal)
        rec.record(i + 1, c_new, w, r, u, z)
        if guard.seminorm_breakdown(c_new) or guard.precision_lost(c_new, pr, r):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            break
        stagnant = guard.update(c, c_new, w)
        if guard.converged(c_new):
            c, termination = c_new, Termination.CONVERGED
            break
        if stagnant:
            c, termination = c_new, Termination.STAGNATION
            break
        mu = c_new / c
        xr = precond.apply_xstar_t(r)
        with np.errstate(over="ignore", invalid="ignore"):
            v = (xr if literal else xr + z) + mu * v
        u = pr + mu * u
        c = c_new
    return _finish(glm, precond, rec, guard, w, termination, c, i, z)


def pcg_aug_alt(glm: Glm, precond: IndefinitePreconditioner, w1=None, z1=None, config=None,
                beta_true=None, w_ref=None):
    """PCG-Aug with the single recurrence ``s_{i+1} = r_{i+1} + mu_i s_i``.

    The directions are recovered as ``u_i = Pi s_i`` and ``v_i = X*^T s_i``.
    In range-free mode ``v_i`` only feeds the discarded ``X z`` part of the
    residual and is not formed.
    """
    cfg, w, z, max_iter = _start(glm, precond, w1, z1, config, glm.m - glm.n + 1)
    X, sigma = glm.X, glm.sigma
    literal = cfg.residual == "recurrence"
    rec = _Recorder("pcg_aug_alt", glm, precond, cfg, beta_true, w_ref)

    r = _initial_residual(glm, w, z, cfg)
    c = _seminorm(precond, r, literal)[1]
    s = r.copy()
    rec.record(1, c, w, r, precond._pi(s))
    guard = _Guard(glm, cfg, c)
    guard.last_good_w = w.copy()
    if c <= 0.0:
        return _finish(glm, precond, rec, guard, w, Termination.CONVERGED, c, 0)

    termination = Termination.MAX_ITER
    i = 0
    for i in range(1, max_iter + 1):
        ps = precond.apply_pi(s)
        sps = sigma @ ps
        d = float(ps @ sps)
        if guard.curvature_breakdown(d, ps):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            i -= 1
            break
        lam = c / d
        w = w - lam * ps
        if literal:
            r = r - lam * (sps + X @ precond.apply_xstar_t(s))
        else:
            r = r - lam * sps
        pr, c_new = _seminorm(precond, r, literal)
        rec.record(i + 1, c_new, w, r, ps)
        if guard.seminorm_breakdown(c_new) or guard.precision_lost(c_new, pr, r):
            termination, rec.trace.breakdown_iter = Termination.BREAKDOWN, i
            break
        stagnant = guard.update(c, c_new, w)
        if guard.converged(c_new):
            c, termination = c_new, Termination.CONVERGED
            break
        if stagnant:
            c, termination = c_new, Termination.STAGNATION
            break
        mu = c_new / c
        s = r + mu * s
        c = c_new
    return _finish(glm, precond, rec, guard, w, termination, c, i)


# -- generic PCG and the normal equations -------------------------------------


def pcg_generic(apply_G, apply_K, h, x1=None, config=None, monitor=None):
    """Algorithm-1 PCG for a symmetric ``G`` with a symmetric (possibly indefinite) ``K``.

    Parameters
    ----------
    apply_G, apply_K : callable
        Matrix-vector products.
    h : ndarray
        Right-hand side of ``G x = h``.
    x1 : ndarray, optional
        Starting point, zero by default.
    config : PcgConfig, optional
        ``max_iter`` defaults to ``len(h)``.
    monitor : callable, optional
        ``monitor(i, x, f, c) -> dict`` returning extra trace fields.

    Returns
    -------
    x : ndarray
    trace : PcgTrace
        ``termination`` is one of converged, breakdown, stagnation, max_iter.
    """
    cfg = config or PcgConfig()
    h = np.asarray(h, dtype=float)
    x = np.zeros_like(h) if x1 is None else np.array(x1, dtype=float)
    max_iter = cfg.max_iter if cfg.max_iter is not None else h.shape[0]
    trace = PcgTrace(method="pcg_generic")
    t0 = time.perf_counter_ns()

    def record(i, c):
        rec = dict(iter=i, c_i=float(c), aug_residual_norm=float(np.linalg.norm(f)),
                   dual_feas_norm=None, rmse=None, elapsed_ns=time.perf_counter_ns() - t0)
        if monitor is not None:
            rec.update(monitor(i, x, f, c))
        trace.records.append(rec)
        if cfg.store_iterates:
            trace.iterates.setdefault("x", []).append(x.copy())
            trace.iterates.setdefault("f", []).append(f.copy())
            trace.iterates.setdefault("p", []).append(p.copy())

    f = apply_G(x) - h
    kf = apply_K(f)
    p = kf
    c = float(f @ kf)
    c1 = c
    record(1, c)
    if c == 0.0:
        trace.termination = Termination.CONVERGED
        return x, trace
    flat = 0
    trace.termination = Termination.MAX_ITER
    for i in range(1, max_iter + 1):
        gp = apply_G(p)
        d = float(p @ gp)
        if not np.isfinite(d) or abs(d) <= cfg.breakdown_tol * np.linalg.norm(p) * np.linalg.norm(gp):
            trace.termination, trace.breakdown_iter = Termination.BREAKDOWN, i
            break
        lam = c / d
        x = x - lam * p
        f = f - lam * gp
        kf = apply_K(f)
        c_new = float(f @ kf)
        p = kf + (c_new / c) * p
        c_old, c = c, c_new
        record(i + 1, c)
        if abs(c) <= cfg.tol_rel ** 2 * abs(c1):
            trace.termination = Termination.CONVERGED
            break
        flat = flat + 1 if abs(c - c_old) <= 1e-15 * abs(c_old) else 0
        if flat >= cfg.stagnation_window:
            trace.termination = Termination.STAGNATION
            break
    return x, trace


def pcg_normal_equations(glm: Glm, precond_ne=None, config=None, beta_true=None, x1=None):
    """PCG on ``(X^T Sigma^{-1} X) beta = X^T Sigma^{-1} y``.

    ``precond_ne`` is ``None`` (identity), an ``n x n`` matrix or a callable.
    The trace reports ``w_i = Sigma^{-1}(y - X b_i)`` so that
    ``dual_feas_norm`` is the normal-equation residual, matching the
    augmented solvers' traces column for column.
    """
    L = la.cholesky(glm.sigma.to_dense())
    X = glm.dense_x()
    sinv_x = la.chol_solve(L, X)
    h = sinv_x.T @ glm.y
    cfg = config or PcgConfig()
    if cfg.max_iter is None:
        cfg = PcgConfig(**{**cfg.__dict__, "max_iter": glm.n})

    def apply_G(v):
        return sinv_x.T @ (X @ v)

    if precond_ne is None:
        def apply_K(v):
            return v
    elif callable(precond_ne):
        apply_K = precond_ne
    else:
        Kne = np.asarray(precond_ne, dtype=float)

        def apply_K(v):
            return Kne @ v

    def monitor(i, b, f, c):
        out = {"dual_feas_norm": float(np.linalg.norm(f)), "aug_residual_norm": 0.0}
        if beta_true is not None:
            out["rmse"] = float(np.linalg.norm(b - beta_true) / np.sqrt(glm.n))
        return out

    b, trace = pcg_generic(apply_G, apply_K, h, x1=x1, config=cfg, monitor=monitor)
    trace.method = "pcg_ne"
    w = la.chol_solve(L, glm.y - X @ b)
    sol = GlsSolution(b=b, w=w, iterations=trace.iterations, termination=trace.termination,
                      residual_seminorm=trace.records[-1]["c_i"])
    sol.extras["ne_residual_norm"] = float(np.linalg.norm(h - apply_G(b)))
    return sol, trace


# -- spectrum diagnostics -----------------------------------------------------

DIAG_LIMIT = 2000


class GkSpectrum(NamedTuple):
    eigenvalues: np.ndarray
    h_eigenvalues: np.ndarray
    n_unit: int
    condition: float
    max_imag: float


def eigs_of_gk(glm: Glm, precond: IndefinitePreconditioner, unit_tol=1e-8) -> GkSpectrum:
    """Spectrum of ``GK`` from its block-triangular form.

    ``GK = [[H, (Sigma - D) X*], [0, I_n]]`` with ``H = I + (Sigma - D) Pi``,
    so the spectrum is that of ``H`` plus ``n`` unit eigenvalues.
    """
    m, n = glm.m, glm.n
    if m + n > DIAG_LIMIT:
        raise TooLarge(f"m + n = {m + n} exceeds the diagnostic limit {DIAG_LIMIT}")
    S = glm.sigma.to_dense()
    H = np.eye(m) + (S - precond.d_dense()) @ precond.dense_pi()
    lam_h = np.linalg.eigvals(H)
    max_imag = float(np.max(np.abs(lam_h.imag))) if lam_h.size else 0.0
    lam = np.concatenate([lam_h, np.ones(n)])
    mod = np.abs(lam)
    order = np.argsort(lam.real)
    lam = lam[order]
    if max_imag <= 1e-8 * max(mod.max(), 1.0):
        lam = lam.real
    n_unit = int(np.sum(np.abs(lam - 1.0) <= unit_tol))
    cond = float(mod.max() / mod.min()) if mod.min() > 0 else np.inf
    return GkSpectrum(lam, np.sort_complex(lam_h) if max_imag else np.sort(lam_h.real),
                      n_unit, cond, max_imag)


@dataclass
class ReducedDiagnostics:
    """Conditioning of the projected system ``(Q_N^T Sigma Q_N) w~ = Q_N^T y``."""

    kappa: float
    eigenvalues: np.ndarray

    def bound(self, i):
        """``||w_i - w|| / ||w_1 - w|| <= 2 sqrt(k) ((sqrt(k) - 1)/(sqrt(k) + 1))^(i-1)``."""
        sk = np.sqrt(self.kappa)
        return 2.0 * sk * ((sk - 1.0) / (sk + 1.0)) ** (np.asarray(i) - 1)

    def bound_curve(self, iters):
        return self.bound(np.arange(1, iters + 1))


def reduced_diagnostics(glm: Glm, precond: IndefinitePreconditioner) -> ReducedDiagnostics:
    if glm.m + glm.n > DIAG_LIMIT:
        raise TooLarge(f"m + n = {glm.m + glm.n} exceeds the diagnostic limit {DIAG_LIMIT}")
    qr = la.qr_full(glm.dense_x())
    QN = qr.null_basis
    A = QN.T @ glm.sigma.to_dense() @ QN
    B = QN.T @ precond.d_dense() @ QN
    try:
        Lb = np.linalg.cholesky(0.5 * (B + B.T))
    except np.linalg.LinAlgError as exc:
        raise NullspaceSingular("Q_N^T D Q_N is not positive definite") from exc
    from scipy.linalg import solve_triangular

    T = solve_triangular(Lb, solve_triangular(Lb, A, lower=True).T, lower=True)
    lam = la.sym_eig(0.5 * (T + T.T)).eigenvalues
    if lam[0] <= 0:
        raise NullspaceSingular("Q_N^T Sigma Q_N is not positive definite")
    return ReducedDiagnostics(kappa=float(lam[-1] / lam[0]), eigenvalues=lam)


def krylov_basis(apply_GK, f1, order):
    """Column-normalised Krylov matrix ``[f1, GK f1, ..., (GK)^order f1]``.

    Test support: the span is what matters, normalisation keeps it usable.
    """
    cols = [np.asarray(f1, dtype=float)]
    for _ in range(order):
        cols.append(apply_GK(cols[-1]))
    V = np.column_stack(cols)
    norms = np.linalg.norm(V, axis=0)
    norms[norms == 0] = 1.0
    return V / norms


def augmented_operators(glm: Glm, precond: IndefinitePreconditioner):
    """``apply_G`` and ``apply_K`` of the full ``(m+n)``-dimensional system."""
    m = glm.m
    X = glm.X
    # K = [[Pi, X*], [X*^T, -(X^T D^-1 X)^-1]]
    pi_dense = precond.dense_pi()
    xs = precond.dense_xstar()
    Dm = precond.d_dense()
    Xd = dense_regressor(X)
    gram = Xd.T @ np.linalg.solve(Dm, Xd)
    lower = -np.linalg.inv(gram)

    def apply_G(x):
        w, z = x[:m], x[m:]
        return np.concatenate([glm.sigma @ w + X @ z, X.T @ w])

    def apply_K(f):
        a, b = f[:m], f[m:]
        return np.concatenate([pi_dense @ a + xs @ b, xs.T @ a + lower @ b])

    return apply_G, apply_K
