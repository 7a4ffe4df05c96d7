"""Monte Carlo study of the iterates' sampling distribution.

``X``, ``Sigma`` and ``beta`` are drawn once; each replication draws a new
``y ~ N(X beta, Sigma)`` and records every iterate of PCG-Aug and PCG-NE.
Runs that stop early are padded with their final estimate so that all
replications contribute to every recorded iteration.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..glm import Glm, blue_augmented_direct, gls_estimate_direct
from ..pcg import PcgConfig, pcg_aug, pcg_normal_equations
from ..structured import dense_preconditioner
from . import generators as gen

log = logging.getLogger(__name__)


@dataclass
class SolverStats:
    """Per-iteration summary of ``b_i - beta`` over replications (rows = iterations)."""

    mean_err: np.ndarray
    se: np.ndarray
    band95: np.ndarray  # (iters, n, 2)
    band99: np.ndarray
    rmse_mean: np.ndarray
    rmse_se: np.ndarray
    rmse_band95: np.ndarray  # (iters, 2)
    rmse_band99: np.ndarray

    @property
    def iterations(self):
        return self.mean_err.shape[0]

    def t_stats(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.abs(self.mean_err) / self.se
        # zero spread and zero mean: no evidence of bias
        t[(self.se == 0) & (self.mean_err == 0)] = 0.0
        return t


@dataclass
class McSummary:
    replications: int
    beta: np.ndarray
    solvers: dict = field(default_factory=dict)
    gls: SolverStats | None = None
    sigma_err_mean: np.ndarray | None = None
    sigma_err_se: np.ndarray | None = None
    error_bound_max_ratio: float = 0.0
    zeta_increases: int = 0
    terminations: dict = field(default_factory=dict)
    failures: int = 0

    def unbiased(self, solver, k=4.0, iters=None):
        t = self.solvers[solver].t_stats()
        if iters is not None:
            t = t[iters]
        return bool(np.all(t <= k))

    def bias_detected(self, solver, iters, k=4.0):
        return bool(np.any(self.solvers[solver].t_stats()[iters] > k))

    def trace_monotone(self, k=2.0):
        """Non-increasing MC estimate of ``tr(Sigma Omega_i)`` up to ``k`` standard errors."""
        m, se = self.sigma_err_mean, self.sigma_err_se
        return bool(np.all(m[1:] <= m[:-1] + k * np.maximum(se[1:], se[:-1])))

    def rows(self):
        """Long-format rows: one per (solver, iteration)."""
        out = []
        for name, st in self.solvers.items():
            for i in range(st.iterations):
                row = {
                    "solver": name,
                    "iter": i + 1,
                    "max_abs_t": float(np.max(st.t_stats()[i])),
                    "rmse_mean": float(st.rmse_mean[i]),
                    "rmse_lo95": float(st.rmse_band95[i, 0]),
                    "rmse_hi95": float(st.rmse_band95[i, 1]),
                    "rmse_lo99": float(st.rmse_band99[i, 0]),
                    "rmse_hi99": float(st.rmse_band99[i, 1]),
                }
                if name == "pcg_aug":
                    row["sigma_err_mean"] = float(self.sigma_err_mean[i])
                    row["sigma_err_se"] = float(self.sigma_err_se[i])
                out.append(row)
        return out


def _stats(err):
    """``err`` has shape (reps, iters, n)."""
    reps = err.shape[0]
    rmse = np.sqrt(np.mean(err ** 2, axis=-1))
    return SolverStats(
        mean_err=err.mean(axis=0),
        se=err.std(axis=0, ddof=1) / np.sqrt(reps),
        band95=np.moveaxis(np.percentile(err, [2.5, 97.5], axis=0), 0, -1),
        band99=np.moveaxis(np.percentile(err, [0.5, 99.5], axis=0), 0, -1),
        rmse_mean=rmse.mean(axis=0),
        rmse_se=rmse.std(axis=0, ddof=1) / np.sqrt(reps),
        rmse_band95=np.percentile(rmse, [2.5, 97.5], axis=0).T,
        rmse_band99=np.percentile(rmse, [0.5, 99.5], axis=0).T,
    )


def _pad(seq, length):
    """First ``length`` entries, repeating the last one if the run stopped early."""
    seq = list(seq)[:length]
    return np.array(seq + [seq[-1]] * (length - len(seq)))


class _Setup:
    """Fixed design shared by all replications (picklable for worker processes)."""

    def __init__(self, m, n, eigenvalues, multiplicities, seed, tol_rel, max_iter, ne_max_iter):
        self.seed = seed
        self.sigma = gen.gen_spectrum_sigma(m, eigenvalues, multiplicities, seed)
        self.X = gen.gen_regressor(m, n, seed)
        self.beta = gen.draw_beta(n, seed)
        self.root = gen.symmetric_sqrt(self.sigma)
        self.aug_cfg = PcgConfig(tol_rel=tol_rel, max_iter=max_iter, store_iterates=True)
        self.ne_cfg = PcgConfig(tol_rel=tol_rel, max_iter=ne_max_iter, store_iterates=True)
        self.aug_len = (max_iter if max_iter is not None else m - n + 1) + 1
        self.ne_len = (ne_max_iter if ne_max_iter is not None else n) + 1
        self.precond = dense_preconditioner(self.X)
        X = self.X
        # J = X (X^T Sigma X)^{-1} X^T and the weight of the error-bound quadratic form
        self.J = X @ np.linalg.solve(X.T @ self.sigma @ X, X.T)
        xs = self.precond.dense_xstar()
        self.zweight = np.linalg.inv(xs.T @ self.sigma @ xs)


def _replicate(setup: _Setup, rep):
    X, S, beta = setup.X, setup.sigma, setup.beta
    y = gen.draw_response(X, beta, setup.root, setup.seed, rep)
    glm = Glm(y, X, S)
    blue = blue_augmented_direct(glm)
    gls = gls_estimate_direct(glm)
    aug, tr = pcg_aug(glm, setup.precond, config=setup.aug_cfg, w_ref=blue.w)
    ne, tr_ne = pcg_normal_equations(glm, config=setup.ne_cfg)

    L = setup.aug_len
    zs = _pad(tr.iterates["z_hat"][:L] + [aug.b], L)
    ws = _pad(tr.iterates["w"][:L] + [aug.w], L)

    dw = ws - blue.w
    sigma_err = np.einsum("ij,jk,ik->i", dw, S, dw)
    # error bound: q_i <= 2 * zeta_i
    eps = y - X @ beta
    pn_eps = eps - S @ blue.w
    fixed = float(pn_eps @ setup.J @ pn_eps)
    dz = zs - beta
    q = np.einsum("ij,jk,ik->i", dz, setup.zweight, dz)
    zeta = fixed + sigma_err
    ratio = float(np.max(q / (2.0 * zeta)))
    # strict decrease of zeta over the genuine iterates, above the roundoff floor
    live = min(len(tr.iterates["w"]), L)
    active = sigma_err[: live - 1] > 1e-12 * sigma_err[0]
    zeta_up = int(np.sum((np.diff(zeta[:live]) >= 0) & active))

    bs = _pad(tr_ne.iterates["x"], setup.ne_len)
    return {
        "rep": rep,
        "aug": zs - beta,
        "ne": bs - beta,
        "gls": gls.b - beta,
        "sigma_err": sigma_err,
        "error_bound": ratio,
        "zeta_up": zeta_up,
        "term": (tr.termination.value, tr_ne.termination.value),
    }


def run_monte_carlo(m=80, n=20, eigenvalues=(0.01, 0.1, 10.0, 50.0), multiplicities=None,
                    replications=1000, seed=2024, tol_rel=1e-10, max_iter=None,
                    ne_max_iter=None, workers=1) -> McSummary:
    """Sampling distribution of PCG-Aug and PCG-NE iterates.

    Parameters
    ----------
    multiplicities : sequence of int, optional
        Defaults to an equal split of ``m`` over the eigenvalues.
    workers : int
        Replications run in this many processes; results are aggregated in
        replication order, so the summary does not depend on scheduling.
    """
    if replications < 2:
        raise ValueError("replications must be >= 2 to estimate standard errors")
    if multiplicities is None:
        k = len(eigenvalues)
        if m % k:
            raise gen.BadMultiplicities(f"{m} rows do not split evenly over {k} eigenvalues")
        multiplicities = [m // k] * k
    setup = _Setup(m, n, eigenvalues, multiplicities, seed, tol_rel, max_iter, ne_max_iter)
    results = []
    failures = 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_replicate, setup, r) for r in range(replications)]
            for f in futs:
                try:
                    results.append(f.result())
                except Exception as exc:  # noqa: BLE001 - logged and counted
                    failures += 1
                    log.warning("replication failed: %s", exc)
    else:
        for r in range(replications):
            try:
                results.append(_replicate(setup, r))
            except Exception as exc:  # noqa: BLE001
                failures += 1
                log.warning("replication %d failed: %s", r, exc)
    results.sort(key=lambda d: d["rep"])

    summary = McSummary(replications=len(results), beta=setup.beta, failures=failures)
    summary.solvers["pcg_aug"] = _stats(np.array([d["aug"] for d in results]))
    summary.solvers["pcg_ne"] = _stats(np.array([d["ne"] for d in results]))
    summary.gls = _stats(np.array([d["gls"] for d in results])[:, None, :])
    se = np.array([d["sigma_err"] for d in results])
    summary.sigma_err_mean = se.mean(axis=0)
    summary.sigma_err_se = se.std(axis=0, ddof=1) / np.sqrt(len(results))
    summary.error_bound_max_ratio = max(d["error_bound"] for d in results)
    summary.zeta_increases = sum(d["zeta_up"] for d in results)
    for d in results:
        for name, t in zip(("pcg_aug", "pcg_ne"), d["term"]):
            key = (name, t)
            summary.terminations[key] = summary.terminations.get(key, 0) + 1
    return summary
