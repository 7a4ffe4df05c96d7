"""The studies: alpha scaling, Monte Carlo, SUR benchmark and the restricted-VAR suite.

Each ``run_*`` takes an `ExperimentConfig` and returns a `RunOutput`, which
`pcgaug.experiments.report.emit_report` turns into files.  Solver failures
are recorded in the output, never raised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import PcgAugError, TooLarge
from ..glm import Glm, KroneckerIdentity, Termination, blue_augmented_direct, gls_estimate_direct
from ..pcg import (
    PcgConfig,
    eigs_of_gk,
    pcg_aug,
    pcg_aug_alt,
    pcg_aug_full,
    pcg_normal_equations,
    reduced_diagnostics,
)
from ..structured import (
    MvRglm,
    cost_counters,
    dense_preconditioner,
    mvrglm_preconditioner,
    sur_preconditioner,
    sur_reduce,
)
from . import generators as gen
from .config import ExperimentConfig
from .montecarlo import run_monte_carlo

log = logging.getLogger(__name__)

AUG_SOLVERS = {"aug": pcg_aug, "aug-alt": pcg_aug_alt, "aug-full": pcg_aug_full}


@dataclass
class RunOutput:
    """Results of one experiment in report-ready form.

    ``summary`` rows are ``{"item", "metric", "value"}`` dicts; ``tables``
    maps a CSV stem to a list of row dicts; ``traces`` maps a stem to a
    `PcgTrace`.  ``result`` keeps the experiment's own objects for callers.
    """

    name: str
    config: ExperimentConfig
    summary: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    result: object = None

    def add(self, item, metric, value):
        self.summary.append({"item": item, "metric": metric, "value": value})

    def value(self, item, metric):
        for row in self.summary:
            if row["item"] == item and row["metric"] == metric:
                return row["value"]
        raise KeyError((item, metric))


def _pcg_config(cfg: ExperimentConfig, **kw):
    return PcgConfig(tol_rel=cfg.tol_rel, max_iter=cfg.max_iter, **kw)


def _first_below(values, tol):
    """1-based index of the first entry ``<= tol``, or None."""
    hits = np.flatnonzero(np.asarray(values) <= tol)
    return int(hits[0]) + 1 if hits.size else None


# -- alpha scaling ------------------------------------------------------------


@dataclass
class ScalingCase:
    alpha: float
    mode: str
    termination: Termination
    iterations: int
    breakdown_iter: int | None
    gk_condition: float
    n_unit: int
    kappa: float
    residual_curve: np.ndarray
    error_curve: np.ndarray
    recovered_residual: float
    b_error: float
    cross_residual: int | None
    cross_error: int | None


def run_scaling(cfg: ExperimentConfig) -> RunOutput:
    """One covariance scaled by each ``alpha``, solved with ``D = I``.

    Both residual modes are run on every scaled problem: the literal
    recurrence, which is where a breakdown shows up, and the range-free form.
    """
    m, n = cfg.dims["m"], cfg.dims["n"]
    base = gen.gen_spectrum_sigma(m, cfg.eigenvalues, cfg.multiplicities, cfg.seed)
    X = gen.gen_regressor(m, n, cfg.seed)
    beta = gen.draw_beta(n, cfg.seed)
    modes = cfg.options.get("residual_modes", ["recurrence", "range_free"])
    cross_tol = float(cfg.options.get("cross_tol", 1e-8))
    precond = dense_preconditioner(X)
    solver = AUG_SOLVERS[(cfg.solvers or ["aug"])[0]]
    out = RunOutput("scaling", cfg)
    out.add("design", "beta", " ".join(f"{b:.17g}" for b in beta))
    cases = {}
    for alpha in cfg.alphas:
        S = alpha * base
        y = gen.draw_response(X, beta, gen.symmetric_sqrt(S), cfg.seed)
        glm = Glm(y, X, S)
        ref = blue_augmented_direct(glm)
        spec = eigs_of_gk(glm, precond)
        diag = reduced_diagnostics(glm, precond)
        tag = f"alpha={alpha:g}"
        out.tables[f"spectrum_alpha{alpha:g}"] = [
            {"index": i + 1, "real": float(np.real(v)), "imag": float(np.imag(v))}
            for i, v in enumerate(spec.eigenvalues)
        ]
        out.add(tag, "gk_condition", spec.condition)
        out.add(tag, "unit_eigenvalues", spec.n_unit)
        out.add(tag, "reduced_kappa", diag.kappa)
        for mode in modes:
            sol, tr = solver(glm, precond, config=_pcg_config(cfg, residual=mode,
                                                               store_iterates=True),
                             w_ref=ref.w)
            c = tr.column("c_i")
            res = np.sqrt(np.abs(c) / c[0])
            se = np.asarray(tr.sigma_errors)
            err = np.sqrt(se / se[0]) if se[0] > 0 else np.zeros_like(se)
            b_err = [np.linalg.norm(z - ref.b) / np.linalg.norm(ref.b) for z in tr.iterates["z_hat"]]
            bound = diag.bound_curve(len(res))
            out.tables[f"curves_alpha{alpha:g}_{mode}"] = [
                {"iter": i + 1, "residual": float(res[i]), "sigma_error": float(err[i]),
                 "b_error": float(b_err[i]), "bound": float(bound[i])}
                for i in range(len(res))
            ]
            out.traces[f"alpha{alpha:g}_{mode}"] = tr
            case = ScalingCase(
                alpha=alpha, mode=mode, termination=tr.termination, iterations=tr.iterations,
                breakdown_iter=tr.breakdown_iter, gk_condition=spec.condition,
                n_unit=spec.n_unit, kappa=diag.kappa, residual_curve=res, error_curve=err,
                recovered_residual=sol.extras["aug_residual_norm"] / np.linalg.norm(y),
                b_error=float(np.linalg.norm(sol.b - ref.b) / np.linalg.norm(ref.b)),
                cross_residual=_first_below(res, cross_tol),
                cross_error=_first_below(err, cross_tol),
            )
            cases[(alpha, mode)] = case
            t = f"{tag} {mode}"
            out.add(t, "termination", tr.termination.value)
            out.add(t, "iterations", tr.iterations)
            out.add(t, "breakdown_iter", tr.breakdown_iter if tr.breakdown_iter else "")
            out.add(t, "recovered_residual_rel", case.recovered_residual)
            out.add(t, "b_error_rel", case.b_error)
            out.add(t, "cross_residual", case.cross_residual or "")
            out.add(t, "cross_error", case.cross_error or "")
    out.result = cases
    return out


# -- Monte Carlo --------------------------------------------------------------


def run_mc(cfg: ExperimentConfig) -> RunOutput:
    summary = run_monte_carlo(
        m=cfg.dims["m"], n=cfg.dims["n"], eigenvalues=cfg.eigenvalues,
        multiplicities=cfg.multiplicities, replications=cfg.replications, seed=cfg.seed,
        tol_rel=cfg.tol_rel, max_iter=cfg.max_iter,
        ne_max_iter=cfg.options.get("ne_max_iter"), workers=int(cfg.options.get("workers", 1)),
    )
    out = RunOutput("monte-carlo", cfg, result=summary)
    out.tables["iterations"] = summary.rows()
    gls = summary.gls
    out.add("design", "beta", " ".join(f"{b:.17g}" for b in summary.beta))
    out.add("pcg_aug", "max_abs_t", float(summary.solvers["pcg_aug"].t_stats().max()))
    out.add("pcg_aug", "unbiased_4se", summary.unbiased("pcg_aug"))
    early = list(range(min(5, summary.solvers["pcg_ne"].iterations)))
    out.add("pcg_ne", "bias_detected_early", summary.bias_detected("pcg_ne", early[1:] or early))
    out.add("pcg_aug", "trace_monotone_2se", summary.trace_monotone())
    out.add("pcg_aug", "error_bound_max_ratio", summary.error_bound_max_ratio)
    out.add("pcg_aug", "zeta_increases", summary.zeta_increases)
    out.add("gls", "rmse_mean", float(gls.rmse_mean[0]))
    for name, st in summary.solvers.items():
        out.add(name, "final_rmse_mean", float(st.rmse_mean[-1]))
    for (name, term), count in sorted(summary.terminations.items()):
        out.add(name, f"termination_{term}", count)
    out.add("all", "failed_replications", summary.failures)
    return out


# -- SUR benchmark ------------------------------------------------------------


def _ne_residual_curve(glm_dense, sigma_inv, bs):
    """``||X^T Sigma^{-1} (X b_i - y)|| / ||X^T Sigma^{-1} y||`` for each iterate."""
    X, y = glm_dense.X, glm_dense.y
    scale = np.linalg.norm(X.T @ (sigma_inv @ y))
    return np.array([np.linalg.norm(X.T @ (sigma_inv @ (X @ b - y))) / scale for b in bs])


def run_sur_bench(cfg: ExperimentConfig) -> RunOutput:
    """Structured versus dense PCG-Aug, PCG-NE, the restricted multivariate path and a direct solve."""
    M, widths = cfg.dims["M"], list(cfg.dims["widths"])
    pool = cfg.dims.get("pool")
    sur, beta, Z0, cols = gen.gen_sur_model(M, widths, cfg.seed, common_pool=pool)
    glm_s = sur.to_glm()
    glm_d = sur.to_glm(dense=True)
    direct = gls_estimate_direct(glm_d)
    scale = np.linalg.norm(direct.b)
    out = RunOutput("sur-bench", cfg)
    rows = []
    pc_s = sur_preconditioner(sur)
    pc_d = dense_preconditioner(glm_d.X)
    pcfg = _pcg_config(cfg, store_iterates=True)

    def report(name, b, tr, counters=None):
        err = float(np.linalg.norm(b - direct.b) / scale)
        row = {"solver": name, "iterations": tr.iterations if tr else 0,
               "termination": tr.termination.value if tr else "direct", "error_vs_direct": err,
               "multiplies": counters["multiplies"] if counters else "",
               "pi_applies": counters["pi_applies"] if counters else "",
               "xstar_applies": counters["xstar_applies"] if counters else ""}
        rows.append(row)
        out.add(name, "error_vs_direct", err)
        out.add(name, "iterations", row["iterations"])
        if counters:
            out.add(name, "multiplies", counters["multiplies"])
        if tr is not None:
            out.traces[name] = tr

    report("direct", direct.b, None)
    sol_s, tr_s = pcg_aug(glm_s, pc_s, config=pcfg)
    report("aug", sol_s.b, tr_s, cost_counters(pc_s))
    sol_d, tr_d = pcg_aug(glm_d, pc_d, config=pcfg)
    report("aug-dense", sol_d.b, tr_d, cost_counters(pc_d))
    ws, wd = tr_s.iterates["w"], tr_d.iterates["w"]
    k = min(len(ws), len(wd))
    iterate_gap = max(float(np.linalg.norm(ws[i] - wd[i]) / max(np.linalg.norm(wd[i]), 1e-300))
                      for i in range(k))
    out.add("aug vs aug-dense", "max_rel_iterate_gap", iterate_gap)
    sol_ne, tr_ne = pcg_normal_equations(glm_d, config=pcfg)
    report("ne", sol_ne.b, tr_ne)

    if cols is not None:
        # blocks share Z0: the same model as a restricted multivariate regression
        restrictions = [np.setdiff1d(np.arange(pool), c) for c in cols]
        mv = MvRglm(Z0, sur.Y, sur.Sigma0, restrictions)
        pc_mv = mvrglm_preconditioner(mv)
        sol_mv, tr_mv = pcg_aug(mv.to_glm(), pc_mv, config=pcfg)
        report("mvrglm", mv.compress(sol_mv.b), tr_mv, cost_counters(pc_mv))

    if cfg.options.get("sur_reduce", False):
        red, rec = sur_reduce(sur)
        pc_r = sur_preconditioner(red)
        glm_r = red.to_glm()
        sol_r, tr_r = pcg_aug(glm_r, pc_r, config=pcfg)
        report("aug-reduced", sol_r.b, tr_r, cost_counters(pc_r))
        out.add("aug-reduced", "rank_q", rec.rank)
        out.add("aug-reduced", "iteration_cap", glm_r.m - glm_r.n + 1)
        out.add("aug", "iteration_cap", glm_s.m - glm_s.n + 1)
    out.tables["solvers"] = rows
    out.add("design", "beta", " ".join(f"{b:.17g}" for b in beta))
    out.result = {"rows": rows, "iterate_gap": iterate_gap, "direct": direct}
    return out


# -- restricted VAR suite -----------------------------------------------------

# (sparsity, largest root, cond(Omega0)) for the six models
VAR_MODELS = (
    (0.26, 0.90, 4.48),
    (0.26, 1.05, 4.48),
    (0.26, 0.90, 448.0),
    (0.26, 1.05, 448.0),
    (0.80, 0.90, 448.0),
    (0.80, 1.05, 448.0),
)


def _dense_cond(fn):
    try:
        return float(fn())
    except (TooLarge, MemoryError, np.linalg.LinAlgError) as exc:
        log.info("condition diagnostic skipped: %s", exc)
        return float("nan")


def _augmented_dense(glm):
    S = glm.sigma.to_dense()
    X = glm.dense_x()
    n = X.shape[1]
    return np.block([[S, X], [X.T, np.zeros((n, n))]])


def run_var_suite(cfg: ExperimentConfig) -> RunOutput:
    """Six restricted VAR models; PCG-NE against PCG-Aug and the multivariate path with K1/K2.

    K1 uses ``D = alpha I`` with ``alpha = max_i Omega0_ii``; K2 uses
    ``D = diag(Omega0) ⊗ I``.  Constraint rows of the multivariate path use
    ``dc_factor * alpha * I`` in both cases (``dc_factor = 1`` by default).
    Condition numbers are reported for the SUR form and for the constrained
    form; the latter is skipped above 2000 unknowns.
    """
    G, M, lags = cfg.dims["G"], cfg.dims["M"], cfg.dims["lags"]
    burn = int(cfg.options.get("burn_in", 200))
    paper_scale = bool(cfg.options.get("paper_scale", False))
    precs = cfg.preconditioners or ["K1", "K2"]
    solvers = cfg.solvers or ["ne", "aug", "mvrglm"]
    out = RunOutput("var-suite", cfg)
    cond_rows, final_rows = [], []
    models = []
    for idx, (sparsity, lam, wcond) in enumerate(VAR_MODELS, start=1):
        spec = gen.VarSpec(G=G, M=M, lags=lags, lambda_max=lam, sparsity=sparsity,
                           omega_cond=wcond, burn_in=burn)
        try:
            mv, B, info = gen.gen_var_model(spec, cfg.seed)
        except PcgAugError as exc:
            log.warning("model %d could not be generated: %s", idx, exc)
            out.add(f"model{idx}", "generation_error", str(exc))
            continue
        sur = mv.to_sur()
        glm = sur.to_glm()
        glm_d = sur.to_glm(dense=True)
        Om = mv.Omega0
        alpha = float(np.max(np.diag(Om)))
        d_opts = {"K1": alpha, "K2": np.diag(Om).copy()}
        dc = alpha * float(cfg.options.get("dc_factor", 1.0))
        direct = gls_estimate_direct(glm_d)
        sigma_inv = KroneckerIdentity(np.linalg.inv(Om), M)
        item = f"model{idx}"

        big = paper_scale and glm.m + glm.n > 2000
        row = {"model": idx, "sparsity": sparsity, "lambda_max": info["largest_root"],
               "cond_Z0": info["cond_Z0"], "cond_Omega0": info["cond_Omega0"],
               "cond_X": _dense_cond(lambda: np.linalg.cond(glm_d.X)),
               "cond_G": float("nan") if big else _dense_cond(
                   lambda: np.linalg.cond(_augmented_dense(glm_d)))}
        for p in precs:
            pc = sur_preconditioner(sur, d_opts[p])
            row[f"cond_{p}G"] = _dense_cond(lambda pc=pc: eigs_of_gk(glm_d, pc).condition)
        # the same quantities for the constrained (restricted multivariate) system
        big_r = glm.m + mv.k + mv.G * mv.N > 2000
        glm_r = mv.to_glm()
        glm_rd = None if big_r else Glm(glm_r.y, glm_r.dense_x(), glm_r.sigma.to_dense())
        row["cond_G_rglm"] = float("nan") if big_r else _dense_cond(
            lambda: np.linalg.cond(_augmented_dense(glm_rd)))
        for p in precs:
            if big_r:
                row[f"cond_{p}G_rglm"] = float("nan")
                continue
            pc = mvrglm_preconditioner(mv, dz_scale=d_opts[p], dc_scale=dc)
            row[f"cond_{p}G_rglm"] = _dense_cond(lambda pc=pc: eigs_of_gk(glm_rd, pc).condition)
        cond_rows.append(row)
        for key, val in row.items():
            if key != "model":
                out.add(item, key, val)

        def record(name, b_final, bs, tr, err_ref=direct.b):
            curve = _ne_residual_curve(glm_d, sigma_inv, bs)
            out.tables[f"ne_residual_{item}_{name}"] = [
                {"iter": i + 1, "ne_residual_rel": float(v)} for i, v in enumerate(curve)]
            final = float(_ne_residual_curve(glm_d, sigma_inv, [b_final])[0])
            err = float(np.linalg.norm(b_final - err_ref) / np.linalg.norm(err_ref))
            final_rows.append({"model": idx, "solver": name, "termination": tr.termination.value,
                               "iterations": tr.iterations, "ne_residual_rel": final,
                               "error_vs_direct": err})
            out.add(f"{item} {name}", "termination", tr.termination.value)
            out.add(f"{item} {name}", "iterations", tr.iterations)
            out.add(f"{item} {name}", "ne_residual_rel", final)
            out.add(f"{item} {name}", "error_vs_direct", err)
            out.traces[f"{item}_{name}"] = tr

        pcfg = _pcg_config(cfg, store_iterates=True)
        if "ne" in solvers:
            sol, tr = pcg_normal_equations(glm_d, config=pcfg)
            record("ne", sol.b, tr.iterates["x"], tr)
        for p in precs:
            if "aug" in solvers:
                pc = sur_preconditioner(sur, d_opts[p])
                sol, tr = pcg_aug(glm, pc, config=pcfg)
                record(f"aug_{p}", sol.b, tr.iterates["z_hat"], tr)
            if "mvrglm" in solvers:
                pc = mvrglm_preconditioner(mv, dz_scale=d_opts[p], dc_scale=dc)
                sol, tr = pcg_aug(mv.to_glm(), pc, config=pcfg)
                record(f"mvrglm_{p}", mv.compress(sol.b),
                       [mv.compress(z) for z in tr.iterates["z_hat"]], tr)
        models.append({"model": mv, "B": B, "info": info})
    out.tables["conditions"] = cond_rows
    out.tables["final"] = final_rows
    out.result = {"conditions": cond_rows, "final": final_rows, "models": models}
    return out


RUNNERS = {
    "scaling": run_scaling,
    "monte-carlo": run_mc,
    "sur-bench": run_sur_bench,
    "var-suite": run_var_suite,
}


def run_experiment(cfg: ExperimentConfig) -> RunOutput:
    return RUNNERS[cfg.name](cfg)
