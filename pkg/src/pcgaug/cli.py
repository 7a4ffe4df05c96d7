"""Command-line interface: the studies and one-shot estimation from a problem directory.

Exit codes: 0 success, 2 solver breakdown (the recovered solution is still
written), 3 ill-posed problem.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np
import tomli_w

from . import linalg as la
from .errors import IllPosedError
from .experiments.config import EXPERIMENTS, default_config, read_replay
from .glm import (
    BlockZeroPadded,
    DenseSymmetric,
    Glm,
    KroneckerIdentity,
    Termination,
    blue_augmented_direct,
)
from .pcg import (
    RESIDUAL_MODES,
    PcgConfig,
    pcg_aug,
    pcg_aug_alt,
    pcg_aug_full,
    pcg_normal_equations,
)
from .structured import (
    MvRglm,
    SurModel,
    dense_preconditioner,
    mvrglm_preconditioner,
    sur_preconditioner,
)

log = logging.getLogger("pcgaug")

EXIT_OK, EXIT_BREAKDOWN, EXIT_ILL_POSED = 0, 2, 3
SOLVERS = ("aug", "aug-alt", "aug-full", "ne", "direct")
AUG = {"aug": pcg_aug, "aug-alt": pcg_aug_alt, "aug-full": pcg_aug_full}


def _precond_arg(text):
    if text in ("identity", "scaled-identity", "diag") or text.startswith("dense:"):
        return text
    raise argparse.ArgumentTypeError(
        "expected identity, scaled-identity, diag or dense:PATH")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=2024)
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--tol", type=float, default=1e-10, help="relative residual tolerance")
    common.add_argument("--max-iter", type=int, default=None)
    common.add_argument("--precond", type=_precond_arg, default="identity",
                        help="identity | scaled-identity | diag | dense:PATH")
    common.add_argument("--solver", choices=SOLVERS, default="aug")
    common.add_argument("--replications", type=int, default=None)
    common.add_argument("--paper-scale", action="store_true")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--replay", metavar="TOML", help="rerun the experiments saved in a replay file")
    common.add_argument("--timing", action="store_true", help="keep elapsed_ns in trace CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pcgaug", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=f"run the {name} study")
    solve = sub.add_parser("solve", parents=[common], help="estimate from a problem directory")
    solve.add_argument("problem", help="problem directory")
    solve.add_argument("--residual", choices=RESIDUAL_MODES, default="range_free",
                       help="residual form of the augmented solvers")
    return parser


# -- experiments ----------------------------------------------------------------


def _experiment_config(args):
    overrides = {"tol_rel": args.tol, "max_iter": args.max_iter}
    cfg = default_config(args.command, seed=args.seed, paper_scale=args.paper_scale, **overrides)
    if args.replications is not None:
        cfg.replications = args.replications
    if args.command == "monte-carlo":
        cfg.options["workers"] = args.workers
    if args.command == "scaling" and args.solver in AUG:
        cfg.solvers = [args.solver]
    cfg.output_dir = args.out
    return cfg


def run_experiments(args):
    from .experiments.report import emit_report
    from .experiments.runs import run_experiment

    configs = read_replay(args.replay) if args.replay else [_experiment_config(args)]
    outputs = [run_experiment(c) for c in configs]
    written = emit_report(outputs, args.out, timing=args.timing)
    for out in outputs:
        print(f"{out.name}: {len(out.summary)} summary rows, {len(out.traces)} traces")
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


# -- solve ------------------------------------------------------------------------


def _read(path):
    return la.read_matrix_csv(path)


def _read_meta(path):
    """``key=value`` lines (the subset of TOML the problem format uses)."""
    meta = {}
    if not os.path.exists(path):
        return meta
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            meta[key.strip()] = int(val.strip())
    return meta


def load_problem(directory):
    """Read a problem directory; returns ``(kind, model, glm)``.

    ``kind`` is ``"glm"``, ``"sur"`` (``blocks/``) or ``"mvrglm"``
    (``restrictions.csv`` with a common regressor ``X.csv``).
    """
    p = lambda name: os.path.join(directory, name)  # noqa: E731
    if os.path.isdir(p("blocks")):
        files = sorted((f for f in os.listdir(p("blocks")) if f.startswith("X_")),
                       key=lambda f: int(f[2:].split(".")[0]))
        blocks = [_read(os.path.join(p("blocks"), f)) for f in files]
        Y = _read(p("y.csv"))
        Y = Y.reshape(len(blocks), -1).T if Y.shape[1] == 1 else Y
        sur = SurModel(blocks, Y, _read(p("sigma0.csv")))
        return "sur", sur, sur.to_glm()
    if os.path.exists(p("restrictions.csv")):
        Z0, Y, Om = _read(p("X.csv")), _read(p("y.csv")), _read(p("sigma0.csv"))
        pairs = _read(p("restrictions.csv")).astype(int)
        restrictions = [[] for _ in range(Y.shape[1])]
        for eq, col in pairs:
            if eq < 1 or col < 1:
                raise ValueError("restrictions.csv uses 1-based equation and column indices")
            restrictions[eq - 1].append(col - 1)
        mv = MvRglm(Z0, Y, Om, restrictions)
        return "mvrglm", mv, mv.to_glm()
    X, y = _read(p("X.csv")), _read(p("y.csv")).reshape(-1)
    meta = _read_meta(p("meta.toml"))
    if os.path.exists(p("sigma_dense.csv")):
        sigma = DenseSymmetric(_read(p("sigma_dense.csv")))
    elif os.path.exists(p("sigma_core.csv")):
        sigma = KroneckerIdentity(_read(p("sigma_core.csv")), meta["block"])
    elif os.path.exists(p("omega.csv")):
        sigma = BlockZeroPadded(_read(p("omega.csv")), meta["zero_rows"])
    else:
        raise FileNotFoundError(f"{directory}: no sigma_dense.csv, sigma_core.csv or omega.csv")
    return "glm", None, Glm(y, X, sigma)


def make_preconditioner(kind, model, glm, choice):
    diag = glm.sigma.diagonal()
    alpha = float(np.max(diag))
    if kind == "sur":
        d = {"identity": None, "scaled-identity": alpha, "diag": diag}.get(choice)
        if choice.startswith("dense:"):
            raise ValueError("dense:PATH is only available for plain GLM problems")
        return sur_preconditioner(model, d)
    if kind == "mvrglm":
        if choice.startswith("dense:"):
            raise ValueError("dense:PATH is only available for plain GLM problems")
        dz = {"identity": None, "scaled-identity": alpha, "diag": np.diag(model.Omega0)}[choice]
        dc = 1.0 if choice == "identity" else alpha
        return mvrglm_preconditioner(model, dz_scale=dz, dc_scale=dc)
    if choice == "identity":
        D = None
    elif choice == "scaled-identity":
        D = alpha
    elif choice == "diag":
        # zero covariance rows (exact constraints) get the identity scale alpha
        D = np.where(diag > 0, diag, alpha)
    else:
        D = _read(choice.split(":", 1)[1])
    return dense_preconditioner(glm.dense_x(), D)


def _dense_glm(glm):
    return Glm(glm.y, glm.dense_x(), glm.sigma.to_dense())


def solve(args):
    kind, model, glm = load_problem(args.problem)
    cfg = PcgConfig(tol_rel=args.tol, max_iter=args.max_iter, residual=args.residual)
    trace = None
    if args.solver == "direct":
        sol = blue_augmented_direct(_dense_glm(glm))
    elif args.solver == "ne":
        if kind == "mvrglm":
            # the constrained form has a singular covariance; the SUR form is equivalent
            glm = model.to_sur().to_glm()
        sol, trace = pcg_normal_equations(_dense_glm(glm), config=cfg)
    else:
        precond = make_preconditioner(kind, model, glm, args.precond)
        sol, trace = AUG[args.solver](glm, precond, config=cfg)
    b = sol.b
    if kind == "mvrglm" and args.solver == "direct":
        b = model.expand(model.compress(b))
    elif kind == "mvrglm" and args.solver == "ne":
        b = model.expand(b)
    os.makedirs(args.out, exist_ok=True)
    la.write_matrix_csv(os.path.join(args.out, "b.csv"), b)
    la.write_matrix_csv(os.path.join(args.out, "w.csv"), sol.w)
    if trace is not None:
        trace.write_csv(os.path.join(args.out, "trace.csv"), timing=args.timing)
    res, feas = sol.aug_residual(glm)
    info = {"solver": args.solver, "model": kind,
            "form": "sur" if kind == "mvrglm" and args.solver == "ne" else kind,
            "termination": sol.termination.value,
            "iterations": int(sol.iterations), "aug_residual_norm": res, "dual_feas_norm": feas}
    if trace is not None and trace.breakdown_iter is not None:
        info["breakdown_iter"] = int(trace.breakdown_iter)
    with open(os.path.join(args.out, "solution.toml"), "wb") as fh:
        tomli_w.dump(info, fh)
    print(f"{args.solver}: {sol.termination.value} after {sol.iterations} iterations, "
          f"residual {res:.3e}")
    if sol.termination == Termination.BREAKDOWN:
        print("breakdown: recovered solution written", file=sys.stderr)
        return EXIT_BREAKDOWN
    if sol.termination in (Termination.MAX_ITER, Termination.STAGNATION):
        print(f"warning: stopped on {sol.termination.value} before reaching the tolerance",
              file=sys.stderr)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "solve":
            return solve(args)
        return run_experiments(args)
    except IllPosedError as exc:
        print(f"ill-posed problem: {exc}", file=sys.stderr)
        return EXIT_ILL_POSED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
