"""Experiment configuration and its TOML replay form."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

import tomli_w

from ..errors import BadMultiplicities

EXPERIMENTS = ("scaling", "monte-carlo", "sur-bench", "var-suite")


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one experiment bit for bit.

    ``dims`` holds the experiment's sizes (``m``, ``n`` or ``M``, ``G``,
    ``widths``...).  ``options`` carries experiment-specific switches such as
    ``paper_scale`` or ``workers``; neither affects the random draws except
    through the sizes they imply.
    """

    name: str
    seed: int = 2024
    dims: dict = field(default_factory=dict)
    eigenvalues: list | None = None
    multiplicities: list | None = None
    alphas: list = field(default_factory=list)
    replications: int = 1
    solvers: list = field(default_factory=list)
    preconditioners: list = field(default_factory=list)
    tol_rel: float = 1e-10
    max_iter: int | None = None
    output_dir: str = "results"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; expected one of {EXPERIMENTS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.multiplicities is not None:
            if self.eigenvalues is None or len(self.eigenvalues) != len(self.multiplicities):
                raise BadMultiplicities("one multiplicity per eigenvalue is required")
            dim = self.dims.get("m")
            if dim is not None and sum(self.multiplicities) != dim:
                raise BadMultiplicities(
                    f"multiplicities sum to {sum(self.multiplicities)}, covariance dimension is {dim}"
                )

    def to_dict(self):
        # TOML has no null: unset fields are simply omitted
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def default_config(name, seed=2024, paper_scale=False, **overrides) -> ExperimentConfig:
    """The standard settings of each study at desk scale (or paper scale)."""
    if name == "scaling":
        cfg = dict(dims={"m": 300, "n": 50}, eigenvalues=[0.5, 1.0, 1.5, 2.0],
                   multiplicities=[75, 75, 75, 75], alphas=[1.0, 0.25, 4.0],
                   solvers=["aug"], preconditioners=["identity"],
                   options={"residual_modes": ["recurrence", "range_free"], "cross_tol": 1e-8})
    elif name == "monte-carlo":
        cfg = dict(dims={"m": 80, "n": 20}, eigenvalues=[0.01, 0.1, 10.0, 50.0],
                   multiplicities=[20, 20, 20, 20], replications=1000,
                   solvers=["aug", "ne"], preconditioners=["identity"], options={"workers": 1})
    elif name == "sur-bench":
        cfg = dict(dims={"M": 40, "widths": [3, 3, 3, 3], "pool": 6},
                   solvers=["aug", "aug-dense", "ne", "mvrglm", "direct"],
                   preconditioners=["identity"], options={"sur_reduce": True})
    elif name == "var-suite":
        dims = {"M": 300, "G": 12, "lags": 5} if paper_scale else {"M": 100, "G": 6, "lags": 4}
        cfg = dict(dims=dims, solvers=["ne", "aug", "mvrglm"], preconditioners=["K1", "K2"],
                   options={"paper_scale": bool(paper_scale), "burn_in": 200})
    else:
        raise ValueError(f"unknown experiment {name!r}")
    cfg.update(overrides)
    return ExperimentConfig(name=name, seed=seed, **cfg)


def write_replay(configs, path):
    doc = {"experiment": [c.to_dict() for c in configs]}
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)


def read_replay(path):
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return [ExperimentConfig.from_dict(d) for d in doc.get("experiment", [])]
