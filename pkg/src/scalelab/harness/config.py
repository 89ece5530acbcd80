"""Sweep configuration read from TOML.

    [base]                      # ProblemSpec fields
    model = "diagonal"
    d = 100
    n = 200
    gamma = 0.75
    delta = 0.5
    lam = 0.01
    seed = 0

    [grid]                      # every key optional; lists replace the base value
    d = [100, 200]
    n = [200, 2000]             # or n_over_d = [...] or n_eff = [...]
    lam = [0.01, 1.0]           # or lam_d_power = [-1, 0, 0.5] for lam = d^p
    gamma = [0.75]
    delta = [0.5]

    [run]
    seeds = [0, 1, 2]           # replicate indices
    solvers = ["lasso"]
    se = ["lasso", "bayes_diag"]
    out = "results.jsonl"
    workers = 1
    compact = "auto"            # exact sufficient statistics when n is large
    mc_samples = 10
    spectrum = false
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import tomli

from ..errors import InvalidSpecError
from ..model_gen import DataMode, Model, ProblemSpec

SOLVERS = {"lasso": Model.DIAGONAL, "gamp_lasso": Model.DIAGONAL, "bayes_exact": Model.DIAGONAL,
           "matrix": Model.QUADRATIC, "gamp_matrix": Model.QUADRATIC}
SE_KINDS = {"lasso": Model.DIAGONAL, "bayes_diag": Model.DIAGONAL,
            "quad_erm": Model.QUADRATIC, "quad_bayes": Model.QUADRATIC}
N_KEYS = ("n", "n_over_d", "n_eff")
LAM_KEYS = ("lam", "lam_d_power")
WORKERS_ENV = "SCALELAB_WORKERS"


class ConfigError(InvalidSpecError):
    """The configuration file is unreadable or inconsistent."""


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if w < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return w


@dataclass
class SweepConfig:
    base: ProblemSpec
    grid: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    solvers: list = field(default_factory=list)
    se: list = field(default_factory=list)
    outputs: str = "results.jsonl"
    workers: int | None = None
    compact: str | bool = "auto"
    mc_samples: int = 10
    spectrum: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        model = self.base.model
        for key, vals in self.grid.items():
            if key not in ("d", "gamma", "delta") + N_KEYS + LAM_KEYS:
                raise ConfigError(f"unknown grid key {key!r}")
            if not isinstance(vals, (list, tuple)) or len(vals) == 0:
                raise ConfigError(f"grid.{key} must be a non-empty list")
        if sum(k in self.grid for k in N_KEYS) > 1:
            raise ConfigError("give at most one of grid.n, grid.n_over_d, grid.n_eff")
        if sum(k in self.grid for k in LAM_KEYS) > 1:
            raise ConfigError("give at most one of grid.lam, grid.lam_d_power")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ConfigError(f"unknown solver {s!r}")
            if SOLVERS[s] is not model:
                raise ConfigError(f"solver {s!r} does not apply to the {model.value} model")
        for s in self.se:
            if s not in SE_KINDS:
                raise ConfigError(f"unknown state evolution {s!r}")
            if SE_KINDS[s] is not model:
                raise ConfigError(f"state evolution {s!r} does not apply to the {model.value} model")
        if not isinstance(self.seeds, (list, tuple)) or any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a list of nonnegative integers")
        if self.compact not in ("auto", True, False):
            raise ConfigError("compact must be true, false or \"auto\"")
        if self.workers is not None and int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        if int(self.mc_samples) < 1:
            raise ConfigError("mc_samples must be >= 1")

    def with_overrides(self, **kw) -> "SweepConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _spec_from_table(table: dict) -> ProblemSpec:
    known = {"model", "d", "n", "gamma", "delta", "lam", "seed", "mode"}
    extra = set(table) - known
    if extra:
        raise ConfigError(f"unknown [base] keys: {sorted(extra)}")
    missing = {"model", "d", "gamma", "delta"} - set(table)
    if missing:
        raise ConfigError(f"[base] is missing {sorted(missing)}")
    kw = dict(table)
    kw.setdefault("n", 0)
    if "mode" in kw:
        try:
            kw["mode"] = DataMode(kw["mode"])
        except ValueError:
            raise ConfigError(f"unknown data mode {kw['mode']!r}") from None
    try:
        return ProblemSpec(**kw)
    except (InvalidSpecError, TypeError) as exc:
        raise ConfigError(f"invalid [base]: {exc}") from None


def parse_config(data: dict) -> SweepConfig:
    if "base" not in data:
        raise ConfigError("config needs a [base] table")
    unknown = set(data) - {"base", "grid", "run"}
    if unknown:
        raise ConfigError(f"unknown tables: {sorted(unknown)}")
    base = _spec_from_table(data["base"])
    run = dict(data.get("run", {}))
    known_run = {"seeds", "solvers", "se", "out", "workers", "compact", "mc_samples", "spectrum"}
    if set(run) - known_run:
        raise ConfigError(f"unknown [run] keys: {sorted(set(run) - known_run)}")
    return SweepConfig(base=base, grid=dict(data.get("grid", {})), seeds=list(run.get("seeds", [0])),
                       solvers=list(run.get("solvers", [])), se=list(run.get("se", [])),
                       outputs=str(run.get("out", "results.jsonl")), workers=run.get("workers"),
                       compact=run.get("compact", "auto"), mc_samples=int(run.get("mc_samples", 10)),
                       spectrum=bool(run.get("spectrum", False)))


def load_config(path) -> SweepConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(data)


def base_spec_from_file(path) -> ProblemSpec:
    """Just the [base] table, for the single-problem subcommands."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return _spec_from_table(data.get("base", data))
