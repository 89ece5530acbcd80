"""Grid sweeps: expand a config into tasks, run them in a process pool, append JSONL records.

Every record carries ``schema_version`` and a ``task_hash``; rerunning a
sweep skips tasks whose hash is already present in the output file.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .. import rates
from ..errors import InvalidSpecError, ScalelabError
from ..gamp import gamp_lasso, gamp_matrix
from ..matrix_solvers import solve_matrix_sensing
from ..model_gen import (DataMode, Model, ProblemSpec, diagonal_quadratic_target, excess_risk,
                         gen_dataset, gen_diagonal_target, gen_quadratic_target, matrix_mse, sym_dim)
from ..spectra import empirical_spectrum, predict_spectrum_diagonal, predict_spectrum_quadratic
from ..state_evolution import (MCConfig, se_bayes_diagonal, se_lasso, se_quadratic_bayes,
                               se_quadratic_erm)
from ..vector_solvers import bayes_posterior_mean, solve_lasso
from .config import SweepConfig, default_workers

SCHEMA_VERSION = "1.0"
SCHEMA_MAJOR = 1
EXPLICIT_LIMIT = 2e7  # design entries above which "auto" switches to sufficient statistics


class SchemaError(InvalidSpecError):
    """A record was written by an incompatible schema."""


def _hash(*parts) -> str:
    return hashlib.blake2b(json.dumps(parts, sort_keys=True, default=str).encode(), digest_size=16).hexdigest()


def _seed(*parts) -> int:
    return int(_hash(*parts)[:16], 16)


@dataclass(frozen=True)
class Task:
    model: str
    d: int
    n: int
    gamma: float
    delta: float
    lam: float
    mode: str | None
    replicate: int
    data_seed: int
    mc_seed: int
    solver: str | None
    se: tuple
    compact: bool
    mc_samples: int
    spectrum: bool

    @property
    def spec(self) -> ProblemSpec:
        mode = None if self.mode is None else DataMode(self.mode)
        if self.compact and self.model == Model.QUADRATIC.value:
            mode = DataMode.GOE_UNIVERSAL
        return ProblemSpec(self.model, self.d, self.n, self.gamma, self.delta, self.lam, self.data_seed, mode)

    @property
    def task_hash(self) -> str:
        return _hash(SCHEMA_MAJOR, asdict(self))


def _resolve_n(key, value, d, model):
    if key == "n":
        return int(value)
    if key == "n_over_d" or model is Model.QUADRATIC:
        return int(round(value * d))
    # n_eff = n for the diagonal model
    return int(round(value))


def _use_compact(cfg: SweepConfig, model: Model, d: int, n: int, solver) -> bool:
    if solver in ("gamp_lasso", "gamp_matrix") or solver is None:
        return False
    params = d if model is Model.DIAGONAL else sym_dim(d)
    if n < params:
        return False
    if cfg.compact is True:
        return True
    if cfg.compact is False:
        return False
    return n * d > EXPLICIT_LIMIT


def expand_tasks(cfg: SweepConfig) -> list:
    """Grid x replicates x solvers in a fixed order."""
    base = cfg.base
    g = cfg.grid
    model = base.model
    n_key = next((k for k in ("n", "n_over_d", "n_eff") if k in g), "n")
    n_vals = g.get(n_key, [base.n])
    lam_key = "lam_d_power" if "lam_d_power" in g else "lam"
    lam_vals = g.get(lam_key, [base.lam])
    solvers = list(cfg.solvers) or [None]
    tasks = []
    for d in g.get("d", [base.d]):
        d = int(d)
        for gamma in g.get("gamma", [base.gamma]):
            for delta in g.get("delta", [base.delta]):
                for nv in n_vals:
                    n = _resolve_n(n_key, nv, d, model)
                    for lv in lam_vals:
                        lam = float(d ** lv) if lam_key == "lam_d_power" else float(lv)
                        for rep in cfg.seeds:
                            # data and target do not depend on lambda: common random numbers across lambda
                            data_seed = _seed(base.seed, model.value, d, n, float(gamma), float(delta), int(rep))
                            for solver in solvers:
                                tasks.append(Task(model.value, d, n, float(gamma), float(delta), lam,
                                                  None if base.mode is None else base.mode.value, int(rep),
                                                  data_seed, int(base.seed), solver, tuple(cfg.se),
                                                  _use_compact(cfg, model, d, n, solver), int(cfg.mc_samples),
                                                  bool(cfg.spectrum)))
    return tasks


# ---------------------------------------------------------------------------
# per-task work


@lru_cache(maxsize=512)
def _se_cached(kind, model, d, n, gamma, delta, lam, mc_samples, mc_seed):
    spec = ProblemSpec(model, d, n, gamma, delta, lam, mc_seed)
    mc = MCConfig(n_samples=mc_samples, seed=mc_seed)
    if kind == "lasso":
        return se_lasso(spec)
    if kind == "bayes_diag":
        return se_bayes_diagonal(spec)
    target = diagonal_quadratic_target(d, gamma)
    if kind == "quad_erm":
        return se_quadratic_erm(spec, target, mc)
    if kind == "quad_bayes":
        return se_quadratic_bayes(spec, target, mc)
    raise InvalidSpecError(f"unknown state evolution {kind!r}")


def _se_fields(task: Task, record: dict):
    for kind in task.se:
        try:
            out = _se_cached(kind, task.model, task.d, task.n, task.gamma, task.delta, task.lam,
                             task.mc_samples, task.mc_seed)
        except ScalelabError as exc:
            record.setdefault("se_errors", {})[kind] = f"{type(exc).__name__}: {exc}"
            continue
        if kind in ("lasso", "quad_erm"):
            record["risk_se"] = out.risk
            if kind == "lasso":
                record["se_nu"], record["se_delta_hat"] = out.nu, out.delta_hat
            else:
                record["se_delta"], record["se_eps"], record["se_mc_stderr"] = out.delta, out.eps, out.mc_stderr
        else:
            record["risk_bo"] = out.risk


def _rate_fields(spec: ProblemSpec, record: dict):
    if spec.delta == 0:
        record["phase"] = None
        return
    rep = rates.classify(spec)
    record["phase"] = rep.phase.value
    record["rate_exponent"] = rep.rate_exponents.get("n_eff")
    record["rate_order"] = rep.order
    record["rate_predicted"] = rep.predicted_risk


def _artifact_hash(arr) -> str:
    return hashlib.blake2b(np.ascontiguousarray(arr, dtype=np.float64).tobytes(), digest_size=8).hexdigest()


def _simulate(task: Task, spec: ProblemSpec, record: dict):
    model = Model(task.model)
    if model is Model.DIAGONAL:
        target = gen_diagonal_target(spec)
    else:
        target = gen_quadratic_target(spec)
    data = gen_dataset(spec, target, compact=task.compact)
    if task.solver == "lasso":
        est = solve_lasso(data, task.lam)
        arr, resid = est.theta_hat, est.kkt_residual
    elif task.solver == "gamp_lasso":
        est, trace = gamp_lasso(data, task.lam, target=target)
        arr, resid = est.theta_hat, est.kkt_residual
        record["gamp_iterations"] = len(trace.q)
    elif task.solver == "bayes_exact":
        est = bayes_posterior_mean(data, target.lambda_diag, task.delta)
        arr, resid = est.theta_hat, est.kkt_residual
        record["posterior_risk"] = est.posterior_risk
    elif task.solver == "matrix":
        est = solve_matrix_sensing(data, task.lam)
        arr, resid = est.s_hat, est.opt_residual
        record["rank"] = est.rank
    elif task.solver == "gamp_matrix":
        est, trace = gamp_matrix(data, task.lam, target=target)
        arr, resid = est.s_hat, est.opt_residual
        record["gamp_iterations"] = len(trace.q)
        record["rank"] = est.rank
    else:
        raise InvalidSpecError(f"unknown solver {task.solver!r}")
    record["excess_risk"] = excess_risk(arr, target)
    # simulated risk in state-evolution units
    record["risk_sim"] = record["excess_risk"] if model is Model.DIAGONAL else matrix_mse(arr, target)
    record["kkt_residual"] = float(resid)
    record["objective"] = float(est.objective)
    record["iterations"] = int(est.iterations)
    record["artifact_hash"] = _artifact_hash(arr)
    record["mode"] = data.mode.value
    if task.spectrum:
        record["spectrum"] = _spectrum_fields(task, spec, target, est)


def _spectrum_fields(task, spec, target, est):
    se = _se_cached("lasso" if task.model == "diagonal" else "quad_erm", task.model, task.d, task.n,
                    task.gamma, task.delta, task.lam, task.mc_samples, task.mc_seed)
    if task.model == "diagonal":
        pred = predict_spectrum_diagonal(se, target, se.spec, seed=task.mc_seed)
    else:
        pred = predict_spectrum_quadratic(se, diagonal_quadratic_target(task.d, task.gamma),
                                          MCConfig(n_samples=task.mc_samples, seed=task.mc_seed))
    edges = pred.sampled_density.edges
    emp = empirical_spectrum(est, edges=edges)
    return dict(edges=[float(e) for e in edges], mass_sim=emp.mass.tolist(), mass_pred=pred.sampled_density.mass.tolist(),
                zero_mass_sim=emp.zero_mass, zero_mass_pred=pred.zero_mass,
                spikes=[[int(i), float(x)] for i, x in pred.spikes])


def run_task(task: Task) -> dict:
    t0 = time.perf_counter()
    spec = task.spec
    record = dict(schema_version=SCHEMA_VERSION, task_hash=task.task_hash, model=task.model, d=task.d,
                  n=task.n, n_eff=spec.n_eff, gamma=task.gamma, delta=task.delta, lam=task.lam,
                  mode=spec.data_mode.value, replicate=task.replicate, seed=task.data_seed,
                  solver=task.solver, compact=task.compact, risk_sim=None, risk_se=None, risk_bo=None,
                  kkt_residual=None, status="ok")
    try:
        _rate_fields(spec, record)
        _se_fields(task, record)
        if task.solver is not None:
            _simulate(task, spec, record)
    except (ScalelabError, np.linalg.LinAlgError, MemoryError) as exc:
        record["status"] = "error"
        record["error"] = f"{type(exc).__name__}: {exc}"
    record["wall_time_ms"] = round(1e3 * (time.perf_counter() - t0), 3)
    return record


# ---------------------------------------------------------------------------
# persistence


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def check_schema(record: dict):
    ver = str(record.get("schema_version", ""))
    try:
        major = int(ver.split(".")[0])
    except ValueError:
        raise SchemaError(f"record has no readable schema_version ({ver!r})") from None
    if major != SCHEMA_MAJOR:
        raise SchemaError(f"unsupported schema major version {major} (reader handles {SCHEMA_MAJOR})")


def read_records(path) -> list:
    """Parse a JSONL results file; a torn final line (crash mid-write) is ignored."""
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        lines = fh.read().split("\n")
    out = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if i >= len(lines) - 2:
                continue
            raise SchemaError(f"{path}:{i + 1}: malformed record") from None
        check_schema(rec)
        out.append(rec)
    return out


def _repair_tail(path):
    """Drop a partial last line so appends start on a fresh line."""
    if not os.path.exists(path):
        return
    with open(path, "rb+") as fh:
        data = fh.read()
        if data and not data.endswith(b"\n"):
            fh.truncate(data.rfind(b"\n") + 1)


@dataclass
class SweepSummary:
    path: str
    total: int
    written: int
    skipped: int
    failed: int


def run_sweep(cfg: SweepConfig, out=None, workers=None, progress=None) -> SweepSummary:
    """Run every task not yet present in the output file and append its record."""
    path = str(out or cfg.outputs)
    tasks = expand_tasks(cfg)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    _repair_tail(path)
    existing = read_records(path)
    done = {r["task_hash"]: r for r in existing}
    pending = [t for t in tasks if t.task_hash not in done]
    n_workers = int(workers or cfg.workers or default_workers())
    failed = sum(1 for t in tasks if t.task_hash in done and done[t.task_hash].get("status") != "ok")
    written = 0
    with open(path, "a") as fh:
        if n_workers == 1 or len(pending) <= 1:
            results = map(run_task, pending)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=n_workers)
            results = pool.map(run_task, pending, chunksize=1)
        try:
            for rec in results:
                fh.write(dumps(rec) + "\n")
                fh.flush()
                written += 1
                failed += rec["status"] != "ok"
                if progress is not None:
                    progress(written, len(pending), rec)
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    return SweepSummary(path, len(tasks), written, len(tasks) - len(pending), failed)
