"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 sweep finished with failed tasks.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import rates
from .errors import (ConvergenceError, DivergenceError, InvalidSpecError, NumericalQualityError, RegimeError)
from .harness import config as hconfig
from .harness.plotdata import KINDS, emit_plotdata, write_histogram
from .harness.sweep import read_records, run_sweep
from .model_gen import Model, ProblemSpec, diagonal_quadratic_target, excess_risk, gen_dataset, matrix_mse
from .model_gen import gen_diagonal_target, gen_quadratic_target

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(p, problem=True):
    p.add_argument("--config", help="TOML file ([base] table, plus [grid]/[run] for sweeps)")
    p.add_argument("--seed", type=_u64, help="seed (unsigned 64-bit)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--workers", type=_positive, help="worker processes (default: $SCALELAB_WORKERS or 1)")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    if problem:
        p.add_argument("--model", choices=[m.value for m in Model])
        p.add_argument("--d", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--gamma", type=float)
        p.add_argument("--delta", type=float, help="label noise variance")
        p.add_argument("--lam", type=float, help="regularization strength")
        p.add_argument("--mode", choices=["vector_gaussian", "wishart_centered", "goe_universal"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="draw a target and dataset; write arrays to --out (.npz)")
    _common(p)
    p.add_argument("--compact", action="store_true", help="sample sufficient statistics only")

    p = sub.add_parser("solve", help="solve the ERM problem exactly")
    _common(p)
    p.add_argument("--solver", choices=("convex", "network"), default="convex")
    p.add_argument("--width", type=int, help="network width p (quadratic network; default d)")
    p.add_argument("--compact", action="store_true")

    p = sub.add_parser("gamp", help="run GAMP to its fixed point")
    _common(p)

    p = sub.add_parser("se", help="state-evolution prediction for the ERM estimator")
    _common(p)
    p.add_argument("--mc-samples", type=_positive, default=10)
    p.add_argument("--method", choices=("nested", "damped"), default="nested")

    p = sub.add_parser("bayes", help="Bayes-optimal risk (state evolution; exact posterior for diagonal)")
    _common(p)
    p.add_argument("--mc-samples", type=_positive, default=10)
    p.add_argument("--exact", action="store_true", help="also compute the posterior mean on a dataset")

    p = sub.add_parser("spectra", help="predicted (and optionally empirical) learned-weight spectrum")
    _common(p)
    p.add_argument("--mc-samples", type=_positive, default=10)
    p.add_argument("--empirical", action="store_true", help="also solve and histogram the estimate")

    p = sub.add_parser("decompose", help="overfitting / underfitting / approximation split of the risk")
    _common(p)
    p.add_argument("--mc-samples", type=_positive, default=10)

    p = sub.add_parser("rates", help="phase, rate and optimal-regularization order")
    _common(p)

    p = sub.add_parser("sweep", help="run a grid sweep from --config")
    _common(p, problem=False)

    p = sub.add_parser("plotdata", help="tidy CSV from sweep records")
    _common(p, problem=False)
    p.add_argument("--input", required=True, help="JSONL results file")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(KINDS)}")
    return parser


def _spec(args) -> ProblemSpec:
    fields = {}
    if args.config:
        base = hconfig.base_spec_from_file(args.config)
        fields = dict(model=base.model, d=base.d, n=base.n, gamma=base.gamma, delta=base.delta,
                      lam=base.lam, seed=base.seed, mode=base.mode)
    for key in ("model", "d", "n", "gamma", "delta", "lam", "mode", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            fields[key] = val
    missing = {"model", "d", "gamma", "delta"} - set(fields)
    if missing:
        raise hconfig.ConfigError(f"missing problem parameters: {sorted(missing)} (use flags or --config)")
    fields.setdefault("n", 0)
    return ProblemSpec(**fields)


def _target(spec):
    return gen_diagonal_target(spec) if spec.model is Model.DIAGONAL else gen_quadratic_target(spec)


def _spec_fields(spec):
    return dict(model=spec.model.value, d=spec.d, n=spec.n, n_eff=spec.n_eff, gamma=spec.gamma,
                delta=spec.delta, lam=spec.lam, seed=spec.seed, mode=spec.data_mode.value)


def _emit(records, args):
    records = list(records)
    if args.format == "jsonl":
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    else:
        keys = sorted({k for r in records for k in r})
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys)
        w.writeheader()
        for r in records:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
        text = buf.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args):
    spec = _spec(args)
    target = _target(spec)
    data = gen_dataset(spec, target, compact=args.compact)
    rec = _spec_fields(spec)
    rec.update(compact=data.compact, mode=data.mode.value)
    if args.out:
        arrays = {}
        if spec.model is Model.DIAGONAL:
            arrays["theta_star"] = target.theta_star
        else:
            arrays["s_star"] = target.s_star
        if data.compact:
            st = data.stats
            arrays.update(gram=st.gram, xty=st.xty, yty=np.array(st.yty))
        else:
            design = data.design if spec.model is Model.DIAGONAL else getattr(data.design, "x", None)
            arrays["design"] = data.design.rows() if design is None else design
            arrays["labels"] = data.labels
        np.savez_compressed(args.out, **arrays)
        rec["path"] = args.out
        args = argparse.Namespace(**{**vars(args), "out": None})
    _emit([rec], args)
    return EXIT_OK


def _risk_fields(arr, target, spec):
    r = excess_risk(arr, target)
    return dict(excess_risk=r, risk_sim=r if spec.model is Model.DIAGONAL else matrix_mse(arr, target))


def cmd_solve(args):
    from .matrix_solvers import quadratic_net_erm, solve_matrix_sensing
    from .vector_solvers import diagonal_net_erm, solve_lasso
    spec = _spec(args)
    target = _target(spec)
    data = gen_dataset(spec, target, compact=args.compact)
    rec = _spec_fields(spec)
    if spec.model is Model.DIAGONAL:
        est = solve_lasso(data, spec.lam) if args.solver == "convex" else diagonal_net_erm(data, spec.lam)
        arr = est.theta_hat
        rec.update(kkt_residual=est.kkt_residual, support_size=est.support_size)
    else:
        if args.solver == "convex":
            est = solve_matrix_sensing(data, spec.lam)
        else:
            est = quadratic_net_erm(data, spec.lam, args.width or spec.d)
        arr = est.s_hat
        rec.update(kkt_residual=est.opt_residual, rank=est.rank)
    rec.update(_risk_fields(arr, target, spec), solver=args.solver, objective=est.objective,
               iterations=est.iterations)
    _emit([rec], args)
    return EXIT_OK


def cmd_gamp(args):
    from .gamp import gamp_lasso, gamp_matrix
    spec = _spec(args)
    target = _target(spec)
    data = gen_dataset(spec, target)
    rec = _spec_fields(spec)
    if spec.model is Model.DIAGONAL:
        est, trace = gamp_lasso(data, spec.lam, target=target)
        arr, resid = est.theta_hat, est.kkt_residual
    else:
        est, trace = gamp_matrix(data, spec.lam, target=target)
        arr, resid = est.s_hat, est.opt_residual
    if not trace.converged:
        raise ConvergenceError(f"GAMP did not converge in {len(trace.q)} iterations")
    rec.update(_risk_fields(arr, target, spec), kkt_residual=resid, iterations=len(trace.q),
               overlap_m=trace.m[-1], overlap_q=trace.q[-1])
    _emit([rec], args)
    return EXIT_OK


def _mc(args, spec):
    from .state_evolution import MCConfig
    return MCConfig(n_samples=args.mc_samples, seed=spec.seed)


def _quad_se(args, spec, method="nested"):
    from .state_evolution import se_quadratic_erm
    return se_quadratic_erm(spec, diagonal_quadratic_target(spec.d, spec.gamma), _mc(args, spec), method=method)


def cmd_se(args):
    from .state_evolution import se_lasso
    spec = _spec(args)
    rec = _spec_fields(spec)
    if spec.model is Model.DIAGONAL:
        out = se_lasso(spec)
        rec.update(risk_se=out.risk, nu=out.nu, delta_hat=out.delta_hat, residual=out.residual)
    else:
        out = _quad_se(args, spec, args.method)
        rec.update(risk_se=out.risk, se_delta=out.delta, se_eps=out.eps, threshold=out.threshold,
                   mc_stderr=out.mc_stderr, residual=out.residual)
    _emit([rec], args)
    return EXIT_OK


def cmd_bayes(args):
    from .state_evolution import se_bayes_diagonal, se_quadratic_bayes
    from .vector_solvers import bayes_posterior_mean
    spec = _spec(args)
    rec = _spec_fields(spec)
    if spec.model is Model.DIAGONAL:
        out = se_bayes_diagonal(spec)
        rec.update(risk_bo=out.risk, q_hat=out.q_hat)
        if args.exact:
            target = gen_diagonal_target(spec)
            est = bayes_posterior_mean(gen_dataset(spec, target), target.lambda_diag, spec.delta)
            rec.update(risk_sim=excess_risk(est.theta_hat, target), posterior_risk=est.posterior_risk)
    else:
        if args.exact:
            raise hconfig.ConfigError("--exact is only available for the diagonal model")
        out = se_quadratic_bayes(spec, diagonal_quadratic_target(spec.d, spec.gamma), _mc(args, spec))
        rec.update(risk_bo=out.risk, q_hat=out.q_hat, cubic_integral=out.integral)
    _emit([rec], args)
    return EXIT_OK


def cmd_spectra(args):
    from .spectra import empirical_spectrum, ks_distance, predict_spectrum_diagonal, predict_spectrum_quadratic
    from .state_evolution import se_lasso
    spec = _spec(args)
    rec = _spec_fields(spec)
    if spec.model is Model.DIAGONAL:
        target = gen_diagonal_target(spec)
        se = se_lasso(spec)
        pred = predict_spectrum_diagonal(se, target, spec)
    else:
        se = _quad_se(args, spec)
        pred = predict_spectrum_quadratic(se, diagonal_quadratic_target(spec.d, spec.gamma), _mc(args, spec))
        target = None
    rec.update(zero_mass_pred=pred.zero_mass, bulk_edge=pred.bulk_edge, shift=pred.shift,
               spikes=[[i, x] for i, x in pred.spikes])
    if args.empirical:
        from .matrix_solvers import solve_matrix_sensing
        from .vector_solvers import solve_lasso
        target = target or gen_quadratic_target(spec)
        data = gen_dataset(spec, target)
        est = solve_lasso(data, spec.lam) if spec.model is Model.DIAGONAL else solve_matrix_sensing(data, spec.lam)
        emp = empirical_spectrum(est, edges=pred.sampled_density.edges)
        rec.update(zero_mass_sim=emp.zero_mass, ks=ks_distance(emp.values, pred.samples))
        if args.out:
            base = args.out[:-4] if args.out.endswith(".csv") else args.out
            write_histogram(emp, base + "_sim.csv")
    if args.out:
        base = args.out[:-4] if args.out.endswith(".csv") else args.out
        write_histogram(pred.sampled_density, base + ".csv", pred.spikes)
        rec["path"] = base + ".csv"
        args = argparse.Namespace(**{**vars(args), "out": None})
    _emit([rec], args)
    return EXIT_OK


def cmd_decompose(args):
    from .spectra import decompose_error
    spec = _spec(args)
    if spec.model is not Model.QUADRATIC:
        raise hconfig.ConfigError("the error decomposition is defined for the quadratic model")
    se = _quad_se(args, spec)
    dec = decompose_error(se, diagonal_quadratic_target(spec.d, spec.gamma))
    rec = _spec_fields(spec)
    rec.update(risk_se=se.risk, overfitting=dec.overfitting, underfitting=dec.underfitting,
               approximation=dec.approximation, total=dec.total, cutoff_k=dec.cutoff_k, regime=dec.regime.value)
    _emit([rec], args)
    return EXIT_OK


def cmd_rates(args):
    spec = _spec(args)
    rep = rates.classify(spec)
    lam_opt, tag = rates.lambda_opt(spec)
    bo = rates.bo_rate(spec)
    rec = _spec_fields(spec)
    rec.update(rep.to_dict())
    rec.update(n_cross=rates.n_cross(spec), lambda_opt=lam_opt, lambda_opt_tag=tag,
               bo_phase=bo.phase.value, bo_label=bo.label, bo_exponents=bo.rate_exponents)
    _emit([rec], args)
    return EXIT_OK


def cmd_sweep(args):
    if not args.config:
        raise hconfig.ConfigError("sweep needs --config")
    cfg = hconfig.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(base=cfg.base.replace(seed=args.seed))
    summary = run_sweep(cfg, out=args.out, workers=args.workers)
    print(json.dumps(dict(path=summary.path, total=summary.total, written=summary.written,
                          skipped=summary.skipped, failed=summary.failed)), file=sys.stderr)
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def cmd_plotdata(args):
    if args.kind not in KINDS:
        raise hconfig.ConfigError(f"unknown plot kind {args.kind!r}; expected one of {', '.join(KINDS)}")
    records = read_records(args.input)
    out = args.out or f"{args.kind}.csv"
    paths = emit_plotdata(records, args.kind, out)
    print(json.dumps(dict(written=paths, records=len(records))), file=sys.stderr)
    return EXIT_OK


COMMANDS = dict(gen=cmd_gen, solve=cmd_solve, gamp=cmd_gamp, se=cmd_se, bayes=cmd_bayes, spectra=cmd_spectra,
                decompose=cmd_decompose, rates=cmd_rates, sweep=cmd_sweep, plotdata=cmd_plotdata)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (InvalidSpecError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, DivergenceError, NumericalQualityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
