"""Tidy CSV plot data derived from sweep records, plus histogram export."""
from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

import numpy as np

from .. import rates
from ..errors import InvalidSpecError, UnsupportedRegimeError
from ..model_gen import ProblemSpec

KINDS = ("risk_vs_n", "risk_vs_lambda", "spectrum")
RISK_COLUMNS = ["x", "series", "source", "y", "y_err", "count", "phase"]
SPECTRUM_COLUMNS = ["series", "source", "bin_left", "bin_right", "mass"]
HIST_COLUMNS = ["bin_left", "bin_right", "mass"]


class PlotDataError(InvalidSpecError):
    """Unknown plot kind or unusable records."""


def _series_name(rec, keys):
    return ",".join(f"{k}={rec.get(k)}" for k in keys)


def _phase(rec):
    if not rec.get("delta"):
        return None, None
    try:
        spec = ProblemSpec(rec["model"], rec["d"], rec["n"], rec["gamma"], rec["delta"], rec["lam"])
        rep = rates.classify(spec)
    except (InvalidSpecError, UnsupportedRegimeError):
        return None, None
    return rep.phase.value, rep.order


def _risk_rows(records, x_key, group_keys):
    groups = defaultdict(lambda: defaultdict(list))
    meta = {}
    for rec in records:
        if rec.get("status", "ok") != "ok":
            continue
        series = _series_name(rec, group_keys)
        x = float(rec[x_key])
        groups[series][x].append(rec)
        meta.setdefault((series, x), rec)
    rows = []
    for series in sorted(groups):
        xs = sorted(groups[series])
        guide = []
        for x in xs:
            recs = groups[series][x]
            phase, order = _phase(meta[(series, x)])
            for source in ("risk_sim", "risk_se", "risk_bo"):
                vals = [r[source] for r in recs if r.get(source) is not None]
                if not vals:
                    continue
                v = np.asarray(vals, float)
                err = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
                rows.append(dict(x=x, series=series, source=source.replace("risk_", ""), y=float(v.mean()),
                                 y_err=err, count=int(v.size), phase=phase))
            guide.append((x, order, phase))
        # rate guide: classify's order, scaled to meet the first SE (or simulation) point
        anchor = next((r for r in rows if r["series"] == series and r["source"] in ("se", "sim")), None)
        first = next(((x, o) for x, o, _ in guide if o is not None and np.isfinite(o) and o > 0), None)
        if anchor is None or first is None:
            continue
        scale = anchor["y"] / first[1]
        for x, order, phase in guide:
            if order is None or not np.isfinite(order):
                continue
            rows.append(dict(x=x, series=series, source="rate_guide", y=float(scale * order), y_err=0.0,
                             count=0, phase=phase))
    return rows


def _spectrum_rows(records):
    rows, sidecar = [], {}
    for rec in records:
        spec = rec.get("spectrum")
        if rec.get("status", "ok") != "ok" or not spec:
            continue
        series = _series_name(rec, ("model", "d", "n", "lam", "gamma", "replicate", "solver"))
        edges = spec["edges"]
        for source, key in (("sim", "mass_sim"), ("se", "mass_pred")):
            for left, right, m in zip(edges[:-1], edges[1:], spec[key]):
                rows.append(dict(series=series, source=source, bin_left=left, bin_right=right, mass=m))
        sidecar[series] = dict(zero_mass=dict(sim=spec["zero_mass_sim"], se=spec["zero_mass_pred"]),
                               spikes=spec["spikes"], edges=edges)
    return rows, sidecar


def emit_plotdata(records, kind: str, out: str) -> list:
    """Write tidy CSV for ``kind`` to ``out``; returns the paths written.

    risk_vs_n: x = n_eff, one series per (model, d, lambda, gamma, delta, solver).
    risk_vs_lambda: x = lambda, one series per (model, d, n, gamma, delta, solver).
    spectrum: binned masses per record plus a JSON sidecar with zero masses, spikes and edges.
    """
    if kind not in KINDS:
        raise PlotDataError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    records = list(records)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    written = [out]
    if kind == "spectrum":
        rows, sidecar = _spectrum_rows(records)
        columns = SPECTRUM_COLUMNS
        side = os.path.splitext(out)[0] + ".json"
        with open(side, "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)
        written.append(side)
    elif kind == "risk_vs_n":
        rows = _risk_rows(records, "n_eff", ("model", "d", "lam", "gamma", "delta", "solver"))
        columns = RISK_COLUMNS
    else:
        rows = _risk_rows(records, "lam", ("model", "d", "n", "gamma", "delta", "solver"))
        columns = RISK_COLUMNS
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)
    return written


def write_histogram(hist, path: str, spikes=()) -> list:
    """CSV (bin_left, bin_right, mass) plus a JSON sidecar with zero_mass, spikes and edges."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HIST_COLUMNS)
        for left, right, m in zip(hist.edges[:-1], hist.edges[1:], hist.mass):
            w.writerow([repr(float(left)), repr(float(right)), repr(float(m))])
    side = os.path.splitext(path)[0] + ".json"
    with open(side, "w") as fh:
        json.dump(dict(zero_mass=float(hist.zero_mass), spikes=[list(s) for s in spikes],
                       edges=[float(e) for e in hist.edges]), fh, indent=1)
    return [path, side]


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def read_plot_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
