"""Phase classification and closed-form excess-risk rates.

Asymptotic comparisons are made concrete with a fixed separation factor:
a << b means FACTOR * a <= b.  Points inside a buffer around a boundary are
labelled Boundary.  The IV/V line is a crossover between two terms of the
same rate, not a change of rate, so it gets no buffer.

Constants attached to predicted_risk are in state-evolution units
(|S_hat - S*|_F^2 / d for the quadratic model).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import UnsupportedRegimeError
from .model_gen import Model, ProblemSpec

FACTOR = 8.0


class Phase(str, Enum):
    IA = "Ia"
    IB = "Ib"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VIA = "VIa"
    VIB = "VIb"
    PEAK = "InterpolationPeak"
    BOUNDARY = "Boundary"


@dataclass
class PhaseReport:
    phase: Phase
    n_eff: float
    rate_exponents: dict = field(default_factory=dict)  # exponents of n_eff, d, lambda
    predicted_risk: float | None = None  # only where a constant is available
    constant_source: str = "order-only"
    order: float | None = None  # the rate expression evaluated without constants
    label: str = ""

    def to_dict(self):
        return dict(phase=self.phase.value, n_eff=self.n_eff, rate_exponents=dict(self.rate_exponents),
                    predicted_risk=self.predicted_risk, constant_source=self.constant_source,
                    order=self.order, label=self.label)


def _ll(a, b):
    return FACTOR * a <= b


def crossover_n_eff(model, d: float, gamma: float) -> float:
    """n_eff at which the noise term overtakes n_eff^(-1+1/(2 gamma)) for n_eff << d."""
    if not gamma > 0.5:
        raise ValueError("the crossover needs gamma > 1/2")
    if Model(model) is Model.DIAGONAL:
        return float(np.log(d) ** ((4 * gamma - 1) / (2 * gamma - 1)))
    return float(d ** (4 * gamma / (14 * gamma - 5)))


def n_cross(spec: ProblemSpec) -> float:
    return crossover_n_eff(spec.model, spec.d, spec.gamma)


def rho(model, t: float) -> float:
    """Noise-overfitting scale: -1/log t (diagonal) or t^(2/5) (quadratic), for t < 1."""
    if Model(model) is Model.DIAGONAL:
        return float(-1.0 / np.log(t))
    return float(t ** 0.4)


def phase_order(phase: Phase, model, n_eff: float, d: float, lam: float, gamma: float,
                delta: float = 1.0, log_corrected: bool = True) -> float:
    """Rate of ``phase`` evaluated at (n_eff, d, lam) without constants.

    The diagonal IV/V rate uses the log-corrected form when ``log_corrected``.
    """
    model = Model(model)
    a = -1 + 1 / (2 * gamma)
    if phase in (Phase.IV, Phase.V):
        if model is Model.DIAGONAL and log_corrected:
            ell = np.log(d / n_eff)
            return float((n_eff / ell) ** a + delta / ell)
        return float(n_eff**a + rho(model, n_eff / d))
    if phase is Phase.PEAK:
        return float(lam ** (-2 / 3))
    if phase in (Phase.VIA, Phase.VIB):
        return float(d / n_eff)
    if phase is Phase.II:
        return float((lam * np.sqrt(d) / n_eff) ** (2 - 1 / gamma))
    if phase is Phase.III:
        return float((lam * d / n_eff) ** 2)
    if phase in (Phase.IA, Phase.IB):
        return 1.0
    raise ValueError(f"no rate for {phase}")


def _exponents(phase: Phase, model: Model, gamma: float) -> dict:
    a = -1 + 1 / (2 * gamma)
    if phase is Phase.IV:
        return {"n_eff": a, "d": 0.0, "lambda": 0.0}
    if phase is Phase.V:
        if model is Model.QUADRATIC:
            return {"n_eff": 0.4, "d": -0.4, "lambda": 0.0}
        return {"n_eff": 0.0, "d": 0.0, "lambda": 0.0}  # logarithmic
    if phase is Phase.PEAK:
        return {"n_eff": 0.0, "d": 0.0, "lambda": -2 / 3}
    if phase in (Phase.VIA, Phase.VIB):
        return {"n_eff": -1.0, "d": 1.0, "lambda": 0.0}
    if phase is Phase.II:
        e = 2 - 1 / gamma
        return {"n_eff": -e, "d": e / 2, "lambda": e}
    if phase is Phase.III:
        return {"n_eff": -2.0, "d": 2.0, "lambda": 2.0}
    if phase in (Phase.IA, Phase.IB):
        return {"n_eff": 0.0, "d": 0.0, "lambda": 0.0}
    return {}


_LABELS = {
    Phase.IA: "Theta(1)", Phase.IB: "Theta(1)",
    Phase.II: "(lam d^(1/2)/n_eff)^(2-1/gamma)", Phase.III: "lam^2 d^2/n_eff^2",
    Phase.IV: "n_eff^(-1+1/(2gamma)) + rho(n_eff/d)", Phase.V: "n_eff^(-1+1/(2gamma)) + rho(n_eff/d)",
    Phase.VIA: "d/n_eff", Phase.VIB: "d/n_eff", Phase.PEAK: "lam^(-2/3)", Phase.BOUNDARY: "",
}


def _constant(phase: Phase, spec: ProblemSpec):
    """Rate constants for the quadratic model, in state-evolution units."""
    if spec.model is not Model.QUADRATIC:
        return None, "order-only"
    d, n, lam, g, dl = spec.d, spec.n, spec.lam, spec.gamma, spec.delta
    if phase is Phase.II:
        val = (2 * g / (2 * g - 1)) * (lam * d**1.5 / (4 * n)) ** ((2 * g - 1) / g)
        return float(val), "appendix:phase-II"
    if phase is Phase.III:
        return float(lam**2 * d**4 / (16 * n**2)), "appendix:phase-III"
    if phase in (Phase.VIA, Phase.VIB):
        return float(dl * d**2 / (8 * n)), "appendix:phase-VI"
    if phase is Phase.PEAK and lam > 0:
        return float(2 * (3 * np.pi * dl**2 / 32) ** (2 / 3) * lam ** (-2 / 3)), "appendix:peak"
    return None, "order-only"


def _locate(spec: ProblemSpec) -> Phase:
    N, d, lam, g = spec.n_eff, float(spec.d), spec.lam, spec.gamma
    if _ll(N / np.sqrt(d), lam):
        return Phase.IB
    if not _ll(1.0, N):
        return Phase.IA if N < FACTOR else Phase.BOUNDARY
    knee = np.sqrt(N / d)
    if _ll(lam, knee):
        if _ll(N, d):
            return Phase.IV if N < crossover_n_eff(spec.model, d, g) else Phase.V
        if _ll(d, N):
            if _ll(N, d ** (2 * g)):
                return Phase.VIA
            if _ll(d ** (2 * g), N):
                return Phase.VIB
            return Phase.BOUNDARY
        return Phase.PEAK if _ll(lam, 1.0) else Phase.BOUNDARY
    if _ll(knee, lam) and _ll(lam, N / np.sqrt(d)):
        cut = N / d ** (g + 0.5)
        if _ll(lam, cut):
            return Phase.III
        if _ll(cut, lam):
            return Phase.II
    return Phase.BOUNDARY


def classify(spec: ProblemSpec) -> PhaseReport:
    """Phase of (n_eff, d, lambda, gamma) and its excess-risk rate."""
    if spec.delta == 0:
        raise UnsupportedRegimeError("noiseless rates are outside the classified regime (needs Delta > 0)")
    phase = _locate(spec)
    report = PhaseReport(phase, spec.n_eff, _exponents(phase, spec.model, spec.gamma), label=_LABELS[phase])
    if phase is Phase.BOUNDARY:
        return report
    if phase is Phase.PEAK and spec.lam == 0:
        report.order = float("inf")
        return report
    report.order = phase_order(phase, spec.model, spec.n_eff, spec.d, spec.lam, spec.gamma, spec.delta)
    report.predicted_risk, report.constant_source = _constant(phase, spec)
    return report


def lambda_opt(spec: ProblemSpec):
    """Order of the optimal regularization, sqrt(n_eff/d), with the tag of its branch.

    "O" where only an upper order is claimed, "Theta~" (up to logs) between the
    crossover and d^(2 gamma), "undetermined" inside a buffer.
    """
    N, d, g = spec.n_eff, spec.d, spec.gamma
    if spec.delta == 0:
        raise UnsupportedRegimeError("the optimal-regularization order is stated for Delta > 0")
    value = float(np.sqrt(N / d))
    nc = crossover_n_eff(spec.model, d, g)
    top = d ** (2 * g)
    if (_ll(1.0, N) and _ll(N, nc)) or _ll(top, N):
        tag = "O"
    elif _ll(nc, N) and _ll(N, top):
        tag = "Theta~"
    else:
        tag = "undetermined"
    return value, tag


def bo_rate(spec: ProblemSpec) -> PhaseReport:
    """Bayes-optimal rate branch: n_eff^(-1+1/(2 gamma)), d/n_eff, or Theta(1)."""
    if spec.delta == 0:
        raise UnsupportedRegimeError("Bayes-optimal rates are stated for Delta > 0")
    N, d, g = spec.n_eff, float(spec.d), spec.gamma
    top = d ** (2 * g)
    a = -1 + 1 / (2 * g)
    if _ll(1.0, N) and _ll(N, top):
        return PhaseReport(Phase.IV, N, {"n_eff": a, "d": 0.0, "lambda": 0.0}, None, "order-only",
                           float(N**a), "n_eff^(-1+1/(2gamma))")
    if _ll(top, N):
        return PhaseReport(Phase.VIB, N, {"n_eff": -1.0, "d": 1.0, "lambda": 0.0}, None, "order-only",
                           float(d / N), "d/n_eff")
    if N < FACTOR:
        return PhaseReport(Phase.IA, N, {"n_eff": 0.0, "d": 0.0, "lambda": 0.0}, None, "order-only",
                           1.0, "Theta(1)")
    return PhaseReport(Phase.BOUNDARY, N)
