"""Learned-weight spectra and the three-term error decomposition.

Predicted spectra:
  diagonal:   theta_hat_i ~ ST_{eps_d}(theta*_i + delta_d z), z ~ N(0, 1)
  quadratic:  eigenvalues of S* + delta Z shifted left by lam eps, with the
              mass pushed below zero collected into an atom at zero.
Outlier (spike) locations follow the BBP map s -> s + delta^2 / s for s > delta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import RegimeError
from .model_gen import DiagonalTarget, ProblemSpec, QuadraticTarget, sample_goe, stream
from .state_evolution import DiagSEOutput, MCConfig, QuadSEOutput
from .vector_solvers import soft_threshold

ZERO_TOL = 1e-9
N_BINS = 200


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray  # mass per bin, positive part only
    zero_mass: float
    values: np.ndarray | None = None  # raw positive values, kept for KS distances

    @property
    def total_mass(self):
        return float(self.zero_mass + self.mass.sum())


@dataclass
class SpectrumPrediction:
    zero_mass: float
    bulk_edge: float
    spikes: list
    shift: float
    sampled_density: Histogram
    samples: np.ndarray = field(repr=False, default=None)  # positive part, for KS


class Regime(str, Enum):
    UNDER = "UnderRegularized"
    OVER = "OverRegularized"


@dataclass
class ErrorDecomposition:
    overfitting: float
    underfitting: float
    approximation: float
    cutoff_k: int
    regime: Regime

    @property
    def total(self):
        return self.overfitting + self.underfitting + self.approximation


def default_edges(top, n_bins=N_BINS):
    top = float(top) if top > 0 else 1.0
    return np.linspace(0.0, 1.1 * top, n_bins + 1)


def histogram(values, edges=None, weights=None, n_bins=N_BINS, top=None):
    """Bin nonnegative values; entries <= ZERO_TOL form the zero atom.

    Mass beyond the last edge is folded into the last bin so that the total is
    exactly one.
    """
    values = np.asarray(values, float).ravel()
    w = np.full(values.size, 1.0 / max(values.size, 1)) if weights is None else np.asarray(weights, float)
    zero = values <= ZERO_TOL
    pos = values[~zero]
    if edges is None:
        edges = default_edges(pos.max(initial=0.0) if top is None else top, n_bins)
    idx = np.clip(np.searchsorted(edges, pos, side="right") - 1, 0, len(edges) - 2)
    mass = np.bincount(idx, weights=w[~zero], minlength=len(edges) - 1)
    return Histogram(np.asarray(edges), mass, float(w[zero].sum()), np.sort(pos))


def spike_location(s, delta, shift=0.0):
    """BBP outlier position s + delta^2/s - shift (meaningful for s > delta)."""
    return s + delta**2 / s - shift


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    if a.size == 0 or b.size == 0:
        return 1.0 if a.size != b.size else 0.0
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# ---------------------------------------------------------------------------
# predictions


def predict_spectrum_diagonal(se: DiagSEOutput, target: DiagonalTarget, spec: ProblemSpec,
                              n_draws: int = 200, seed: int | None = None, edges=None) -> SpectrumPrediction:
    """Distribution of |ST_{eps_d}(theta*_i + delta_d z)| pooled over coordinates."""
    delta_d = np.sqrt(se.delta_hat * spec.d / spec.n)
    eps_d = se.nu * np.sqrt(2 * spec.d / spec.n)
    rng = stream(spec.seed if seed is None else seed, "spectrum_diag")
    z = rng.standard_normal((n_draws, spec.d))
    vals = np.abs(soft_threshold(target.theta_star[None, :] + delta_d * z, eps_d)).ravel()
    hist = histogram(vals, edges)
    return SpectrumPrediction(hist.zero_mass, float("nan"), [], float(eps_d), hist, hist.values)


def predict_spectrum_quadratic(se: QuadSEOutput, target: QuadraticTarget, mc: MCConfig = MCConfig(),
                               edges=None) -> SpectrumPrediction:
    """Eigenvalues of S* + delta Z shifted by lam eps; negative part becomes the zero atom."""
    d = target.d
    s = np.sort(np.asarray(target.eigvals, float))[::-1]
    shift = se.threshold
    seed = se.spec.seed if mc.seed is None else mc.seed
    vals = []
    for i in range(mc.n_samples):
        z = sample_goe(stream(seed, "spectrum_quad", i), d)
        vals.append(np.linalg.eigvalsh(np.diag(s) + se.delta * z) - shift)
    vals = np.maximum(np.concatenate(vals), 0.0)
    spikes = [(i + 1, float(spike_location(si, se.delta, shift))) for i, si in enumerate(s) if si > se.delta]
    bulk_edge = 2 * se.delta - shift
    top = max([loc for _, loc in spikes] + [bulk_edge, vals.max(initial=0.0)])
    hist = histogram(vals, edges, top=top)
    return SpectrumPrediction(hist.zero_mass, float(bulk_edge), spikes, float(shift), hist, hist.values)


def empirical_spectrum(estimate, edges=None, top=None) -> Histogram:
    """|theta_hat_i| (vector) or eigenvalues (matrix), binned with the zero atom separate."""
    if hasattr(estimate, "s_hat"):
        vals = np.linalg.eigvalsh(estimate.s_hat)
    elif hasattr(estimate, "theta_hat"):
        vals = np.abs(estimate.theta_hat)
    else:
        arr = np.asarray(estimate, float)
        vals = np.linalg.eigvalsh(arr) if arr.ndim == 2 else np.abs(arr)
    return histogram(np.maximum(vals, 0.0), edges, top=top)


# ---------------------------------------------------------------------------
# error decomposition


def semicircle_tail_moment(t):
    """int_t^2 mu_sc(x) (x - t)^2 dx for the unit semicircle, t in [-2, 2]."""
    t = float(np.clip(t, -2.0, 2.0))
    # antiderivatives of x^k sqrt(4 - x^2)/(2 pi), k = 0, 1, 2
    r = np.sqrt(max(4 - t * t, 0.0))
    a = np.arcsin(t / 2)

    def m0(x, rx, ax):
        return (x * rx / 2 + 2 * ax) / (2 * np.pi)

    def m1(rx):
        return -(rx**3) / 3 / (2 * np.pi)

    def m2(x, rx, ax):
        return (x * (2 * x * x - 4) * rx / 8 + 2 * ax) / (2 * np.pi)

    top0, top1, top2 = m0(2, 0, np.pi / 2), m1(0), m2(2, 0, np.pi / 2)
    i0 = top0 - m0(t, r, a)
    i1 = top1 - m1(r)
    i2 = top2 - m2(t, r, a)
    return float(i2 - 2 * t * i1 + t * t * i0)


def _power_law_gamma(s, d):
    """gamma if s_i = sqrt(d) i^(-gamma) to 1e-8, else None."""
    i = np.arange(1, len(s) + 1, dtype=float)
    if len(s) < 2 or s[0] <= 0:
        return None
    g = -np.log(s[1] / s[0]) / np.log(2.0)
    if np.allclose(s, np.sqrt(d) * i ** (-g), rtol=1e-8):
        return g
    return None


def _k_prime(s, delta, d, gamma=None):
    """dK/d delta for K(delta) = #{s_i >= delta}."""
    if gamma is None:
        gamma = _power_law_gamma(s, d)
    if gamma is not None:
        return -(1.0 / gamma) * d ** (1.0 / (2 * gamma)) * delta ** (-1.0 / gamma - 1.0)
    # smooth the counting function by interpolating index against log s
    logs = np.log(s[::-1])
    idx = np.arange(len(s), 0, -1, dtype=float)
    h = 1e-3
    k = lambda x: np.interp(np.log(x), logs, idx, left=len(s), right=0.0)
    return float((k(delta * (1 + h)) - k(delta * (1 - h))) / (2 * h * delta))


def decompose_error(se: QuadSEOutput, target: QuadraticTarget) -> ErrorDecomposition:
    """Split the predicted risk into overfitting, underfitting and approximation terms."""
    d = target.d
    s = np.sort(np.asarray(target.eigvals, float))[::-1]
    delta, b = se.delta, se.threshold
    if b < 2 * delta:
        regime = Regime.UNDER
        # first index with s_i < delta, by binary search on the increasing reversed array
        k = len(s) - int(np.searchsorted(s[::-1], delta, side="left"))
        if k == 0:
            raise RegimeError("no target eigenvalue exceeds delta: no learned features")
        bulk = delta**2 * semicircle_tail_moment(b / delta)
        kp = _k_prime(s, delta, d, target.gamma if _power_law_gamma(s, d) is not None else None)
        over = bulk + delta * kp * (2 * delta - b) ** 2 / d
    else:
        regime = Regime.OVER
        # learned iff s + delta^2/s - b > 0 with s > delta, i.e. s above the larger root
        s_plus = 0.5 * (b + np.sqrt(b * b - 4 * delta * delta))
        k = len(s) - int(np.searchsorted(s[::-1], s_plus, side="right"))
        if k == 0:
            raise RegimeError("every target direction is thresholded away: no cutoff")
        over = 0.0
    learned = s[:k]
    under = float(np.sum(s[k:] ** 2) / d)
    approx = float(np.sum((delta**2 / learned - b) ** 2 + (delta**2 / learned) * spike_location(learned, delta, b)) / d)
    return ErrorDecomposition(float(over), under, approx, int(k), regime)
