"""Generalized approximate message passing for the two ERM problems.

Both solvers run the same skeleton on a design with iid entries of variance
sigma2 (1/d for Xs = X/sqrt(d); 2/d for GOE measurements in isometric
coordinates):

    omega = A f - v g_prev            g = (y - omega) / (1 + v)
    a     = sigma2 n / (1 + v)        b = A^T g + a f
    f     = denoiser(b, a)            v = sigma2 * div f

With the square loss, any fixed point has g = y - A f, so the denoiser's
optimality condition becomes the KKT condition of the ERM problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DivergenceError, InvalidSpecError
from .matrix_solvers import MatrixEstimate, _estimate_from, certify, matrix_objective, trace_penalty
from .model_gen import Dataset, Model, sym_dim, sym_to_vec, vec_to_sym
from .vector_solvers import VectorEstimate, kkt_residual, lasso_objective, soft_threshold


@dataclass
class GampTrace:
    m: list = field(default_factory=list)
    q: list = field(default_factory=list)
    v: list = field(default_factory=list)
    a: list = field(default_factory=list)
    change: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    converged: bool = False

    def record(self, m, q, v, a, change, damping):
        self.m.append(float(m))
        self.q.append(float(q))
        self.v.append(float(v))
        self.a.append(float(a))
        self.change.append(float(change))
        self.damping.append(float(damping))


def output_denoiser(omega, y, v):
    """Square-loss output channel g(omega, y, v) = (y - omega)/(1 + v)."""
    return (y - omega) / (1.0 + v)


def lasso_denoiser(b, a, lam):
    """f(b, a) = ST_lam(b)/a and its average derivative."""
    f = soft_threshold(b, lam) / a
    return f, np.mean(np.abs(b) > lam) / a


def spectral_denoiser(bmat, a, tau):
    """Eigenvalue map nu -> ReLU(nu - tau)/a and its divergence in isometric coordinates."""
    nu, u = np.linalg.eigh(0.5 * (bmat + bmat.T))
    fnu = np.maximum(nu - tau, 0.0) / a
    dfnu = (nu > tau) / a
    keep = fnu > 0
    s = (u[:, keep] * fnu[keep]) @ u[:, keep].T
    div = float(np.sum(dfnu)) + spectral_pair_sum(nu, fnu, dfnu)
    return 0.5 * (s + s.T), div


def spectral_pair_sum(nu, fnu, dfnu):
    """sum_{i<j} (f_i - f_j)/(nu_i - nu_j); near-ties use the derivative limit."""
    return _kernels.pair_divergence(nu, fnu, dfnu, 1e-12)


def _run(apply, apply_t, y, sigma2, n, dim, denoise, damping, tol, max_iter, overlap, d_norm, q_max=1e12):
    trace = GampTrace()
    f = np.zeros(dim)
    g = np.zeros(n)
    v = 0.0
    omega = None
    b = None
    beta = damping
    last = np.inf
    rising = 0
    for it in range(1, max_iter + 1):
        omega_new = apply(f) - v * g
        omega = omega_new if omega is None else beta * omega_new + (1 - beta) * omega
        g = output_denoiser(omega, y, v)
        a = sigma2 * n / (1.0 + v)
        b_new = apply_t(g) + a * f
        b = b_new if b is None else beta * b_new + (1 - beta) * b
        f_new, div = denoise(b, a)
        v = sigma2 * div
        q = float(f_new @ f_new) / d_norm
        if not np.isfinite(q) or q > q_max:
            trace.record(np.nan, q, v, a, np.inf, beta)
            raise DivergenceError(f"GAMP diverged at iteration {it} (q={q:.3e})", trace=trace)
        change = float(np.linalg.norm(f_new - f)) / max(float(np.linalg.norm(f_new)), 1e-300)
        f = f_new
        trace.record(overlap(f), q, v, a, change, beta)
        if change <= tol:
            trace.converged = True
            return f, trace, it
        # halve the damping after sustained growth of the step size
        rising = rising + 1 if change > last else 0
        last = change
        if rising >= 5 and beta > 1 / 64:
            beta *= 0.5
            rising = 0
    return f, trace, max_iter


def gamp_lasso(data: Dataset, lam: float, damping: float = 0.7, tol: float = 1e-12,
               max_iter: int = 20_000, target=None):
    """GAMP whose fixed point is the LASSO solution; returns (VectorEstimate, GampTrace)."""
    if data.spec.model is not Model.DIAGONAL or data.compact:
        raise InvalidSpecError("gamp_lasso needs an explicit diagonal dataset")
    if not lam > 0:
        raise InvalidSpecError("gamp_lasso needs lambda > 0")
    xs = data.design / np.sqrt(data.d)
    y = data.labels
    n, d = xs.shape
    theta_star = None if target is None else target.theta_star

    def overlap(f):
        return np.nan if theta_star is None else float(f @ theta_star) / d

    f, trace, it = _run(lambda th: xs @ th, lambda r: xs.T @ r, y, 1.0 / d, n, d,
                        lambda b, a: lasso_denoiser(b, a, lam), damping, tol, max_iter, overlap, d)
    c = xs.T @ (y - xs @ f)
    kkt = kkt_residual(c, f, lam, float(np.max(np.abs(xs.T @ y))))
    est = VectorEstimate(f, lasso_objective(data, f, lam), kkt, it, int(np.count_nonzero(f)))
    return est, trace


def gamp_matrix(data: Dataset, lam: float, damping: float = 0.7, tol: float = 1e-10,
                max_iter: int = 20_000, target=None):
    """Matrix GAMP with the spectral ReLU denoiser; fixed point = trace-penalized PSD sensing.

    Runs on 1/2 |y - A(S)|^2 + (lam d / 2) Tr S, i.e. half the convex
    objective, so the threshold applied to the field is lam d / 2.
    """
    if data.spec.model is not Model.QUADRATIC or data.compact:
        raise InvalidSpecError("gamp_matrix needs an explicit quadratic dataset")
    if not lam > 0:
        raise InvalidSpecError("gamp_matrix needs lambda > 0")
    design = data.design
    y = data.labels
    d = data.d
    n, dim = y.shape[0], sym_dim(d)
    tau = 0.5 * trace_penalty(lam, d)
    s_vec = None if target is None else sym_to_vec(target.s_star)

    def denoise(b, a):
        s, div = spectral_denoiser(vec_to_sym(b), a, tau)
        return sym_to_vec(s), div

    def overlap(f):
        return np.nan if s_vec is None else float(f @ s_vec) / d

    # operator form: the dense (n, d(d+1)/2) design never materializes
    f, trace, it = _run(lambda v: design.forward(vec_to_sym(v)), lambda r: sym_to_vec(design.adjoint(r)),
                        y, 2.0 / d, n, dim,
                        denoise, damping, tol, max_iter, overlap, d)
    s = vec_to_sym(f)
    est = _estimate_from(s, matrix_objective(data, s, lam), certify(data, s, lam), it)
    return est, trace
