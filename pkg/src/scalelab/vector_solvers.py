"""Estimators for the diagonal linear network.

The trained diagonal network equals the LASSO

    min_theta  1/2 sum_mu (y_mu - <x_mu, theta>/sqrt(d))^2 + lam |theta|_1,

solved here by cyclic coordinate descent with active-set passes.  Problems
with n >= d run in covariance form on (G, b) = (Xs^T Xs, Xs^T y), Xs = X/sqrt(d);
wide problems keep an explicit residual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from . import _kernels
from .errors import ConvergenceError, InvalidSpecError
from .model_gen import Dataset, Model, stream


@dataclass
class VectorEstimate:
    theta_hat: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    support_size: int
    duality_gap: float = float("nan")
    posterior_risk: float | None = None


def soft_threshold(x, a):
    """max(x - a, 0) - max(-x - a, 0), elementwise."""
    if np.any(np.asarray(a) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.maximum(x - a, 0.0) - np.maximum(-x - a, 0.0)


def _require_diagonal(data: Dataset):
    if data.spec.model is not Model.DIAGONAL:
        raise InvalidSpecError("expected a diagonal-model dataset")


def kkt_residual(c, theta, lam, scale):
    """Largest violation of the LASSO optimality conditions, relative to |Xs^T y|_inf.

    c is the correlation Xs^T r of the residual with the columns.
    """
    active = theta != 0
    viol = np.where(active, np.abs(c - lam * np.sign(theta)), np.maximum(np.abs(c) - lam, 0.0))
    if viol.size == 0:
        return 0.0
    return float(np.max(viol) / max(scale, 1e-300))


def _gap(rss, theta, c, lam):
    """Duality gap at theta using the rescaled residual as dual point."""
    l1 = np.sum(np.abs(theta))
    primal = 0.5 * rss + lam * l1
    cmax = np.max(np.abs(c)) if c.size else 0.0
    s = 1.0 if cmax <= lam else lam / cmax
    # equals primal - (<y,u> - |u|^2/2) with u = s r, written to avoid cancellation
    gap = 0.5 * rss * (1.0 - s) ** 2 + lam * l1 - s * float(theta @ c)
    return primal, max(gap, 0.0)


class _GramProblem:
    def __init__(self, G, b, yty):
        self.G = np.ascontiguousarray(G)
        self.b = b
        self.yty = yty
        self.d = b.shape[0]

    def init(self, theta):
        return self.b - self.G @ theta

    def refresh(self, theta, state):
        return self.init(theta)

    def corr(self, state):
        return state

    def rss(self, theta, c):
        return max(self.yty - float(theta @ self.b) - float(theta @ c), 0.0)

    def sweep(self, theta, state, lam, idx, n_sweeps):
        return _kernels.cd_gram(self.G, theta, state, lam, idx, n_sweeps)

    def reduced(self, idx):
        return self.G[np.ix_(idx, idx)], self.b[idx]


class _ResidualProblem:
    def __init__(self, xs, y):
        self.xs = np.asfortranarray(xs)
        self.y = y
        self.col_sq = np.einsum("ij,ij->j", xs, xs)
        self.d = xs.shape[1]

    def init(self, theta):
        return self.y - self.xs @ theta

    def refresh(self, theta, state):
        return self.init(theta)

    def corr(self, state):
        return self.xs.T @ state

    def rss(self, theta, r):
        return float(r @ r)

    def sweep(self, theta, state, lam, idx, n_sweeps):
        return _kernels.cd_resid(self.xs, self.col_sq, theta, state, lam, idx, n_sweeps)

    def reduced(self, idx):
        xa = self.xs[:, idx]
        return xa.T @ xa, xa.T @ self.y


def _lasso_problem(data: Dataset):
    if data.compact or data.n >= data.d:
        st = data.normal_equations()
        return _GramProblem(st.gram, st.xty, st.yty), float(np.max(np.abs(st.xty), initial=0.0))
    xs = data.design / np.sqrt(data.d)
    prob = _ResidualProblem(xs, data.labels)
    return prob, float(np.max(np.abs(xs.T @ data.labels), initial=0.0))


def lasso_objective(data: Dataset, theta, lam) -> float:
    if data.compact or data.n >= data.d:
        st = data.normal_equations()
        rss = st.yty - 2 * theta @ st.xty + theta @ st.gram @ theta
    else:
        r = data.labels - data.design @ theta / np.sqrt(data.d)
        rss = r @ r
    return float(0.5 * rss + lam * np.sum(np.abs(theta)))


def _min_l1_interpolator(data: Dataset):
    """Basis pursuit min |theta|_1 s.t. Xs theta = y, as a linear program."""
    xs = data.design / np.sqrt(data.d)
    n, d = xs.shape
    # theta = p - q with p, q >= 0
    res = optimize.linprog(np.ones(2 * d), A_eq=np.hstack([xs, -xs]), b_eq=data.labels,
                           bounds=(0, None), method="highs")
    if res.status != 0:
        raise ConvergenceError(f"basis pursuit failed: {res.message}")
    return res.x[:d] - res.x[d:]


def _polish(prob, theta, lam):
    """Move toward the solution of the KKT equations on the current support.

    With the signs held fixed the objective is a convex quadratic, so the
    segment from theta to that solution descends.  The step stops at the first
    coordinate that would change sign (it is set to zero).  Returns
    (candidate, exact) or None; coordinate descent crawls once the support
    nears n columns, and this step lands exactly when the signs are right.
    """
    idx = np.flatnonzero(theta)
    if idx.size == 0:
        return None
    g, b = prob.reduced(idx)
    sign = np.sign(theta[idx])
    try:
        sol = np.linalg.solve(g, b - lam * sign)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    out = theta.copy()
    flip = np.sign(sol) != sign
    if not flip.any():
        out[idx] = sol
        return out, True
    cur = theta[idx]
    t_hit = cur[flip] / (cur[flip] - sol[flip])
    k = int(np.argmin(t_hit))
    step = float(t_hit[k])
    out[idx] = cur + step * (sol - cur)
    out[idx[np.flatnonzero(flip)[k]]] = 0.0
    return out, False


def solve_lasso(data: Dataset, lam: float, tol: float = 1e-10, gap_tol: float = 1e-10,
                max_sweeps: int = 200_000, theta0=None) -> VectorEstimate:
    """LASSO by cyclic coordinate descent with active-set passes.

    Stops when the relative duality gap is below ``gap_tol`` and the KKT
    residual (relative to |Xs^T y|_inf) is below ``tol``.  lam = 0 with n < d
    returns the minimum-l1 interpolator; lam = 0 with n >= d the least-squares fit.
    """
    _require_diagonal(data)
    if lam < 0:
        raise InvalidSpecError("lambda must be nonnegative")
    d = data.d
    if lam == 0 and not data.compact and data.n < d:
        theta = _min_l1_interpolator(data)
        prob, scale = _lasso_problem(data)
        state = prob.init(theta)
        c = prob.corr(state)
        return VectorEstimate(theta, lasso_objective(data, theta, 0.0), kkt_residual(c, theta, 0.0, scale),
                              1, int(np.count_nonzero(theta)), 0.0)

    prob, scale = _lasso_problem(data)
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    state = prob.init(theta)
    all_idx = np.arange(d, dtype=np.int64)
    sweeps = 0
    best = None
    kkt = gap_rel = np.inf
    inner_tol = 1e-3 * scale * tol if scale > 0 else 0.0
    while sweeps < max_sweeps:
        prob.sweep(theta, state, lam, all_idx, 1)
        sweeps += 1
        active = np.flatnonzero(theta).astype(np.int64)
        if active.size:
            # iterate on the active set until it stalls
            chunk, spent = 10, 0
            while sweeps < max_sweeps and spent < 200:
                change = prob.sweep(theta, state, lam, active, chunk)
                sweeps += chunk
                spent += chunk
                if change <= inner_tol:
                    break
        state = prob.refresh(theta, state)
        c = prob.corr(state)
        kkt = kkt_residual(c, theta, lam, scale)
        primal, gap = _gap(prob.rss(theta, state), theta, c, lam)
        gap_rel = gap / max(primal, 1e-300)
        if best is None or kkt < best[1]:
            best = (theta.copy(), kkt)
        gap_ok = gap_rel <= gap_tol or lam == 0
        if kkt <= tol and gap_ok:
            return VectorEstimate(theta, primal, kkt, sweeps, int(np.count_nonzero(theta)), gap_rel)
        polished = _polish(prob, theta, lam) if lam > 0 else None
        if polished is not None:
            cand, exact = polished
            st_c = prob.init(cand)
            c_c = prob.corr(st_c)
            primal_c, gap_c = _gap(prob.rss(cand, st_c), cand, c_c, lam)
            if exact:
                kkt_c = kkt_residual(c_c, cand, lam, scale)
                gap_c /= max(primal_c, 1e-300)
                if kkt_c <= tol and gap_c <= gap_tol:
                    return VectorEstimate(cand, primal_c, kkt_c, sweeps, int(np.count_nonzero(cand)), gap_c)
            if primal_c <= primal:
                theta[:] = cand
                state = st_c
        if inner_tol > 0:
            inner_tol *= 0.1
    raise ConvergenceError(
        f"coordinate descent hit {max_sweeps} sweeps (kkt={kkt:.3e}, gap={gap_rel:.3e})",
        best=VectorEstimate(best[0], lasso_objective(data, best[0], lam), best[1], sweeps,
                            int(np.count_nonzero(best[0]))),
    )


def diagonal_net_erm(data: Dataset, lam: float, init=None, seed: int | None = None,
                     init_std: float = 1e-2, gtol: float = 1e-12, max_iter: int = 100_000,
                     support_tol: float = 1e-8) -> VectorEstimate:
    """Train the two-layer diagonal network f(x) = <x, u*w>/sqrt(d) with weight decay.

    Objective 1/2 |y - Xs (u*w)|^2 + lam/2 (|u|^2 + |w|^2), minimized with
    L-BFGS from a small random initialization (or from ``init = (u, w)``).
    The returned objective is the network objective; at a global minimum it
    equals the LASSO optimum.
    """
    _require_diagonal(data)
    st = data.normal_equations()
    G, b, yy = st.gram, st.xty, st.yty
    d = data.d

    def fun(z):
        u, w = z[:d], z[d:]
        th = u * w
        gth = G @ th
        val = 0.5 * (yy - 2 * th @ b + th @ gth) + 0.5 * lam * (u @ u + w @ w)
        grad_th = gth - b
        return val, np.concatenate([grad_th * w + lam * u, grad_th * u + lam * w])

    if init is None:
        rng = stream(data.spec.seed if seed is None else seed, "net_init")
        z0 = init_std * rng.standard_normal(2 * d)
    else:
        z0 = np.concatenate([np.asarray(init[0], float), np.asarray(init[1], float)])
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B",
                            options=dict(maxiter=max_iter, maxfun=4 * max_iter, gtol=gtol, ftol=1e-15, maxcor=30))
    u, w = res.x[:d], res.x[d:]
    theta = u * w
    val, grad = fun(res.x)
    scale = float(np.max(np.abs(b), initial=0.0))
    c = b - G @ theta
    small = np.abs(theta) <= support_tol * max(np.max(np.abs(theta), initial=0.0), 1e-300)
    theta_c = np.where(small, 0.0, theta)
    gnorm = float(np.max(np.abs(grad), initial=0.0))
    if not np.isfinite(val) or (not res.success and gnorm > 1e-6 * max(scale, 1.0)):
        raise ConvergenceError(f"L-BFGS did not converge: {res.message}",
                               best=VectorEstimate(theta, val, np.inf, res.nit, int(np.count_nonzero(theta_c))))
    return VectorEstimate(theta, float(val), kkt_residual(c, theta_c, lam, scale), int(res.nit),
                          int(np.count_nonzero(theta_c)))


def canonical_factorization(theta):
    """u_i = sign(theta_i) |theta_i|^(1/2), w_i = |theta_i|^(1/2)."""
    root = np.sqrt(np.abs(theta))
    return np.sign(theta) * root, root


def bayes_posterior_mean(data: Dataset, lambda_diag, delta: float) -> VectorEstimate:
    """Gaussian posterior mean V Xs^T y / Delta with V = (Lambda^-1 + Xs^T Xs / Delta)^-1.

    ``posterior_risk`` holds Tr V / d, the expected excess risk given the design.
    """
    _require_diagonal(data)
    if not delta > 0:
        raise InvalidSpecError("the posterior mean needs Delta > 0")
    lam_diag = np.asarray(lambda_diag, dtype=float)
    d = data.d
    if data.n == 0:
        return VectorEstimate(np.zeros(d), 0.0, 0.0, 0, 0, posterior_risk=float(np.sum(lam_diag) / d))
    st = data.normal_equations()
    prec = st.gram / delta
    prec[np.diag_indices(d)] += 1.0 / lam_diag
    cf = linalg.cho_factor(prec, lower=True)
    theta = linalg.cho_solve(cf, st.xty / delta)
    v = linalg.cho_solve(cf, np.eye(d))
    rss = st.yty - 2 * theta @ st.xty + theta @ st.gram @ theta
    obj = 0.5 * rss / delta + 0.5 * np.sum(theta**2 / lam_diag)
    grad = prec @ theta - st.xty / delta
    return VectorEstimate(theta, float(obj), float(np.max(np.abs(grad))), 1, int(np.count_nonzero(theta)),
                          posterior_risk=float(np.trace(v) / d))
