"""Estimators for the quadratic network.

Training the width-p quadratic network with weight decay lam on
S = W^T W / sqrt(p d) is equivalent to trace-regularized PSD matrix sensing

    min_{S >= 0}  sum_mu (y_mu - Tr[S Z_mu])^2 + lam * d * Tr S.

The factor d comes from the weight decay normalisation (lam |W|_F^2 with
|W|_F^2 = sqrt(p d) Tr S at p = d); it is the convention under which the
state evolution of the quadratic model is stated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConvergenceError, InvalidSpecError, RegimeError
from .model_gen import Dataset, Model, stream, sym_to_vec, vec_to_sym


@dataclass
class MatrixEstimate:
    s_hat: np.ndarray
    eigvals_hat: np.ndarray
    objective: float
    opt_residual: float
    iterations: int
    rank: int


def trace_penalty(lam: float, d: int) -> float:
    """Coefficient of Tr S in the convex objective for network weight decay lam."""
    return lam * d


def _sym(m):
    return 0.5 * (m + m.T)


def psd_nuclear_prox(m, tau):
    """argmin_{S >= 0} tau Tr S + 1/2 |S - m|_F^2 by eigenvalue thresholding."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    nu, v = np.linalg.eigh(_sym(np.asarray(m, dtype=float)))
    shrunk = np.maximum(nu - tau, 0.0)
    shrunk[shrunk < 1e-12 * max(1.0, shrunk.max(initial=0.0))] = 0.0
    keep = shrunk > 0
    return _sym((v[:, keep] * shrunk[keep]) @ v[:, keep].T)


def _estimate_from(s, objective, residual, iterations):
    s = _sym(s)
    ev = np.linalg.eigvalsh(s)[::-1]
    ev_clean = np.where(np.abs(ev) <= 1e-10 * max(1.0, np.abs(ev).max(initial=0.0)), 0.0, ev)
    return MatrixEstimate(s, ev, float(objective), float(residual), int(iterations), int(np.count_nonzero(ev_clean > 0)))


class DataFit:
    """f(S) = |y - A(S)|^2 in whichever representation the dataset carries."""

    def __init__(self, data: Dataset):
        if data.spec.model is not Model.QUADRATIC:
            raise InvalidSpecError("expected a quadratic-model dataset")
        self.d = data.d
        self.data = data
        if data.compact:
            st = data.stats
            self.G, self.b, self.yy = st.gram, st.xty, st.yty
            self.op = None
        else:
            self.op = data.design
            self.y = data.labels

    def value_grad(self, s):
        if self.op is None:
            v = sym_to_vec(s)
            gv = self.G @ v
            val = self.yy - 2 * v @ self.b + v @ gv
            return float(max(val, 0.0)), vec_to_sym(2 * (gv - self.b))
        r = self.y - self.op.forward(s)
        return float(r @ r), -2.0 * self.op.adjoint(r)

    def value(self, s):
        if self.op is None:
            v = sym_to_vec(s)
            return float(max(self.yy - 2 * v @ self.b + v @ self.G @ v, 0.0))
        r = self.y - self.op.forward(s)
        return float(r @ r)

    def normal(self, s):
        """A^* A (S)."""
        if self.op is None:
            return vec_to_sym(self.G @ sym_to_vec(s))
        return self.op.adjoint(self.op.forward(s))

    def lipschitz(self, iters=60, seed=0):
        """2 |A^* A|_op by power iteration, padded by 2%."""
        rng = np.random.default_rng(seed)
        x = _sym(rng.standard_normal((self.d, self.d)))
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iters):
            y = self.normal(x)
            nrm = np.linalg.norm(y)
            if nrm == 0:
                return 1.0
            new = float(np.sum(x * y))
            x = y / nrm
            if abs(new - est) <= 1e-6 * abs(new):
                est = new
                break
            est = new
        return 2.0 * 1.02 * max(est, nrm)


def optimality_residual(s, grad, mu, step, scale):
    """Prox-gradient residual |S - prox(S - t(grad + mu I))|_F / t, relative to ``scale``.

    Zero exactly when grad + mu I is PSD and (grad + mu I) S = 0, i.e. when
    the KKT conditions of the trace-penalized PSD problem hold.
    """
    moved = psd_nuclear_prox(s - step * grad, step * mu)
    return float(np.linalg.norm(s - moved) / step / max(scale, 1e-300))


def matrix_objective(data: Dataset, s, lam) -> float:
    return DataFit(data).value(s) + trace_penalty(lam, data.d) * float(np.trace(s))


def _apg(fit, mu, tol, max_iter, s0=None, scale=None, verbose=False):
    """Accelerated proximal gradient on fit(S) + mu Tr S over the PSD cone.

    Returns (S, objective, residual, iterations, converged).
    """
    d = fit.d
    step = 1.0 / fit.lipschitz()
    if scale is None:
        _, g0 = fit.value_grad(np.zeros((d, d)))
        scale = max(float(np.linalg.norm(g0)), 1e-300)
    s = np.zeros((d, d)) if s0 is None else _sym(np.asarray(s0, float))
    y = s.copy()
    t = 1.0
    f_prev = np.inf
    best = (np.inf, s)
    for it in range(1, max_iter + 1):
        fy, gy = fit.value_grad(y)
        s_new = psd_nuclear_prox(y - step * gy, step * mu)
        mapping = float(np.linalg.norm(y - s_new)) / step / scale
        # gradient-based restart: momentum points uphill
        if np.sum((y - s_new) * (s_new - s)) > 0:
            t = 1.0
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = s_new + ((t - 1) / t_new) * (s_new - s)
        s, t = s_new, t_new
        if mapping < best[0]:
            best = (mapping, s)
        if mapping <= 0.5 * tol or it % 200 == 0 or it == max_iter:
            f_s, g_s = fit.value_grad(s)
            res = optimality_residual(s, g_s, mu, step, scale)
            obj = f_s + mu * float(np.trace(s))
            if verbose:
                print(f"it={it} obj={obj:.10e} res={res:.3e}")
            if obj > f_prev:
                y, t = s.copy(), 1.0
            f_prev = obj
            if res <= tol:
                return s, obj, res, it, True
    s = best[1]
    f_s, g_s = fit.value_grad(s)
    return s, f_s + mu * float(np.trace(s)), optimality_residual(s, g_s, mu, step, scale), max_iter, False


LOWRANK_MIN_D = 128


def _solve_lowrank(data, lam, tol, max_iter, verbose, p0=64, max_rounds=20, check_every=200):
    """Factored solve S = V V^T for explicit Wishart designs, certified in the full space.

    L-BFGS runs on V (d x p) with a gradient costing O(n d p) instead of the
    O(n d^2) of a full proximal step.  The full prox-gradient residual is
    checked every ``check_every`` iterations; when it stalls and grad + mu I
    has negative eigenvalues, those eigenvectors are appended as new columns.
    The returned point satisfies the same certificate as the proximal solver.
    """
    fit = DataFit(data)
    d = data.d
    mu = trace_penalty(lam, d)
    step = 1.0 / fit.lipschitz()
    _, g0 = fit.value_grad(np.zeros((d, d)))
    scale = max(float(np.linalg.norm(g0)), 1e-300)
    x, y = data.design.x, data.labels
    root = np.sqrt(d)

    # start from the leading part of the first proximal step
    nu, w = np.linalg.eigh(psd_nuclear_prox(-step * g0, step * mu))
    p = min(d, p0)
    v = w[:, ::-1][:, :p] * np.sqrt(np.maximum(nu[::-1][:p], 0.0))
    total = 0
    state = {}

    def certificate(vm):
        s = _sym(vm @ vm.T)
        _, g = fit.value_grad(s)
        return s, g, optimality_residual(s, g, mu, step, scale)

    for _ in range(max_rounds):
        pc = v.shape[1]

        def fun(z):
            vm = z.reshape(d, pc)
            xv = x @ vm
            r = y - (np.einsum("ij,ij->i", xv, xv) - np.sum(vm * vm)) / root
            grad = (-4.0 / root) * (x.T @ (r[:, None] * xv) - np.sum(r) * vm) + 2 * mu * vm
            return float(r @ r + mu * np.sum(vm * vm)), grad.ravel()

        count = [0]

        def callback(intermediate_result):
            count[0] += 1
            if count[0] % check_every == 0:
                _, _, res = certificate(intermediate_result.x.reshape(d, pc))
                state["z"] = intermediate_result.x.copy()
                if res <= tol:
                    raise StopIteration

        budget = max(max_iter - total, 1)
        out = optimize.minimize(fun, v.ravel(), jac=True, method="L-BFGS-B", callback=callback,
                                options=dict(maxiter=budget, maxfun=2 * budget, gtol=0.0, ftol=1e-16,
                                             maxcor=30))
        total += max(out.nit, count[0])
        v = out.x.reshape(d, pc)
        s, g, res = certificate(v)
        if verbose:
            print(f"lowrank p={pc} it={total} res={res:.3e}")
        if res <= tol:
            # one proximal step sends the inactive directions exactly to zero
            polished = psd_nuclear_prox(s - step * g, step * mu)
            _, gp = fit.value_grad(polished)
            res_p = optimality_residual(polished, gp, mu, step, scale)
            if res_p <= res:
                s, res = polished, res_p
            return _estimate_from(s, fit.value(s) + mu * float(np.trace(s)), res, total)
        if total >= max_iter:
            break
        nu, w = np.linalg.eigh(_sym(g) + mu * np.eye(d))
        neg = int(np.sum(nu < 0))
        if neg and pc < d:
            add = min(d - pc, max(8, neg // 2))
            # small steps along the most violated directions
            v = np.hstack([v, w[:, :add] * np.sqrt(step * np.abs(nu[:add]))])
    # fall back to the proximal solver from the current point
    s = _sym(v @ v.T)
    s, obj, res, it, ok = _apg(fit, mu, tol, max(max_iter - total, 1), s, scale, verbose)
    if not ok:
        raise ConvergenceError(f"low-rank solve did not certify (residual {res:.3e})",
                               best=_estimate_from(s, obj, res, total + it))
    return _estimate_from(s, obj, res, total + it)


def solve_matrix_sensing(data: Dataset, lam: float, tol: float = 1e-7, max_iter: int = 20_000,
                         s0=None, verbose: bool = False, method: str = "auto",
                         rank_hint: int | None = None) -> MatrixEstimate:
    """Accelerated proximal gradient with adaptive restarts for the PSD trace-penalized problem.

    ``method="lowrank"`` solves over S = V V^T with L-BFGS and certifies the result
    against the same residual (explicit Wishart designs only); "auto" picks it
    for d >= 128.  ``rank_hint`` sets the starting number of factor columns.
    ``opt_residual`` is the prox-gradient residual relative to |grad f(0)|_F.
    """
    if method not in ("auto", "full", "lowrank"):
        raise InvalidSpecError(f"unknown method {method!r}")
    fit = DataFit(data)
    wishart = fit.op is not None and hasattr(fit.op, "x")
    if method == "lowrank" and not wishart:
        raise InvalidSpecError("the low-rank method needs an explicit Wishart design")
    if s0 is None and wishart and (method == "lowrank" or (method == "auto" and data.d >= LOWRANK_MIN_D)):
        return _solve_lowrank(data, lam, tol, max_iter, verbose, p0=rank_hint or 64)
    mu = trace_penalty(lam, data.d)
    s, obj, res, it, ok = _apg(fit, mu, tol, max_iter, s0, verbose=verbose)
    if not ok:
        raise ConvergenceError(f"proximal gradient hit {max_iter} iterations (residual {res:.3e})",
                               best=_estimate_from(s, obj, res, max_iter))
    return _estimate_from(s, obj, res, it)


def certify(data: Dataset, s, lam) -> float:
    """Optimality residual of an arbitrary PSD candidate, in solve_matrix_sensing's units."""
    fit = DataFit(data)
    mu = trace_penalty(lam, data.d)
    step = 1.0 / fit.lipschitz()
    _, g0 = fit.value_grad(np.zeros_like(s))
    _, g = fit.value_grad(_sym(s))
    return optimality_residual(_sym(s), g, mu, step, float(np.linalg.norm(g0)))


def quadratic_net_erm(data: Dataset, lam: float, p: int, init=None, seed: int | None = None,
                      init_std: float = 0.1, gtol: float = 1e-10, max_iter: int = 50_000) -> MatrixEstimate:
    """Train W in R^{p x d} with S = W^T W / sqrt(p d) and weight decay lam sqrt(d/p) |W|_F^2.

    The weight decay coefficient makes the penalty equal lam d Tr S for every
    width, so the optimum matches solve_matrix_sensing when p >= d.
    """
    d = data.d
    if p < d:
        raise InvalidSpecError("the network equivalence needs p >= d")
    fit = DataFit(data)
    norm = np.sqrt(p * d)
    wd = lam * np.sqrt(d / p)

    def fun(z):
        w = z.reshape(p, d)
        s = w.T @ w / norm
        f, g = fit.value_grad(s)
        val = f + wd * float(z @ z)
        grad = (2.0 / norm) * (w @ g) + 2 * wd * w
        return val, grad.ravel()

    if init is None:
        rng = stream(data.spec.seed if seed is None else seed, "quad_net_init")
        z0 = init_std * rng.standard_normal(p * d)
    else:
        z0 = np.asarray(init, float).ravel()
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B",
                            options=dict(maxiter=max_iter, maxfun=2 * max_iter, gtol=gtol, ftol=1e-16, maxcor=30))
    w = res.x.reshape(p, d)
    s = w.T @ w / norm
    val = float(res.fun)
    resid = certify(data, s, lam)
    if not np.isfinite(val):
        raise ConvergenceError(f"network training failed: {res.message}")
    return _estimate_from(s, val, resid, res.nit)


def factorize(s, p):
    """W (p x d) with W^T W / sqrt(p d) = S, for warm starts."""
    d = s.shape[0]
    nu, v = np.linalg.eigh(_sym(s))
    root = (v * np.sqrt(np.maximum(nu, 0.0))).T * (p * d) ** 0.25
    w = np.zeros((p, d))
    w[:d] = root
    return w


def prune(estimate: MatrixEstimate, delta_se: float, eps_se: float, lam: float) -> MatrixEstimate:
    """Shift the spectrum down by 2 delta - lam eps and clip at zero, keeping eigenvectors."""
    shift = 2 * delta_se - lam * eps_se
    if not shift > 0:
        raise RegimeError("pruning needs lam * eps < 2 * delta (under-regularized regime)")
    nu, v = np.linalg.eigh(estimate.s_hat)
    new = np.maximum(nu - shift, 0.0)
    s = _sym((v * new) @ v.T)
    return _estimate_from(s, float("nan"), float("nan"), estimate.iterations)
