"""Fixed-point solvers for the four state-evolution systems.

* LASSO (diagonal ERM): deterministic sums over the teacher variances.
* Diagonal Bayes: scalar equation for the posterior risk.
* Quadratic ERM: 2x2 system in (delta, eps) driven by
  J(a, b) = (1/d) sum_i ReLU(nu_i - b)^2, nu = eig(S* + a Z), Z ~ GOE(d).
* Quadratic Bayes: scalar equation driven by the cubic integral of the
  spectral density of S* + Z / sqrt(q_hat).

Risks of the quadratic systems are in units of |S_hat - S*|_F^2 / d, half of
the population excess risk (see ``model_gen.QUAD_RISK_FACTOR``).

The Monte-Carlo systems draw their GOE matrices once per solve and reuse them
at every evaluation (common random numbers).  The equations then become
deterministic functions of the order parameters and are solved by bracketed
root finding to a tight tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal
from scipy.special import erfc, erfcx

from .errors import ConvergenceError, InvalidSpecError, NumericalQualityError, RegimeError
from .model_gen import Model, ProblemSpec, QuadraticTarget, power_law_variances, sample_goe, stream

ERFC_SWITCH = 6.0


@dataclass(frozen=True)
class MCConfig:
    n_samples: int = 10
    seed: int | None = None
    independent: bool = True  # separate draws for J, d1 J and d2 J
    fd_check: bool = True
    bandwidth: str | float = "spacing"  # KDE rule for the Bayes integral


@dataclass
class DiagSEOutput:
    nu: float
    delta_hat: float
    risk: float
    residual: float
    iterations: int
    spec: ProblemSpec | None = None

    @property
    def noise_d(self) -> float:
        """Effective per-coordinate noise sqrt(delta_hat d / n)."""
        return float(np.sqrt(self.delta_hat * self.spec.d / self.spec.n))

    @property
    def threshold_d(self) -> float:
        """Effective per-coordinate threshold nu sqrt(2 d / n)."""
        return float(self.nu * np.sqrt(2 * self.spec.d / self.spec.n))


@dataclass
class BayesSEOutput:
    q_hat: float
    risk: float
    residual: float
    iterations: int = 0
    integral: float = float("nan")  # normalized cubic integral (quadratic case)


@dataclass
class QuadSEOutput:
    delta: float
    eps: float
    risk: float
    mc_stderr: float
    iterations: int
    residual: float = float("nan")
    threshold: float = float("nan")  # lam * eps
    j_value: float = float("nan")
    fd_discrepancy: float = float("nan")
    spec: ProblemSpec | None = None
    history: list = field(default_factory=list)

    @property
    def lam(self) -> float:
        return self.spec.lam


# ---------------------------------------------------------------------------
# LASSO


def _erfc_pair(x):
    """erfc(x) and exp(-x^2), using the scaled form beyond ERFC_SWITCH.

    Returns (erfc(x) e^{x^2} or erfc(x), e^{-x^2} factor, mask) so callers can
    combine terms before multiplying by the (possibly underflowing) Gaussian.
    """
    big = x > ERFC_SWITCH
    scaled = np.where(big, erfcx(np.where(big, x, 0.0)), erfc(x))
    gauss = np.exp(-(x**2))
    return scaled, gauss, big


def lasso_risk_map(nu, delta_hat, lambda_diag, n, d):
    """Right-hand side of the risk equation for given (nu, delta_hat)."""
    s = (n / d) * lambda_diag + delta_hat
    rs = np.sqrt(s)
    x = nu / rs
    scaled, gauss, big = _erfc_pair(x)
    erfc_x = np.where(big, scaled * gauss, scaled)
    signal_part = (n / d) * lambda_diag * (1.0 - erfc_x)
    tail_small = (delta_hat + 2 * nu**2) * scaled - (2 / np.sqrt(np.pi)) * nu * rs * gauss
    tail_big = gauss * ((delta_hat + 2 * nu**2) * scaled - (2 / np.sqrt(np.pi)) * nu * rs)
    tail = np.where(big, tail_big, tail_small)
    return float(np.sum(signal_part + tail) / n)


def lasso_threshold_eq(nu, delta_hat, lam, lambda_diag, n, d):
    """(lam/nu) sqrt(n/2d) + mean erfc(nu / sqrt(n Lambda/d + delta_hat)) - n/d."""
    x = nu / np.sqrt((n / d) * lambda_diag + delta_hat)
    scaled, gauss, big = _erfc_pair(x)
    erfc_x = np.where(big, scaled * gauss, scaled)
    first = lam / nu * np.sqrt(n / (2 * d)) if lam > 0 else 0.0
    return first + float(np.mean(erfc_x)) - n / d


def _solve_nu(delta_hat, lam, lambda_diag, n, d):
    h = lambda nu: lasso_threshold_eq(nu, delta_hat, lam, lambda_diag, n, d)
    if lam == 0:
        if n >= d:
            return 0.0
        lo = 0.0
    else:
        lo = 1e-300
    hi = max(1.0, np.sqrt(np.max((n / d) * lambda_diag + delta_hat)))
    while h(hi) > 0:
        hi *= 2.0
        if hi > 1e300:
            raise RegimeError("no finite threshold nu solves the threshold equation")
    if lam > 0:
        # shrink the lower end so the bracket is tight for tiny lambda
        lo = min(hi, lam * np.sqrt(n / (2 * d)) / (1.0 + n / d))
        while h(lo) < 0:
            lo *= 0.5
    return optimize.brentq(h, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def se_lasso(spec: ProblemSpec, lambda_diag=None) -> DiagSEOutput:
    """Solve the LASSO state evolution for (R, nu) with Delta_hat = Delta + R.

    The outer equation R = F(R) is solved by bracketed Brent iterations and
    the inner threshold equation by bisection-type root finding.
    """
    lam_diag = power_law_variances(spec.d, spec.gamma) if lambda_diag is None else np.asarray(lambda_diag, float)
    n, d, lam, delta = spec.n, spec.d, spec.lam, spec.delta
    if n == 0:
        return DiagSEOutput(np.inf, delta + float(np.mean(lam_diag)), float(np.mean(lam_diag)), 0.0, 0, spec)
    if lam == 0 and n == d:
        raise RegimeError("interpolation threshold n = d with lambda = 0: the risk diverges")
    if lam == 0 and n > d and delta == 0:
        return DiagSEOutput(0.0, 0.0, 0.0, 0.0, 0, spec)
    count = [0]

    def gap(r):
        count[0] += 1
        nu = _solve_nu(delta + r, lam, lam_diag, n, d)
        return lasso_risk_map(nu, delta + r, lam_diag, n, d) - r

    g0 = gap(0.0)
    if g0 <= 0:
        r = 0.0
    else:
        hi = max(float(np.mean(lam_diag)), 1.0)
        while gap(hi) > 0:
            hi *= 2.0
            if hi > 1e15:
                raise RegimeError("no finite fixed point for the risk (interpolation divergence)")
        r = optimize.brentq(gap, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    nu = _solve_nu(delta + r, lam, lam_diag, n, d)
    res_r = abs(lasso_risk_map(nu, delta + r, lam_diag, n, d) - r) / max(r, 1e-300)
    res_nu = abs(lasso_threshold_eq(nu, delta + r, lam, lam_diag, n, d)) / (n / d) if nu > 0 else 0.0
    return DiagSEOutput(float(nu), float(delta + r), float(r), float(max(res_r, res_nu)), count[0], spec)


def se_bayes_diagonal(spec: ProblemSpec, lambda_diag=None) -> BayesSEOutput:
    """R = (1/d) sum 1/(1/Lambda_i + q_hat/d) with q_hat = n/(Delta + R), by bracketed root finding."""
    lam_diag = power_law_variances(spec.d, spec.gamma) if lambda_diag is None else np.asarray(lambda_diag, float)
    n, d, delta = spec.n, spec.d, spec.delta
    prior = float(np.mean(lam_diag))
    if n == 0:
        return BayesSEOutput(0.0, prior, 0.0)
    if delta == 0:
        if n >= d:
            return BayesSEOutput(np.inf, 0.0, 0.0)
        # R (mean(1/(R/Lambda + n/d)) - 1) = 0 on R > 0
        f = lambda r: float(np.mean(1.0 / (r / lam_diag + n / d))) - 1.0
        r = optimize.brentq(f, 1e-300, prior, xtol=1e-300, rtol=1e-15)
        return BayesSEOutput(n / r, r, abs(f(r)))

    def gap(r):
        qh = n / (delta + r)
        return float(np.mean(1.0 / (1.0 / lam_diag + qh / d))) - r

    r = optimize.brentq(gap, 0.0, prior, xtol=1e-300, rtol=1e-15, maxiter=500)
    return BayesSEOutput(n / (delta + r), r, abs(gap(r)) / max(r, 1e-300))


# ---------------------------------------------------------------------------
# quadratic ERM


class _SpectralSampler:
    """Eigen-data of diag(s) + a Z_k for fixed GOE draws Z_k, cached per a."""

    def __init__(self, s, draws):
        self.s = np.asarray(s, float)
        self.draws = draws
        self._cache = {}

    def at(self, a):
        key = float(a)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            out = []
            base = np.diag(self.s)
            for z in self.draws:
                nu, v = np.linalg.eigh(base + a * z)
                w = np.einsum("ij,ij->j", v, z @ v)  # d nu_i / d a = v_i^T Z v_i
                out.append((nu, w))
            self._cache[key] = out
        return self._cache[key]

    def max_eig(self, a):
        return max(float(nu[-1]) for nu, _ in self.at(a))


def _per_draw_j(eig, b, d):
    return np.array([np.sum(np.maximum(nu - b, 0.0) ** 2) / d for nu, _ in eig])


def _per_draw_d1(eig, b, d):
    return np.array([2.0 / d * np.sum(np.maximum(nu - b, 0.0) * w) for nu, w in eig])


def _per_draw_d2(eig, b, d):
    return np.array([-2.0 / d * np.sum(np.maximum(nu - b, 0.0)) for nu, _ in eig])


class JEstimator:
    """Monte-Carlo estimates of J, d1 J and d2 J at (a, b) with fixed draws."""

    def __init__(self, s, d, mc: MCConfig, seed: int):
        k = mc.n_samples
        sets = 3 if mc.independent else 1
        draws = [[sample_goe(stream(seed, "se_quad_erm", j, i), d) for i in range(k)] for j in range(sets)]
        self.d = d
        self.samplers = [_SpectralSampler(s, dr) for dr in draws]
        self.sj = self.samplers[0]
        self.s1 = self.samplers[1 % sets]
        self.s2 = self.samplers[2 % sets]

    def j(self, a, b):
        return float(np.mean(_per_draw_j(self.sj.at(a), b, self.d)))

    def d1(self, a, b):
        return float(np.mean(_per_draw_d1(self.s1.at(a), b, self.d)))

    def d2(self, a, b):
        return float(np.mean(_per_draw_d2(self.s2.at(a), b, self.d)))

    def d1_fd(self, a, b, rel_step=1e-4):
        """Common-random-number finite difference of J in a, on the d1 draws."""
        h = rel_step * a
        jp = np.mean(_per_draw_j(self.s1.at(a + h), b, self.d))
        jm = np.mean(_per_draw_j(self.s1.at(a - h), b, self.d))
        return float((jp - jm) / (2 * h))

    def rp_stderr(self, a, b):
        m = len(self.sj.draws)
        vj = np.var(_per_draw_j(self.sj.at(a), b, self.d), ddof=1) if m > 1 else 0.0
        v1 = np.var(_per_draw_d1(self.s1.at(a), b, self.d), ddof=1) if m > 1 else 0.0
        v2 = np.var(_per_draw_d2(self.s2.at(a), b, self.d), ddof=1) if m > 1 else 0.0
        if self.sj is self.s1:
            per = (-_per_draw_j(self.sj.at(a), b, self.d) + b * _per_draw_d2(self.sj.at(a), b, self.d)
                   + a * _per_draw_d1(self.sj.at(a), b, self.d))
            return float(np.std(per, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        return float(np.sqrt((vj + b * b * v2 + a * a * v1) / m))


def _quad_threshold(est: JEstimator, delta, lam, at):
    """b = lam eps solving lam / b = 4 at - d1J(delta, b)/delta."""
    h = lambda b: lam - b * (4 * at - est.d1(delta, b) / delta)
    hi = max(est.s1.max_eig(delta), lam / (4 * at)) * 1.01 + 1e-12
    while h(hi) > 0:
        hi *= 2
        if hi > 1e300:
            raise RegimeError("no threshold solves the eps equation")
    return optimize.brentq(h, 0.0, hi, xtol=1e-300, rtol=1e-13, maxiter=500)


def _rp(est, q_star, delta, b):
    """Frobenius error per dimension implied by the printed system at (delta, b)."""
    return q_star - est.j(delta, b) + b * est.d2(delta, b) + delta * est.d1(delta, b)


def _quad_residuals(est, q_star, at, big_delta, delta, eps, lam):
    b = lam * eps
    j, d1, d2 = est.j(delta, b), est.d1(delta, b), est.d2(delta, b)
    e1 = 4 * at * delta - delta / eps - d1
    e2 = q_star + big_delta / 2 + 2 * at * delta**2 - delta**2 / eps - (j - b * d2)
    return abs(e1) / max(4 * at * delta, 1e-300), abs(e2) / (q_star + big_delta / 2), j


def se_quadratic_erm(spec: ProblemSpec, target: QuadraticTarget, mc: MCConfig = MCConfig(),
                     method: str = "nested", damping: float = 0.5, tol: float = 1e-4,
                     max_iter: int = 2000) -> QuadSEOutput:
    """Solve the quadratic ERM state evolution for (delta, eps).

    ``method="nested"`` (default) solves the eps equation for b = lam eps at
    fixed delta, then the delta equation, each by bracketed root finding on
    common random numbers.  ``method="damped"`` iterates
    delta^2 <- (Delta + 2 R_p)/(4 at), 1/eps <- 4 at - d1J/delta with damping.
    """
    if spec.model is not Model.QUADRATIC:
        raise InvalidSpecError("se_quadratic_erm needs a quadratic spec")
    lam, big_delta, d = spec.lam, spec.delta, spec.d
    if not lam > 0:
        raise InvalidSpecError("se_quadratic_erm needs lambda > 0")
    if spec.n == 0:
        raise RegimeError("no samples: the effective noise is infinite")
    at = spec.alpha_tilde
    s = np.sort(np.asarray(target.eigvals, float))[::-1]
    q_star = float(np.sum(s**2) / d)
    seed = spec.seed if mc.seed is None else mc.seed
    est = JEstimator(s, d, mc, seed)
    history = []

    if method == "nested":
        count = [0]

        def outer(delta):
            count[0] += 1
            b = _quad_threshold(est, delta, lam, at)
            val = 4 * at * delta**2 - big_delta - 2 * _rp(est, q_star, delta, b)
            history.append((float(delta), float(b), float(val)))
            return val

        lo = 1e-6 * np.sqrt(q_star + big_delta)
        if outer(lo) >= 0:
            delta = lo
        else:
            hi = np.sqrt((big_delta + 2 * q_star) / (4 * at))
            k = 0
            while outer(hi) <= 0:
                lo = hi
                hi *= 2
                k += 1
                if k > 60:
                    raise RegimeError("no fixed point for delta (risk diverges in this regime)")
            delta = optimize.brentq(outer, lo, hi, xtol=1e-300, rtol=1e-10, maxiter=500)
        b = _quad_threshold(est, delta, lam, at)
        iterations = count[0]
    elif method == "damped":
        delta, eps = np.sqrt((big_delta + 2 * q_star) / (4 * at)), 1.0 / (4 * at)
        for it in range(1, max_iter + 1):
            b = lam * eps
            rp = _rp(est, q_star, delta, b)
            denom = 4 * at - est.d1(delta, b) / delta
            if denom <= 0 or big_delta + 2 * rp <= 0:
                raise ConvergenceError("damped iteration left the admissible region", history=history)
            d_new, e_new = np.sqrt((big_delta + 2 * rp) / (4 * at)), 1.0 / denom
            step = max(abs(d_new - delta) / delta, abs(e_new - eps) / eps)
            delta = damping * d_new + (1 - damping) * delta
            eps = damping * e_new + (1 - damping) * eps
            history.append((float(delta), float(eps), float(step)))
            if step <= tol:
                break
        else:
            raise ConvergenceError(f"damped iteration did not converge in {max_iter} steps", history=history)
        b = lam * eps
        iterations = it
    else:
        raise InvalidSpecError(f"unknown method {method!r}")

    eps = b / lam
    risk = 2 * at * delta**2 - big_delta / 2
    r1, r2, j = _quad_residuals(est, q_star, at, big_delta, delta, eps, lam)
    fd = float("nan")
    if mc.fd_check:
        d1 = est.d1(delta, b)
        fd = abs(d1 - est.d1_fd(delta, b)) / max(abs(d1), 1e-12)
        if fd > 1e-3:
            raise NumericalQualityError(f"d1 J perturbation estimate disagrees with finite difference ({fd:.2e})")
    # propagate sampling error of R_p through the delta equation
    se_rp = est.rp_stderr(delta, b)
    h = 1e-4 * delta
    fp = lambda x: 4 * at * x**2 - 2 * _rp(est, q_star, x, _quad_threshold(est, x, lam, at))
    slope = (fp(delta + h) - fp(delta - h)) / (2 * h)
    mc_stderr = 4 * at * delta * 2 * se_rp / max(abs(slope), 1e-300)
    return QuadSEOutput(float(delta), float(eps), float(risk), float(mc_stderr), iterations,
                        float(max(r1, r2)), float(b), float(j), fd, spec, history)


def decompose_rp(se: QuadSEOutput, target: QuadraticTarget, mc: MCConfig = MCConfig()):
    """Monte-Carlo |P - S*|^2/d for the thresholded estimator at the SE fixed point (diagnostic)."""
    d = target.d
    s = np.sort(target.eigvals)[::-1]
    seed = se.spec.seed if mc.seed is None else mc.seed
    vals = []
    for i in range(mc.n_samples):
        z = sample_goe(stream(seed, "se_quad_check", i), d)
        nu, v = np.linalg.eigh(np.diag(s) + se.delta * z)
        p = (v * np.maximum(nu - se.threshold, 0)) @ v.T
        vals.append(np.sum((p - np.diag(s)) ** 2) / d)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# quadratic Bayes


def kde_bandwidth(eigs, d, rule="spacing"):
    eigs = np.asarray(eigs)
    iqr = np.subtract(*np.percentile(eigs, [75, 25]))
    sigma = min(np.std(eigs), iqr / 1.349) if iqr > 0 else np.std(eigs)
    if isinstance(rule, (int, float)):
        return float(rule)
    if rule == "silverman":
        return float(1.06 * np.std(eigs) * eigs.size ** (-0.2))
    if rule == "spacing":
        # eigenvalues repel, so the density is resolved at a few level spacings
        return float(1.06 * sigma * d ** (-2.0 / 3.0))
    raise InvalidSpecError(f"unknown bandwidth rule {rule!r}")


def cubic_density_integral(eigs, d, bandwidth="spacing", min_grid=2048):
    """Integral of mu^3 for the Gaussian KDE mu of the pooled eigenvalues.

    The KDE is evaluated by linear binning onto a uniform grid (spacing at most
    h/8, at least ``min_grid`` points, padded by 4 h) followed by convolution
    with the sampled kernel; the integral uses the trapezoid rule.
    """
    eigs = np.sort(np.asarray(eigs, float))
    h = kde_bandwidth(eigs, d, bandwidth)
    lo, hi = eigs[0] - 4 * h, eigs[-1] + 4 * h
    npts = int(max(min_grid, np.ceil((hi - lo) / (h / 8.0)) + 1))
    x = np.linspace(lo, hi, npts)
    dx = x[1] - x[0]
    pos = (eigs - lo) / dx
    i0 = np.clip(np.floor(pos).astype(int), 0, npts - 2)
    frac = pos - i0
    w = np.zeros(npts)
    np.add.at(w, i0, 1.0 - frac)
    np.add.at(w, i0 + 1, frac)
    half = int(np.ceil(5 * h / dx))
    kx = np.arange(-half, half + 1) * dx
    kern = np.exp(-0.5 * (kx / h) ** 2) / (h * np.sqrt(2 * np.pi))
    dens = signal.fftconvolve(w, kern, mode="same") / eigs.size
    dens = np.maximum(dens, 0.0)
    return float(np.trapezoid(dens**3, x)), x, dens


def normalized_cubic_integral(s, q_hat, draws, bandwidth="spacing"):
    """(4 pi^2 / (3 q_hat)) * int mu^3 for the spectrum of S* + Z/sqrt(q_hat).

    Computed on sqrt(q_hat) S* + Z, where the normalisation factor is 4 pi^2/3.
    """
    d = len(s)
    base = np.diag(np.sqrt(q_hat) * np.asarray(s, float))
    eigs = np.concatenate([np.linalg.eigvalsh(base + z) for z in draws])
    val, _, _ = cubic_density_integral(eigs, d, bandwidth)
    return 4 * np.pi**2 / 3 * val


def se_quadratic_bayes(spec: ProblemSpec, target: QuadraticTarget, mc: MCConfig = MCConfig()) -> BayesSEOutput:
    """Bayes-optimal risk for the quadratic model from the scalar fixed point on q."""
    if spec.model is not Model.QUADRATIC:
        raise InvalidSpecError("se_quadratic_bayes needs a quadratic spec")
    if not spec.delta > 0:
        raise InvalidSpecError("se_quadratic_bayes needs Delta > 0")
    d = spec.d
    s = np.sort(np.asarray(target.eigvals, float))[::-1]
    q_star = float(np.sum(s**2) / d)
    at = spec.alpha_tilde
    if spec.n == 0:
        return BayesSEOutput(0.0, q_star, 0.0, 0, 1.0)
    seed = spec.seed if mc.seed is None else mc.seed
    draws = [sample_goe(stream(seed, "se_quad_bayes", i), d) for i in range(mc.n_samples)]
    count = [0]
    last = {}

    def q_hat_of(q):
        return 4 * at / (spec.delta + 2 * (q_star - q))

    def gap(q):
        count[0] += 1
        qh = q_hat_of(q)
        val = normalized_cubic_integral(s, qh, draws, mc.bandwidth)
        if not 0.0 <= val <= 1.5:
            raise NumericalQualityError(f"cubic density integral {val:.3f} outside [0, 1.5]")
        last[q] = val
        mmse = (1.0 - val) / qh
        return (q_star - q) - mmse

    g_lo = gap(0.0)
    g_hi = gap(q_star)
    if g_lo <= 0:
        q = 0.0
    elif g_hi >= 0:
        q = q_star
    else:
        q = optimize.brentq(gap, 0.0, q_star, xtol=1e-12 * q_star, rtol=1e-12, maxiter=200)
    res = abs(gap(q)) / q_star
    qh = q_hat_of(q)
    return BayesSEOutput(float(qh), float(q_star - q), float(res), count[0], float(last[q]))
