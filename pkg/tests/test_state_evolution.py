import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalelab.errors import InvalidSpecError, RegimeError
from scalelab.matrix_solvers import solve_matrix_sensing
from scalelab.model_gen import (ProblemSpec, diagonal_quadratic_target, excess_risk, gen_dataset,
                                gen_diagonal_target, gen_quadratic_target, matrix_mse, power_law_variances,
                                sample_goe, stream)
from scalelab.state_evolution import (JEstimator, MCConfig, kde_bandwidth, lasso_risk_map, lasso_threshold_eq,
                                      normalized_cubic_integral, se_bayes_diagonal, se_lasso, se_quadratic_bayes,
                                      se_quadratic_erm)
from scalelab.vector_solvers import solve_lasso

# Frozen from an independent implementation of the LASSO state evolution
# (plain erfc, scalar bisection on nu, fixed-point bisection on R).
LASSO_SE = {
    (100, 600, 0.75, 0.5, 1.0): 0.08501246838240185,
    (100, 200, 0.75, 0.5, 0.01): 0.4842945194859165,
    (200, 2000, 1.0, 0.1, 10.0): 0.10591054624748816,
    (100, 50, 1.5, 1.0, 0.3): 0.6021596150410816,
}

# Frozen from an independent damped (delta, eps) iteration of the quadratic
# system at d=20, gamma=1, Delta=0.5 with 200 GOE draws: (alpha_tilde, lam) -> R.
QUAD_SE = {
    (0.5, 1.0): 0.35022759,
    (1.0, 0.3): 0.15708942,
    (2.0, 0.05): 0.07947768,
}


@pytest.mark.parametrize("key", sorted(LASSO_SE))
def test_lasso_se_frozen_values(key):
    d, n, gamma, delta, lam = key
    out = se_lasso(ProblemSpec("diagonal", d, n, gamma, delta, lam=lam))
    assert out.risk == pytest.approx(LASSO_SE[key], rel=1e-9)
    assert out.residual <= 1e-10
    assert out.delta_hat == pytest.approx(delta + out.risk)


def test_lasso_se_equations_hold():
    spec = ProblemSpec("diagonal", 150, 400, 0.8, 0.3, lam=0.7)
    out = se_lasso(spec)
    lam_diag = power_law_variances(150, 0.8)
    assert abs(lasso_risk_map(out.nu, out.delta_hat, lam_diag, 400, 150) - out.risk) <= 1e-10 * out.risk
    assert abs(lasso_threshold_eq(out.nu, out.delta_hat, 0.7, lam_diag, 400, 150)) <= 1e-10


@given(st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_lasso_se_permutation_invariant(seed):
    spec = ProblemSpec("diagonal", 60, 120, 1.0, 0.5, lam=0.5)
    lam_diag = power_law_variances(60, 1.0)
    perm = np.random.default_rng(seed).permutation(60)
    assert se_lasso(spec, lam_diag[perm]).risk == pytest.approx(se_lasso(spec, lam_diag).risk, rel=1e-10)


def test_lasso_se_extreme_thresholding():
    # lam >> n / sqrt(d): nothing is learned, R = sum Lambda_i / d ~ zeta(2 gamma)
    spec = ProblemSpec("diagonal", 200, 200, 0.75, 0.5, lam=1e5)
    out = se_lasso(spec)
    prior = np.mean(power_law_variances(200, 0.75))
    assert out.risk == pytest.approx(prior, rel=1e-6)
    big = se_lasso(ProblemSpec("diagonal", 20000, 200, 1.0, 0.5, lam=1e7))
    assert big.risk == pytest.approx(np.pi**2 / 6, rel=1e-3)


def test_lasso_se_against_simulation():
    d, n = 200, 4000
    spec = ProblemSpec("diagonal", d, n, 0.75, 0.5, lam=1.0)
    risks = []
    for s in range(10):
        sp = spec.replace(seed=s)
        t = gen_diagonal_target(sp)
        risks.append(excess_risk(solve_lasso(gen_dataset(sp, t), 1.0).theta_hat, t))
    assert np.mean(risks) == pytest.approx(se_lasso(spec).risk, rel=0.10)


def test_lasso_se_interpolation_peak_slope():
    lams = np.logspace(-3, -1, 7)
    r = [se_lasso(ProblemSpec("diagonal", 200, 200, 1.0, 0.5, lam=l)).risk for l in lams]
    slope = np.polyfit(np.log(lams), np.log(r), 1)[0]
    assert slope == pytest.approx(-2 / 3, abs=0.1)


def test_lasso_se_interpolation_divergence():
    with pytest.raises(RegimeError):
        se_lasso(ProblemSpec("diagonal", 50, 50, 1.0, 0.5, lam=0.0))


def test_bayes_diagonal():
    spec = ProblemSpec("diagonal", 50, 0, 1.0, 0.5)
    assert se_bayes_diagonal(spec).risk == pytest.approx(np.mean(power_law_variances(50, 1.0)))
    out = se_bayes_diagonal(spec.replace(n=100))
    assert out.residual <= 1e-10
    assert 0 <= out.risk <= np.mean(power_law_variances(50, 1.0))
    # Bayes lower-bounds the LASSO at the same sample size
    assert out.risk <= se_lasso(spec.replace(n=100, lam=0.5)).risk


def test_bayes_diagonal_exponent():
    d = 10**5
    ns = np.logspace(2.5, 3.5, 5)
    r = [se_bayes_diagonal(ProblemSpec("diagonal", d, int(n), 1.0, 0.5)).risk for n in ns]
    assert np.polyfit(np.log(ns), np.log(r), 1)[0] == pytest.approx(-0.5, abs=0.05)


def _est(s, mc=MCConfig(20), seed=0):
    return JEstimator(np.asarray(s, float), len(s), mc, seed)


def test_j_vanishes_above_spectrum():
    est = _est(np.linspace(2, 0, 30))
    a = 0.5
    top = est.sj.max_eig(a)
    assert est.j(a, top + 1e-9) == 0.0
    assert est.d2(a, top + 1.0) == 0.0


def test_j_pure_noise_is_half_second_moment():
    d = 400
    est = _est(np.zeros(d), MCConfig(5))
    for a in [0.5, 1.0, 2.0]:
        assert est.j(a, 0.0) == pytest.approx(a * a / 2, rel=0.02)


def test_j_monotone_and_superadditive():
    d = 60
    s = np.sqrt(d) / np.arange(1, d + 1)
    est = _est(s)
    q_star = np.sum(s**2) / d
    bs = np.linspace(0, 3, 25)
    vals = [est.j(0.7, b) for b in bs]
    assert np.all(np.diff(vals) <= 0)
    assert est.j(0.7, 0.0) >= q_star


def test_j_derivatives_match_finite_differences():
    d = 40
    s = np.sqrt(d) / np.arange(1, d + 1)
    est = _est(s, MCConfig(10, independent=False))
    a, b, h = 0.6, 0.3, 1e-5
    assert est.d1(a, b) == pytest.approx(est.d1_fd(a, b), rel=1e-4)
    fd2 = (est.j(a, b + h) - est.j(a, b - h)) / (2 * h)
    assert est.d2(a, b) == pytest.approx(fd2, rel=1e-4)


@pytest.mark.parametrize("key", sorted(QUAD_SE))
def test_quadratic_se_frozen_values(key):
    at, lam = key
    d = 20
    spec = ProblemSpec("quadratic", d, int(at * d * d), 1.0, 0.5, lam=lam)
    out = se_quadratic_erm(spec, diagonal_quadratic_target(d, 1.0), MCConfig(200, seed=1))
    assert abs(out.risk - QUAD_SE[key]) <= 3 * out.mc_stderr
    assert out.risk == 2 * spec.alpha_tilde * out.delta**2 - 0.5 / 2
    assert out.delta > 0 and out.eps > 0 and out.risk >= -out.mc_stderr


def test_quadratic_se_reproducible_and_methods_agree():
    d = 30
    spec = ProblemSpec("quadratic", d, 2 * d * d, 1.0, 0.5, lam=0.2)
    t = diagonal_quadratic_target(d, 1.0)
    a = se_quadratic_erm(spec, t, MCConfig(10, seed=3))
    b = se_quadratic_erm(spec, t, MCConfig(10, seed=3))
    assert a.risk == b.risk and a.delta == b.delta and a.eps == b.eps
    damped = se_quadratic_erm(spec, t, MCConfig(10, seed=3), method="damped", tol=1e-8)
    assert damped.delta == pytest.approx(a.delta, rel=1e-4)
    assert damped.eps == pytest.approx(a.eps, rel=1e-3)


def test_quadratic_se_doubling_samples():
    d = 40
    spec = ProblemSpec("quadratic", d, d * d, 1.0, 0.5, lam=0.3)
    t = diagonal_quadratic_target(d, 1.0)
    a = se_quadratic_erm(spec, t, MCConfig(10, seed=5))
    b = se_quadratic_erm(spec, t, MCConfig(20, seed=5))
    assert abs(a.risk - b.risk) <= 2 * a.mc_stderr


def test_quadratic_se_rejects_bad_inputs():
    t = diagonal_quadratic_target(10, 1.0)
    with pytest.raises(InvalidSpecError):
        se_quadratic_erm(ProblemSpec("quadratic", 10, 100, 1.0, 0.5, lam=0.0), t)
    with pytest.raises(InvalidSpecError):
        se_quadratic_erm(ProblemSpec("diagonal", 10, 100, 1.0, 0.5, lam=1.0), t)


@pytest.mark.slow
def test_quadratic_se_against_simulation():
    d = 100
    spec = ProblemSpec("quadratic", d, 4 * d * d, 1.0, 0.5, lam=1.0)
    # the risk is 2 at delta^2 - Delta/2, a difference of similar numbers, so use many draws
    se = se_quadratic_erm(spec, gen_quadratic_target(spec), MCConfig(160, seed=1))
    risks = []
    for s in range(10):
        sp = spec.replace(seed=s)
        t = gen_quadratic_target(sp)
        risks.append(matrix_mse(solve_matrix_sensing(gen_dataset(sp, t), 1.0).s_hat, t))
    assert np.mean(risks) == pytest.approx(se.risk, rel=0.10)


def test_cubic_integral_pure_goe():
    d = 400
    draws = [sample_goe(stream(0, "kde", i), d) for i in range(10)]
    assert normalized_cubic_integral(np.zeros(d), 1.0, draws) == pytest.approx(1.0, abs=0.02)


def test_cubic_integral_first_order_correction():
    # below the outlier threshold the integral falls by Q* q_hat to first order
    d = 200
    t = diagonal_quadratic_target(d, 1.0)
    draws = [sample_goe(stream(0, "kde-small", i), d) for i in range(20)]
    base = normalized_cubic_integral(t.eigvals, 0.0, draws)
    q_hat = 0.25 / d
    drop = base - normalized_cubic_integral(t.eigvals, q_hat, draws)
    assert drop / (t.q_star * q_hat) == pytest.approx(1.0, abs=0.2)


def test_kde_bandwidth_rules():
    eigs = np.random.default_rng(0).standard_normal(1000)
    assert kde_bandwidth(eigs, 100, 0.05) == 0.05
    assert kde_bandwidth(eigs, 100, "silverman") == pytest.approx(1.06 * np.std(eigs) * 1000**-0.2)
    with pytest.raises(InvalidSpecError):
        kde_bandwidth(eigs, 100, "bogus")


def test_quadratic_bayes_basics():
    d = 40
    t = diagonal_quadratic_target(d, 1.0)
    spec = ProblemSpec("quadratic", d, 0, 1.0, 0.5)
    assert se_quadratic_bayes(spec, t).risk == pytest.approx(t.q_star)
    out = se_quadratic_bayes(spec.replace(n=d * d), t, MCConfig(10, seed=0))
    assert 0 <= out.risk <= t.q_star
    assert out.residual <= 1e-6
    erm = se_quadratic_erm(spec.replace(n=d * d, lam=0.3), t, MCConfig(10, seed=0))
    assert out.risk <= erm.risk + 3 * erm.mc_stderr
    with pytest.raises(InvalidSpecError):
        se_quadratic_bayes(ProblemSpec("quadratic", d, 100, 1.0, 0.0), t)


def test_quadratic_bayes_exponent():
    # slow-rate window: d << n << d^3, with R << Delta so that q_hat ~ 4 n / (d^2 Delta)
    d = 400
    t = diagonal_quadratic_target(d, 1.0)
    ratios = np.logspace(1.5, 2.5, 4)  # n / d
    r = [se_quadratic_bayes(ProblemSpec("quadratic", d, int(x * d), 1.0, 5.0), t, MCConfig(4, seed=0)).risk
         for x in ratios]
    assert np.polyfit(np.log(ratios), np.log(r), 1)[0] == pytest.approx(-0.5, abs=0.07)
