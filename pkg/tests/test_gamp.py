import numpy as np
import pytest

from scalelab.errors import DivergenceError, InvalidSpecError
from scalelab.gamp import (GampTrace, _run, gamp_lasso, gamp_matrix, lasso_denoiser, output_denoiser,
                           spectral_denoiser, spectral_pair_sum)
from scalelab.matrix_solvers import DataFit, solve_matrix_sensing
from scalelab.model_gen import ProblemSpec, gen_dataset, gen_diagonal_target, gen_quadratic_target, matrix_mse
from scalelab.vector_solvers import solve_lasso


def test_output_denoiser():
    assert output_denoiser(0.0, 1.0, 0.0) == 1.0
    assert output_denoiser(1.0, 3.0, 1.0) == 1.0


def test_lasso_denoiser():
    f, div = lasso_denoiser(np.array([2.0, -0.5, -3.0]), 2.0, 1.0)
    assert np.allclose(f, [0.5, 0.0, -1.0])
    assert div == pytest.approx(1 / 3)


def test_spectral_divergence_vanishes_below_threshold():
    nu = np.array([-1.0, 0.3, 0.9])
    assert spectral_pair_sum(nu, np.zeros(3), np.zeros(3)) == 0.0
    s, div = spectral_denoiser(np.diag(nu), 1.0, 1.0)
    assert div == 0.0 and np.all(s == 0)


def test_spectral_divergence_matches_finite_difference():
    # divergence of the matrix map in isometric coordinates, by central differences
    from scalelab.model_gen import sym_dim, sym_to_vec, vec_to_sym
    rng = np.random.default_rng(0)
    d = 5
    a = rng.standard_normal((d, d))
    b = a + a.T
    tau, scale = 0.4, 1.7
    bv = sym_to_vec(b)
    h = 1e-6
    fd = 0.0
    for k in range(sym_dim(d)):
        e = np.zeros_like(bv)
        e[k] = h
        fp = sym_to_vec(spectral_denoiser(vec_to_sym(bv + e), scale, tau)[0])
        fm = sym_to_vec(spectral_denoiser(vec_to_sym(bv - e), scale, tau)[0])
        fd += (fp[k] - fm[k]) / (2 * h)
    assert spectral_denoiser(b, scale, tau)[1] == pytest.approx(fd, rel=1e-5)


def test_spectral_pair_sum_tie_limit():
    nu = np.array([1.0, 1.0, 2.0])
    f = np.maximum(nu - 0.5, 0)
    df = (nu > 0.5).astype(float)
    # tied pair contributes the derivative 1; the others contribute slope 1
    assert spectral_pair_sum(nu, f, df) == pytest.approx(3.0)


def test_gamp_lasso_matches_coordinate_descent():
    spec = ProblemSpec("diagonal", 100, 300, 1.0, 0.5, seed=0)
    t = gen_diagonal_target(spec)
    data = gen_dataset(spec, t)
    cd = solve_lasso(data, 1.0)
    est, trace = gamp_lasso(data, 1.0, target=t)
    assert trace.converged
    assert np.linalg.norm(est.theta_hat - cd.theta_hat) <= 1e-4 * np.linalg.norm(cd.theta_hat)
    assert est.kkt_residual <= 1e-6
    # overlaps stable at the end and consistent with the estimate
    assert trace.q[-1] == pytest.approx(est.theta_hat @ est.theta_hat / 100, rel=1e-10)
    assert trace.m[-1] == pytest.approx(est.theta_hat @ t.theta_star / 100, rel=1e-10)
    assert abs(trace.q[-1] - trace.q[-2]) <= 1e-8
    assert all(q >= 0 for q in trace.q)


def test_gamp_lasso_null_threshold():
    spec = ProblemSpec("diagonal", 40, 80, 1.0, 0.5, seed=1)
    data = gen_dataset(spec, gen_diagonal_target(spec))
    lam_max = np.max(np.abs(data.design.T @ data.labels / np.sqrt(40)))
    est, _ = gamp_lasso(data, 1.5 * lam_max)
    assert np.all(est.theta_hat == 0)


def test_gamp_rejects_bad_inputs():
    spec = ProblemSpec("diagonal", 10, 20, 1.0, 0.5)
    data = gen_dataset(spec, gen_diagonal_target(spec))
    with pytest.raises(InvalidSpecError):
        gamp_lasso(data, 0.0)
    with pytest.raises(InvalidSpecError):
        gamp_matrix(data, 1.0)


def test_identity_denoisers_reduce_to_power_iteration():
    # with f(b, a) = b / a and zero divergence feedback the update is linear in f;
    # the divergence guard must fire once the iterate grows without bound
    rng = np.random.default_rng(3)
    n, d = 30, 10
    a = rng.standard_normal((n, d)) / np.sqrt(d)
    y = rng.standard_normal(n)

    def grow(b, scale):
        return 3.0 * b, 0.0

    with pytest.raises(DivergenceError) as info:
        _run(lambda f: a @ f, lambda r: a.T @ r, y, 1.0 / d, n, d, grow, 1.0, 1e-12, 500,
             lambda f: np.nan, d)
    assert isinstance(info.value.trace, GampTrace)
    assert info.value.trace.q[-1] > 1e12


def test_gamp_matrix_matches_convex_solver():
    d = 40
    spec = ProblemSpec("quadratic", d, 4 * d * d, 1.0, 0.5, seed=2, mode="goe_universal")
    t = gen_quadratic_target(spec)
    data = gen_dataset(spec, t)
    convex = solve_matrix_sensing(data, 1.0)
    est, trace = gamp_matrix(data, 1.0, target=t)
    assert trace.converged
    r_convex, r_gamp = matrix_mse(convex.s_hat, t), matrix_mse(est.s_hat, t)
    assert abs(r_gamp - r_convex) <= 1e-2 * r_convex
    assert est.objective == pytest.approx(convex.objective, rel=1e-3)
    assert est.opt_residual <= 1e-5


def test_gamp_matrix_huge_lambda_gives_zero():
    d = 10
    spec = ProblemSpec("quadratic", d, 300, 1.0, 0.5, seed=3, mode="goe_universal")
    data = gen_dataset(spec, gen_quadratic_target(spec))
    _, g0 = DataFit(data).value_grad(np.zeros((d, d)))
    lam = 10 * np.abs(np.linalg.eigvalsh(g0)).max() / d
    est, _ = gamp_matrix(data, lam)
    assert np.all(est.s_hat == 0)
