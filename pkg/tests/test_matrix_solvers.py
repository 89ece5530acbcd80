import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalelab.errors import InvalidSpecError, RegimeError
from scalelab.matrix_solvers import (DataFit, MatrixEstimate, factorize, matrix_objective, prune,
                                     psd_nuclear_prox, quadratic_net_erm, solve_matrix_sensing, trace_penalty)
from scalelab.model_gen import ProblemSpec, gen_dataset, gen_quadratic_target, matrix_mse, sym_to_vec


def _data(d, n, gamma=1.0, delta=0.5, seed=0, mode=None):
    spec = ProblemSpec("quadratic", d, n, gamma, delta, seed=seed, mode=mode)
    t = gen_quadratic_target(spec)
    return spec, t, gen_dataset(spec, t)


def _rand_sym(rng, d):
    a = rng.standard_normal((d, d))
    return a + a.T


def test_prox_examples():
    out = psd_nuclear_prox(np.diag([3.0, 0.5, -1.0]), 1.0)
    assert np.allclose(out, np.diag([2.0, 0.0, 0.0]))
    rng = np.random.default_rng(0)
    b = rng.standard_normal((4, 4))
    m = b @ b.T
    assert np.allclose(psd_nuclear_prox(m, 0.0), m)
    with pytest.raises(ValueError):
        psd_nuclear_prox(m, -1.0)


def test_prox_matches_projected_gradient_oracle():
    rng = np.random.default_rng(1)
    m = _rand_sym(rng, 5)
    tau = 0.3
    # projected gradient on tau Tr S + 1/2 |S - m|^2 over the PSD cone
    s = np.zeros((5, 5))
    for _ in range(2000):
        g = tau * np.eye(5) + s - m
        nu, v = np.linalg.eigh(s - 0.5 * g)
        s = (v * np.maximum(nu, 0)) @ v.T
    assert np.linalg.norm(psd_nuclear_prox(m, tau) - s) <= 1e-6


@given(st.integers(2, 10), st.floats(0.0, 2.0), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_prox_nonexpansive_and_equivariant(d, tau, seed):
    rng = np.random.default_rng(seed)
    a, b = _rand_sym(rng, d), _rand_sym(rng, d)
    pa, pb = psd_nuclear_prox(a, tau), psd_nuclear_prox(b, tau)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-10
    assert np.linalg.eigvalsh(pa).min() >= -1e-8
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    diag = np.diag(rng.standard_normal(d))
    assert np.allclose(psd_nuclear_prox(q @ diag @ q.T, tau), q @ psd_nuclear_prox(diag, tau) @ q.T, atol=1e-9)


@pytest.mark.parametrize("mode", ["wishart_centered", "goe_universal"])
def test_convex_solver_matches_cvxpy(mode):
    d, n, lam = 5, 40, 0.1
    _, _, data = _data(d, n, seed=2, mode=mode)
    mu = trace_penalty(lam, d)
    S = cp.Variable((d, d), PSD=True)
    # predictions Tr[S Z_mu] built from the measurement matrices themselves
    pred = cp.hstack([cp.trace(S @ data.design.matrix(k)) for k in range(n)])
    prob = cp.Problem(cp.Minimize(cp.sum_squares(data.labels - pred) + mu * cp.trace(S)))
    prob.solve(solver="CLARABEL")
    est = solve_matrix_sensing(data, lam, tol=1e-10)
    assert est.objective == pytest.approx(prob.value, rel=1e-6)
    assert np.linalg.norm(est.s_hat - S.value) <= 1e-4 * max(np.linalg.norm(S.value), 1.0)


def test_estimate_invariants():
    _, _, data = _data(12, 200, seed=3)
    est = solve_matrix_sensing(data, 0.2)
    assert isinstance(est, MatrixEstimate)
    assert np.linalg.eigvalsh(est.s_hat).min() >= -1e-8
    assert np.allclose(est.eigvals_hat, np.linalg.eigvalsh(est.s_hat)[::-1], atol=1e-8)
    assert np.all(np.diff(est.eigvals_hat) <= 1e-12)
    assert est.objective == pytest.approx(matrix_objective(data, est.s_hat, 0.2), rel=1e-9)


def test_null_threshold():
    d = 10
    _, _, data = _data(d, 100, seed=4)
    _, g0 = DataFit(data).value_grad(np.zeros((d, d)))
    lam_null = np.linalg.eigvalsh(-g0).max() / d
    est = solve_matrix_sensing(data, 1.01 * lam_null)
    assert np.allclose(est.s_hat, 0.0) and est.rank == 0
    assert solve_matrix_sensing(data, 0.5 * lam_null).rank > 0


def test_noiseless_recovery():
    d = 30
    _, t, data = _data(d, 5 * d * d, delta=0.0, seed=5)
    est = solve_matrix_sensing(data, 1e-8, tol=1e-9)
    assert matrix_mse(est.s_hat, t) <= 1e-3 * t.q_star


def test_wrong_model_rejected():
    spec = ProblemSpec("diagonal", 5, 10, 1.0, 0.5)
    from scalelab.model_gen import gen_diagonal_target
    data = gen_dataset(spec, gen_diagonal_target(spec))
    with pytest.raises(InvalidSpecError):
        solve_matrix_sensing(data, 1.0)


def test_network_matches_convex():
    _, _, data = _data(16, 600, seed=6)
    convex = solve_matrix_sensing(data, 0.5, tol=1e-9)
    net = quadratic_net_erm(data, 0.5, p=32)
    assert abs(net.objective - convex.objective) <= 1e-3 * convex.objective


def test_network_noiseless_recovery_without_penalty():
    d = 6
    _, t, data = _data(d, 20 * d * d, delta=0.0, seed=7)
    convex = solve_matrix_sensing(data, 1e-10, tol=1e-10)
    net = quadratic_net_erm(data, 0.0, p=2 * d)
    assert matrix_mse(convex.s_hat, t) <= 1e-3
    assert matrix_mse(net.s_hat, t) <= 1e-3


def test_network_factorization_init_is_optimal():
    d, p = 10, 20
    _, _, data = _data(d, 300, seed=8)
    convex = solve_matrix_sensing(data, 0.5, tol=1e-10)
    w = factorize(convex.s_hat, p)
    assert np.allclose(w.T @ w / np.sqrt(p * d), convex.s_hat, atol=1e-12)
    net = quadratic_net_erm(data, 0.5, p=p, init=w)
    assert abs(net.objective - convex.objective) <= 1e-6 * max(convex.objective, 1.0)
    with pytest.raises(InvalidSpecError):
        quadratic_net_erm(data, 0.5, p=d - 1)


def _estimate(eigs):
    s = np.diag(np.asarray(eigs, float))
    return MatrixEstimate(s, np.sort(eigs)[::-1], 0.0, 0.0, 0, int(np.count_nonzero(eigs)))


def test_prune_examples():
    assert prune(_estimate([5.0, 0.0]), 1.0, 0.0, 0.0).eigvals_hat[0] == pytest.approx(3.0)
    out = prune(_estimate([1.5, 1.0, 0.2]), 1.0, 0.5, 1.0)  # shift 1.5
    assert np.allclose(out.s_hat, 0.0) and out.rank == 0
    with pytest.raises(RegimeError):
        prune(_estimate([1.0]), 1.0, 2.0, 1.0)


def test_prune_keeps_eigenvectors():
    rng = np.random.default_rng(9)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    eigs = np.array([5.0, 4.0, 3.0, 1.0, 0.5, 0.0])
    s = (q * eigs) @ q.T
    out = prune(MatrixEstimate(s, eigs, 0.0, 0.0, 0, 5), 1.0, 0.0, 0.0)
    assert np.allclose(out.s_hat, (q * np.maximum(eigs - 2.0, 0)) @ q.T, atol=1e-12)


def test_sym_vec_consistency_of_compact_fit():
    spec = ProblemSpec("quadratic", 4, 60, 1.0, 0.5, seed=10, mode="goe_universal")
    t = gen_quadratic_target(spec)
    full = gen_dataset(spec, t)
    rows = full.design.rows()
    s = t.s_star
    ref = np.sum((full.labels - rows @ sym_to_vec(s)) ** 2)
    assert DataFit(full).value(s) == pytest.approx(ref)


@pytest.mark.slow
def test_pruning_lowers_risk_in_phase_v():
    from scalelab.state_evolution import MCConfig, se_quadratic_erm
    d = 100
    lam = 1 / d
    spec = ProblemSpec("quadratic", d, d * d // 2, 1.0, 0.5, lam=lam)
    se = se_quadratic_erm(spec, gen_quadratic_target(spec), MCConfig())
    assert se.lam * se.eps < 2 * se.delta
    for seed in range(10):
        sp = spec.replace(seed=seed)
        t = gen_quadratic_target(sp)
        est = solve_matrix_sensing(gen_dataset(sp, t), lam)
        pruned = prune(est, se.delta, se.eps, lam)
        assert matrix_mse(pruned.s_hat, t) < matrix_mse(est.s_hat, t)


def test_lowrank_path_matches_full():
    _, _, data = _data(30, 600, seed=4)
    lam = 0.05
    full = solve_matrix_sensing(data, lam, tol=1e-9, method="full")
    low = solve_matrix_sensing(data, lam, tol=1e-9, method="lowrank", rank_hint=4)
    assert low.opt_residual <= 1e-9
    assert low.objective == pytest.approx(full.objective, rel=1e-8)
    assert np.allclose(low.eigvals_hat, full.eigvals_hat, atol=1e-5)
    assert low.rank == full.rank


def test_lowrank_method_errors():
    _, _, goe = _data(6, 80, mode="goe_universal")
    with pytest.raises(InvalidSpecError):
        solve_matrix_sensing(goe, 0.1, method="lowrank")
    with pytest.raises(InvalidSpecError):
        solve_matrix_sensing(goe, 0.1, method="newton")
