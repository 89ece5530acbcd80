import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalelab.errors import UnsupportedRegimeError
from scalelab.model_gen import InvalidSpecError, ProblemSpec, diagonal_quadratic_target
from scalelab.rates import (FACTOR, Phase, bo_rate, classify, crossover_n_eff, lambda_opt, n_cross, phase_order,
                            rho)
from scalelab.state_evolution import MCConfig, se_quadratic_bayes, se_quadratic_erm


def _diag(d, n, lam, gamma=1.0, delta=0.5):
    return ProblemSpec("diagonal", int(d), int(n), gamma, delta, lam=lam)


def _quad(d, n_eff, lam, gamma=1.0, delta=0.5):
    return ProblemSpec("quadratic", int(d), int(round(n_eff * d)), gamma, delta, lam=lam)


def test_phase_iv_example():
    rep = classify(_diag(10**6, 10**3, 1e-8))
    assert rep.phase is Phase.IV
    assert rep.rate_exponents["n_eff"] == pytest.approx(-0.5)
    assert rep.constant_source == "order-only" and rep.predicted_risk is None
    assert rep.to_dict()["phase"] == "IV"


def test_strong_regularization_plateau():
    n, d = 1000, 10**4
    rep = classify(_diag(d, n, 100 * n / np.sqrt(d)))
    assert rep.phase is Phase.IB and rep.order == 1.0
    assert all(v == 0 for v in rep.rate_exponents.values())


def test_interpolation_peak():
    rep = classify(_diag(1000, 1000, 1e-3))
    assert rep.phase is Phase.PEAK
    assert rep.rate_exponents["lambda"] == pytest.approx(-2 / 3)
    q = classify(_quad(100, 100, 1e-3))
    assert q.phase is Phase.PEAK and q.constant_source == "appendix:peak"
    assert q.predicted_risk == pytest.approx(2 * (3 * np.pi * 0.25 / 32) ** (2 / 3) * 1e-3 ** (-2 / 3))


def test_other_phases():
    d = 10**4
    assert classify(_diag(d, 3, 1e-6)).phase is Phase.IA
    assert classify(_diag(d, 100 * d, 1e-3)).phase is Phase.VIA
    assert classify(_quad(30, 1e6, 1e-3)).phase is Phase.VIB
    q = classify(_quad(30, 1e6, 1e-3))
    assert q.predicted_risk == pytest.approx(0.5 * 30**2 / (8 * 30 * 1e6))
    # III: sqrt(N/d) << lam << N / d^(gamma + 1/2); II above that
    N = 1e9
    assert classify(_diag(100, N, 1e5)).phase is Phase.III
    assert classify(_diag(100, N, 1e7)).phase is Phase.II
    assert classify(_diag(100, N, 1e9)).phase is Phase.IB


def test_noiseless_is_unsupported():
    with pytest.raises(UnsupportedRegimeError):
        classify(_diag(100, 100, 0.1, delta=0.0))
    with pytest.raises(UnsupportedRegimeError):
        bo_rate(_diag(100, 100, 0.1, delta=0.0))


def test_n_cross_examples():
    assert crossover_n_eff("diagonal", np.exp(10), 1.0) == pytest.approx(1000.0)
    assert n_cross(_quad(1000, 10, 0.1)) == pytest.approx(1000 ** (4 / 9))
    with pytest.raises(ValueError):
        crossover_n_eff("quadratic", 100, 5 / 14)
    with pytest.raises(InvalidSpecError):
        ProblemSpec("quadratic", 100, 100, 5 / 14, 0.5)


def test_rho():
    assert rho("diagonal", np.exp(-2)) == pytest.approx(0.5)
    assert rho("quadratic", 0.5**2.5) == pytest.approx(0.5)


def test_lambda_opt_order():
    value, tag = lambda_opt(_diag(1000, 1000, 0.0))
    assert value == pytest.approx(1.0)
    assert lambda_opt(_diag(10**6, 100, 0.0))[1] == "O"
    assert lambda_opt(_diag(100, 10**6, 0.0))[1] == "O"
    assert lambda_opt(_diag(10**4, 10**6, 0.0))[1] == "Theta~"


def test_bo_rate_branches():
    d = 100
    assert bo_rate(_quad(d, d**3, 0.0)).phase is Phase.VIB
    rep = bo_rate(_quad(d, d, 0.0))
    assert rep.phase is Phase.IV and rep.rate_exponents["n_eff"] == pytest.approx(-0.5)
    assert bo_rate(_quad(d, 2, 0.0)).phase is Phase.IA
    assert bo_rate(_quad(d, d * d, 0.0)).phase is Phase.BOUNDARY


@given(st.floats(0.0, 8.0), st.floats(1.0, 5.0), st.floats(-8.0, 4.0), st.floats(0.55, 3.0),
       st.sampled_from(["diagonal", "quadratic"]))
@settings(max_examples=300, deadline=None)
def test_partition(log_n, log_d, log_lam, gamma, model):
    d = int(10**log_d)
    n_eff = 10**log_n
    n = n_eff if model == "diagonal" else n_eff * d
    if n > 2**62:
        return
    spec = ProblemSpec(model, d, int(max(n, 1)), gamma, 0.5, lam=10**log_lam)
    a, b = classify(spec), classify(spec)
    assert isinstance(a.phase, Phase) and a.phase is b.phase
    if a.phase is not Phase.BOUNDARY:
        assert a.order is not None and a.order > 0


def _ratio(p, q, model, N, d, lam, gamma):
    return phase_order(p, model, N, d, lam, gamma) / phase_order(q, model, N, d, lam, gamma)


@given(st.floats(2.0, 6.0), st.floats(0.6, 2.5), st.sampled_from(["diagonal", "quadratic"]))
@settings(max_examples=100, deadline=None)
def test_black_boundaries_are_continuous(log_d, gamma, model):
    d = 10**log_d
    N = d ** (2 * gamma + 1)  # far above d^(2 gamma)
    # Ib / II at lam = N / sqrt(d)
    assert 0.25 <= _ratio(Phase.IB, Phase.II, model, N, d, N / np.sqrt(d), gamma) <= 4
    # II / III at lam = N / d^(gamma + 1/2)
    assert 0.25 <= _ratio(Phase.II, Phase.III, model, N, d, N / d ** (gamma + 0.5), gamma) <= 4
    # III / VIb at lam = sqrt(N / d)
    assert 0.25 <= _ratio(Phase.III, Phase.VIB, model, N, d, np.sqrt(N / d), gamma) <= 4
    # VIa / VIb at N = d^(2 gamma)
    assert 0.25 <= _ratio(Phase.VIA, Phase.VIB, model, d ** (2 * gamma), d, 1e-9, gamma) <= 4
    # IV / V at the crossover
    nc = crossover_n_eff(model, d, gamma)
    if nc < d / FACTOR:
        assert 0.25 <= _ratio(Phase.IV, Phase.V, model, nc, d, 1e-9, gamma) <= 4


def test_red_boundaries_are_discontinuous():
    d, gamma = 1e4, 1.0
    # lam = sqrt(N/d) inside d << N << d^(2 gamma): II (slow) against VIa (fast)
    N = d**1.5
    r = _ratio(Phase.II, Phase.VIA, "diagonal", N, d, np.sqrt(N / d), gamma)
    assert not 0.25 <= r <= 4
    # N = d with small lam: the peak against both neighbours
    for other in (Phase.V, Phase.VIA):
        r = _ratio(Phase.PEAK, other, "quadratic", d, d, 1e-4, gamma)
        assert not 0.25 <= r <= 4


def test_near_boundary_is_labelled():
    d = 10**4
    # lam neither well below nor well above sqrt(n_eff/d) near n_eff = d
    assert classify(_diag(d, 2 * d, 0.5)).phase is Phase.BOUNDARY
    # n_eff at d^(2 gamma), between VIa and VIb
    assert classify(_diag(100, 10**4, 1e-6)).phase is Phase.BOUNDARY
    assert classify(_diag(100, 10**4, 1e-6)).order is None


def test_lambda_opt_grid_search():
    d = 100
    t = diagonal_quadratic_target(d, 1.0)
    lams = np.logspace(-1.5, 1.5, 13)
    risks = [se_quadratic_erm(ProblemSpec("quadratic", d, 10**4, 1.0, 0.5, lam=lam), t, MCConfig(10, seed=0)).risk
             for lam in lams]
    best = lams[int(np.argmin(risks))]
    target = lambda_opt(ProblemSpec("quadratic", d, 10**4, 1.0, 0.5))[0]
    assert target / 3 <= best <= 3 * target


@pytest.mark.slow
def test_lambda_opt_matches_bayes_in_phase_iv():
    d = 400
    spec = ProblemSpec("quadratic", d, 10 * d, 1.0, 0.5)
    assert classify(spec.replace(lam=1e-3)).phase is Phase.IV
    t = diagonal_quadratic_target(d, 1.0)
    lam0 = lambda_opt(spec)[0]
    lams = lam0 * np.logspace(-0.5, 0.5, 5)
    erm = min(se_quadratic_erm(spec.replace(lam=lam), t, MCConfig(5, seed=0)).risk for lam in lams)
    bayes = se_quadratic_bayes(spec, t, MCConfig(5, seed=0)).risk
    assert 1.0 <= erm / bayes <= 2.0
