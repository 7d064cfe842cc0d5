import math

import numpy as np
import pytest
from scipy.stats import poisson

from Script.configuration import Domain, PoissonParams
from Script.errors import InvalidParameterError
from Script.estimators import BlockCounts
from Script.inequalities import (
    ADDITIVE_MEMBERS,
    EFRON_STEIN_FAMILY,
    BoundReport,
    SpectralProblem,
    check_chernoff,
    check_efron_stein,
    check_entropy,
    check_lemma42,
    check_spectral_AB,
    entropy_shift_growth,
    fit_decay_exponent,
    fit_exponential_rate,
    poisson_bad_logprob,
    random_good_counts,
    random_spectral_problem,
    spectral_AB_linear,
    two_point_eigenvalue,
    two_point_problem,
)
from Script.observables import smooth_bump, smooth_linear_observable
from Script.rng import stream


def test_bound_report_passes_within_three_sigma():
    assert BoundReport("x", {}, 1.2, 0.1, 1.0).passed
    assert not BoundReport("x", {}, 1.4, 0.1, 1.0).passed
    assert BoundReport("x", {}, 1.0, 0.0, 2.0).as_row()["margin"] == 1.0


def test_bad_logprob_matches_scipy_tails():
    log_low, log_high = poisson_bad_logprob(100.0, 0.2)
    assert math.exp(log_low) == pytest.approx(poisson.cdf(79, 100.0))
    assert math.exp(log_high) == pytest.approx(poisson.sf(120, 100.0))


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("l", [10.0, 100.0, 1000.0])
@pytest.mark.parametrize("delta", [0.1, 0.2, 0.3])
def test_chernoff_grid_holds(rho, l, delta):
    rep = check_chernoff(rho, l, 10 * l, delta)
    assert rep.passed
    assert 0.0 <= rep.lhs <= 1.0
    assert rep.extras["regime_valid"]


def test_chernoff_rejects_delta_outside_unit_interval():
    with pytest.raises(InvalidParameterError):
        check_chernoff(1.0, 10.0, 100.0, 1.5)


def test_random_good_counts_are_delta_good():
    counts = random_good_counts(50, 100.0, 0.1, stream(1).generator())
    assert np.all(np.abs(counts / 100.0 - 1.0) <= 0.1 + 1e-12)


@pytest.mark.parametrize("l", [10.0, 100.0])
@pytest.mark.parametrize("delta", [0.1, 0.2])
def test_entropy_bound_on_good_counts(l, delta):
    rng = stream(2, int(l), int(delta * 10)).generator()
    for _ in range(20):
        M = BlockCounts(10 * l, l, 1, random_good_counts(10, l, delta, rng))
        rep = check_entropy(M, 1.0, delta)
        assert rep.passed, rep.extras


def test_entropy_refuses_bad_counts():
    M = BlockCounts(20.0, 10.0, 1, [10, 20])
    with pytest.raises(InvalidParameterError):
        check_entropy(M, 1.0, 0.1)


def test_entropy_growth_is_quadratic_in_the_shift():
    growth, predicted = entropy_shift_growth(1.0, 1000.0, 0.1)
    assert growth == pytest.approx(predicted, rel=0.1)


@pytest.mark.parametrize("member", EFRON_STEIN_FAMILY)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_efron_stein_chain(member, n):
    rep = check_efron_stein(n, 1.0, member)
    assert rep.passed, rep.as_row()
    if member in ADDITIVE_MEMBERS:
        assert rep.extras["additivity_gap"] == pytest.approx(0.0, abs=1e-9)


def test_efron_stein_single_cosine_is_sharp():
    rep = check_efron_stein(1, 2.0, "sum_cos")
    assert rep.lhs == pytest.approx(rep.rhs, rel=1e-10)


def test_efron_stein_needs_small_tensor():
    with pytest.raises(InvalidParameterError):
        check_efron_stein(2, 1.0, "linear", d=2)


def test_spectral_linear_closed_form_holds():
    value, grad = smooth_bump(1.0)
    for l in (0.5, 1.0, 2.0):
        rep = spectral_AB_linear(value, grad, 1.0, 4.0, l)
        assert rep.passed
        assert rep.extras["ratio"] <= 1 / math.pi**2 + 1e-9


def test_spectral_monte_carlo_agrees_with_closed_form():
    dom = Domain(1, 20.0)
    u = smooth_linear_observable(1.0)
    value, grad = smooth_bump(1.0)
    rep = check_spectral_AB(u, 4.0, 1.0, 1500, stream(3), dom, PoissonParams(1.0))
    exact = spectral_AB_linear(value, grad, 1.0, 4.0, 1.0)
    assert abs(rep.lhs - exact.lhs) < 4 * rep.lhs_err + 1e-9
    assert rep.passed


def test_spectral_single_block_agrees_with_closed_form():
    # L = l: B conditions only on the total count of Q_L
    dom = Domain(1, 20.0)
    u = smooth_linear_observable(1.0)
    value, grad = smooth_bump(1.0)
    rep = check_spectral_AB(u, 2.0, 2.0, 1500, stream(4), dom, PoissonParams(1.0))
    exact = spectral_AB_linear(value, grad, 1.0, 2.0, 2.0)
    assert rep.params["L"] == rep.params["l"]
    assert abs(rep.lhs - exact.lhs) < 4 * rep.lhs_err + 1e-9
    assert rep.passed


def test_two_point_eigenvalue_matches_closed_form():
    problem = two_point_problem(1.0, 0.5)
    eps = 0.4 * problem.eps_max()
    rep = check_lemma42(problem, eps)
    assert rep.lhs == pytest.approx(two_point_eigenvalue(1.0, 0.5, eps), rel=1e-9)
    assert rep.passed


def test_random_spectral_problems_satisfy_the_bound():
    rng = stream(4).generator()
    for _ in range(30):
        problem = random_spectral_problem(6, rng)
        rep = check_lemma42(problem, 0.4 * problem.eps_max())
        assert rep.passed, rep.extras


def test_lemma42_rejects_large_eps():
    problem = two_point_problem(1.0, 0.5)
    with pytest.raises(InvalidParameterError):
        check_lemma42(problem, problem.eps_max())


def test_spectral_problem_validates_its_inputs():
    with pytest.raises(InvalidParameterError):
        SpectralProblem(np.eye(2), np.array([1.0, -1.0]))
    with pytest.raises(InvalidParameterError):
        SpectralProblem(np.zeros((2, 2)), np.array([1.0, 1.0]))


def test_decay_exponent_of_a_power_law():
    series = [(t, 3.0 * t**-0.5, 0.0) for t in (1.0, 2.0, 4.0, 8.0)]
    slope, _ = fit_decay_exponent(series)
    assert slope == pytest.approx(-0.5)


def test_decay_fit_drops_non_positive_points():
    series = [(1.0, 1.0, 0.1), (2.0, -0.1, 0.1), (4.0, 0.25, 0.025)]
    slope, _ = fit_decay_exponent(series)
    assert slope == pytest.approx(-1.0)


def test_exponential_rate_fit():
    xs = [1.0, 2.0, 3.0]
    slope, _, intercept = fit_exponential_rate(xs, [math.exp(-2 * x + 1) for x in xs], [0.0] * 3)
    assert slope == pytest.approx(-2.0)
    assert intercept == pytest.approx(1.0)
