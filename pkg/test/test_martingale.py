import math

import numpy as np
import pytest

from Script.configuration import Configuration, Domain, PoissonParams, sample_poisson
from Script.errors import InvalidParameterError
from Script.martingale import (
    alpha,
    bracket_isometry_check,
    geometric_grid,
    hitting_times,
    multiscale_functional,
    regularized_profile,
    second_moment_profile,
    spatial_martingale,
    void_indicator_conditional,
    void_indicator_second_moment,
)
from Script.observables import box_count, void_indicator
from Script.rng import stream

RHO = 1.0


def test_hitting_times_use_the_sup_norm():
    dom = Domain(2, 10.0)
    mu = Configuration(dom, np.array([[0.3, -0.1], [9.0, 1.0]]))
    tau = hitting_times(box_count(1.0, d=2), mu)
    assert np.allclose(tau, [0.6, 2.0])


def test_geometric_grid_with_zero_start():
    grid = geometric_grid(0.0, 1.0, 4)
    assert np.allclose(grid, [0.0, 0.25, 0.5, 1.0])
    with pytest.raises(InvalidParameterError):
        geometric_grid(1.0, 0.5, 3)


def test_void_second_moment_closed_form_limits():
    p0 = math.exp(-RHO)
    assert void_indicator_second_moment(1.0, 0.0, RHO, 1) == pytest.approx(0.0, abs=1e-15)
    assert void_indicator_second_moment(1.0, 1.0, RHO, 1) == pytest.approx(p0 * (1 - p0))
    assert void_indicator_second_moment(1.0, 5.0, RHO, 1) == void_indicator_second_moment(1.0, 1.0, RHO, 1)


def test_martingale_path_matches_void_closed_form():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    mu = Configuration(dom, np.array([[0.4], [3.0]]))
    path = spatial_martingale(f, mu, [0.0, 0.5, 1.0], 3000, stream(1), PoissonParams(RHO))
    for s, v in zip(path.s, path.values):
        exact = void_indicator_conditional(mu, 1.0, float(s), RHO)
        p = exact + math.exp(-RHO)
        assert abs(v - exact) <= 4 * math.sqrt(max(p * (1 - p), 1e-12) / 3000) + 1e-12


def test_martingale_ends_at_the_observable():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    mu = sample_poisson(dom, PoissonParams(RHO), stream(2).generator())
    path = spatial_martingale(f, mu, [0.0, 12.0], 4, stream(3), PoissonParams(RHO))
    assert path.values[-1] == pytest.approx(f(mu))
    assert np.all(np.isfinite(path.jumps[path.hitting_times <= 12.0]))


def test_second_moment_profile_matches_closed_form():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    profile = second_moment_profile(f, [0.25, 0.75], 600, 4, stream(4), dom, PoissonParams(RHO))
    for s, res in zip((0.25, 0.75), profile):
        assert abs(res.z_against(void_indicator_second_moment(1.0, s, RHO, 1))) < 4


def test_bracket_matches_second_moment():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    rep = bracket_isometry_check(f, 0.5, 400, 4, stream(5), dom, PoissonParams(RHO))
    assert abs(rep.z) < 4
    assert rep.rhs == pytest.approx(void_indicator_second_moment(1.0, 0.5, RHO, 1), abs=5 * rep.rhs_err + 1e-3)


def test_bracket_without_declared_mean():
    dom = Domain(1, 10.0)
    f = box_count(1.0)
    rep = bracket_isometry_check(f, 1.0, 300, 4, stream(6), dom, PoissonParams(RHO), eps_reg=0.1)
    assert abs(rep.z) < 4


def test_regularized_profile_of_a_line():
    grid = np.linspace(0.0, 3.0, 31)
    assert regularized_profile(grid, grid, 1.0, 0.0) == pytest.approx(1.0)
    # (2/eps^2) int_0^eps (eps - r)(s + r) dr = s + eps/3
    assert regularized_profile(grid, grid, 1.0, 0.3) == pytest.approx(1.1)


def test_multiscale_forms_agree_with_flat_weight():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    rep = multiscale_functional(f, 0.25, 1.0, math.inf, 8, 50, 3, stream(7), dom, PoissonParams(RHO))
    assert np.allclose(alpha(np.array([0.0, 3.0]), math.inf), 1.0)
    assert rep.integrated == pytest.approx(rep.second_moment)
    assert rep.difference == pytest.approx(0.0, abs=1e-12)


def test_multiscale_forms_agree_with_exponential_weight():
    dom = Domain(1, 10.0)
    f = void_indicator(1.0, RHO)
    rep = multiscale_functional(f, 0.25, 1.0, 1.0, 16, 200, 4, stream(8), dom, PoissonParams(RHO))
    tol = 3 * rep.max_stderr * math.e + 0.02 * abs(rep.integrated) + 1e-12
    assert abs(rep.difference) <= tol
