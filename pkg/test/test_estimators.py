import numpy as np
import pytest

from Script.configuration import Box, Domain, PoissonParams, count, sample_poisson
from Script.dynamics import SchemeParams
from Script.errors import InfeasibleScaleError, InvalidParameterError
from Script.estimators import (
    BlockCounts,
    block_counts,
    blocks_per_axis,
    check_scales,
    conditional_A_K,
    conditional_B,
    estimate_mean_ut,
    estimate_ut,
    estimate_var_ut,
    is_delta_good,
    localization_gap,
    mean_result,
    rejection_given_total,
    sample_covariance,
    sample_given_counts,
    second_moment,
)
from Script.fields import builtin_constant
from Script.observables import box_count
from Script.oracle import box_localization_gap, box_var_exact_t
from Script.rng import stream

FIELD = builtin_constant(0.5)
EXACT = SchemeParams()


def test_var_at_time_zero_is_the_poisson_variance():
    dom = Domain(1, 20.0)
    u = box_count(1.0, rho=1.0)
    res = estimate_var_ut(u, FIELD, 0.0, EXACT, 2000, 1, stream(1), dom, PoissonParams(1.0))
    assert abs(res.z_against(1.0)) < 4


def test_var_matches_heat_kernel_oracle():
    dom = Domain(1, 30.0)
    u = box_count(1.0)
    res = estimate_var_ut(u, FIELD, 1.0, EXACT, 1500, 2, stream(2), dom, PoissonParams(1.0))
    # diffusivity 1/2: displacement variance 2 c t = t
    exact = box_var_exact_t(1.0, 1.0, 1.0, 1)
    assert abs(res.z_against(exact)) < 4


def test_var_estimate_does_not_depend_on_worker_count():
    dom = Domain(1, 20.0)
    u = box_count(1.0)
    one = estimate_var_ut(u, FIELD, 0.5, EXACT, 60, 2, stream(3), dom, PoissonParams(1.0), workers=1)
    four = estimate_var_ut(u, FIELD, 0.5, EXACT, 60, 2, stream(3), dom, PoissonParams(1.0), workers=4)
    assert one == four


def test_var_rejects_tiny_budgets():
    with pytest.raises(InvalidParameterError):
        estimate_var_ut(box_count(1.0), FIELD, 1.0, EXACT, 1, 1, stream(1), Domain(1, 10.0), PoissonParams(1.0))


def test_mean_is_conserved_by_the_dynamics():
    dom = Domain(1, 20.0)
    res = estimate_mean_ut(box_count(1.0), FIELD, 2.0, EXACT, 800, 1, stream(4), dom, PoissonParams(1.5))
    assert abs(res.z_against(1.5)) < 4


def test_estimate_ut_at_time_zero_is_the_observable():
    dom = Domain(1, 10.0)
    mu = sample_poisson(dom, PoissonParams(2.0), stream(5).generator())
    u = box_count(1.0)
    assert estimate_ut(u, mu, FIELD, 0.0, EXACT, 3, stream(5, "x")) == u(mu)


def test_conditional_on_the_whole_domain_is_unconditional():
    dom = Domain(1, 8.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(6).generator())
    u = box_count(1.0)
    s = stream(6, "cond")
    a = conditional_A_K(u, FIELD, 1.0, mu, 20.0, EXACT, 5, 3, s, PoissonParams(1.0))
    assert a == estimate_ut(u, mu, FIELD, 1.0, EXACT, 3, s.child("cond", 0))


def test_conditional_at_time_zero_ignores_the_outside():
    dom = Domain(1, 20.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(7).generator())
    u = box_count(1.0)
    a = conditional_A_K(u, FIELD, 0.0, mu, 2.0, EXACT, 4, 1, stream(7, "c"), PoissonParams(1.0))
    assert a == u(mu)


def test_localization_gap_matches_oracle():
    dom = Domain(1, 40.0)
    u = box_count(1.0)
    res = localization_gap(u, FIELD, 1.0, 2.0, EXACT, 1500, 2, stream(8), dom, PoissonParams(1.0))
    exact = box_localization_gap(1.0, 1.0, 1.0, 2.0)
    assert abs(res.z_against(exact)) < 4


def test_second_moment_of_box_count():
    dom = Domain(1, 20.0)
    res = second_moment(box_count(1.0), 2000, stream(9), dom, PoissonParams(1.0))
    # E[N^2] = rho + rho^2 for N ~ Poisson(rho)
    assert abs(res.z_against(2.0)) < 4


def test_block_counts_tile_the_outer_cube():
    dom = Domain(2, 10.0)
    mu = sample_poisson(dom, PoissonParams(3.0), stream(10).generator())
    M = block_counts(mu, 4.0, 1.0, center=(5.0, 5.0))
    assert M.q == 16
    assert M.total == count(mu, Box.cube((5.0, 5.0), 4.0))
    assert sum(count(mu, M.block(i)) for i in range(M.q)) == M.total


def test_blocks_need_l_to_divide_L():
    assert blocks_per_axis(4.0, 0.5) == 8
    with pytest.raises(InfeasibleScaleError) as err:
        blocks_per_axis(1.0, 0.3)
    assert err.value.constraint == "l | L"


def test_delta_good_blocks():
    M = BlockCounts(20.0, 10.0, 1, [9, 11])
    assert is_delta_good(M, 1.0, 0.1)
    assert not is_delta_good(M, 1.0, 0.05)


def test_sampling_given_counts_reproduces_the_counts():
    dom = Domain(2, 10.0)
    M = BlockCounts(4.0, 2.0, 2, [0, 3, 1, 5], center=(5.0, 5.0))
    mu = sample_given_counts(M, dom, PoissonParams(1.0), stream(11).generator())
    again = block_counts(mu, 4.0, 2.0, center=(5.0, 5.0))
    assert again.counts.tolist() == [0, 3, 1, 5]


def test_block_conditional_of_the_outer_count_is_the_total():
    dom = Domain(1, 20.0)
    M = BlockCounts(4.0, 1.0, 1, [1, 0, 2, 1])
    u = box_count(4.0)
    val = conditional_B(u, M, FIELD, 0.0, EXACT, 3, 1, stream(12), dom, PoissonParams(1.0))
    assert val == 4.0


def test_rejection_sampler_conditions_on_the_count():
    dom = Domain(1, 3.0)
    box = Box.cube((0.0,), 1.0)
    val = rejection_given_total(box_count(1.0), box, 2, 20, dom, PoissonParams(1.0), stream(13).generator())
    assert val == 2.0


def test_covariance_of_independent_samples_is_small():
    rng = stream(14).generator()
    res = sample_covariance(rng.normal(size=2000), rng.normal(size=2000))
    assert abs(res.z_against(0.0)) < 4


def test_check_scales_names_the_violated_constraint():
    check_scales(1, 40.0, 8.0, 4.0)
    with pytest.raises(InfeasibleScaleError) as err:
        check_scales(1, 30.0, 8.0, 4.0)
    assert err.value.constraint.startswith("L_sim")
    with pytest.raises(InfeasibleScaleError) as err:
        check_scales(1, 10.0, 8.0, 0.0)
    assert err.value.constraint == "K <= L_sim/2"


def test_block_counts_reject_wrong_length():
    with pytest.raises(InvalidParameterError):
        BlockCounts(4.0, 1.0, 1, np.zeros(3))


def test_block_conditional_matches_rejection_after_evolution():
    # with L = l a single block carries the whole count of Q_2
    dom = Domain(1, 8.0)
    poisson = PoissonParams(1.0)
    u = box_count(1.0)
    M = BlockCounts(2.0, 2.0, 1, [3])
    direct = conditional_B(u, M, FIELD, 0.5, EXACT, 2000, 1, stream(15), dom, poisson)
    reference = rejection_given_total(
        u, Box.cube((0.0,), 2.0), 3, 2000, dom, poisson, stream(16).generator(), fld=FIELD, t=0.5, params=EXACT
    )
    assert abs(direct - reference) < 0.2


def test_rejection_needs_a_field_to_evolve():
    with pytest.raises(InvalidParameterError):
        rejection_given_total(box_count(1.0), Box.cube((0.0,), 1.0), 1, 5, Domain(1, 3.0), PoissonParams(1.0),
                              stream(17).generator(), t=0.5)


def test_localization_conditional_keeps_the_mean():
    dom = Domain(1, 10.0)
    poisson = PoissonParams(1.0)
    u = box_count(1.0)
    samples = []
    for j in range(400):
        mu = sample_poisson(dom, poisson, stream(18, j).generator())
        samples.append(conditional_A_K(u, FIELD, 0.5, mu, 2.0, EXACT, 1, 1, stream(18, j, "cond"), poisson))
    assert abs(mean_result(samples, 1, 18).z_against(1.0)) < 4


def test_block_conditional_keeps_the_mean():
    dom = Domain(1, 10.0)
    poisson = PoissonParams(1.0)
    u = box_count(1.0)
    samples = []
    for j in range(400):
        mu = sample_poisson(dom, poisson, stream(19, j).generator())
        M = block_counts(mu, 2.0, 1.0)
        samples.append(conditional_B(u, M, FIELD, 0.5, EXACT, 1, 1, stream(19, j, "cond"), dom, poisson))
    assert abs(mean_result(samples, 1, 19).z_against(1.0)) < 4
