import numpy as np
import pytest

from Script.configuration import Box, Configuration, Domain, PoissonParams, count, sample_poisson
from Script.dynamics import (
    Scheme,
    SchemeParams,
    _chain_step,
    _PairCache,
    _run_chain,
    edge_conductance,
    evolve,
    evolve_pair,
    evolve_trajectory,
    trajectory_rows,
)
from Script.errors import InvalidParameterError, StabilityError
from Script.estimators import sample_covariance
from Script.fields import CoefficientField, builtin_constant, builtin_lonely_particle, validate_field
from Script.observables import box_count
from Script.oracle import box_var_exact_t
from Script.rng import stream


def test_builtin_fields_pass_validation():
    for fld in (builtin_constant(0.5), builtin_lonely_particle()):
        report = validate_field(fld, 200, stream(4, fld.name).generator())
        assert report.ok, report.messages[:3]


def test_lonely_particle_counts_the_center():
    fld = builtin_lonely_particle()
    dom = Domain(1, 10.0)
    alone = Configuration(dom, np.array([[5.0]]))
    crowded = Configuration(dom, np.array([[5.0], [5.5]]))
    assert fld.rule(np.zeros((1, 1)))[0, 0] == 2.0
    assert edge_conductance(fld, Configuration.empty(dom), [5.0], [5.1]) == 2.0
    assert edge_conductance(fld, alone, [5.5], [5.6]) == 1.0
    assert edge_conductance(fld, crowded, [2.0], [2.1]) == 2.0


def test_edge_conductance_is_symmetric():
    fld = builtin_lonely_particle()
    dom = Domain(2, 10.0)
    env = sample_poisson(dom, PoissonParams(0.5), stream(8).generator())
    a, b = np.array([3.0, 3.0]), np.array([3.1, 3.0])
    assert edge_conductance(fld, env, a, b) == edge_conductance(fld, env, b, a)


def test_stability_bound_is_enforced():
    fld = builtin_lonely_particle()
    with pytest.raises(StabilityError):
        SchemeParams(Scheme.CONDUCTANCE_CHAIN, dt=0.01, eps=0.1).check_stability(fld, 1)
    SchemeParams.stable(0.1, fld, 2).check_stability(fld, 2)


def test_mesh_above_limit_is_rejected():
    with pytest.raises(StabilityError):
        SchemeParams(Scheme.CONDUCTANCE_CHAIN, dt=1e-4, eps=0.2)


def test_exact_gaussian_needs_constant_field():
    dom = Domain(1, 10.0)
    mu = Configuration(dom, np.array([[1.0]]))
    with pytest.raises(InvalidParameterError):
        evolve(mu, builtin_lonely_particle(), 1.0, SchemeParams(), stream(1).generator())


def test_evolve_at_zero_time_is_identity():
    dom = Domain(2, 10.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(2).generator())
    assert evolve(mu, builtin_constant(0.5), 0.0, SchemeParams(), stream(3).generator()) is mu


def test_exact_gaussian_displacement_variance():
    dom = Domain(1, 1000.0, "free")
    mu = Configuration(dom, np.full((4000, 1), 500.0))
    out = evolve(mu, builtin_constant(0.5), 2.0, SchemeParams(), stream(5).generator())
    var = np.var(out.points[:, 0] - 500.0, ddof=1)
    # displacement variance 2 c t = 2; relative stderr sqrt(2/n)
    assert abs(var - 2.0) < 4 * 2.0 * np.sqrt(2.0 / 4000)


def test_chain_matches_constant_diffusivity():
    dom = Domain(1, 1000.0, "free")
    mu = Configuration(dom, np.full((2000, 1), 500.0))
    fld = builtin_constant(1.0)
    params = SchemeParams.stable(0.1, fld, 1)
    out = evolve(mu, fld, 0.5, params, stream(6).generator())
    var = np.var(out.points[:, 0] - 500.0, ddof=1)
    assert abs(var - 1.0) < 4 * np.sqrt(2.0 / 2000)


def test_chain_conserves_particle_number_and_mesh():
    dom = Domain(2, 6.0)
    fld = builtin_lonely_particle()
    mu = sample_poisson(dom, PoissonParams(1.0), stream(7).generator())
    out = evolve(mu, fld, 0.05, SchemeParams.stable(0.1, fld, 2), stream(8).generator())
    assert len(out) == len(mu)
    steps = np.abs(dom.displacement(out.points, np.zeros(2)) - dom.displacement(mu.points, np.zeros(2)))
    assert np.allclose(np.round(steps / 0.1) * 0.1, steps, atol=1e-9)


def test_trajectory_requires_increasing_times():
    dom = Domain(1, 10.0)
    mu = Configuration(dom, np.array([[1.0]]))
    with pytest.raises(InvalidParameterError):
        evolve_trajectory(mu, builtin_constant(0.5), [1.0, 0.5], SchemeParams(), stream(1).generator())


def test_trajectory_rows_cover_every_snapshot():
    dom = Domain(2, 10.0)
    mu = sample_poisson(dom, PoissonParams(0.3), stream(9).generator())
    traj = evolve_trajectory(mu, builtin_constant(0.5), [0.5, 1.0], SchemeParams(), stream(10).generator())
    rows = trajectory_rows(traj)
    assert len(rows) == 3 * len(mu)
    assert traj.times == [0.5, 1.0]


def test_half_identity_field_fails_ellipticity():
    broken = CoefficientField("half_identity", rule=lambda offsets: 0.5 * np.eye(offsets.shape[1]))
    report = validate_field(broken, 50, stream(13).generator())
    assert not report.ok
    assert report.ellipticity_violations == 50
    assert report.locality_violations == 0


def test_lonely_particle_survives_a_thousand_locality_samples():
    report = validate_field(builtin_lonely_particle(), 1000, stream(14).generator(), domain=Domain(1, 10.0))
    assert report.locality_violations == 0
    assert report.ok


def test_evolve_pair_replicas_start_from_the_same_configuration():
    dom = Domain(1, 20.0)
    fld = builtin_constant(0.5)
    mu0 = sample_poisson(dom, PoissonParams(1.0), stream(15).generator())
    a, b = evolve_pair(mu0, fld, 0.0, SchemeParams(), stream(16))
    assert a is mu0 and b is mu0

    a, b = evolve_pair(mu0, fld, 1.0, SchemeParams(), stream(16))
    assert len(a) == len(b) == len(mu0)
    assert np.array_equal(a.points, evolve(mu0, fld, 1.0, SchemeParams(), stream(16).child("a").generator()).points)
    assert np.array_equal(b.points, evolve(mu0, fld, 1.0, SchemeParams(), stream(16).child("b").generator()).points)
    assert not np.array_equal(a.points, b.points)


def test_replica_covariance_is_the_variance_of_the_conditional_mean():
    # Cov(u(A), u(B)) = Var[E[u_t | mu_0]] = rho ||f_t||^2, well below Var[u_t] = Var[u] = 1
    dom = Domain(1, 20.0)
    fld = builtin_constant(0.5)
    u = box_count(1.0)
    a_vals, b_vals = [], []
    for j in range(2000):
        mu0 = sample_poisson(dom, PoissonParams(1.0), stream(17, j).generator())
        a, b = evolve_pair(mu0, fld, 1.0, SchemeParams(), stream(17, j, "pair"))
        a_vals.append(u(a))
        b_vals.append(u(b))
    cov = sample_covariance(a_vals, b_vals)
    assert abs(cov.z_against(box_var_exact_t(1.0, 1.0, 1.0, 1))) < 4
    assert cov.estimate < 0.6


def _tree_counts(points, eps, domain):
    from scipy.spatial import cKDTree

    n, d = points.shape
    mids = []
    for k in range(d):
        for sign in (1.0, -1.0):
            m = points.copy()
            m[:, k] += sign * 0.5 * eps
            mids.append(m)
    mids = domain.wrap(np.concatenate(mids))
    tree = cKDTree(points, boxsize=domain.side if domain.periodic else None)
    return tree.query_ball_point(mids, r=1.0, return_length=True)


def test_pair_cache_counts_match_a_fresh_tree():
    dom = Domain(2, 9.0)
    rng = stream(18).generator()
    points = sample_poisson(dom, PoissonParams(1.5), rng).points
    cache = _PairCache(points, 0.1, dom)
    assert np.array_equal(cache.midpoint_counts(points), _tree_counts(points, 0.1, dom))

    # small drift reuses the list, a large one rebuilds it
    nudged = dom.wrap(points + rng.uniform(-0.6, 0.6, size=points.shape))
    assert np.array_equal(cache.midpoint_counts(nudged), _tree_counts(nudged, 0.1, dom))
    assert cache.rebuilds == 1
    moved = dom.wrap(nudged + rng.uniform(-3.0, 3.0, size=points.shape))
    assert np.array_equal(cache.midpoint_counts(moved), _tree_counts(moved, 0.1, dom))
    assert cache.rebuilds == 2


def test_cached_chain_follows_the_tree_chain_step_for_step():
    dom = Domain(1, 15.0)
    fld = builtin_lonely_particle()
    params = SchemeParams.stable(0.1, fld, 1)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(19).generator())
    cached = _run_chain(np.array(mu.points), fld, 0.5, params, dom, stream(20).generator())

    points = np.array(mu.points)
    rng = stream(20).generator()
    n_steps = int(np.ceil(0.5 / params.dt - 1e-9))
    for _ in range(n_steps):
        points = _chain_step(points, fld, 0.5 / n_steps, params.eps, dom, rng)
    assert np.array_equal(cached, points)


def _spread_out(n: int, spacing: float) -> Configuration:
    dom = Domain(1, n * spacing, "free")
    return Configuration(dom, (spacing * (np.arange(n) + 0.5))[:, None])


def test_isolated_lonely_particle_variance_extrapolates_to_four():
    # far-apart particles never meet, so each sees a = 2 and moves with variance 2 a t
    mu = _spread_out(12000, 40.0)
    fld = builtin_lonely_particle()
    meshes = [0.1, 0.05, 0.025]
    variances = []
    for i, eps in enumerate(meshes):
        out = evolve(mu, fld, 1.0, SchemeParams.stable(eps, fld, 1), stream(21, i).generator())
        shift = out.points[:, 0] - mu.points[:, 0]
        variances.append(float(np.mean(shift**2)))
    assert all(abs(v / 4.0 - 1.0) < 0.05 for v in variances)
    _, intercept = np.polyfit(meshes, variances, 1)
    assert abs(intercept / 4.0 - 1.0) < 0.05


def test_chain_and_gaussian_agree_on_displacement_moments():
    mu = _spread_out(20000, 1.0)
    fld = builtin_constant(0.5)
    chain = evolve(mu, fld, 1.0, SchemeParams.stable(0.05, fld, 1), stream(22).generator())
    gauss = evolve(mu, fld, 1.0, SchemeParams(), stream(23).generator())
    for out in (chain, gauss):
        shift = out.points[:, 0] - mu.points[:, 0]
        # 2ct = 1 and 3 (2ct)^2 = 3
        assert abs(np.mean(shift**2) - 1.0) < 4 * np.sqrt(2.0 / 20000)
        assert abs(np.mean(shift**4) - 3.0) < 4 * np.sqrt(96.0 / 20000)


def test_poisson_law_is_stationary_under_the_chain():
    dom = Domain(1, 20.0)
    fld = builtin_lonely_particle()
    params = SchemeParams.stable(0.1, fld, 1)
    counts = {0.0: [], 1.0: []}
    for j in range(120):
        mu0 = sample_poisson(dom, PoissonParams(1.0), stream(24, j).generator())
        mu1 = evolve(mu0, fld, 1.0, params, stream(24, j, "dynamics").generator())
        corner = float(stream(24, j, "box").generator().uniform(0.0, 20.0))
        box = Box.cube([corner], 2.0)
        counts[0.0].append(count(mu0, box))
        counts[1.0].append(count(mu1, box))
    for t, values in counts.items():
        values = np.asarray(values, dtype=float)
        n = values.size
        # Poisson(2): mean 2, variance 2, Var[(X - 2)^2] = 14 - 4
        assert abs(values.mean() - 2.0) < 3 * np.sqrt(2.0 / n), t
        assert abs(np.mean((values - 2.0) ** 2) - 2.0) < 3 * np.sqrt(10.0 / n), t
