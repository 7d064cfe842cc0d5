import math
from itertools import product

import numpy as np
import pytest

from Script.coarse import (
    coarse_path,
    minimal_steps_bfs,
    path_length,
    random_telescope_residuals,
    telescope_check,
    verify_coarse_paths,
)
from Script.configuration import Domain, PoissonParams, sample_poisson
from Script.errors import InvalidParameterError
from Script.observables import box_count, tanh_observable
from Script.rng import stream


def test_path_to_the_origin_is_empty():
    path = coarse_path((0, 0), 3)
    assert path.n == 0
    assert path.violations() == []


def test_known_path_length():
    path = coarse_path((5, 3), 2)
    assert path.n == 3
    assert path_length((5, 3), 2) == 3
    assert path.waypoints == ((0, 0), (2, 2), (4, 2), (5, 3))
    assert path.violations() == []


def test_diagonal_targets_take_sup_norm_steps():
    assert coarse_path((-6, -6), 1).n == 6
    assert minimal_steps_bfs((-6, -6), 1) == 6
    assert coarse_path((9, -2, 4), 3).n == 3


@pytest.mark.parametrize("y,k", [((7,), 1), ((-9,), 4), ((3, -8), 3), ((1, 1), 5), ((-6, 5), 2), ((4, 4), 1)])
def test_path_is_minimal(y, k):
    n = minimal_steps_bfs(y, k)
    assert coarse_path(y, k).n == n
    assert n == math.ceil(max(abs(c) for c in y) / k)


def test_every_small_target_has_length_at_most_K_over_k():
    for y in product(range(-6, 7), repeat=2):
        for k in (1, 2, 3):
            assert coarse_path(y, k).n <= math.ceil(max(abs(c) for c in y) / k)


def test_small_box_of_targets_has_no_failures():
    assert verify_coarse_paths(6, (1, 2, 3), (1, 2)) == []


def test_path_rejects_non_lattice_targets():
    with pytest.raises(InvalidParameterError):
        coarse_path((1.5,), 2)
    with pytest.raises(InvalidParameterError):
        coarse_path((3,), 0)


def test_telescope_identity_holds_exactly():
    dom = Domain(2, 30.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(1).generator())
    u = box_count(2.0, d=2)
    assert telescope_check(u, (7, -4), 3, mu) == pytest.approx(0.0, abs=1e-12)


def test_random_telescope_residuals_vanish():
    dom = Domain(1, 40.0)
    u = tanh_observable(2.0, d=1)
    mus = [sample_poisson(dom, PoissonParams(1.0), stream(2, j).generator()) for j in range(20)]
    res = random_telescope_residuals(u, mus, stream(2, "shifts").generator())
    assert np.max(np.abs(res)) < 1e-12
