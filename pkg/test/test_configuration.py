import numpy as np
import pytest

from Script.configuration import (
    Box,
    Configuration,
    Domain,
    PoissonParams,
    count,
    read_configuration_csv,
    read_configuration_json,
    resample_outside,
    restrict,
    restrict_complement,
    sample_poisson,
    transport,
    write_configuration_csv,
    write_configuration_json,
)
from Script.errors import InvalidParameterError
from Script.rng import RngStream, stream


def test_stream_children_are_reproducible_and_distinct():
    a = stream(7, "pair", 3).generator().random(4)
    b = RngStream(7).child("pair").child(3).generator().random(4)
    c = stream(7, "pair", 4).generator().random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_rejects_negative_key_parts():
    with pytest.raises(InvalidParameterError):
        RngStream(1).child(-1)


def test_domain_rejects_bad_dimension():
    with pytest.raises(InvalidParameterError):
        Domain(4, 10.0)


def test_periodic_wrap_stays_in_window():
    dom = Domain(1, 10.0)
    out = dom.wrap(np.array([[-1e-18], [10.0], [23.5]]))
    assert np.all((out >= 0) & (out < 10.0))
    assert out[2, 0] == pytest.approx(3.5)


def test_poisson_count_matches_density_on_average():
    dom = Domain(2, 10.0)
    params = PoissonParams(1.5)
    counts = [len(sample_poisson(dom, params, stream(11, j).generator())) for j in range(400)]
    mean = np.mean(counts)
    # Poisson(150): stderr of the mean over 400 draws is ~0.61
    assert abs(mean - 150.0) < 4 * np.sqrt(150.0 / 400)


def test_restrict_and_complement_partition_the_configuration():
    dom = Domain(2, 10.0)
    mu = sample_poisson(dom, PoissonParams(2.0), stream(3).generator())
    box = Box.cube((5.0, 5.0), 4.0)
    inside = restrict(mu, box)
    outside = restrict_complement(mu, box)
    assert len(inside) + len(outside) == len(mu)
    assert count(mu, box) == len(inside)


def test_box_wraps_around_the_torus():
    dom = Domain(1, 10.0)
    mu = Configuration(dom, np.array([[0.5], [9.5], [5.0]]))
    box = Box.cube((0.0,), 2.0)
    assert count(mu, box) == 2


def test_intersection_follows_the_torus():
    dom = Domain(2, 10.0)
    a = Box((9.0, 1.0), (11.0, 4.0))
    b = Box((0.0, 3.0), (2.0, 5.0))
    assert a.intersect(b) == Box((9.0, 3.0), (2.0, 4.0))
    assert a.intersect(b).is_empty
    wrapped = a.intersect(b, dom)
    assert wrapped == Box((10.0, 3.0), (11.0, 4.0))
    mu = Configuration(dom, np.array([[0.5, 3.5], [9.5, 3.5], [0.5, 1.5]]))
    assert count(mu, wrapped) == 1
    assert Box((0.0,), (20.0,)).intersect(Box((2.0,), (3.0,)), Domain(1, 10.0)) == Box((2.0,), (3.0,))


def test_intersection_in_two_pieces_is_refused():
    with pytest.raises(InvalidParameterError):
        Box((0.0,), (9.0,)).intersect(Box((8.0,), (11.0,)), Domain(1, 10.0))


def test_box_is_half_open():
    dom = Domain(1, 10.0, "free")
    mu = Configuration(dom, np.array([[1.0], [3.0]]))
    assert count(mu, Box((1.0,), (3.0,))) == 1


def test_transport_preserves_counts_of_shifted_boxes():
    dom = Domain(2, 8.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(5).generator())
    h = np.array([2.5, -1.25])
    box = Box.cube((1.0, 1.0), 3.0)
    assert count(transport(mu, h), box.shifted(h)) == count(mu, box)


def test_resample_outside_keeps_inside_points_first():
    dom = Domain(1, 20.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(9).generator())
    box = Box.cube((10.0,), 4.0)
    out = resample_outside(mu, box, PoissonParams(1.0), stream(9, "outside").generator())
    n_in = count(mu, box)
    assert np.array_equal(out.points[:n_in], restrict(mu, box).points)
    assert count(out, box) == n_in


def test_resample_outside_is_identity_when_box_covers_domain():
    dom = Domain(1, 5.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(2).generator())
    out = resample_outside(mu, Box.cube((2.5,), 6.0), PoissonParams(1.0), stream(2, "o").generator())
    assert out.same_multiset(mu)


def test_configuration_files_round_trip(tmp_path):
    dom = Domain(3, 4.0)
    mu = sample_poisson(dom, PoissonParams(1.0), stream(1).generator())
    write_configuration_json(mu, tmp_path / "mu.json")
    write_configuration_csv(mu, tmp_path / "mu.csv")
    assert read_configuration_json(tmp_path / "mu.json").same_multiset(mu)
    assert read_configuration_csv(tmp_path / "mu.csv").same_multiset(mu)
