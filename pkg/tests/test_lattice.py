import numpy as np
import pytest

from kreinlab.fiber import Geometry, ModelOperator
from kreinlab.lattice import Lattice, lattice_points


@pytest.mark.parametrize("R", [0.0, 1.0, 2.5, 50.0])
def test_one_dimensional_count(R):
    assert lattice_points(1, R).shape == (2 * int(R) + 1, 1)


@pytest.mark.parametrize("R,count", [(1.0, 5), (1.5, 9), (2.0, 13), (5.0, 81)])
def test_two_dimensional_count(R, count):
    # Gauss circle problem, small radii
    assert len(lattice_points(2, R)) == count


def test_sorted_by_norm_then_lexicographic():
    pts = lattice_points(2, 3.0)
    sq = np.sum(pts**2, axis=1)
    assert np.all(np.diff(sq) >= 0)
    for s in np.unique(sq):
        block = [tuple(p) for p in pts[sq == s]]
        assert block == sorted(block)


def test_each_point_once():
    pts = lattice_points(2, 10.0)
    assert len({tuple(p) for p in pts}) == len(pts)


def test_lattice_scalars():
    lat = Lattice(Geometry("slab", 3), ModelOperator(4.0), 2.0)
    assert lat.xi.shape[1] == 2
    assert np.allclose(lat.a, lat.xi_sq + 4.0)
    assert np.allclose(lat.bracket, np.sqrt(1 + lat.xi_sq))
    assert lat.mode(0).xi == (0, 0)


def test_negative_dimension_rejected():
    with pytest.raises(ValueError):
        lattice_points(0, 1.0)
