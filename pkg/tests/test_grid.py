import numpy as np
import pytest

from ctmcbsde.grid import (
    Grid1D,
    TensorGrid,
    concat_grids,
    flatten,
    read_grid,
    tavella_randall_grid,
    uniform_grid,
    unflatten,
    write_grid,
)


def test_uniform_grid_nodes():
    g = uniform_grid(0.0, 1.0, 2.0, 2)
    assert np.allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    assert g.half_count == 2 and g.center == 1.0


def test_piecewise_uniform_when_center_off_midpoint():
    g = uniform_grid(0.0, 1.0, 4.0, 1)
    assert np.allclose(g.nodes, [0, 1, 4])


def test_tavella_randall_anchors_and_clustering():
    g = tavella_randall_grid(0.0, 100.0, 200.0, 50, 5.0, 5.0)
    assert len(g) == 101
    assert (g.left, g.center, g.right) == (0.0, 100.0, 200.0)
    dx = g.spacing
    assert dx[49] < dx[0] and dx[50] < dx[-1]


def test_tavella_randall_large_g_tends_to_uniform():
    g = tavella_randall_grid(0.0, 1.0, 2.0, 10, 1e6, 1e6)
    assert np.allclose(g.nodes, np.linspace(0, 2, 21), atol=1e-9)


@pytest.mark.parametrize("args", [(1, 0, 2, 3), (0, 1, 2, 0), (0, 1, 2, 1.5), (0, 2, 1, 3)])
def test_bad_bounds(args):
    with pytest.raises(ValueError):
        uniform_grid(*args)


def test_bad_stretch():
    with pytest.raises(ValueError):
        tavella_randall_grid(0, 1, 2, 3, 0.0, 1.0)


def test_grid1d_validation():
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, np.nan, 1.0]))


def test_signed_index_and_locate():
    g = uniform_grid(-1, 0, 1, 3)
    assert g.offset(-3) == 0 and g.offset(3) == 6
    assert g.signed_index(3) == 0
    assert g.locate(0.0) == 3
    with pytest.raises(IndexError):
        g.offset(4)
    with pytest.raises(ValueError):
        g.locate(0.1)


def test_concat():
    a = uniform_grid(0, 1, 2, 1)
    b = uniform_grid(2, 3, 4, 1)
    c = concat_grids(a, b)
    assert np.allclose(c.nodes, [0, 1, 2, 3, 4])
    with pytest.raises(ValueError):
        concat_grids(a, uniform_grid(2.5, 3, 4, 1))


def test_concatenated_hyphyp_axis_size():
    s = concat_grids(tavella_randall_grid(1, 95, 100, 50, 1, 1), tavella_randall_grid(100, 105, 199, 50, 1, 1))
    assert len(s) == 201 and s.center == 100.0


def test_tensor_flatten_last_axis_fastest():
    g = TensorGrid((uniform_grid(0, 1, 2, 1), uniform_grid(0, 1, 2, 2)))
    assert g.shape == (3, 5) and g.total_size == 15
    assert flatten(g, (0, 1)) == 1
    assert flatten(g, (1, 0)) == 5
    assert unflatten(g, 7) == (1, 2)
    pts = g.points()
    assert np.allclose(pts[flatten(g, (2, 3))], [2.0, 1.5])


def test_flatten_out_of_range():
    g = TensorGrid((uniform_grid(0, 1, 2, 1),))
    with pytest.raises((IndexError, ValueError)):
        flatten(g, (3,))


def test_grid_roundtrip(tmp_path):
    g = tavella_randall_grid(0, 100, 200, 20, 5, 5)
    p = tmp_path / "g.txt"
    write_grid(g, p)
    assert read_grid(p) == g
