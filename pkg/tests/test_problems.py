import numpy as np
import pytest

from ctmcbsde import problems as P
from ctmcbsde.grid import TensorGrid, uniform_grid
from ctmcbsde.integrators import solve_backward


def test_bs_linear_setup_and_oracle():
    s = P.bs_linear(half_count=20, g=5)
    assert s.grid.total_size == 41 and s.probes == [(100.0,)]
    assert s.oracle(0.0, np.array([[100.0]]))[0] == pytest.approx(9.4134, abs=1e-4)
    assert np.array_equal(s.problem.terminal, np.maximum(s.grid.axes[0].nodes - 100, 0))


def test_coarse_bs_linear_solution_reasonable():
    s = P.bs_linear(half_count=40, g=5)
    v = solve_backward("etd2rk", s.problem, 10, store=False).values[0]
    i = s.grid.axes[0].locate(100.0)
    assert abs(v[i] - 9.4134) < 0.1


def test_unknown_parameter_rejected():
    with pytest.raises(ValueError, match="unknown"):
        P.bs_linear(half_count=4, sigmaa=0.3)


def test_grid_dimension_checked():
    g2 = TensorGrid((uniform_grid(0, 1, 2, 2), uniform_grid(0, 1, 2, 2)))
    with pytest.raises(ValueError):
        P.bs_nonlinear(grid=g2)


def test_slv_setups_shapes():
    hs = P.heston_sabr_put(n_s=6, n_v=4)
    assert hs.grid.shape == (13, 9)
    lo, hi = hs.grid.lower, hs.grid.upper
    assert lo[0] == pytest.approx(100 / 6) and hi[0] == pytest.approx(200 - 100 / 6)
    hh = P.hyphyp_combination(n_s=6, n_v=4)
    assert len(hh.probes) == 3
    b = P.basket_heston_sabr(half_counts=(2, 2, 2, 2))
    assert b.grid.ndim == 4
    assert np.allclose(b.probes[0], (100, 0, 0.4, 0.3))


def test_sabr_oracle_at_expiry():
    s = P.sabr_call(n_f=4, n_v=4)
    pts = s.grid.points()
    out = s.oracle(1.0, pts)
    live = (pts[:, 0] > 0) & (pts[:, 1] > 0)
    assert np.allclose(out[live], np.maximum(pts[live, 0] - 100, 0))
    assert np.all(np.isnan(out[~live]))


def test_sup_error_window():
    g = TensorGrid((uniform_grid(0, 1, 2, 4),))
    vals = [np.zeros(9), np.full(9, 0.5)]
    oracle = lambda t, pts: np.zeros(len(pts))
    assert P.sup_error_window([0, 1], lambda k: vals[k], oracle, g, [(0.5, 1.5)]) == 0.5
    with pytest.raises(ValueError):
        P.sup_error_window([0], lambda k: vals[k], oracle, g, [(5, 6)])
    with pytest.raises(ValueError):
        P.sup_error_window([0], lambda k: vals[k], oracle, g, [None, None])


@pytest.mark.parametrize("name,dim", [("bs_linear", 1), ("heston_sabr", 2), ("hyphyp", 2),
                                      ("sabr", 2), ("basket", 4)])
def test_sde_specs_evaluate(name, dim):
    spec = P.sde_spec(name)
    x = np.tile(np.asarray(spec.x0, dtype=float), (3, 1))
    assert x.shape[1] == dim
    assert spec.drift(x).shape == (3, dim)
    assert spec.diffusion(x).shape[:2] == (3, dim)
    assert spec.payoff(x).shape == (3,)
    with pytest.raises(ValueError):
        P.sde_spec("nope")
