import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from scipy import stats

from ctmcbsde import montecarlo as MC
from ctmcbsde import problems as P
from ctmcbsde.integrators import BackwardProblem, solve_backward

Q3 = np.array([[-1.0, 0.6, 0.4], [0.5, -1.5, 1.0], [0.2, 0.8, -1.0]])


def test_two_state_poisson_jump_counts():
    lam = 2.0
    q = np.array([[-lam, lam], [lam, -lam]])
    _, jumps = MC.gillespie_endpoints(q, 0, 1.5, 20000, seed=3)
    mean = lam * 1.5
    assert abs(jumps.mean() - mean) < 4 * math.sqrt(mean / jumps.size)
    # chi-square goodness of fit against Poisson(lam T) on the bulk of the mass
    ks = np.arange(0, 9)
    obs = np.array([(jumps == k).sum() for k in ks] + [(jumps > ks[-1]).sum()])
    pmf = stats.poisson.pmf(ks, mean)
    exp = np.append(pmf, 1 - pmf.sum()) * jumps.size
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_endpoint_distribution_matches_matrix_exponential():
    n = 40000
    end, _ = MC.gillespie_endpoints(Q3, 0, 0.7, n, seed=11)
    probs = scipy.linalg.expm(0.7 * Q3)[0]
    freq = np.bincount(end, minlength=3) / n
    se = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(freq - probs) < 3 * se + 1e-12)


def test_single_path_structure_and_determinism():
    a = MC.gillespie_simulate(Q3, 1, 5.0, seed=4)
    b = MC.gillespie_simulate(Q3, 1, 5.0, seed=4)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.states, b.states)
    assert a.states[0] == 1 and a.jump_times[0] == 0
    assert np.all(np.diff(a.jump_times) > 0) and a.jump_times[-1] < 5.0
    assert a.state_at(0.0) == 1 and a.state_at(5.0) == a.states[-1]


def test_absorbing_start_never_moves():
    q = np.array([[0.0, 0.0], [1.0, -1.0]])
    path = MC.gillespie_simulate(q, 0, 10.0)
    assert path.n_jumps == 0
    end, jumps = MC.gillespie_endpoints(q, 0, 10.0, 100)
    assert np.all(end == 0) and np.all(jumps == 0)


def test_invalid_rate_matrix_and_guardrail():
    with pytest.raises(ValueError):
        MC.gillespie_simulate(np.array([[-1.0, 2.0], [1.0, -1.0]]), 0, 1.0)
    fast = np.array([[-1e8, 1e8], [1e8, -1e8]])
    with pytest.raises(ValueError, match="jump"):
        MC.gillespie_simulate(fast, 0, 1.0)


def test_chain_path_validation():
    with pytest.raises(ValueError):
        MC.ChainPath(np.array([0.0, 0.5]), np.array([1, 1]), 1.0)
    with pytest.raises(ValueError):
        MC.ChainPath(np.array([0.0, 0.0]), np.array([1, 2]), 1.0)


def _chain_problem(h):
    return BackwardProblem(sp.csr_matrix(Q3), h, np.array([1.0, 3.0, -2.0]), 1.0)


def test_feynman_kac_zero_driver():
    prob = _chain_problem(lambda t, u: 0 * u)
    traj = solve_backward("etdrk4", prob, 20)
    est, se = MC.feynman_kac_check(Q3, prob, traj, 2, 40000, seed=5)
    assert abs(est - traj.values[0, 2]) < 4 * se


def test_feynman_kac_linear_driver():
    prob = _chain_problem(lambda t, u: -0.5 * u + 0.3)
    traj = solve_backward("etdrk4", prob, 40)
    est, se = MC.feynman_kac_check(Q3, prob, traj, 0, 40000, seed=6)
    assert abs(est - traj.values[0, 0]) < 4 * se + 1e-4


def test_laguerre_values():
    b = MC.laguerre_basis(3)
    x = np.array([0.0, 1.0, 2.5])
    assert np.allclose(b[0](x), 1)
    assert np.allclose(b[1](x), 1 - x)
    assert np.allclose(b[2](x), 1 - 2 * x + x**2 / 2)
    assert np.allclose(b[3](x), 1 - 3 * x + 1.5 * x**2 - x**3 / 6)
    with pytest.raises(ValueError):
        MC.laguerre_basis(-1)


def test_laguerre_design_tensor_shape():
    x = np.random.default_rng(0).uniform(0, 1, (10, 2))
    d = MC.laguerre_design(x, 2)
    assert d.shape == (10, 9)
    assert np.allclose(d[:, 4], (1 - x[:, 0]) * (1 - x[:, 1]))


def test_run_statistics():
    assert MC.run_statistics([1.0, 3.0]) == (2.0, math.sqrt(2.0))
    with pytest.raises(ValueError):
        MC.run_statistics([1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        MC.LSMCConfig(0, 5, 3)
    with pytest.raises(ValueError):
        MC.LSMCConfig(10, 5, 3, seed=-1)


def test_rng_streams_distinct_and_reproducible():
    assert MC.make_rng(1, 0).random() == MC.make_rng(1, 0).random()
    assert MC.make_rng(1, 0).random() != MC.make_rng(1, 1).random()


def test_zero_volatility_lsmc_is_deterministic():
    # with sigma = 0 the BSDE is an ODE: Y_0 = e^{-rT} (x0 e^{mu T} - K)^+
    mu, r = 0.05, 0.02
    cfg = MC.LSMCConfig(200, 50, 2, seed=1)
    res = MC.lsmc_solve(lambda x: mu * x, lambda x: np.zeros((len(x), 1, 1)),
                        lambda t, x, y, z: -r * y, lambda x: np.maximum(x[:, 0] - 90, 0),
                        (100.0,), 1.0, cfg)
    # Euler on the forward ODE and the backward discounting: compare to the discrete products
    xT = 100 * (1 + mu / 50) ** 50
    assert res.y0 == pytest.approx((xT - 90) * (1 - r / 50) ** 50, rel=1e-10)


def test_linear_lsmc_matches_black_scholes():
    spec = P.sde_spec("bs_linear")
    cfg = MC.LSMCConfig(100_000, 10, 5, seed=7)
    res = MC.lsmc_runs(spec.drift, spec.diffusion, spec.driver, spec.payoff, spec.x0, spec.T, cfg, 4)
    mean, std = MC.run_statistics([r.y0 for r in res])
    assert abs(mean - 9.4134) < 3 * std / math.sqrt(len(res)) + 0.02
    assert all(r.max_condition < 1e12 for r in res)


def test_lsmc_deterministic_and_csv(tmp_path):
    spec = P.sde_spec("bs_nonlinear")
    cfg = MC.LSMCConfig(2000, 4, 3, seed=2)
    a = MC.lsmc_runs(spec.drift, spec.diffusion, spec.driver, spec.payoff, spec.x0, spec.T, cfg, 2)
    b = MC.lsmc_runs(spec.drift, spec.diffusion, spec.driver, spec.payoff, spec.x0, spec.T, cfg, 2)
    assert [r.y0 for r in a] == [r.y0 for r in b]
    assert a[0].y0 != a[1].y0
    path = tmp_path / "runs.csv"
    MC.write_runs_csv(a, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "run,estimate,seed,max_condition"
    assert lines[-2].startswith("mean,") and lines[-1].startswith("std,")
    assert len(lines) == 5


def test_euler_paths_shapes():
    xs, dw = MC.euler_paths(lambda x: 0 * x, lambda x: np.ones((len(x), 2, 2)), (1.0, 2.0), 1.0, 4, 8,
                            MC.make_rng(0))
    assert xs.shape == (5, 8, 2) and dw.shape == (4, 8, 2)
    assert np.allclose(xs[-1] - xs[0], dw.sum(axis=0).sum(axis=1, keepdims=True))
