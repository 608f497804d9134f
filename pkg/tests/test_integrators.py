import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from ctmcbsde.expmv import phi
from ctmcbsde.generator import build_generator_1d
from ctmcbsde.grid import TensorGrid, tavella_randall_grid, uniform_grid
from ctmcbsde.integrators import (
    SCHEMES,
    BackwardProblem,
    ExpRKTableau,
    SolverError,
    evaluate,
    solve_backward,
    step,
    tableau,
    write_trajectory_csv,
)

ALL = sorted(SCHEMES)


def _small_problem(h=lambda t, u: 0 * u, n=7):
    g = uniform_grid(0, 1, 2, (n - 1) // 2)
    gen = build_generator_1d(g, lambda x: 0.1 * x, lambda x: 0.3 + 0 * x)
    return gen, BackwardProblem(gen, h, np.maximum(g.nodes - 1, 0), 1.0)


def test_tableau_lookup_aliases():
    assert tableau("HochOst4").name == "hochost4"
    assert tableau("ETD3RK").name == "etdrk3"
    assert tableau("Lawson-Euler").name == "lawson_euler"
    with pytest.raises(ValueError):
        tableau("rk4")


@pytest.mark.parametrize("name", ALL)
def test_tableau_consistency_at_zero(name):
    # at z = 0 the weights reduce to a classical explicit RK tableau
    tab = tableau(name)
    assert sum(b.scalar(0.0) for b in tab.b) == pytest.approx(1.0)
    for i, row in enumerate(tab.a):
        assert sum(a.scalar(0.0) for a in row) == pytest.approx(tab.c[i])
    assert tab.chi[0].scalar(0.0) == pytest.approx(1.0)


def test_implicit_tableau_rejected():
    with pytest.raises(ValueError):
        ExpRKTableau("bad", (0.0,), (phi(0), phi(0)), ((phi(1),),), (phi(1),), 1)


@pytest.mark.parametrize("name", ALL)
def test_zero_driver_equals_exponential(name):
    gen, prob = _small_problem()
    exact = scipy.linalg.expm(gen.q.toarray()) @ prob.terminal
    out = solve_backward(name, prob, 1).values[0]
    assert np.allclose(out, exact, atol=1e-12)


@pytest.mark.parametrize("name", ALL)
def test_zero_driver_krylov_path(name):
    g = tavella_randall_grid(0, 100, 200, 60, 10, 10)
    gen = build_generator_1d(g, lambda x: 0.03 * x, lambda x: 0.2 * x)
    prob = BackwardProblem(gen, lambda t, u: 0 * u, np.maximum(g.nodes - 100, 0), 1.0)
    exact = expm_multiply(gen.q.tocsc() * 0.25, prob.terminal)
    out = step(tableau(name), prob, 1.0, prob.terminal, 0.25, krylov_m=100)
    assert np.allclose(out, exact, atol=1e-10 * np.abs(exact).max())


def test_terminal_bit_identical_and_times():
    _, prob = _small_problem(lambda t, u: -0.05 * u)
    traj = solve_backward("etd2rk", prob, 8)
    assert np.array_equal(traj.values[-1], prob.terminal)
    assert traj.times[0] == 0 and traj.times[-1] == 1.0 and traj.n_steps == 8
    assert np.allclose(np.diff(traj.times), 0.125)


def test_store_false_keeps_ends():
    _, prob = _small_problem(lambda t, u: -0.05 * u)
    full = solve_backward("etdrk3", prob, 5)
    short = solve_backward("etdrk3", prob, 5, store=False)
    assert short.values.shape == (2, full.values.shape[1])
    assert np.array_equal(short.values[0], full.values[0])


def test_scalar_affine_orders():
    # dU/dt = -(q U + h): exact U(0) = e^{qT} G + (e^{qT} - 1) h / q
    q, h, G, T = -3.0, 2.0, 1.0, 1.0
    exact = np.exp(q * T) * G + (np.exp(q * T) - 1) / q * h
    qq = sp.csr_matrix([[q]])

    def err(name, n, hfun):
        prob = BackwardProblem(qq, hfun, np.array([G]), T)
        return abs(solve_backward(name, prob, n).values[0, 0] - exact)

    # constant forcing is integrated exactly by every phi_1-based scheme
    assert err("norsett_euler", 3, lambda t, u: h + 0 * u) < 1e-13
    e1, e2 = err("lawson_euler", 20, lambda t, u: h + 0 * u), err("lawson_euler", 40, lambda t, u: h + 0 * u)
    assert np.log2(e1 / e2) > 0.9


def test_step_time_arguments():
    seen = []
    _, prob = _small_problem(lambda t, u: seen.append(t) or 0 * u)
    step(tableau("hochost4"), prob, 1.0, prob.terminal, 0.1)
    assert np.allclose(seen, [1.0 - c * 0.1 for c in tableau("hochost4").c])


def test_nonfinite_driver_raises():
    _, prob = _small_problem(lambda t, u: np.full_like(u, np.nan))
    with pytest.raises(SolverError, match="stage 1"):
        solve_backward("etd2rk", prob, 2)


def test_wrong_shape_driver_raises():
    _, prob = _small_problem(lambda t, u: u[:-1])
    with pytest.raises(SolverError, match="shape"):
        solve_backward("lawson_euler", prob, 2)


def test_problem_validation():
    gen, _ = _small_problem()
    with pytest.raises(ValueError):
        BackwardProblem(gen, lambda t, u: u, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        BackwardProblem(gen, lambda t, u: u, np.zeros(7), 0.0)
    prob = BackwardProblem(gen.q.toarray(), lambda t, u: u, np.zeros(7), 1.0)
    assert sp.issparse(prob.matrix)
    with pytest.raises(ValueError):
        solve_backward("etd2rk", prob, 0)


def test_symmetry_under_reflection():
    g = uniform_grid(-1, 0, 1, 10)
    gen = build_generator_1d(g, lambda x: 0 * x, lambda x: 0.5 + 0 * x)
    prob = BackwardProblem(gen, lambda t, u: -0.1 * u + 0.05 * u**2, g.nodes**2, 1.0)
    v = solve_backward("hochost4", prob, 10).values[0]
    assert np.allclose(v, v[::-1], atol=1e-10)


def test_affine_superposition(rng):
    gen, _ = _small_problem()
    h = lambda t, u: -0.2 * u + 0.3
    base = lambda G: solve_backward("etdrk4", BackwardProblem(gen, h, G, 1.0), 4).values[0]
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    zero = base(np.zeros(7))
    lhs = base(2 * a - 3 * b) - zero
    rhs = 2 * (base(a) - zero) - 3 * (base(b) - zero)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_evaluate_and_csv(tmp_path):
    g = uniform_grid(0, 1, 2, 2)
    gen = build_generator_1d(g, lambda x: 0 * x, lambda x: 0.1 + 0 * x)
    prob = BackwardProblem(gen, lambda t, u: 0 * u, g.nodes.copy(), 1.0)
    traj = solve_backward("lawson_euler", prob, 2)
    grid = TensorGrid((g,))
    assert evaluate(traj, grid, 2, 3) == pytest.approx(g.nodes[3])
    assert evaluate(traj, grid, 2, (4,)) == pytest.approx(2.0)
    with pytest.raises(IndexError):
        evaluate(traj, grid, 5, 0)
    with pytest.raises(IndexError):
        evaluate(traj, grid, 0, 9)
    p = tmp_path / "traj.csv"
    write_trajectory_csv(traj, p, every=2)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,node_0,node_2,node_4"
    assert len(lines) == 4


THRESHOLDS = {"lawson_euler": 0.9, "norsett_euler": 0.9, "etd2rk": 1.8, "etdrk3": 2.6, "etdrk4": 3.3, "hochost4": 3.3}


@pytest.fixture(scope="module")
def stiff_linear():
    ax = tavella_randall_grid(0, 100, 200, 100, 50, 50)
    gen = build_generator_1d(ax, lambda x: 0.03 * x, lambda x: 0.2 * x)
    r = 1.0
    G = np.maximum(ax.nodes - 100, 0)
    exact = expm_multiply((gen.q - r * sp.identity(len(ax))).tocsc(), G)
    return BackwardProblem(gen, lambda t, u: -r * u, G, 1.0), exact


@pytest.mark.parametrize("name", ALL)
def test_empirical_order(name, stiff_linear):
    prob, exact = stiff_linear
    steps = [10, 20, 40, 80, 160]
    errs = np.array([np.abs(solve_backward(name, prob, n, store=False).values[0] - exact).max() for n in steps])
    order = np.polyfit(np.log(steps), -np.log(errs), 1)[0]
    assert order >= THRESHOLDS[name], (name, errs, order)
