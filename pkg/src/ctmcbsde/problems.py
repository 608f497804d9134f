"""Ready-made experiment setups: grid, generator, backward problem and oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import models as M
from .generator import Generator, build_generator_1d, build_generator_nd
from .grid import TensorGrid, concat_grids, tavella_randall_grid, uniform_grid
from .integrators import BackwardProblem
from .sparsegrid import AxisFamily

__all__ = [
    "Setup",
    "bs_linear",
    "bs_nonlinear",
    "heston_sabr_put",
    "hyphyp_combination",
    "sabr_call",
    "sabr_member_grid",
    "basket_heston_sabr",
    "basket_member_grid",
    "sabr_axis_families",
    "basket_axis_families",
    "BASKET_BOX",
    "sup_error_window",
    "DEFAULTS",
    "SDESpec",
    "sde_spec",
]

DEFAULTS = {
    "bs_linear": dict(T=1.0, K=100.0, mu=0.03, sigma=0.2, r=0.03),
    "bs_nonlinear": dict(T=1.0, K=100.0, mu=0.03, sigma=0.2, r=0.01, R=0.3),
    "heston_sabr": dict(T=1.0, beta=0.7, eta=4.0, theta=0.035, alpha=0.15, rho=-0.75,
                        b=0.01, K=100.0, R=0.07, r=0.01),
    "hyphyp": dict(T=1.0, beta=0.25, kappa=0.5, sigma0=0.25, alpha=0.3, rho=0.8,
                   b=0.04, R=0.06, r=0.006),
    "sabr": dict(T=1.0, alpha=0.4, beta=0.9, rho=0.3, r=0.05, K=100.0),
    "basket": dict(T=1.0, K=100.0, R=0.07, r=0.01, lam=(0.5, 0.5), beta=(0.6, 0.07),
                   eta=(0.9, 0.2), theta=(0.02, 0.3), alpha=(0.65, 0.3), b=(0.01, 0.01),
                   c_s=((1.0, 0.5), (0.5, 1.0)), c_sv=((0.65, 0.3), (-0.1, 0.05)),
                   c_v=((1.0, 0.7), (0.7, 1.0))),
}


@dataclass(eq=False)
class Setup:
    """A discretized experiment.

    ``oracle(t, points)`` returns reference values at ``(N, d)`` points when
    a closed form is available.
    """

    name: str
    grid: TensorGrid
    generator: Generator
    problem: BackwardProblem
    probes: list = field(default_factory=list)
    oracle: Callable | None = None
    params: dict = field(default_factory=dict)


def _params(key, overrides):
    p = dict(DEFAULTS[key])
    unknown = set(overrides) - set(p)
    if unknown:
        raise ValueError(f"unknown parameters for {key}: {sorted(unknown)}")
    p.update(overrides)
    return p


def _bs_axis(p, half_count, g, grid):
    if grid is None:
        return tavella_randall_grid(0.0, p["K"], 2 * p["K"], half_count, g, g)
    if grid.ndim != 1:
        raise ValueError("Black-Scholes problems need a one-dimensional grid")
    return grid.axes[0]


def bs_linear(half_count=1000, g=50.0, grid: TensorGrid | None = None, **overrides) -> Setup:
    p = _params("bs_linear", overrides)
    ax = _bs_axis(p, half_count, g, grid)
    mu, sig, r = p["mu"], p["sigma"], p["r"]
    gen = build_generator_1d(ax, lambda x: mu * x, lambda x: sig * x)
    F = M.assemble_F(gen.grid, gen.differences, lambda x: sig * x[:, :, None],
                     M.linear_bs_driver(mu, sig, r))
    prob = BackwardProblem(gen, F, M.call_payoff(p["K"])(ax.nodes), p["T"])

    def oracle(t, pts):
        return M.bs_analytic_price(pts[:, 0], t, p["K"], r, sig, p["T"])[0]

    return Setup("bs_linear", gen.grid, gen, prob, [(p["K"],)], oracle, p)


def bs_nonlinear(half_count=1000, g=50.0, grid: TensorGrid | None = None, **overrides) -> Setup:
    p = _params("bs_nonlinear", overrides)
    ax = _bs_axis(p, half_count, g, grid)
    mu, sig = p["mu"], p["sigma"]
    gen = build_generator_1d(ax, lambda x: mu * x, lambda x: sig * x)
    F = M.assemble_F(gen.grid, gen.differences, lambda x: sig * x[:, :, None],
                     M.nonlinear_rates_driver(mu, sig, p["r"], p["R"]))
    prob = BackwardProblem(gen, F, M.call_payoff(p["K"])(ax.nodes), p["T"])
    return Setup("bs_nonlinear", gen.grid, gen, prob, [(p["K"],)], None, p)


def _slv_setup(name, model, grid, payoff, r, R, T, probes, p):
    drift, diffusion = M.slv_assemble(model)
    gen = build_generator_nd(grid, drift, diffusion)
    F = M.assemble_F(grid, gen.differences, diffusion, M.slv_driver(model, r, R))
    g = payoff(grid.axis_values(0))
    return Setup(name, grid, gen, BackwardProblem(gen, F, g, T), probes, None, p)


def heston_sabr_put(n_s=100, n_v=15, s0=100.0, v0=0.4, g=1.0, grid: TensorGrid | None = None,
                    **overrides) -> Setup:
    """Put under Heston-SABR on the shifted box ``[s0/n_s, 2 s0 - s0/n_s] x [v0/n_v, 2 v0 - v0/n_v]``."""
    p = _params("heston_sabr", overrides)
    model = M.heston_sabr(p["b"], p["beta"], p["eta"], p["theta"], p["alpha"], p["rho"])
    ds, dv = s0 / n_s, v0 / n_v
    grid = grid if grid is not None else TensorGrid((
        tavella_randall_grid(ds, s0, 2 * s0 - ds, n_s, g, g),
        uniform_grid(dv, v0, 2 * v0 - dv, n_v),
    ))
    return _slv_setup("heston_sabr", model, grid, M.put_payoff(p["K"]), p["r"], p["R"],
                      p["T"], [(s0, v0)], p)


def hyphyp_combination(n_s=50, n_v=15, v0=0.4, g=1.0, grid: TensorGrid | None = None,
                       **overrides) -> Setup:
    """Call combination under Hyp-Hyp; the S axis joins two sinh grids at 100."""
    p = _params("hyphyp", overrides)
    model = M.hyphyp(p["b"], p["beta"], p["kappa"], p["sigma0"], p["alpha"], p["rho"])
    if grid is None:
        s_ax = concat_grids(
            tavella_randall_grid(1.0, 95.0, 100.0, n_s, g, g),
            tavella_randall_grid(100.0, 105.0, 199.0, n_s, g, g),
        )
        dv = v0 / n_v
        grid = TensorGrid((s_ax, uniform_grid(dv, v0, 2 * v0 - dv, n_v)))
    return _slv_setup("hyphyp", model, grid, M.call_spread_payoff(95.0, 105.0, 2.0),
                      p["r"], p["R"], p["T"], [(95.0, v0), (100.0, v0), (105.0, v0)], p)


def _sabr_oracle(p, form="hagan", rate_in_d=False):
    def oracle(t, pts):
        f, v = pts[:, 0], pts[:, 1]
        out = np.full(f.shape, np.nan)
        ok = (f > 0) & (v > 0)
        out[ok] = M.hagan_sabr_price(f[ok], v[ok], t, p["K"], p["T"], p["r"], p["alpha"],
                                     p["beta"], p["rho"], form, rate_in_d)
        return out

    return oracle


def sabr_member_grid(n_f: int, n_v: int, g: float = 5.0) -> TensorGrid:
    return TensorGrid((
        tavella_randall_grid(0.0, 100.0, 200.0, n_f, g, g),
        uniform_grid(0.0, 0.4, 0.8, n_v),
    ))


def sabr_call(n_f=100, n_v=15, g=5.0, grid: TensorGrid | None = None,
              form="hagan", rate_in_d=False, **overrides) -> Setup:
    """Call under SABR, discounted at ``r``; the Hagan price serves as oracle."""
    p = _params("sabr", overrides)
    model = M.sabr(p["alpha"], p["beta"], p["rho"])
    grid = grid if grid is not None else sabr_member_grid(n_f, n_v, g)
    drift, diffusion = M.slv_assemble(model)
    gen = build_generator_nd(grid, drift, diffusion)
    F = M.assemble_F(grid, gen.differences, diffusion, M.linear_driver(p["r"]))
    prob = BackwardProblem(gen, F, M.call_payoff(p["K"])(grid.axis_values(0)), p["T"])
    return Setup("sabr", grid, gen, prob, [(100.0, 0.4)], _sabr_oracle(p, form, rate_in_d), p)


BASKET_BOX = ((51.0, 100.0, 149.0), (-49.0, 0.0, 49.0), (0.01, 0.4, 0.79), (0.01, 0.3, 0.59))


def basket_member_grid(half_counts, g: float = 1.0) -> TensorGrid:
    """Transformed-coordinate grid: sinh axis on the basket level, uniform elsewhere."""
    (a, c, b), *rest = BASKET_BOX
    axes = [tavella_randall_grid(a, c, b, half_counts[0], g, g)]
    axes += [uniform_grid(lo, mid, hi, n) for (lo, mid, hi), n in zip(rest, half_counts[1:])]
    return TensorGrid(tuple(axes))


def _basket_model(p):
    comps = tuple(
        M.heston_sabr(p["b"][i], p["beta"][i], p["eta"][i], p["theta"][i], p["alpha"][i], 0.0)
        for i in range(2)
    )
    return M.MultiAssetSLV(comps, np.array(p["c_s"]), np.array(p["c_sv"]), np.array(p["c_v"]))


def basket_heston_sabr(grid: TensorGrid | None = None, half_counts=(8, 8, 8, 8), **overrides) -> Setup:
    """Basket call on two Heston-SABR assets in the coordinates ``B x``."""
    p = _params("basket", overrides)
    model = _basket_model(p)
    B, B_inv = M.basket_transform(*p["lam"])
    drift, diffusion = M.transform_coefficients(model.drift, model.diffusion, B, B_inv)
    grid = grid if grid is not None else basket_member_grid(half_counts)
    gen = build_generator_nd(grid, drift, diffusion)
    driver = M.transform_driver(M.slv_driver(model, p["r"], p["R"]), B_inv)
    F = M.assemble_F(grid, gen.differences, diffusion, driver)
    g = M.call_payoff(p["K"])(grid.axis_values(0))
    probe = tuple(B @ np.array([100.0, 100.0, 0.4, 0.3]))
    return Setup("basket", grid, gen, BackwardProblem(gen, F, g, p["T"]), [probe], None, p)


def sabr_axis_families(g: float = 5.0) -> list:
    """Level families for the SABR combination: sinh axis on ``F``, uniform on ``v``."""
    return [
        AxisFamily.from_half_count(lambda n: tavella_randall_grid(0.0, 100.0, 200.0, n, g, g), "F"),
        AxisFamily.from_half_count(lambda n: uniform_grid(0.0, 0.4, 0.8, n), "v"),
    ]


def basket_axis_families(g: float = 1.0) -> list:
    """Level families for the basket combination on :data:`BASKET_BOX`."""
    (a, c, b), *rest = BASKET_BOX
    fams = [AxisFamily.from_half_count(lambda n: tavella_randall_grid(a, c, b, n, g, g), "basket")]
    for k, (lo, mid, hi) in enumerate(rest, start=1):
        fams.append(AxisFamily.from_half_count(
            lambda n, lo=lo, mid=mid, hi=hi: uniform_grid(lo, mid, hi, n), f"x{k}"))
    return fams


def sup_error_window(times, values_fn, oracle, grid: TensorGrid, window) -> float:
    """``max |numeric - oracle|`` over all time slices and nodes inside ``window``.

    ``values_fn(k)`` returns the solution slice at ``times[k]`` on ``grid``;
    ``window`` is a sequence of ``(lo, hi)`` per axis (``None`` = whole axis).
    """
    masks = []
    for ax, w in zip(grid.axes, window):
        m = np.ones(len(ax), bool) if w is None else (ax.nodes >= w[0]) & (ax.nodes <= w[1])
        masks.append(m)
    if len(window) != grid.ndim:
        raise ValueError("window needs one interval per axis")
    if not all(m.any() for m in masks):
        raise ValueError("window does not intersect the grid")
    sel = np.ix_(*masks)
    mesh = np.meshgrid(*[ax.nodes[m] for ax, m in zip(grid.axes, masks)], indexing="ij")
    pts = np.stack([x.ravel() for x in mesh], axis=1)
    worst = 0.0
    for k, t in enumerate(times):
        vals = np.asarray(values_fn(k)).reshape(grid.shape)[sel].ravel()
        err = np.abs(vals - oracle(t, pts))
        worst = max(worst, float(np.max(err)))
    return worst


@dataclass(frozen=True, eq=False)
class SDESpec:
    """Forward coefficients, driver and payoff for path-based solvers."""

    drift: Callable
    diffusion: Callable
    driver: M.DriverSpec
    payoff: Callable
    x0: tuple
    T: float


def sde_spec(name: str, x0=None, **overrides) -> SDESpec:
    """Original-coordinate SDE data for the named experiment (payoff takes ``(M, d)`` states)."""
    if name in ("bs_linear", "bs_nonlinear"):
        p = _params(name, overrides)
        mu, sig = p["mu"], p["sigma"]
        driver = (M.linear_bs_driver(mu, sig, p["r"]) if name == "bs_linear"
                  else M.nonlinear_rates_driver(mu, sig, p["r"], p["R"]))
        return SDESpec(lambda x: mu * x, lambda x: (sig * x)[:, :, None], driver,
                       lambda x: M.call_payoff(p["K"])(x[:, 0]), tuple(x0 or (p["K"],)), p["T"])
    if name == "heston_sabr":
        p = _params(name, overrides)
        model = M.heston_sabr(p["b"], p["beta"], p["eta"], p["theta"], p["alpha"], p["rho"])
        pay, start = M.put_payoff(p["K"]), (100.0, 0.4)
    elif name == "hyphyp":
        p = _params(name, overrides)
        model = M.hyphyp(p["b"], p["beta"], p["kappa"], p["sigma0"], p["alpha"], p["rho"])
        pay, start = M.call_spread_payoff(95.0, 105.0, 2.0), (100.0, 0.4)
    elif name == "sabr":
        p = _params(name, overrides)
        model = M.sabr(p["alpha"], p["beta"], p["rho"])
        return SDESpec(model.drift, model.diffusion, M.linear_driver(p["r"]),
                       lambda x: M.call_payoff(p["K"])(x[:, 0]), tuple(x0 or (100.0, 0.4)), p["T"])
    elif name == "basket":
        p = _params(name, overrides)
        model = _basket_model(p)
        return SDESpec(model.drift, model.diffusion, M.slv_driver(model, p["r"], p["R"]),
                       M.basket_call_payoff(p["lam"], p["K"]), tuple(x0 or (100.0, 100.0, 0.4, 0.3)), p["T"])
    else:
        raise ValueError(f"unknown experiment {name!r}")
    return SDESpec(model.drift, model.diffusion, M.slv_driver(model, p["r"], p["R"]),
                   lambda x: pay(x[:, 0]), tuple(x0 or start), p["T"])
