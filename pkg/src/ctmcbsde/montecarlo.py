"""Stochastic cross-checks: exact CTMC simulation and least-squares Monte Carlo.

Randomness comes from numpy's Philox counter-based generator.  A run is keyed
by ``SeedSequence([seed, run])`` and draws its normals in path-major order,
so the increments of path ``i`` are a fixed slice of the counter stream and
every run reproduces bit-exactly.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .generator import check_validity
from .integrators import BackwardProblem, Trajectory

__all__ = [
    "ChainPath",
    "LSMCConfig",
    "LSMCResult",
    "make_rng",
    "gillespie_simulate",
    "gillespie_endpoints",
    "feynman_kac_check",
    "laguerre_basis",
    "laguerre_design",
    "euler_paths",
    "lsmc_solve",
    "lsmc_runs",
    "run_statistics",
    "runs_csv_text",
    "write_runs_csv",
    "MAX_EXPECTED_JUMPS",
]

MAX_EXPECTED_JUMPS = 1e7


def make_rng(seed: int, run: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(run)])))


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant CTMC path: ``states[k]`` holds on ``[jump_times[k], jump_times[k+1])``.

    ``jump_times[0]`` is the start time, so ``len(jump_times) == len(states)``.
    """

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        s = np.asarray(self.states, dtype=int)
        if t.shape != s.shape:
            raise ValueError("jump_times and states must have equal length")
        if t.size > 1 and (np.any(np.diff(t) <= 0) or np.any(s[1:] == s[:-1])):
            raise ValueError("jump times must increase strictly and states must change at jumps")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "states", s)

    @property
    def n_jumps(self) -> int:
        return self.states.size - 1

    def state_at(self, t: float) -> int:
        k = np.searchsorted(self.jump_times, t, side="right") - 1
        return int(self.states[max(k, 0)])


def _rate_matrix(q) -> sp.csr_matrix:
    mat = q.q if hasattr(q, "q") else q
    mat = sp.csr_matrix(mat, dtype=float)
    rep = check_validity(mat)
    if not rep.valid:
        raise ValueError(f"not a Q-matrix: {rep.violations[:3]}")
    return mat


def _guard(exit_rates, T, n_paths=1):
    expected = float(np.max(exit_rates, initial=0.0)) * T * n_paths
    if expected > MAX_EXPECTED_JUMPS:
        raise ValueError(
            f"expected jump count {expected:.3g} exceeds {MAX_EXPECTED_JUMPS:.0e}; "
            "the chain jumps too fast for exact simulation"
        )


def gillespie_simulate(q, start: int, T: float, seed: int | np.random.Generator = 0) -> ChainPath:
    """One exact path on ``[0, T]``; absorbing rows (``q_ii = 0``) never jump."""
    mat = _rate_matrix(q)
    rates = -mat.diagonal()
    _guard(rates, T)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    t, i = 0.0, int(start)
    times, states = [0.0], [i]
    while rates[i] > 0:
        t += rng.exponential(1.0 / rates[i])
        if t >= T:
            break
        lo, hi = mat.indptr[i], mat.indptr[i + 1]
        cols, vals = mat.indices[lo:hi], mat.data[lo:hi]
        keep = (cols != i) & (vals > 0)
        i = int(rng.choice(cols[keep], p=vals[keep] / vals[keep].sum()))
        times.append(t)
        states.append(i)
    return ChainPath(np.array(times), np.array(states), float(T))


def _jump_tables(mat):
    """Dense cumulative jump distributions per row (small chains only)."""
    dense = mat.toarray()
    rates = -np.diag(dense).copy()
    probs = np.where(np.eye(dense.shape[0], dtype=bool), 0.0, np.maximum(dense, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = probs / probs.sum(axis=1, keepdims=True)
    probs = np.nan_to_num(probs)
    return rates, np.cumsum(probs, axis=1)


def _simulate_many(mat, start, T, n_paths, rng, on_hold=None):
    """Vectorized Gillespie over ``n_paths``; ``on_hold(idx, state, t0, t1)`` sees each holding interval."""
    rates, cum = _jump_tables(mat)
    _guard(rates, T, n_paths)
    state = np.full(n_paths, int(start))
    t = np.zeros(n_paths)
    jumps = np.zeros(n_paths, dtype=np.int64)
    active = np.arange(n_paths)
    while active.size:
        r = rates[state[active]]
        hold = np.full(active.size, np.inf)
        moving = r > 0
        hold[moving] = rng.exponential(1.0, moving.sum()) / r[moving]
        t_next = np.minimum(t[active] + hold, T)
        if on_hold is not None:
            on_hold(active, state[active], t[active], t_next)
        jumped = t_next < T
        idx = active[jumped]
        u = rng.random(idx.size)
        rows = cum[state[idx]]
        state[idx] = np.minimum((rows < u[:, None]).sum(axis=1), cum.shape[1] - 1)
        t[idx] = t_next[jumped]
        jumps[idx] += 1
        active = idx
    return state, jumps


def gillespie_endpoints(q, start: int, T: float, n_paths: int, seed: int = 0):
    """Terminal states and jump counts of ``n_paths`` independent paths."""
    return _simulate_many(_rate_matrix(q), start, T, int(n_paths), make_rng(seed))


def feynman_kac_check(
    q, problem: BackwardProblem, traj: Trajectory, start: int, n_paths: int, seed: int = 0
):
    """Monte Carlo estimate of ``E[G(X_T) + int_0^T H(s, U_s)(X_s) ds]`` from ``start``.

    ``H(s, U_s)`` is taken from the stored trajectory and interpolated
    linearly in time; the time integral along each path is then exact.
    Returns ``(estimate, standard_error)`` for comparison with
    ``traj.values[0, start]``.
    """
    mat = _rate_matrix(q)
    if traj.values.shape[1] != mat.shape[0]:
        raise ValueError("trajectory and generator sizes differ")
    ts = traj.times
    h = np.array([problem.nonlinearity(t, u) for t, u in zip(ts, traj.values)])
    dt = np.diff(ts)
    slope = np.diff(h, axis=0) / dt[:, None]
    cum = np.vstack([np.zeros(h.shape[1]), np.cumsum(0.5 * (h[1:] + h[:-1]) * dt[:, None], axis=0)])

    def antiderivative(t, s):
        k = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2)
        tau = t - ts[k]
        return cum[k, s] + tau * h[k, s] + 0.5 * tau * tau * slope[k, s]

    acc = np.zeros(int(n_paths))

    def on_hold(idx, state, t0, t1):
        acc[idx] += antiderivative(t1, state) - antiderivative(t0, state)

    end, _ = _simulate_many(mat, start, float(problem.horizon), int(n_paths), make_rng(seed), on_hold)
    sample = problem.terminal[end] + acc
    return float(sample.mean()), float(sample.std(ddof=1) / math.sqrt(sample.size))


def laguerre_basis(p: int) -> list:
    """``poly_k(x) = sum_j (-1)^j / j! C(k, j) x^j`` for ``k = 0..p``."""
    if p < 0:
        raise ValueError("degree must be >= 0")

    def make(k):
        coef = np.array([(-1) ** j * math.comb(k, j) / math.factorial(j) for j in range(k + 1)])
        return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coef)

    return [make(k) for k in range(p + 1)]


def laguerre_design(x: np.ndarray, p: int) -> np.ndarray:
    """Tensor-product design matrix ``(M, (p+1)^d)`` on raw coordinates ``x`` of shape ``(M, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    basis = laguerre_basis(p)
    cols = [np.column_stack([b(x[:, j]) for b in basis]) for j in range(x.shape[1])]
    out = cols[0]
    for c in cols[1:]:
        out = np.einsum("mi,mj->mij", out, c).reshape(x.shape[0], -1)
    return out


@dataclass(frozen=True)
class LSMCConfig:
    n_paths: int
    n_steps: int
    basis_degree: int
    seed: int = 0

    def __post_init__(self):
        for name in ("n_paths", "n_steps", "basis_degree"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass
class LSMCResult:
    y0: float
    z0: np.ndarray
    max_condition: float
    runtime: float
    seed: int
    run: int
    condition_numbers: list = field(default_factory=list, repr=False)


def euler_paths(drift, diffusion, x0, T, n_steps, n_paths, rng):
    """Euler-Maruyama paths ``(n_steps+1, M, d)`` and increments ``(n_steps, M, k)``.

    Coefficients should already carry any absolute-value safeguard they need.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    d = x0.size
    dt = T / n_steps
    sig0 = np.asarray(diffusion(x0[None, :]), dtype=float)
    k = sig0.shape[2]
    dw = rng.standard_normal((n_paths, n_steps, k)) * math.sqrt(dt)
    dw = np.ascontiguousarray(dw.transpose(1, 0, 2))
    xs = np.empty((n_steps + 1, n_paths, d))
    xs[0] = x0
    for n in range(n_steps):
        x = xs[n]
        xs[n + 1] = x + np.asarray(drift(x), dtype=float) * dt + np.einsum(
            "mik,mk->mi", np.asarray(diffusion(x), dtype=float), dw[n]
        )
    return xs, dw


def _regress(design, targets):
    """Least-squares fit via column-equilibrated SVD; returns fitted values and condition number."""
    scale = np.sqrt(np.einsum("mi,mi->i", design, design))
    scale[scale == 0] = 1.0
    a = design / scale
    coef, _, rank, sv = scipy.linalg.lstsq(a, targets, lapack_driver="gelsd")
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    return a @ coef, cond


def lsmc_solve(
    drift: Callable,
    diffusion: Callable,
    driver: Callable,
    payoff: Callable,
    x0: Sequence[float],
    T: float,
    cfg: LSMCConfig,
    run: int = 0,
) -> LSMCResult:
    """Regression-based backward induction for a Markov BSDE.

    The driver uses the PDE sign convention of :mod:`ctmcbsde.models`.  At
    each step ``E[Y_{n+1} | X_n]`` is regressed first; ``Z_n`` is then the
    regression of the martingale increment
    ``(Y_{n+1} - E[Y_{n+1} | X_n]) dW_n / dt`` and
    ``Y_n = E[Y_{n+1} | X_n] + dt f(t_n, X_n, E[Y_{n+1} | X_n], Z_n)``.
    Both regressions use the tensor Laguerre basis in raw coordinates.  At
    ``t = 0`` the state is fixed and the regressions reduce to sample means.
    """
    start = time.perf_counter()
    rng = make_rng(cfg.seed, run)
    n, m = cfg.n_steps, cfg.n_paths
    dt = T / n
    xs, dw = euler_paths(drift, diffusion, x0, T, n, m, rng)
    y = np.asarray(payoff(xs[n]), dtype=float)
    conds = []
    z = None
    for step in range(n - 1, -1, -1):
        x = xs[step]
        if step == 0:
            ey = np.full(m, y.mean())
            z = np.broadcast_to(((y - ey)[:, None] * dw[step]).mean(axis=0) / dt, dw[step].shape)
        else:
            design = laguerre_design(x, cfg.basis_degree)
            ey, cond = _regress(design, y)
            z, _ = _regress(design, (y - ey)[:, None] * dw[step] / dt)
            conds.append(cond)
        y = ey + dt * np.asarray(driver(step * dt, x, ey, z), dtype=float)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"LSMC produced non-finite values at step {step}")
    return LSMCResult(
        y0=float(y.mean()),
        z0=np.asarray(z[0], dtype=float),
        max_condition=max(conds, default=1.0),
        runtime=time.perf_counter() - start,
        seed=cfg.seed,
        run=run,
        condition_numbers=conds,
    )


def lsmc_runs(drift, diffusion, driver, payoff, x0, T, cfg: LSMCConfig, n_runs: int) -> list:
    """Independent runs ``0..n_runs-1``, each with its own Philox stream."""
    return [lsmc_solve(drift, diffusion, driver, payoff, x0, T, cfg, run=k) for k in range(n_runs)]


def run_statistics(runs: Sequence[float]):
    """Sample mean and unbiased (``n - 1``) standard deviation."""
    vals = np.asarray(list(runs), dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two runs for a standard deviation")
    return float(vals.mean()), float(vals.std(ddof=1))


def runs_csv_text(results: Sequence[LSMCResult]) -> str:
    """Rows ``run,estimate,seed,max_condition`` followed by ``mean`` and ``std`` summary rows."""
    mean, std = run_statistics([r.y0 for r in results])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "estimate", "seed", "max_condition"])
    for r in results:
        w.writerow([r.run, repr(r.y0), r.seed, f"{r.max_condition:.6e}"])
    w.writerow(["mean", repr(mean), "", ""])
    w.writerow(["std", repr(std), "", ""])
    return buf.getvalue()


def write_runs_csv(results: Sequence[LSMCResult], path: str | Path) -> None:
    Path(path).write_text(runs_csv_text(results))
