"""Exponential Runge-Kutta schemes run backward in time.

The terminal value problem ``dU/dt + Q U + H(t, U) = 0, U(T) = G`` is stepped
from ``t_{m+1}`` to ``t_m`` by

    zeta_i = chi_i(dt Q) U_{m+1} + dt sum_j a_ij(dt Q) G_j
    G_i    = H(t_{m+1} - c_i dt, zeta_i)
    U_m    = chi_0(dt Q) U_{m+1} + dt sum_i b_i(dt Q) G_i

which is the conditional-expectation form of a multi-stage Euler scheme for
the CTMC-driven BSDE with generator ``Q``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .expmv import (
    PhiCombination,
    arnoldi,
    phi,
    phi_combination_action,
    phi_dense_all,
)
from .generator import Generator

__all__ = [
    "ExpRKTableau",
    "BackwardProblem",
    "Trajectory",
    "SolverError",
    "SCHEMES",
    "tableau",
    "step",
    "solve_backward",
    "evaluate",
    "write_trajectory_csv",
]


class SolverError(FloatingPointError):
    """A stage produced non-finite values or had the wrong shape."""


@dataclass(frozen=True)
class ExpRKTableau:
    name: str
    c: tuple
    chi: tuple  # chi[0] propagates the solution, chi[1..s] seed the stages
    a: tuple
    b: tuple
    order: int

    def __post_init__(self):
        s = len(self.c)
        if len(self.chi) != s + 1 or len(self.b) != s or len(self.a) != s:
            raise ValueError("inconsistent tableau dimensions")
        for i, row in enumerate(self.a):
            if len(row) != s:
                raise ValueError("a must be s x s")
            if any(row[j] for j in range(i, s)):
                raise ValueError("only explicit (strictly lower triangular) schemes are supported")

    @property
    def stages(self) -> int:
        return len(self.c)


_ZERO = PhiCombination()
_ONE = phi(0, 0.0)


def _lower(rows, s):
    return tuple(tuple(row[j] if j < len(row) else _ZERO for j in range(s)) for row in rows)


def _lawson_euler():
    e = phi(0)
    return ExpRKTableau("lawson_euler", (0.0,), (e, _ONE), _lower([[]], 1), (e,), 1)


def _norsett_euler():
    return ExpRKTableau(
        "norsett_euler", (0.0,), (phi(0), _ONE), _lower([[]], 1), (phi(1),), 1
    )


def _etd2rk():
    p1, p2 = phi(1), phi(2)
    return ExpRKTableau(
        "etd2rk",
        (0.0, 1.0),
        (phi(0), _ONE, phi(0)),
        _lower([[], [p1]], 2),
        (p1 - p2, p2),
        2,
    )


def _etdrk3():
    p1, p2, p3 = phi(1), phi(2), phi(3)
    return ExpRKTableau(
        "etdrk3",
        (0.0, 0.5, 1.0),
        (phi(0), _ONE, phi(0, 0.5), phi(0)),
        _lower([[], [0.5 * phi(1, 0.5)], [-p1, 2.0 * p1]], 3),
        (p1 - 3 * p2 + 4 * p3, 4 * p2 - 8 * p3, -p2 + 4 * p3),
        3,
    )


def _etdrk4():
    p1, p2, p3 = phi(1), phi(2), phi(3)
    h1 = phi(1, 0.5)
    # 1/2 phi_1(z/2) (e^{z/2} - 1) == phi_1(z) - phi_1(z/2)
    return ExpRKTableau(
        "etdrk4",
        (0.0, 0.5, 0.5, 1.0),
        (phi(0), _ONE, phi(0, 0.5), phi(0, 0.5), phi(0)),
        _lower([[], [0.5 * h1], [_ZERO, 0.5 * h1], [p1 - h1, _ZERO, h1]], 4),
        (p1 - 3 * p2 + 4 * p3, 2 * p2 - 4 * p3, 2 * p2 - 4 * p3, -p2 + 4 * p3),
        4,
    )


def _hochost4():
    p1, p2, p3 = phi(1), phi(2), phi(3)
    h1, h2, h3 = phi(1, 0.5), phi(2, 0.5), phi(3, 0.5)
    a52 = 0.5 * h2 - p3 + 0.25 * p2 - 0.5 * h3
    a54 = 0.25 * h2 - a52
    a51 = 0.5 * h1 - 2 * a52 - a54
    return ExpRKTableau(
        "hochost4",
        (0.0, 0.5, 0.5, 1.0, 0.5),
        (phi(0), _ONE, phi(0, 0.5), phi(0, 0.5), phi(0), phi(0, 0.5)),
        _lower(
            [
                [],
                [0.5 * h1],
                [0.5 * h1 - h2, h2],
                [p1 - 2 * p2, p2, p2],
                [a51, a52, a52, a54],
            ],
            5,
        ),
        (p1 - 3 * p2 + 4 * p3, _ZERO, _ZERO, -p2 + 4 * p3, 4 * p2 - 8 * p3),
        4,
    )


SCHEMES = {
    "lawson_euler": _lawson_euler,
    "norsett_euler": _norsett_euler,
    "etd2rk": _etd2rk,
    "etdrk3": _etdrk3,
    "etdrk4": _etdrk4,
    "hochost4": _hochost4,
}

_ALIASES = {"etdrk2": "etd2rk", "etd3rk": "etdrk3", "etd4rk": "etdrk4", "etd1rk": "norsett_euler"}


def tableau(name: str) -> ExpRKTableau:
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}")
    return SCHEMES[key]()


@dataclass(frozen=True, eq=False)
class BackwardProblem:
    """``dU/dt + q U + nonlinearity(t, U) = 0`` on ``[0, horizon]``, ``U(horizon) = terminal``."""

    q: object
    nonlinearity: Callable
    terminal: np.ndarray
    horizon: float

    def __post_init__(self):
        g = np.array(self.terminal, dtype=float).ravel()
        n = self.matrix.shape[0]
        if g.size != n:
            raise ValueError(f"terminal has length {g.size}, generator has dimension {n}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        g.setflags(write=False)
        object.__setattr__(self, "terminal", g)

    @property
    def matrix(self) -> sp.csr_matrix:
        q = self.q.q if isinstance(self.q, Generator) else self.q
        return q if sp.issparse(q) else sp.csr_matrix(q)

    @property
    def dimension(self) -> int:
        return self.terminal.size


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # shape (n_steps + 1, N); values[-1] is the terminal vector

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


class _PhiEvaluator:
    """Applies phi-combinations of ``dt * A`` for one fixed step size.

    Small systems (``N <= m``) use cached dense phi-matrices; larger ones use
    one Arnoldi factorization per input vector.
    """

    def __init__(self, a: sp.csr_matrix, dt: float, m: int):
        self.a = a
        self.dt = dt
        self.m = m
        self.dense = m >= a.shape[0]
        self._cache = {}
        if self.dense:
            self._ad = a.toarray()

    def prepare(self, v: np.ndarray):
        if self.dense or not np.any(v):
            return None
        return arnoldi(self.a, v, self.m)

    def _matrix(self, l: int, g: float) -> np.ndarray:
        key = (l, g)
        if key not in self._cache:
            mats = phi_dense_all(max(l, 3), g * self.dt * self._ad)
            for k, mat in enumerate(mats):
                self._cache[(k, g)] = mat
        return self._cache[key]

    def apply(self, comb: PhiCombination, v: np.ndarray, ws) -> np.ndarray:
        if not comb or not np.any(v):
            return np.zeros_like(v)
        if self.dense:
            out = np.zeros_like(v)
            for w, l, g in comb.terms:
                if g == 0.0:
                    out += w / _FACT[l] * v
                else:
                    out += w * (self._matrix(l, g) @ v)
            return out
        return phi_combination_action(comb, self.a, self.dt, v, self.m, workspace=ws)


_FACT = [1, 1, 2, 6, 24, 120, 720, 5040, 40320]


def _stage_value(problem, t, zeta, stage):
    g = np.asarray(problem.nonlinearity(t, zeta), dtype=float)
    if g.shape != zeta.shape:
        raise SolverError(
            f"stage {stage} at t={t:.6g}: nonlinearity returned shape {g.shape}, "
            f"expected {zeta.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise SolverError(f"stage {stage} at t={t:.6g}: non-finite nonlinearity value")
    return g


def _step(tab, problem, ev, t_next, z_next, dt):
    ws_z = ev.prepare(z_next)
    gs, ws_g = [], []
    for i in range(tab.stages):
        zeta = ev.apply(tab.chi[i + 1], z_next, ws_z)
        for j in range(i):
            if tab.a[i][j]:
                zeta = zeta + dt * ev.apply(tab.a[i][j], gs[j], ws_g[j])
        if not np.all(np.isfinite(zeta)):
            raise SolverError(f"stage {i + 1} at t={t_next:.6g}: non-finite stage vector")
        g = _stage_value(problem, t_next - tab.c[i] * dt, zeta, i + 1)
        gs.append(g)
        needed = any(tab.a[k][i] for k in range(i + 1, tab.stages)) or bool(tab.b[i])
        ws_g.append(ev.prepare(g) if needed else None)
    out = ev.apply(tab.chi[0], z_next, ws_z)
    for i in range(tab.stages):
        if tab.b[i]:
            out = out + dt * ev.apply(tab.b[i], gs[i], ws_g[i])
    if not np.all(np.isfinite(out)):
        raise SolverError(f"step ending at t={t_next - dt:.6g}: non-finite solution")
    return out


def step(
    tab: ExpRKTableau,
    problem: BackwardProblem,
    t_next: float,
    z_next: np.ndarray,
    dt: float,
    krylov_m: int = 100,
) -> np.ndarray:
    """One backward step from ``t_next`` to ``t_next - dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ev = _PhiEvaluator(problem.matrix, dt, krylov_m)
    return _step(tab, problem, ev, t_next, np.asarray(z_next, dtype=float), dt)


def solve_backward(
    tab: ExpRKTableau | str,
    problem: BackwardProblem,
    n_steps: int,
    krylov_m: int = 100,
    store: bool = True,
) -> Trajectory:
    """March from ``U(T) = G`` down to ``t = 0`` on a uniform time grid.

    With ``store=False`` only the initial and terminal slices are kept.
    """
    if isinstance(tab, str):
        tab = tableau(tab)
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    n_steps = int(n_steps)
    T = float(problem.horizon)
    dt = T / n_steps
    times = np.arange(n_steps + 1) * dt
    times[-1] = T
    ev = _PhiEvaluator(problem.matrix, dt, krylov_m)
    z = problem.terminal.copy()
    values = np.empty((n_steps + 1, z.size)) if store else None
    if store:
        values[n_steps] = problem.terminal
    for m in range(n_steps - 1, -1, -1):
        z = _step(tab, problem, ev, times[m + 1], z, dt)
        if store:
            values[m] = z
    if not store:
        values = np.vstack([z, problem.terminal])
        times = np.array([0.0, T])
    return Trajectory(times=times, values=values)


def evaluate(traj: Trajectory, grid, t_index: int, state_index) -> float:
    """Numerical ``Y`` at time slice ``t_index`` and a grid node.

    ``state_index`` is a flat index or a multi-index into ``grid``.
    """
    from .grid import flatten

    if not -len(traj.times) <= t_index < len(traj.times):
        raise IndexError(f"time index {t_index} out of range")
    if np.ndim(state_index) > 0:
        state_index = flatten(grid, state_index)
    if not 0 <= state_index < traj.values.shape[1]:
        raise IndexError(f"state index {state_index} out of range")
    return float(traj.values[t_index, state_index])


def write_trajectory_csv(traj: Trajectory, path: str | Path, every: int = 1) -> None:
    """Header ``t,node_0,...``; ``every`` subsamples the nodes."""
    cols = np.arange(0, traj.values.shape[1], every)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"node_{i}" for i in cols])
        for t, row in zip(traj.times, traj.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row[cols]])
