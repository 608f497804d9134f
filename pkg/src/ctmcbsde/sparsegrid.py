"""Sparse-grid combination technique over anisotropic tensor grids."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Grid1D, TensorGrid
from .integrators import BackwardProblem, ExpRKTableau, Trajectory, solve_backward, tableau

__all__ = [
    "LevelIndex",
    "AxisFamily",
    "Member",
    "CombinationSolution",
    "enumerate_levels",
    "combination_coefficient",
    "level_size",
    "count_points",
    "interpolate",
    "interpolate_many",
    "solve_combination",
    "evaluate_combined",
    "write_members_csv",
]


@dataclass(frozen=True, order=True)
class LevelIndex:
    levels: tuple

    def __post_init__(self):
        lv = tuple(int(l) for l in self.levels)
        if not lv or any(l < 1 for l in lv):
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        object.__setattr__(self, "levels", lv)

    @property
    def norm(self) -> int:
        return sum(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


def level_size(l: int) -> int:
    """Nodes on a level-``l`` axis: ``2^l + 1``."""
    return 2**l + 1


@dataclass(frozen=True)
class AxisFamily:
    """Level-parameterized axis builder; ``build(l)`` must return ``2^l + 1`` nodes."""

    build: Callable[[int], Grid1D]
    name: str = "axis"

    def __call__(self, l: int) -> Grid1D:
        g = self.build(l)
        if len(g) != level_size(l):
            raise ValueError(f"{self.name}: level {l} produced {len(g)} nodes, expected {level_size(l)}")
        return g

    @classmethod
    def from_half_count(cls, builder: Callable[[int], Grid1D], name: str = "axis") -> "AxisFamily":
        """Wrap a builder taking the half count ``N0 = 2^(l-1)``."""
        return cls(lambda l: builder(2 ** (l - 1)), name)


def enumerate_levels(q: int, d: int) -> list:
    """All ``l`` with ``l_p >= 1`` and ``q - d + 1 <= |l| <= q``, highest ``|l|`` first."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if q < d:
        raise ValueError(f"need q >= d, got q={q}, d={d}")
    out = []
    for norm in range(q, max(q - d + 1, d) - 1, -1):
        # compositions of norm into d positive parts, lexicographic
        for cuts in itertools.combinations(range(1, norm), d - 1):
            bounds = (0,) + cuts + (norm,)
            out.append(LevelIndex(tuple(b - a for a, b in zip(bounds[:-1], bounds[1:]))))
    return out


def combination_coefficient(q: int, d: int, level: LevelIndex | Sequence[int]) -> int:
    k = q - sum(level)
    if not 0 <= k <= d - 1:
        return 0
    return (-1) ** k * comb(d - 1, k)


def count_points(q: int, d: int, axis_sizes: Callable[[int], int] = level_size) -> int:
    return sum(int(np.prod([axis_sizes(l) for l in lv])) for lv in enumerate_levels(q, d))


def _locate(nodes: np.ndarray, x: np.ndarray):
    """Left cell index and right-node weight for each ``x`` (closed box)."""
    i = np.searchsorted(nodes, x, side="right") - 1
    i = np.clip(i, 0, nodes.size - 2)
    w = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, w


def interpolate_many(grid: TensorGrid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at ``(M, d)`` points; no extrapolation."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.ndim:
        raise ValueError(f"points must have {grid.ndim} columns")
    lo, hi = grid.lower, grid.upper
    tol = 1e-12 * np.maximum(1.0, np.abs(hi - lo))
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise ValueError("point outside the grid's bounding box")
    vals = np.asarray(values, dtype=float).reshape(grid.shape)
    cells, weights = [], []
    for p, ax in enumerate(grid.axes):
        i, w = _locate(ax.nodes, np.clip(pts[:, p], lo[p], hi[p]))
        cells.append(i)
        weights.append(w)
    out = np.zeros(pts.shape[0])
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        idx = tuple(c + b for c, b in zip(cells, corner))
        wt = np.ones(pts.shape[0])
        for b, w in zip(corner, weights):
            wt = wt * (w if b else 1.0 - w)
        out += wt * vals[idx]
    return out


def interpolate(grid: TensorGrid, values: np.ndarray, point: Sequence[float]) -> float:
    return float(interpolate_many(grid, values, np.asarray(point, dtype=float)[None, :])[0])


@dataclass(frozen=True, eq=False)
class Member:
    level: LevelIndex
    coefficient: int
    grid: TensorGrid
    trajectory: Trajectory


@dataclass(frozen=True, eq=False)
class CombinationSolution:
    q: int
    members: tuple

    @property
    def times(self) -> np.ndarray:
        return self.members[0].trajectory.times

    @property
    def total_points(self) -> int:
        return sum(m.grid.total_size for m in self.members)

    @property
    def lower(self) -> np.ndarray:
        return np.max([m.grid.lower for m in self.members], axis=0)

    @property
    def upper(self) -> np.ndarray:
        return np.min([m.grid.upper for m in self.members], axis=0)


def solve_combination(
    q: int,
    axis_families: Sequence[AxisFamily],
    problem_factory: Callable[[TensorGrid], BackwardProblem],
    tab: ExpRKTableau | str,
    n_steps: int,
    krylov_m: int = 100,
    store: bool = True,
) -> CombinationSolution:
    """Solve every member of the level-``q`` combination (serially, in enumeration order)."""
    d = len(axis_families)
    if isinstance(tab, str):
        tab = tableau(tab)
    members = []
    for lv in enumerate_levels(q, d):
        grid = TensorGrid(tuple(fam(l) for fam, l in zip(axis_families, lv)))
        traj = solve_backward(tab, problem_factory(grid), n_steps, krylov_m, store=store)
        members.append(Member(lv, combination_coefficient(q, d, lv), grid, traj))
    return CombinationSolution(q=q, members=tuple(members))


def evaluate_combined(sol: CombinationSolution, t_index: int, point) -> float | np.ndarray:
    """Combined solution at time slice ``t_index``; ``point`` may be ``(d,)`` or ``(M, d)``."""
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.zeros(pts.shape[0])
    for m in sol.members:
        out += m.coefficient * interpolate_many(m.grid, m.trajectory.values[t_index], pts)
    return float(out[0]) if single else out


def write_members_csv(sol: CombinationSolution, path: str | Path) -> None:
    """One row per member: level tuple, coefficient, per-axis sizes, total size."""
    d = sol.members[0].grid.ndim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "coefficient"] + [f"n_{p}" for p in range(d)] + ["points"])
        for m in sol.members:
            w.writerow(["-".join(map(str, m.level.levels)), m.coefficient, *m.grid.shape, m.grid.total_size])
