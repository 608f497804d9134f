"""One-dimensional spatial grids and their tensor products."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Grid1D",
    "TensorGrid",
    "uniform_grid",
    "tavella_randall_grid",
    "concat_grids",
    "flatten",
    "unflatten",
    "write_grid",
    "read_grid",
]


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Strictly increasing node set ``x_{-N0} < ... < x_{N0}`` of odd length.

    Nodes are stored 0-based; ``signed_index``/``offset`` convert to the
    symmetric ``-N0..N0`` labelling.
    """

    nodes: np.ndarray

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float).ravel()
        if x.size < 3 or x.size % 2 == 0:
            raise ValueError(f"grid length must be odd and >= 3, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise ValueError("grid nodes must be finite")
        if not np.all(np.diff(x) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    def __len__(self) -> int:
        return self.nodes.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid1D) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self) -> int:
        return hash(self.nodes.tobytes())

    @property
    def half_count(self) -> int:
        return (self.nodes.size - 1) // 2

    @property
    def spacing(self) -> np.ndarray:
        """``dx[i] = x[i+1] - x[i]``, length ``N - 1``."""
        return np.diff(self.nodes)

    @property
    def left(self) -> float:
        return float(self.nodes[0])

    @property
    def right(self) -> float:
        return float(self.nodes[-1])

    @property
    def center(self) -> float:
        return float(self.nodes[self.half_count])

    def signed_index(self, offset: int) -> int:
        return offset - self.half_count

    def offset(self, signed_index: int) -> int:
        n0 = self.half_count
        if not -n0 <= signed_index <= n0:
            raise IndexError(f"signed index {signed_index} outside [-{n0}, {n0}]")
        return signed_index + n0

    def locate(self, value: float, atol: float = 1e-12) -> int:
        """0-based offset of the node equal to ``value`` (within ``atol``)."""
        i = int(np.argmin(np.abs(self.nodes - value)))
        if abs(self.nodes[i] - value) > atol * max(1.0, abs(value)):
            raise ValueError(f"{value} is not a grid node")
        return i


def _check_bounds(left, center, right, half_count):
    if not (left < center < right):
        raise ValueError(f"need left < center < right, got ({left}, {center}, {right})")
    if int(half_count) != half_count or half_count < 1:
        raise ValueError(f"half_count must be a positive integer, got {half_count}")


def uniform_grid(left: float, center: float, right: float, half_count: int) -> Grid1D:
    """Piecewise-uniform grid: ``half_count`` equal cells on each side of ``center``.

    When ``center`` is the midpoint this is the plain equally spaced grid.
    """
    _check_bounds(left, center, right, half_count)
    n0 = int(half_count)
    k = np.arange(-n0, n0 + 1, dtype=float)
    x = np.where(
        k < 0,
        center + (center - left) * k / n0,
        center + (right - center) * k / n0,
    )
    x[0], x[n0], x[-1] = left, center, right
    return Grid1D(x)


def tavella_randall_grid(
    left: float, center: float, right: float, half_count: int, g1: float, g2: float
) -> Grid1D:
    """Sinh-stretched grid concentrated around ``center``.

    ``g1`` and ``g2`` control the stretching left and right of the center;
    small values cluster nodes tightly, large values approach a uniform grid.
    """
    _check_bounds(left, center, right, half_count)
    if not (g1 > 0 and g2 > 0):
        raise ValueError(f"g1 and g2 must be positive, got ({g1}, {g2})")
    n0 = int(half_count)
    k = np.arange(-n0, n0 + 1, dtype=float)
    a1 = math.asinh((center - left) / g1)
    a2 = math.asinh((right - center) / g2)
    x = np.where(
        k <= 0,
        center + g1 * np.sinh(a1 * k / n0),
        center + g2 * np.sinh(a2 * k / n0),
    )
    # pin the anchors against rounding in sinh(asinh(.))
    x[0], x[n0], x[-1] = left, center, right
    return Grid1D(x)


def concat_grids(a: Grid1D, b: Grid1D, atol: float = 1e-12) -> Grid1D:
    """Join two grids sharing exactly one endpoint (``a.right == b.left``)."""
    if abs(a.right - b.left) > atol * max(1.0, abs(a.right)):
        raise ValueError(
            f"grids must meet at a single shared node: {a.right} != {b.left}"
        )
    return Grid1D(np.concatenate([a.nodes, b.nodes[1:]]))


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Tensor product of 1-D axes, flattened lexicographically (last axis fastest)."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes:
            raise ValueError("a tensor grid needs at least one axis")
        for ax in axes:
            if not isinstance(ax, Grid1D):
                raise TypeError("axes must be Grid1D instances")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_axes(cls, *axes: Grid1D) -> "TensorGrid":
        return cls(tuple(axes))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(ax) for ax in self.axes)

    @property
    def total_size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self) -> tuple:
        shape = self.shape
        out = [1] * len(shape)
        for p in range(len(shape) - 2, -1, -1):
            out[p] = out[p + 1] * shape[p + 1]
        return tuple(out)

    @property
    def lower(self) -> np.ndarray:
        return np.array([ax.left for ax in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([ax.right for ax in self.axes])

    def __eq__(self, other) -> bool:
        return isinstance(other, TensorGrid) and self.axes == other.axes

    def __hash__(self) -> int:
        return hash(self.axes)

    def points(self) -> np.ndarray:
        """All nodes as a ``(total_size, ndim)`` array in flattening order."""
        mesh = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def axis_values(self, p: int) -> np.ndarray:
        """Coordinate ``p`` of every flattened node."""
        mesh_shape = [1] * self.ndim
        mesh_shape[p] = -1
        vals = self.axes[p].nodes.reshape(mesh_shape)
        return np.broadcast_to(vals, self.shape).ravel()


def flatten(grid: TensorGrid, multi_index: Sequence[int]) -> int:
    shape = grid.shape
    if len(multi_index) != len(shape):
        raise ValueError(f"expected {len(shape)} indices, got {len(multi_index)}")
    flat = 0
    for i, n, stride in zip(multi_index, shape, grid.strides):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for axis of size {n}")
        flat += int(i) * stride
    return flat


def unflatten(grid: TensorGrid, i: int) -> tuple:
    if not 0 <= i < grid.total_size:
        raise IndexError(f"flat index {i} out of range [0, {grid.total_size})")
    out = []
    for stride in grid.strides:
        q, i = divmod(int(i), stride)
        out.append(q)
    return tuple(out)


def write_grid(grid: Grid1D, path: str | Path) -> None:
    """One node per line, round-trip precision."""
    Path(path).write_text("".join(f"{x!r}\n" for x in grid.nodes.tolist()))


def read_grid(path: str | Path) -> Grid1D:
    lines: Iterable[str] = Path(path).read_text().split()
    return Grid1D(np.array([float(s) for s in lines]))
