"""Finite-difference generator matrices on tensor grids.

The generator ``Q`` discretizes ``L u = mu . grad u + 1/2 tr(sigma sigma^T hess u)``
with three-point central differences on (possibly non-uniform) axes.  Boundary
rows of every difference matrix are zero, so boundary nodes are absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .grid import Grid1D, TensorGrid

__all__ = [
    "DifferenceSet",
    "Generator",
    "ValidityReport",
    "build_d1",
    "build_d2",
    "build_differences",
    "build_generator_1d",
    "build_generator_nd",
    "check_validity",
    "check_structural_condition",
    "structural_violations",
    "write_coo",
]


def _tridiag(n, lower, diag, upper) -> sp.csr_matrix:
    # rows 1..n-2 only; rows 0 and n-1 stay empty
    rows = np.repeat(np.arange(1, n - 1), 3)
    cols = (np.arange(1, n - 1)[:, None] + np.array([-1, 0, 1])).ravel()
    vals = np.column_stack([lower, diag, upper]).ravel()
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.eliminate_zeros()
    return m


def _check_len(grid: Grid1D):
    if len(grid) < 3:
        raise ValueError("difference matrices need at least 3 nodes")


def build_d1(grid: Grid1D) -> sp.csr_matrix:
    """Central first-difference matrix; exact for affine functions on any grid."""
    _check_len(grid)
    dx = grid.spacing
    hm, hp = dx[:-1], dx[1:]
    lower = -hp / (hm * (hm + hp))
    diag = (hp - hm) / (hp * hm)
    upper = hm / (hp * (hm + hp))
    return _tridiag(len(grid), lower, diag, upper)


def build_d2(grid: Grid1D) -> sp.csr_matrix:
    """Central second-difference matrix; exact for quadratics on uniform grids."""
    _check_len(grid)
    dx = grid.spacing
    hm, hp = dx[:-1], dx[1:]
    lower = 2.0 / (hm * (hm + hp))
    diag = -2.0 / (hp * hm)
    upper = 2.0 / (hp * (hm + hp))
    return _tridiag(len(grid), lower, diag, upper)


def _embed(mat: sp.spmatrix, p: int, shape: tuple) -> sp.csr_matrix:
    """``I (x) ... (x) mat (x) ... (x) I`` with ``mat`` at axis ``p``."""
    before = int(np.prod(shape[:p], dtype=np.int64))
    after = int(np.prod(shape[p + 1:], dtype=np.int64))
    out = sp.kron(sp.identity(before, format="csr"), mat, format="csr")
    return sp.kron(out, sp.identity(after, format="csr"), format="csr")


@dataclass(frozen=True, eq=False)
class DifferenceSet:
    """Per-axis first/second differences lifted to the full tensor grid."""

    grid: TensorGrid
    d1: tuple
    d2: tuple
    cross: dict = field(default_factory=dict)


def build_differences(grid: TensorGrid) -> DifferenceSet:
    shape = grid.shape
    d1 = tuple(_embed(build_d1(ax), p, shape) for p, ax in enumerate(grid.axes))
    d2 = tuple(_embed(build_d2(ax), p, shape) for p, ax in enumerate(grid.axes))
    cross = {}
    for p in range(grid.ndim):
        for q in range(p + 1, grid.ndim):
            # axes p and q act on disjoint Kronecker slots, so the product is
            # the Kronecker matrix with D1 at both slots
            cross[(p, q)] = (d1[p] @ d1[q]).tocsr()
    return DifferenceSet(grid=grid, d1=d1, d2=d2, cross=cross)


@dataclass(frozen=True, eq=False)
class Generator:
    """Sparse generator ``q`` with the nodal coefficients it was built from.

    ``drift`` has shape ``(N, d)`` and ``covariance`` (``sigma sigma^T``)
    shape ``(N, d, d)``.
    """

    q: sp.csr_matrix
    differences: DifferenceSet
    drift: np.ndarray
    covariance: np.ndarray

    @property
    def grid(self) -> TensorGrid:
        return self.differences.grid

    @property
    def dimension(self) -> int:
        return self.q.shape[0]


def _nodal(fn: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a scalar coefficient at every node, vectorized when possible."""
    try:
        out = np.asarray(fn(x), dtype=float)
    except (TypeError, ValueError):
        out = None
    if out is None or out.shape not in ((), x.shape):
        out = np.array([float(fn(xi)) for xi in x])
    return np.broadcast_to(out, x.shape).astype(float)


def _assemble(diffs: DifferenceSet, drift: np.ndarray, cov: np.ndarray) -> sp.csr_matrix:
    d = diffs.grid.ndim
    q = sp.csr_matrix((diffs.grid.total_size,) * 2)
    for p in range(d):
        q = q + sp.diags(drift[:, p]) @ diffs.d1[p]
        q = q + sp.diags(0.5 * cov[:, p, p]) @ diffs.d2[p]
    for (p, r), mat in diffs.cross.items():
        # (sigma sigma^T) is symmetric: the (p,r) and (r,p) mixed terms coincide
        q = q + sp.diags(cov[:, p, r]) @ mat
    q = q.tocsr()
    q.sum_duplicates()
    q.eliminate_zeros()
    return q


def build_generator_1d(
    grid: Grid1D, mu: Callable, sigma: Callable
) -> Generator:
    """``Q = diag(mu) D1 + 1/2 diag(sigma^2) D2`` on a single axis."""
    tgrid = TensorGrid((grid,))
    diffs = build_differences(tgrid)
    x = grid.nodes
    m = _nodal(mu, x)
    s = _nodal(sigma, x)
    drift = m[:, None]
    cov = (s * s)[:, None, None]
    return Generator(_assemble(diffs, drift, cov), diffs, drift, cov)


def build_generator_nd(
    grid: TensorGrid, drift: Callable, diffusion: Callable
) -> Generator:
    """Generator of ``dX = drift(X) dt + diffusion(X) dW`` on a tensor grid.

    Both callbacks are vectorized over nodes: they receive an ``(N, d)``
    array of points and return ``(N, d)`` drifts and ``(N, d, k)`` diffusion
    matrices respectively.
    """
    pts = grid.points()
    n, d = pts.shape
    mu = np.asarray(drift(pts), dtype=float)
    sig = np.asarray(diffusion(pts), dtype=float)
    if mu.shape != (n, d):
        raise ValueError(f"drift returned shape {mu.shape}, expected {(n, d)}")
    if sig.ndim != 3 or sig.shape[:2] != (n, d):
        raise ValueError(f"diffusion returned shape {sig.shape}, expected ({n}, {d}, k)")
    cov = np.einsum("nik,njk->nij", sig, sig)
    diffs = build_differences(grid)
    return Generator(_assemble(diffs, mu, cov), diffs, mu, cov)


@dataclass
class ValidityReport:
    valid: bool
    min_offdiag: float
    max_row_sum: float
    violations: list
    step_condition: bool | None = None
    max_step: float | None = None
    step_bound: float | None = None


def check_validity(
    gen, tol: float = 1e-12, row_tol: float = 1e-10
) -> ValidityReport:
    """Check whether ``gen`` (a Generator or bare matrix) is a Q-matrix.

    Off-diagonal entries must be ``>= -tol`` and every row must sum to zero
    within ``row_tol`` relative to the row's largest entry.  For 1-D
    generators the sufficient mesh condition ``max dx <= min sigma^2/|mu|``
    (taken over nodes with ``mu != 0``) is evaluated as well.
    """
    q = gen.q if isinstance(gen, Generator) else sp.csr_matrix(gen)
    coo = q.tocoo()
    off = coo.row != coo.col
    neg = off & (coo.data < -tol)
    violations = [
        (int(i), int(j), float(v))
        for i, j, v in zip(coo.row[neg], coo.col[neg], coo.data[neg])
    ]
    row_sums = np.asarray(q.sum(axis=1)).ravel()
    row_scale = np.asarray(abs(q).max(axis=1).todense()).ravel()
    bad_rows = np.abs(row_sums) > row_tol * np.maximum(row_scale, 1.0)
    for i in np.flatnonzero(bad_rows):
        violations.append((int(i), -1, float(row_sums[i])))
    min_off = float(coo.data[off].min()) if off.any() else 0.0
    report = ValidityReport(
        valid=not violations,
        min_offdiag=min_off,
        max_row_sum=float(np.abs(row_sums).max()) if row_sums.size else 0.0,
        violations=violations,
    )
    if isinstance(gen, Generator) and gen.grid.ndim == 1:
        mu = gen.drift[:, 0]
        var = gen.covariance[:, 0, 0]
        moving = mu != 0
        bound = float(np.min(var[moving] / np.abs(mu[moving]))) if moving.any() else np.inf
        max_step = float(gen.grid.axes[0].spacing.max())
        report.max_step = max_step
        report.step_bound = bound
        report.step_condition = 0 < max_step <= bound
    return report


def structural_violations(gen: Generator, tol: float = 1e-12) -> list:
    """Entries breaking ``Q[j, i] == 0  =>  D1[j, i] == 0`` or ``D1 @ 1 == 0``."""
    q = gen.q
    out = []
    for p, d1 in enumerate(gen.differences.d1):
        pattern = d1.copy()
        pattern.data = np.ones_like(pattern.data)
        qmask = q.copy()
        qmask.data = np.ones_like(qmask.data)
        # entries where D1 is nonzero but Q has no entry
        missing = (pattern - pattern.multiply(qmask)).tocoo()
        missing.eliminate_zeros()
        out.extend((p, int(i), int(j)) for i, j in zip(missing.row, missing.col))
        sums = np.asarray(d1.sum(axis=1)).ravel()
        scale = np.asarray(abs(d1).max(axis=1).todense()).ravel()
        bad = np.abs(sums) > tol * np.maximum(scale, 1.0)
        out.extend((p, int(i), -1) for i in np.flatnonzero(bad))
    return out


def check_structural_condition(gen: Generator) -> bool:
    return not structural_violations(gen)


def write_coo(mat: sp.spmatrix, path: str | Path) -> None:
    """``row col value`` per line, 0-based, full precision."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")
