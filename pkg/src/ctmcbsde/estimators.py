"""scikit-learn style wrappers around the backward solvers.

``fit`` runs a solve and ``predict`` returns ``Y_0`` at query points, so the
solvers compose with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .integrators import BackwardProblem, solve_backward, tableau
from .montecarlo import LSMCConfig, lsmc_runs, run_statistics
from .sparsegrid import evaluate_combined, interpolate_many, solve_combination

__all__ = ["ExpIntegratorSolver", "SparseGridSolver", "LSMCSolver"]


class ExpIntegratorSolver(BaseEstimator):
    """Full-grid method-of-lines solve with an exponential integrator.

    ``fit(grid, problem)`` stores ``trajectory_``; ``predict(X)`` interpolates
    the ``t = 0`` slice at ``(M, d)`` points.
    """

    def __init__(self, scheme="hochost4", n_steps=100, krylov_m=100, store=True):
        self.scheme = scheme
        self.n_steps = n_steps
        self.krylov_m = krylov_m
        self.store = store

    def fit(self, grid, problem: BackwardProblem):
        tableau(self.scheme)  # fail fast on unknown names
        self.grid_ = grid
        self.trajectory_ = solve_backward(self.scheme, problem, self.n_steps, self.krylov_m, self.store)
        return self

    def predict(self, X, t_index=0):
        check_is_fitted(self, "trajectory_")
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        return interpolate_many(self.grid_, self.trajectory_.values[t_index], pts)


class SparseGridSolver(BaseEstimator):
    """Combination-technique solve; ``fit(axis_families, problem_factory)``."""

    def __init__(self, q=7, scheme="hochost4", n_steps=100, krylov_m=100, store=True):
        self.q = q
        self.scheme = scheme
        self.n_steps = n_steps
        self.krylov_m = krylov_m
        self.store = store

    def fit(self, axis_families, problem_factory):
        self.solution_ = solve_combination(
            self.q, axis_families, problem_factory, self.scheme, self.n_steps, self.krylov_m, self.store
        )
        return self

    def predict(self, X, t_index=0):
        check_is_fitted(self, "solution_")
        return evaluate_combined(self.solution_, t_index, np.atleast_2d(np.asarray(X, dtype=float)))


class LSMCSolver(BaseEstimator):
    """Repeated least-squares Monte Carlo runs from a fixed start point.

    ``fit(drift, diffusion, driver, payoff, x0, T)`` sets ``estimates_``,
    ``mean_`` and ``std_``; ``predict`` returns ``mean_`` for every row of
    ``X`` equal to the fitted start point and raises otherwise, since the
    regression scheme only yields ``Y_0`` at ``x0``.
    """

    def __init__(self, n_paths=2**16, n_steps=9, basis_degree=9, seed=0, n_runs=20):
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.basis_degree = basis_degree
        self.seed = seed
        self.n_runs = n_runs

    def fit(self, drift, diffusion, driver, payoff, x0, T):
        cfg = LSMCConfig(self.n_paths, self.n_steps, self.basis_degree, self.seed)
        self.results_ = lsmc_runs(drift, diffusion, driver, payoff, x0, T, cfg, self.n_runs)
        self.estimates_ = np.array([r.y0 for r in self.results_])
        self.mean_, self.std_ = run_statistics(self.estimates_)
        self.x0_ = np.asarray(x0, dtype=float).ravel()
        return self

    def predict(self, X):
        check_is_fitted(self, "mean_")
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.allclose(pts, self.x0_[None, :]):
            raise ValueError("LSMC estimates are only available at the fitted start point")
        return np.full(pts.shape[0], self.mean_)
