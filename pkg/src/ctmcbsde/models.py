"""Model catalogue: coefficients, drivers, payoffs and reference prices.

Every ``DriverSpec.f`` is in PDE convention: it is the term ``f`` in
``du/dt + L u + f(t, x, u, sigma^T grad u) = 0``.  BSDEs written as
``Y_t = xi - int f ds - int Z dW`` therefore enter with the sign flipped.

Drivers are vectorized over nodes: ``f(t, x, y, z)`` receives ``x`` of shape
``(N, d)``, ``y`` of shape ``(N,)`` and ``z`` of shape ``(N, k)`` and returns
``(N,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import erfc

from .generator import DifferenceSet
from .grid import TensorGrid

__all__ = [
    "Model1D",
    "SLVModel",
    "MultiAssetSLV",
    "DriverSpec",
    "norm_cdf",
    "assemble_F",
    "bs_analytic_price",
    "linear_driver",
    "linear_bs_driver",
    "nonlinear_rates_driver",
    "slv_assemble",
    "slv_driver",
    "heston_sabr",
    "hyphyp",
    "hyphyp_F",
    "hyphyp_G",
    "sabr",
    "hagan_implied_vol",
    "hagan_sabr_price",
    "basket_transform",
    "transform_coefficients",
    "transform_driver",
    "call_payoff",
    "put_payoff",
    "call_spread_payoff",
    "basket_call_payoff",
]


def norm_cdf(x):
    """Standard normal CDF through ``erfc`` (accurate in both tails)."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class Model1D:
    mu: Callable
    sigma: Callable


@dataclass(frozen=True)
class SLVModel:
    """``dS = omega(S, v) dt + m(v) Gamma(S) dW1``, ``dv = mu_v(v) dt + sigma_v(v) dW2``."""

    omega: Callable
    m: Callable
    gamma: Callable
    mu_v: Callable
    sigma_v: Callable
    rho: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"correlation must lie in (-1, 1), got {self.rho}")

    @property
    def cholesky(self) -> np.ndarray:
        r = self.rho
        return np.array([[1.0, 0.0], [r, math.sqrt(1.0 - r * r)]])

    def diagonal(self, pts: np.ndarray) -> np.ndarray:
        s, v = pts[:, 0], pts[:, 1]
        return np.column_stack([self.m(v) * self.gamma(s), self.sigma_v(v)])

    def drift(self, pts: np.ndarray) -> np.ndarray:
        s, v = pts[:, 0], pts[:, 1]
        return np.column_stack([
            np.broadcast_to(self.omega(s, v), s.shape),
            np.broadcast_to(self.mu_v(v), v.shape),
        ]).astype(float)

    def diffusion(self, pts: np.ndarray) -> np.ndarray:
        return self.diagonal(pts)[:, :, None] * self.cholesky[None, :, :]


@dataclass(frozen=True)
class MultiAssetSLV:
    """``d`` SLV components with state ordering ``(s_1..s_d, v_1..v_d)``."""

    components: tuple
    c_s: np.ndarray
    c_sv: np.ndarray
    c_v: np.ndarray
    cholesky: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        comps = tuple(self.components)
        d = len(comps)
        blocks = [np.asarray(b, dtype=float) for b in (self.c_s, self.c_sv, self.c_v)]
        if any(b.shape != (d, d) for b in blocks):
            raise ValueError(f"correlation blocks must be {d}x{d}")
        c = np.block([[blocks[0], blocks[1]], [blocks[1].T, blocks[2]]])
        if not np.allclose(c, c.T, atol=1e-14):
            raise ValueError("assembled correlation matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise ValueError("assembled correlation matrix is not positive definite") from exc
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "cholesky", chol)

    @property
    def n_assets(self) -> int:
        return len(self.components)

    @property
    def correlation(self) -> np.ndarray:
        return self.cholesky @ self.cholesky.T

    def diagonal(self, pts: np.ndarray) -> np.ndarray:
        d = self.n_assets
        cols = []
        for i, c in enumerate(self.components):
            cols.append(c.m(pts[:, d + i]) * c.gamma(pts[:, i]))
        for i, c in enumerate(self.components):
            cols.append(np.broadcast_to(c.sigma_v(pts[:, d + i]), pts.shape[:1]))
        return np.column_stack(cols).astype(float)

    def drift(self, pts: np.ndarray) -> np.ndarray:
        d = self.n_assets
        cols = []
        for i, c in enumerate(self.components):
            cols.append(np.broadcast_to(c.omega(pts[:, i], pts[:, d + i]), pts.shape[:1]))
        for i, c in enumerate(self.components):
            cols.append(np.broadcast_to(c.mu_v(pts[:, d + i]), pts.shape[:1]))
        return np.column_stack(cols).astype(float)

    def diffusion(self, pts: np.ndarray) -> np.ndarray:
        return self.diagonal(pts)[:, :, None] * self.cholesky[None, :, :]


@dataclass(frozen=True)
class DriverSpec:
    f: Callable
    name: str = "driver"

    def __call__(self, t, x, y, z):
        return self.f(t, x, y, z)


def assemble_F(
    grid: TensorGrid, diffs: DifferenceSet, model_sigma: Callable, driver: DriverSpec
) -> Callable:
    """Nodal nonlinearity ``F(t, u)_i = f(t, x_i, u_i, sigma(x_i)^T (D1 u)_i)``.

    ``model_sigma`` maps ``(N, d)`` points to ``(N, d, k)`` diffusion
    matrices; boundary rows see a zero gradient because ``D1`` vanishes there.
    """
    pts = grid.points()
    sig = np.asarray(model_sigma(pts), dtype=float)
    if sig.ndim != 3 or sig.shape[:2] != pts.shape:
        raise ValueError(f"diffusion has shape {sig.shape}, expected ({pts.shape[0]}, {pts.shape[1]}, k)")
    d1 = diffs.d1

    def F(t, u):
        grad = np.column_stack([op @ u for op in d1])
        z = np.einsum("nik,ni->nk", sig, grad)
        out = np.asarray(driver(t, pts, u, z), dtype=float)
        if out.shape != u.shape:
            out = np.broadcast_to(out, u.shape).astype(float)
        bad = ~np.isfinite(out)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise FloatingPointError(f"driver is not finite at node {i} (x={pts[i].tolist()})")
        return out

    return F


def bs_analytic_price(s, t, K, r, sigma, T):
    """European call price and ``Z = s * Psi(d1) * sigma`` under Black-Scholes.

    At ``t >= T`` the payoff ``(s - K)^+`` and ``Z = 0`` are returned.
    """
    s = np.asarray(s, dtype=float)
    tau = T - np.asarray(t, dtype=float)
    payoff = np.maximum(s - K, 0.0)
    live = (tau > 0) & (s > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vol = sigma * np.sqrt(np.where(live, tau, 1.0))
        d1 = (np.log(np.where(live, s, 1.0) / K) + (r + 0.5 * sigma**2) * np.where(live, tau, 1.0)) / vol
        d2 = d1 - vol
        price = s * norm_cdf(d1) - K * np.exp(-r * np.where(live, tau, 0.0)) * norm_cdf(d2)
    price = np.where(live, price, payoff)
    z = np.where(live, s * norm_cdf(d1) * sigma, 0.0)
    if price.ndim == 0:
        return float(price), float(z)
    return price, z


def linear_driver(r: float) -> DriverSpec:
    """Pure discounting, ``f = -r y``."""
    return DriverSpec(lambda t, x, y, z: -r * y, name="linear")


def linear_bs_driver(mu: float, sigma: float, r: float) -> DriverSpec:
    """Replication driver for a single lending/borrowing rate: ``-r y + (r - mu)/sigma z``."""
    return DriverSpec(
        lambda t, x, y, z: -r * y + (r - mu) / sigma * z[:, 0], name="linear_bs"
    )


def _rate_terms(a, r, R):
    # (a)^+ and (a)^- = max(-a, 0) are both nonnegative
    return r * np.maximum(a, 0.0) - R * np.maximum(-a, 0.0)


def nonlinear_rates_driver(mu: float, sigma: float, r: float, R: float) -> DriverSpec:
    """Different lending ``r`` and borrowing ``R`` rates, geometric Brownian asset.

    ``z`` is ``sigma * s * du/ds`` so ``z / sigma`` is the stock holding.
    """
    if R < r:
        raise ValueError("borrowing rate R must be >= lending rate r")

    def f(t, x, y, z):
        zz = z[:, 0]
        return -(_rate_terms(y - zz / sigma, r, R) + mu / sigma * zz)

    return DriverSpec(f, name="nonlinear_rates")


def slv_assemble(model: SLVModel | MultiAssetSLV):
    """``(drift, diffusion)`` callbacks on ``(N, d)`` point arrays."""
    if isinstance(model, SLVModel) and not -1.0 < model.rho < 1.0:
        raise ValueError("correlation must lie in (-1, 1)")
    return model.drift, model.diffusion


def _holdings(model, x, z):
    """``z^T sigma(x)^{-1}`` via ``sigma = D L``: triangular solve then diagonal scaling."""
    diag = model.diagonal(x)
    bad = ~np.isfinite(diag) | (np.abs(diag) < 1e-300)
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        raise FloatingPointError(f"singular diffusion at node {i} (x={x[i].tolist()})")
    u = scipy.linalg.solve_triangular(model.cholesky.T, z.T, lower=False).T
    return u / diag


def slv_driver(model: SLVModel | MultiAssetSLV, r: float, R: float) -> DriverSpec:
    """Two-rate replication driver for (multi-asset) SLV models.

    ``a = y - z^T sigma^{-1} x`` is the bond position; ``z^T sigma^{-1} mu``
    the drift gain of the risky holdings.
    """
    if R < r:
        raise ValueError("borrowing rate R must be >= lending rate r")

    def f(t, x, y, z):
        w = _holdings(model, x, z)
        a = y - np.einsum("nk,nk->n", w, x)
        return -(_rate_terms(a, r, R) + np.einsum("nk,nk->n", w, model.drift(x)))

    return DriverSpec(f, name="slv_rates")


def _sqrt_abs(v):
    # absolute value keeps Euler paths that dip below zero evaluable
    return np.sqrt(np.abs(v))


def heston_sabr(b, beta, eta, theta, alpha, rho) -> SLVModel:
    """``dS = b S dt + sqrt(v) S^beta dW1``, ``dv = eta (theta - v) dt + alpha sqrt(v) dW2``."""
    if not (eta > 0 and theta > 0 and alpha > 0):
        raise ValueError("eta, theta and alpha must be positive")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    return SLVModel(
        omega=lambda s, v: b * s,
        m=_sqrt_abs,
        gamma=lambda s: np.abs(s) ** beta,
        mu_v=lambda v: eta * (theta - v),
        sigma_v=lambda v: alpha * _sqrt_abs(v),
        rho=rho,
    )


def hyphyp_F(x, beta):
    x = np.asarray(x, dtype=float)
    return ((1 - beta + beta**2) * x + (beta - 1) * (np.sqrt(x**2 + beta**2 * (1 - x) ** 2) - beta)) / beta


def hyphyp_G(v):
    v = np.asarray(v, dtype=float)
    return v + np.sqrt(v**2 + 1)


def hyphyp(b, beta, kappa, sigma0, alpha, rho) -> SLVModel:
    """``dS = b S dt + sigma0 F(S) G(v) dW1``, ``dv = -kappa v dt + alpha sqrt(2 kappa) dW2``."""
    if not (kappa > 0 and alpha > 0 and sigma0 > 0):
        raise ValueError("kappa, alpha and sigma0 must be positive")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    vol_v = alpha * math.sqrt(2 * kappa)
    return SLVModel(
        omega=lambda s, v: b * s,
        m=lambda v: sigma0 * hyphyp_G(v),
        gamma=lambda s: hyphyp_F(s, beta),
        mu_v=lambda v: -kappa * v,
        sigma_v=lambda v: np.full_like(np.asarray(v, dtype=float), vol_v),
        rho=rho,
    )


def sabr(alpha, beta, rho) -> SLVModel:
    """Driftless ``dF = v F^beta dW1``, ``dv = alpha v dW2``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    return SLVModel(
        omega=lambda s, v: np.zeros_like(np.asarray(s, dtype=float)),
        m=lambda v: np.asarray(v, dtype=float),
        gamma=lambda s: np.abs(s) ** beta,
        mu_v=lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        sigma_v=lambda v: alpha * np.asarray(v, dtype=float),
        rho=rho,
    )


def hagan_implied_vol(f, v, tau, K, alpha, beta, rho, form: str = "hagan"):
    """Hagan's lognormal implied volatility with an explicit at-the-money limit.

    ``form="hagan"`` is the customary expansion: ``(f K)^((1 - beta)/2)`` in
    ``z`` and a vol-of-vol factor ``alpha^2`` on the ``(2 - 3 rho^2)/24`` term.
    ``form="printed"`` uses ``(f K)^((1 - beta^2)/2)`` in ``z`` and drops that
    factor, a variant kept only for comparison.
    """
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(f <= 0) or np.any(v <= 0) or K <= 0:
        raise ValueError("hagan_implied_vol needs f, v, K > 0")
    if form == "hagan":
        zpow, nu2 = (1 - beta) / 2, alpha**2
    elif form == "printed":
        zpow, nu2 = (1 - beta**2) / 2, 1.0
    else:
        raise ValueError(f"unknown form {form!r}")
    fk = f * K
    lfk = np.log(f / K)
    omb = 1 - beta
    num = v * (
        1
        + (omb**2 / 24 * v**2 / fk**omb + 0.25 * rho * beta * alpha * v / fk ** (omb / 2)
           + (2 - 3 * rho**2) / 24 * nu2) * tau
    )
    den = fk ** (omb / 2) * (1 + omb**2 / 24 * lfk**2 + omb**4 / 1920 * lfk**4)
    z = alpha / v * fk**zpow * lfk
    small = np.abs(z) < 1e-7
    zs = np.where(small, 1.0, z)
    chi = np.log((np.sqrt(1 - 2 * rho * zs + zs**2) + zs - rho) / (1 - rho))
    # z / chi(z) = 1 + rho z / 2 + O(z^2) near the money
    ratio = np.where(small, 1 + 0.5 * rho * z, zs / np.where(small, 1.0, chi))
    return num / den * ratio


def hagan_sabr_price(
    f, v, t, K, T, r, alpha, beta, rho, form: str = "hagan", rate_in_d: bool = False
):
    """Discounted Black call price with Hagan's implied volatility.

    ``rate_in_d`` adds an ``r (T - t)`` drift inside ``d1, d2``; the forward
    measure version (default) leaves it out.
    """
    tau = T - np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.all(tau <= 0):
        return np.maximum(f - K, 0.0)
    sb = hagan_implied_vol(f, v, np.maximum(tau, 0.0), K, alpha, beta, rho, form)
    drift = r if rate_in_d else 0.0
    sq = sb * np.sqrt(np.maximum(tau, 1e-300))
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(f / K) + (drift + 0.5 * sb**2) * tau) / sq
        d2 = (np.log(f / K) + (drift - 0.5 * sb**2) * tau) / sq
        price = np.exp(-r * tau) * (f * norm_cdf(d1) - K * norm_cdf(d2))
    price = np.where(tau > 0, price, np.maximum(f - K, 0.0))
    return float(price) if price.ndim == 0 else price


def basket_transform(lambda1: float, lambda2: float):
    """``B`` mapping ``(s1, s2, v1, v2)`` to ``(l1 s1 + l2 s2, -l1 s1 + l2 s2, v1, v2)`` and its inverse."""
    if lambda1 == 0 or lambda2 == 0:
        raise ValueError("basket weights must be nonzero (B would be singular)")
    B = np.eye(4)
    B[:2, :2] = [[lambda1, lambda2], [-lambda1, lambda2]]
    inv = np.eye(4)
    inv[:2, :2] = [[0.5 / lambda1, -0.5 / lambda1], [0.5 / lambda2, 0.5 / lambda2]]
    return B, inv


def transform_coefficients(drift: Callable, diffusion: Callable, B: np.ndarray, B_inv: np.ndarray):
    """Coefficients of ``B X``: ``x -> B mu(B^-1 x)`` and ``x -> B sigma(B^-1 x)``."""

    def t_drift(pts):
        return drift(pts @ B_inv.T) @ B.T

    def t_diffusion(pts):
        return np.einsum("ij,njk->nik", B, diffusion(pts @ B_inv.T))

    return t_drift, t_diffusion


def transform_driver(driver: DriverSpec, B_inv: np.ndarray) -> DriverSpec:
    """Evaluate ``driver`` at original coordinates ``B^-1 x``; ``z`` is invariant."""
    return DriverSpec(lambda t, x, y, z: driver(t, x @ B_inv.T, y, z), name=driver.name)


def call_payoff(K: float) -> Callable:
    return lambda s: np.maximum(np.asarray(s, dtype=float) - K, 0.0)


def put_payoff(K: float) -> Callable:
    return lambda s: np.maximum(K - np.asarray(s, dtype=float), 0.0)


def call_spread_payoff(k_low: float = 95.0, k_high: float = 105.0, ratio: float = 2.0) -> Callable:
    """``(s - k_low)^+ - ratio (s - k_high)^+``."""

    def g(s):
        s = np.asarray(s, dtype=float)
        return np.maximum(s - k_low, 0.0) - ratio * np.maximum(s - k_high, 0.0)

    return g


def basket_call_payoff(weights: Sequence[float], K: float) -> Callable:
    """``(sum_i w_i s_i - K)^+`` on ``(..., d)`` arrays of asset prices."""
    w = np.asarray(weights, dtype=float)
    return lambda s: np.maximum(np.asarray(s, dtype=float)[..., : w.size] @ w - K, 0.0)
