import math

import numpy as np
import pytest

from ctmcbsde import models as M


def test_norm_cdf_tails():
    assert M.norm_cdf(0.0) == pytest.approx(0.5)
    assert M.norm_cdf(-30.0) > 0
    assert M.norm_cdf(1.959963984540054) == pytest.approx(0.975)


def test_bs_price_parity_and_delta():
    s = np.array([80.0, 100.0, 120.0])
    K, r, sig, T = 100.0, 0.03, 0.2, 1.0
    c, z = M.bs_analytic_price(s, 0.0, K, r, sig, T)
    # call at zero strike limit and lower bound
    assert np.all(c >= np.maximum(s - K * math.exp(-r * T), 0))
    h = 1e-4
    cp, _ = M.bs_analytic_price(s + h, 0.0, K, r, sig, T)
    cm, _ = M.bs_analytic_price(s - h, 0.0, K, r, sig, T)
    assert np.allclose(z, sig * s * (cp - cm) / (2 * h), rtol=1e-6)
    assert M.bs_analytic_price(100.0, 0.0, K, r, sig, T)[0] == pytest.approx(9.4134, abs=1e-4)


def test_bs_price_at_expiry():
    p, z = M.bs_analytic_price(np.array([90.0, 110.0]), 1.0, 100.0, 0.03, 0.2, 1.0)
    assert np.array_equal(p, [0.0, 10.0]) and np.array_equal(z, [0.0, 0.0])


def test_nonlinear_driver_reduces_to_linear_when_rates_equal(rng):
    x = rng.uniform(50, 150, (20, 1))
    y, z = rng.normal(10, 5, 20), rng.normal(0, 5, (20, 1))
    lin = M.linear_bs_driver(0.05, 0.2, 0.01)(0, x, y, z)
    non = M.nonlinear_rates_driver(0.05, 0.2, 0.01, 0.01)(0, x, y, z)
    assert np.allclose(non, lin)


def test_nonlinear_driver_rate_ordering():
    with pytest.raises(ValueError):
        M.nonlinear_rates_driver(0.05, 0.2, 0.06, 0.01)
    f = M.nonlinear_rates_driver(0.0, 0.2, 0.01, 0.06)
    x = np.ones((2, 1))
    out = f(0, x, np.array([10.0, -10.0]), np.zeros((2, 1)))
    # lending earns r on a positive bond position, borrowing pays R
    assert out[0] == pytest.approx(-0.1) and out[1] == pytest.approx(0.6)


@pytest.fixture
def hs():
    return M.heston_sabr(0.0, 0.7, 2.0, 0.04, 0.35, -0.5)


def test_heston_diffusion_value(hs):
    sig = hs.diffusion(np.array([[100.0, 0.035]]))[0]
    assert sig[0, 0] == pytest.approx(math.sqrt(0.035) * 100**0.7)
    assert sig[0, 1] == 0.0
    assert sig[1, 0] == pytest.approx(-0.5 * 0.35 * math.sqrt(0.035))


def test_holdings_invert_diffusion(hs, rng):
    x = np.column_stack([rng.uniform(50, 150, 10), rng.uniform(0.01, 0.5, 10)])
    w = rng.standard_normal((10, 2))
    sig = hs.diffusion(x)
    z = np.einsum("nk,nki->ni", w, sig)  # z^T = w^T sigma
    assert np.allclose(M._holdings(hs, x, z), w)


def test_holdings_singular_raises(hs):
    with pytest.raises(FloatingPointError, match="singular"):
        M._holdings(hs, np.array([[100.0, 0.0]]), np.ones((1, 2)))


def test_model_validation():
    with pytest.raises(ValueError):
        M.heston_sabr(0, 0.7, -1, 0.04, 0.3, 0)
    with pytest.raises(ValueError):
        M.sabr(0.3, 1.5, 0)
    with pytest.raises(ValueError):
        M.hyphyp(0, 0.5, 1, 0.25, 0.3, 1.0)


def test_hyphyp_local_vol_shape():
    assert M.hyphyp_F(1.0, 0.25) == pytest.approx(1.0)
    assert M.hyphyp_G(0.0) == pytest.approx(1.0)
    # beta = 1 makes F the identity
    x = np.linspace(0.1, 3, 7)
    assert np.allclose(M.hyphyp_F(x, 1.0), x)


def test_multi_asset_cholesky_errors():
    comp = M.sabr(0.3, 0.5, 0.0)
    eye = np.eye(2)
    with pytest.raises(ValueError, match="positive definite"):
        M.MultiAssetSLV((comp, comp), eye, 0.99 * np.ones((2, 2)), eye)
    with pytest.raises(ValueError, match="2x2"):
        M.MultiAssetSLV((comp, comp), np.eye(3), eye, eye)
    ok = M.MultiAssetSLV((comp, comp), np.array([[1, 0.5], [0.5, 1]]), 0.1 * eye, eye)
    assert ok.n_assets == 2 and np.allclose(np.diag(ok.correlation), 1)


def test_hagan_atm_continuity():
    kw = dict(alpha=0.4, beta=0.5, rho=-0.3)
    atm = M.hagan_implied_vol(100.0, 0.4, 1.0, 100.0, **kw)
    near = M.hagan_implied_vol(100.0 * (1 + 1e-6), 0.4, 1.0, 100.0, **kw)
    assert near == pytest.approx(atm, rel=1e-5)


def test_hagan_lognormal_limit():
    # beta = 1 with vanishing vol-of-vol is plain Black with vol v
    s = M.hagan_implied_vol(np.array([80.0, 100.0, 125.0]), 0.25, 1.0, 100.0, 1e-10, 1.0, 0.0)
    assert np.allclose(s, 0.25, rtol=1e-9)


def test_hagan_forms_and_errors():
    a = M.hagan_implied_vol(110.0, 0.4, 1.0, 100.0, 0.4, 0.5, -0.3)
    b = M.hagan_implied_vol(110.0, 0.4, 1.0, 100.0, 0.4, 0.5, -0.3, form="printed")
    assert a != b
    with pytest.raises(ValueError):
        M.hagan_implied_vol(110.0, 0.4, 1.0, 100.0, 0.4, 0.5, -0.3, form="other")
    with pytest.raises(ValueError):
        M.hagan_implied_vol(-1.0, 0.4, 1.0, 100.0, 0.4, 0.5, -0.3)


def test_hagan_price_expiry_and_monotone():
    assert M.hagan_sabr_price(110.0, 0.4, 1.0, 100.0, 1.0, 0.01, 0.4, 0.5, -0.3) == 10.0
    p = M.hagan_sabr_price(np.array([90.0, 100.0, 110.0]), 0.4, 0.0, 100.0, 1.0, 0.01, 0.4, 0.5, -0.3)
    assert np.all(np.diff(p) > 0)


def test_basket_transform_roundtrip():
    B, inv = M.basket_transform(0.5, 0.5)
    assert np.allclose(B @ inv, np.eye(4))
    with pytest.raises(ValueError):
        M.basket_transform(0.0, 1.0)


def test_transformed_coefficients_and_payoff_invariance(rng):
    comp = M.heston_sabr(0.0, 0.7, 2.0, 0.04, 0.35, -0.5)
    model = M.MultiAssetSLV((comp, comp), np.array([[1, 0.3], [0.3, 1]]), np.zeros((2, 2)), np.eye(2))
    B, inv = M.basket_transform(0.5, 0.5)
    drift, diff = M.transform_coefficients(model.drift, model.diffusion, B, inv)
    x = np.column_stack([rng.uniform(50, 150, (5, 2)), rng.uniform(0.01, 0.5, (5, 2))])
    y = x @ B.T
    assert np.allclose(drift(y), model.drift(x) @ B.T)
    assert np.allclose(diff(y), np.einsum("ij,njk->nik", B, model.diffusion(x)))
    pay = M.basket_call_payoff([0.5, 0.5], 100.0)
    assert np.allclose(pay(x[:, :2]), np.maximum(y[:, 0] - 100.0, 0))


def test_payoffs():
    s = np.array([90.0, 100.0, 110.0])
    assert np.array_equal(M.call_payoff(100)(s), [0, 0, 10])
    assert np.array_equal(M.put_payoff(100)(s), [10, 0, 0])
    spread = M.call_spread_payoff()
    assert np.allclose(spread(np.array([95.0, 105.0, 200.0])), [0, 10, 10 - 95 * 1.0])
