import math

import numpy as np
import pytest

from rvp.g_engine import (
    GModel,
    GModelError,
    NovikovError,
    PricingKernel,
    bs_price,
    control_enumeration_value,
    density_normalisation,
    exhaustive_value,
    exponential_martingale,
    g_expectation,
    g_function,
    girsanov_price,
    heat_price,
    is_symmetric_g_martingale,
    load_model,
    novikov_check,
    simulate_gsde,
    superreplication_price,
)

CALL = "max(x-1,0)"
BUTTERFLY = "max(x-0.9,0)-2*max(x-1,0)+max(x-1.1,0)"


def test_g_function_examples():
    assert g_function(0.0, 1, 2) == 0
    assert g_function(1.0, 1, 2) == 2
    assert g_function(-1.0, 1, 2) == -0.5
    assert g_function(3.0, 0.5, 0.5) == pytest.approx(0.5 * 0.25 * 3)
    assert np.allclose(g_function(np.array([-1.0, 1.0]), 1, 2), [-0.5, 2])


def test_model_validation():
    with pytest.raises(GModelError):
        GModel(0.3, 0.1)
    with pytest.raises(GModelError):
        GModel(0.1, 0.2, M=7)
    with pytest.raises(GModelError):
        g_expectation(CALL, GModel(0.1, 0.2), of="rate")


def test_constant_payoff_is_preserved():
    m = GModel(0.1, 0.3, V="x")
    assert g_expectation(2.5, m, "noise").value == pytest.approx(2.5, abs=1e-12)
    assert g_expectation(2.5, m, "asset").value == pytest.approx(2.5, abs=1e-12)
    assert superreplication_price(2.5, m, n_steps=40).value == pytest.approx(2.5, abs=1e-12)


def test_quadratic_noise_payoffs():
    m = GModel(1.0, 2.0)
    assert g_expectation("x*x", m).value == pytest.approx(4.0, rel=1e-3)
    assert g_expectation("-x*x", m).value == pytest.approx(-1.0, rel=1e-3)
    # exact on the adversarial lattice: each step adds the larger variance
    assert exhaustive_value("x*x", m, 6) == pytest.approx(4.0, abs=1e-12)
    assert exhaustive_value("-x*x", m, 6) == pytest.approx(-1.0, abs=1e-12)


def test_noise_mean_is_zero_both_ways():
    m = GModel(0.5, 1.5)
    assert exhaustive_value("x", m, 5) == pytest.approx(0.0, abs=1e-12)
    assert exhaustive_value("-x", m, 5) == pytest.approx(0.0, abs=1e-12)


def test_degenerate_band_matches_closed_forms():
    m = GModel(0.5, 0.5)
    assert g_expectation("x**4", m).value == pytest.approx(heat_price([0, 0, 0, 0, 1], 0.5, 1.0), rel=1e-3)
    bs = GModel(0.2, 0.2, V="x")
    r = g_expectation(CALL, bs, "asset")
    assert r.value == pytest.approx(bs_price(1, 1, 1, 0.2), rel=1e-3)
    assert r.error is not None and r.error < 1e-3


def test_convex_call_takes_upper_volatility():
    m = GModel(0.1, 0.2, V="x")
    assert g_expectation(CALL, m, "asset").value == pytest.approx(bs_price(1, 1, 1, 0.2), rel=1e-3)
    assert g_expectation(CALL, m, "asset", backend="implicit").value == pytest.approx(bs_price(1, 1, 1, 0.2), rel=1e-3)


def test_control_enumeration_matches_lattice():
    m = GModel(0.1, 0.3, V="x")
    v, controls = control_enumeration_value(BUTTERFLY, m, 3, "asset")
    assert v == pytest.approx(exhaustive_value(BUTTERFLY, m, 3, "asset"), abs=1e-12)
    assert len(controls) == 2**3 - 1  # one volatility per node of the sign tree


def test_simulation_examples():
    flat = GModel(0.7, 0.7)
    p = simulate_gsde(flat, None, 50, seed=3)
    assert p.QV[0, -1] == pytest.approx(0.49, abs=1e-12)
    assert np.allclose(np.abs(p.dB), 0.7 * math.sqrt(1 / 50))
    band = GModel(0.5, 1.5)
    ctl = lambda t, B, QV, S: np.where(B > 0, 0.5, 1.5)
    q = simulate_gsde(band, ctl, 40, seed=1, n_paths=200, noise="normal")
    tol = 1e-12
    assert np.all(q.QV >= 0.25 * q.t - tol) and np.all(q.QV <= 2.25 * q.t + tol)
    drift = GModel(1.0, 1.0, mu=0.1, V=1.0)
    r = simulate_gsde(drift, 1.0, 20, seed=7, n_paths=20000)
    assert abs(r.S[:, -1].mean() - 1.1) < 4 / math.sqrt(20000)
    again = simulate_gsde(drift, 1.0, 20, seed=7, n_paths=20000)
    assert np.array_equal(r.S, again.S)
    with pytest.raises(GModelError):
        simulate_gsde(band, 2.0, 5)


def test_exponential_martingale_examples():
    m = GModel(0.8, 0.8)
    p = simulate_gsde(m, None, 30, seed=2, n_paths=50)
    e = exponential_martingale(PricingKernel.constant(0.0), p)
    assert np.all(e.sde == 1) and np.all(e.exp == 1)
    theta = 0.4
    e = exponential_martingale(PricingKernel.constant(theta), p, state="B")
    expect = theta * p.B[:, -1] - 0.5 * theta**2 * 0.64
    assert np.allclose(np.log(e.exp[:, -1]), expect)
    with pytest.raises(GModelError):
        exponential_martingale(PricingKernel.constant(50.0), simulate_gsde(m, None, 2, seed=0, n_paths=20))


def test_density_normalisation():
    m = GModel(0.1, 0.3, mu="0.05*tanh(x)", V="0.5+0.5*x*x/(1+x*x)")
    assert abs(density_normalisation(m, 8, "sde") - 1) < 1e-9
    assert abs(density_normalisation(m, 8, "exp") - 1) < 1e-3


def test_novikov_examples():
    m = GModel(1.0, 2.0)
    r = novikov_check(PricingKernel.constant(0.0), m, n_steps=10)
    assert r.ok and r.bound == 1
    r = novikov_check(PricingKernel.constant(1.0), m, delta=1.0, n_steps=10)
    assert r.bound == pytest.approx(math.exp(4))
    assert r.ok
    with pytest.raises(NovikovError):
        with np.errstate(divide="ignore"):
            novikov_check(PricingKernel(lambda t, x: 1.0 / (x - 1.0)), m)
    with pytest.raises(GModelError):
        novikov_check(PricingKernel.constant(0.0), m, delta=0.5)


def test_girsanov_removes_drift():
    m = GModel(0.1, 0.3, mu="0.05*tanh(x)", V="0.5+0.5*x*x/(1+x*x)")
    r = girsanov_price(CALL, m, n_steps=100)
    assert r.agree and r.difference < 5e-3
    assert r.kernel_residual < 1e-12
    zero = girsanov_price(CALL, m.driftless(), n_steps=100)
    assert zero.agree
    with pytest.raises(GModelError):
        girsanov_price(CALL, GModel(0.2, 0.2, mu=0.1, V="x"))


def test_symmetric_g_martingale_examples():
    m = GModel(1.0, 2.0)
    assert is_symmetric_g_martingale("B", m, 6).symmetric
    rep = is_symmetric_g_martingale("QV", m, 6)
    assert not rep.symmetric and rep.K_T > 0
    assert rep.K_T == pytest.approx(4.0 - 1.0)
    a = GModel(1.0, 2.0, V="0.5+0.1*sin(x)")
    assert is_symmetric_g_martingale("S", a, 6, mode="asset", tol=1e-9).symmetric


def test_superreplication_call_and_singletons():
    m = GModel(0.1, 0.2, V="x")
    r = superreplication_price(CALL, m, n_steps=100)
    assert r.value == pytest.approx(bs_price(1, 1, 1, 0.2), rel=1e-3)
    assert r.agree and r.singleton_ok
    assert max(r.singleton_prices.values()) <= r.value + 1e-9


def test_load_model_configs():
    m, payoff = load_model("configs/bs_model.json")
    assert m.degenerate and payoff == CALL and m.M == 400
    b, _ = load_model("configs/band_model.json")
    assert (b.sigma_low, b.sigma_high) == (0.1, 0.3)
