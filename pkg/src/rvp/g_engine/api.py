"""Pricing operations of the G-engine: G-expectations, the Girsanov shift,
the Novikov-type integrability check, symmetric G-martingale tests and
superreplication."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lattice as lat
from . import pde
from .model import GModel, GModelError, PricingKernel


class NovikovError(GModelError):
    pass


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def bs_price(S0: float, K: float, T: float, sigma: float, kind: str = "call") -> float:
    """Closed-form price of a European call or put at zero interest."""
    if sigma <= 0 or T <= 0:
        intrinsic = max(S0 - K, 0.0) if kind == "call" else max(K - S0, 0.0)
        return intrinsic
    v = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + 0.5 * v * v) / v
    call = S0 * _norm_cdf(d1) - K * _norm_cdf(d1 - v)
    return call if kind == "call" else call - S0 + K


def heat_price(payoff_poly: Sequence[float], sigma: float, T: float) -> float:
    """``E[p(sigma W_T)]`` for a polynomial with coefficients in increasing degree."""
    var = sigma * sigma * T
    out = 0.0
    for k, c in enumerate(payoff_poly):
        if k % 2 == 0:
            out += c * var ** (k // 2) * math.prod(range(k - 1, 0, -2))
    return out


@dataclass
class GResult:
    value: float
    error: float | None
    grid: dict
    x: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)

    def slice_csv(self) -> str:
        return "x,u\n" + "".join(f"{a:.10g},{b:.10g}\n" for a, b in zip(self.x, self.u0))


def g_expectation(payoff, model: GModel, of: str = "noise", backend: str = "explicit", M: int | None = None, with_error: bool = True) -> GResult:
    """``E_G[payoff(B_T)]`` (noise) or the sup over controls of ``E[payoff(S_T)]`` (asset)."""
    if of not in ("noise", "asset"):
        raise GModelError("of must be 'noise' or 'asset'")
    m = model.noise_model() if of == "noise" else model
    r = pde.solve_with_error(payoff, m, M, backend) if with_error else pde.solve(payoff, m, M, None, backend)
    return GResult(r.value, r.error, r.grid, r.x, r.u0)


# ---------------------------------------------------------------------------
# Integrability of the density
# ---------------------------------------------------------------------------

@dataclass
class NovikovResult:
    ok: bool
    bound: float
    numeric: float
    refined: float
    theta_sup: float


def novikov_check(theta: PricingKernel, model: GModel, delta: float = 1.0, n_steps: int = 50, M: int | None = None) -> NovikovResult:
    """``E_G[exp(delta int theta^2 d<B>)]`` against ``exp(delta |theta|^2 sigma_high^2 T)``.

    The functional is evaluated by the state-grid recursion at two step
    counts; the check fails if the value exceeds the bound or keeps
    growing under refinement.
    """
    if delta <= 0.5:
        raise GModelError("delta must exceed 1/2")
    x = model.space_grid(M)
    ts = np.linspace(0.0, model.T, 11)
    vals = [theta(t, x) for t in ts]
    for t, v in zip(ts, vals):
        if not np.all(np.isfinite(v)):
            i = int(np.argmax(~np.isfinite(v)))
            raise NovikovError(f"pricing kernel is not finite at t={t:.3g}, x={x[i]:.4g}")
    sup = max(float(np.max(np.abs(v))) for v in vals)
    if sup > 1e6:
        t_idx = int(np.argmax([np.max(np.abs(v)) for v in vals]))
        i = int(np.argmax(np.abs(vals[t_idx])))
        raise NovikovError(f"pricing kernel is unbounded near t={ts[t_idx]:.3g}, x={x[i]:.4g} (|theta| = {sup:.3g})")
    bound = math.exp(delta * sup * sup * model.sigma_high**2 * model.T)

    def run(n):
        dt = model.T / n
        fac = lambda t, z, s: np.exp(delta * np.asarray(theta(t, z), dtype=float) ** 2 * s * s * dt)
        return lat.markov_value(1.0, model, n, "asset", None, M, factor=fac).value

    a, b = run(n_steps), run(2 * n_steps)
    ok = bool(np.isfinite(a) and np.isfinite(b) and max(a, b) <= bound * (1 + 1e-9))
    return NovikovResult(ok, bound, a, b, sup)


# ---------------------------------------------------------------------------
# Girsanov shift
# ---------------------------------------------------------------------------

@dataclass
class GirsanovResult:
    value: float
    driftless: float
    difference: float
    n_steps: int
    M: int
    kernel_residual: float
    novikov: NovikovResult
    agree: bool


def _check_diffusion(model: GModel, v_floor: float | None = None):
    x = model.space_grid()
    vmin = min(float(np.min(np.abs(model.diffusion(t, x)))) for t in np.linspace(0, model.T, 11))
    floor = model.v_min if v_floor is None else v_floor
    if vmin < floor:
        raise GModelError(f"min |V| = {vmin:.3g} on the grid is below {floor:.3g}; the pricing kernel is not bounded")
    return vmin


def girsanov_price(payoff, model: GModel, n_steps: int = 200, M: int | None = None, tol: float = 5e-3, driftless: float | None = None) -> GirsanovResult:
    """``E_G[E_T X(S_T)]`` with ``dE = -E theta dB`` on the state-grid lattice.

    Under the tilted weights ``S`` loses its drift, so the value is compared
    with the driftless price from the PDE.
    """
    _check_diffusion(model)
    theta = PricingKernel.from_model(model)
    nov = novikov_check(theta, model)
    if not nov.ok:
        raise NovikovError(f"integrability check failed: {nov}")
    r = lat.markov_value(payoff, model, n_steps, "asset", theta.negated(), M, smooth_last=True)
    base = driftless if driftless is not None else g_expectation(payoff, model.driftless(), "asset", with_error=False).value
    diff = abs(r.value - base)
    return GirsanovResult(r.value, base, diff, n_steps, r.M, theta.residual(model), nov, diff <= tol)


def density_normalisation(model: GModel, n_steps: int = 10, form: str = "exp") -> float:
    """``E_G[E_T]`` on the full path lattice (the exponential form is not exactly one)."""
    theta = PricingKernel.from_model(model)
    L = lat.PathLattice(model, n_steps, "asset", theta.negated(), form)
    return float(L.value(1.0, tilt=True))


# ---------------------------------------------------------------------------
# Symmetric G-martingales
# ---------------------------------------------------------------------------

def is_symmetric_g_martingale(process, model: GModel, n_steps: int = 8, mode: str = "noise", tol: float = 1e-10) -> lat.GMartingaleReport:
    """``process`` is a state name (``"B"``, ``"QV"``, ``"S"``) or a function of the lattice returning per-level arrays."""
    L = lat.PathLattice(model, n_steps, mode)
    if isinstance(process, str):
        levels = [st[process] for st in L.levels]
    else:
        levels = process(L)
    return lat.g_martingale_report(levels, L, tol)


# ---------------------------------------------------------------------------
# Superreplication
# ---------------------------------------------------------------------------

@dataclass
class SuperResult:
    value: float
    pde_value: float
    lattice_value: float
    agree: bool
    error: float | None
    singleton_prices: dict[float, float]
    singleton_ok: bool
    n_steps: int


def superreplication_price(payoff, model: GModel, n_steps: int = 200, M: int | None = None, tol: float = 5e-3, singleton_sigmas: Sequence[float] | None = None) -> SuperResult:
    """Least superhedging capital as ``E_G[E_T X]``, computed two ways.

    The PDE route solves the driftless control problem (the Girsanov shift
    removes the drift); the lattice route takes the sup over volatility
    controls of the tilted expectations. Linear prices of singleton
    equivalent martingale measures (constant volatility in the band) are
    reported and must not exceed the superhedging price.
    """
    drift_free = model.driftless()
    p = g_expectation(payoff, drift_free, "asset", M=M)
    if model.mu in (0, 0.0):
        lv = lat.markov_value(payoff, model, n_steps, "asset", None, M, smooth_last=True).value
    else:
        lv = girsanov_price(payoff, model, n_steps, M, tol, driftless=p.value).value
    sig = singleton_sigmas if singleton_sigmas is not None else np.linspace(model.sigma_low, model.sigma_high, 5)
    single = {}
    for s in sig:
        single[float(s)] = g_expectation(payoff, drift_free.single(float(s)), "asset", M=M, with_error=False).value
    slack = (p.error or 0.0) + 1e-9
    ok = all(v <= p.value + slack for v in single.values())
    return SuperResult(p.value, p.value, lv, abs(p.value - lv) <= tol, p.error, single, ok, n_steps)
