"""Adversarial lattices: at every node the volatility is chosen from
``{sigma_low, sigma_high}`` and the noise moves by ``+-sigma sqrt(dt)`` with
equal probability. Three evaluators of the same game are provided:

* :class:`PathLattice` -- the full (non-recombining) path tree, ``4^N``
  leaves, backward max over the volatility choice; float or exact;
* :func:`markov_value` -- dynamic programming on a space grid of the state
  ``S`` with cubic interpolation, for long horizons;
* :func:`control_enumeration_value` -- brute force over every adapted
  control of the binary tree, a direct check of the other two on tiny trees.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from ..expr import Expression, grid_function
from ..lp import as_fraction as _as_fraction
from .model import GModel, GModelError, PricingKernel

MAX_EXHAUSTIVE = 12


def _rational_sqrt(q: Fraction) -> Fraction | None:
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


class PathLattice:
    """Full path tree of the adversarial game with per-level state arrays.

    Level ``k`` arrays have length ``4^k``; child ``4 j + 2 s + e`` of node
    ``j`` uses volatility index ``s`` (0 low, 1 high) and sign index ``e``
    (0 up, 1 down). States: ``B``, ``QV``, ``S`` (Euler, asset mode) and
    ``E`` (density process when a kernel is supplied).
    """

    def __init__(
        self,
        model: GModel,
        n_steps: int,
        mode: str = "noise",
        kernel: PricingKernel | Callable | None = None,
        form: str = "sde",
        exact: bool = False,
    ):
        if not 1 <= n_steps <= MAX_EXHAUSTIVE:
            raise GModelError(f"exhaustive lattice supports 1..{MAX_EXHAUSTIVE} steps")
        if mode not in ("noise", "asset"):
            raise GModelError("mode must be 'noise' or 'asset'")
        if form not in ("sde", "exp"):
            raise GModelError("form must be 'sde' or 'exp'")
        self.model = model
        self.n = n_steps
        self.mode = mode
        self.exact = exact
        if exact:
            if mode != "noise" or kernel is not None:
                raise GModelError("exact lattices support the noise state only")
            T = Fraction(str(model.T))
            dt = T / n_steps
            r = _rational_sqrt(dt)
            if r is None:
                raise GModelError("exact lattice needs a rational sqrt(T/N)")
            sig = (Fraction(str(model.sigma_low)), Fraction(str(model.sigma_high)))
            self.dt = dt
            self._inc = np.array([sig[0] * r, -sig[0] * r, sig[1] * r, -sig[1] * r], dtype=object)
            self._dqv = np.array([sig[0] ** 2 * dt] * 2 + [sig[1] ** 2 * dt] * 2, dtype=object)
        else:
            self.dt = model.T / n_steps
            sq = math.sqrt(self.dt)
            s1, s2 = model.sigma_low, model.sigma_high
            self._inc = np.array([s1 * sq, -s1 * sq, s2 * sq, -s2 * sq])
            self._dqv = np.array([s1 * s1, s1 * s1, s2 * s2, s2 * s2]) * self.dt
        self.kernel = kernel
        self.form = form
        self.levels: list[dict[str, np.ndarray]] = []
        self._build()

    def times(self) -> list:
        return [k * self.dt for k in range(self.n + 1)]

    def _build(self):
        z = Fraction(0) if self.exact else 0.0
        dtype = object if self.exact else float
        st = {"B": np.array([z], dtype=dtype), "QV": np.array([z], dtype=dtype)}
        if self.mode == "asset":
            st["S"] = np.array([float(self.model.S0)])
        if self.kernel is not None:
            st["E"] = np.array([1.0])
        self.levels.append(st)
        for k in range(self.n):
            t = k * self.dt
            prev = self.levels[-1]
            nxt = {
                "B": (prev["B"][:, None] + self._inc[None, :]).ravel(),
                "QV": (prev["QV"][:, None] + self._dqv[None, :]).ravel(),
            }
            if self.mode == "asset":
                S = prev["S"]
                mu = self.model.drift(t, S)
                V = self.model.diffusion(t, S)
                nxt["S"] = (S[:, None] + mu[:, None] * self._dqv[None, :] + V[:, None] * self._inc[None, :]).ravel()
            if self.kernel is not None:
                x = prev["S"] if self.mode == "asset" else prev["B"]
                kv = np.asarray(self.kernel(t, x), dtype=float)
                if self.form == "sde":
                    f = 1.0 + kv[:, None] * self._inc[None, :]
                    if np.any(f <= 0):
                        bound = 1.0 / (float(np.max(np.abs(kv))) * self.model.sigma_high) ** 2
                        raise GModelError(
                            f"density step 1 + k dB is not positive; need dt < {bound:.3g} (use more steps)"
                        )
                else:
                    f = np.exp(kv[:, None] * self._inc[None, :] - 0.5 * kv[:, None] ** 2 * self._dqv[None, :])
                nxt["E"] = (prev["E"][:, None] * f).ravel()
            self.levels.append(nxt)

    @property
    def state_name(self) -> str:
        return "S" if self.mode == "asset" else "B"

    def terminal(self, key: str | None = None) -> np.ndarray:
        return self.levels[-1][key or self.state_name]

    def backward(self, values: np.ndarray, upper: bool = True) -> list[np.ndarray]:
        """Backward recursion from leaf values; returns per-level value arrays."""
        out = [values]
        v = values
        for k in range(self.n, 0, -1):
            v4 = v.reshape(-1, 2, 2)
            mean = (v4[:, :, 0] + v4[:, :, 1]) / 2
            v = np.maximum(mean[:, 0], mean[:, 1]) if upper else np.minimum(mean[:, 0], mean[:, 1])
            out.append(v)
        return out[::-1]

    def value(self, payoff, tilt: bool = False, upper: bool = True):
        """Upper (or lower) expectation of ``payoff(state_T)``, times ``E_T`` when ``tilt``."""
        x = self.terminal()
        if callable(payoff):
            f = payoff(x)
        elif self.exact:
            e = payoff if isinstance(payoff, Expression) else Expression(str(payoff), ("t", "x"), "exact")
            T = _as_fraction(self.model.T)
            f = [e(t=T, x=v) for v in x]
        else:
            f = grid_function(payoff, ("t", "x"))(np.full(x.shape, self.model.T), x.astype(float))
        f = np.asarray(f, dtype=object if self.exact else float)
        if tilt:
            if "E" not in self.levels[-1]:
                raise GModelError("lattice built without a density kernel")
            f = f * self.levels[-1]["E"]
        return self.backward(f, upper)[0][0]

    def one_step_means(self, values_k: np.ndarray, values_k1: np.ndarray) -> np.ndarray:
        """Conditional means of the next level under each volatility, shape ``(4^k, 2)``."""
        v4 = values_k1.reshape(-1, 2, 2)
        return (v4[:, :, 0] + v4[:, :, 1]) / 2

    def integral(self, fn: Callable, against: str = "B") -> list[np.ndarray]:
        """Per-level arrays of ``sum fn(t, state) dB`` (or ``d<B>``) along each path."""
        inc = self._inc if against == "B" else self._dqv
        acc = [np.zeros(1)]
        for k in range(self.n):
            st = self.levels[k][self.state_name]
            fv = np.asarray(fn(k * self.dt, np.asarray(st, dtype=float)), dtype=float)
            fv = np.broadcast_to(fv, st.shape)
            acc.append((acc[-1][:, None] + fv[:, None] * inc[None, :].astype(float)).ravel())
        return acc


def exhaustive_value(payoff, model: GModel, n_steps: int, mode: str = "noise", kernel=None, tilt: bool = False, upper: bool = True, form: str = "sde", exact: bool = False):
    lat = PathLattice(model, n_steps, mode, kernel if tilt else None, form, exact)
    return lat.value(payoff, tilt, upper)


# ---------------------------------------------------------------------------
# Markov dynamic programming on a space grid
# ---------------------------------------------------------------------------

@dataclass
class MarkovResult:
    value: float
    x: np.ndarray
    u0: np.ndarray
    n_steps: int
    M: int


def _extrapolating(x: np.ndarray, y: np.ndarray) -> Callable:
    spline = CubicSpline(x, y, bc_type="natural")
    lo, hi = x[0], x[-1]
    dlo = (y[1] - y[0]) / (x[1] - x[0])
    dhi = (y[-1] - y[-2]) / (x[-1] - x[-2])

    def f(z):
        z = np.asarray(z, dtype=float)
        out = spline(np.clip(z, lo, hi))
        out = np.where(z < lo, y[0] + dlo * (z - lo), out)
        return np.where(z > hi, y[-1] + dhi * (z - hi), out)

    return f


def markov_value(
    payoff,
    model: GModel,
    n_steps: int,
    mode: str = "asset",
    kernel: PricingKernel | Callable | None = None,
    M: int | None = None,
    upper: bool = True,
    width_sd: float | None = None,
    factor: Callable | None = None,
    smooth_last: bool = False,
) -> MarkovResult:
    """``sup_controls E[E_T payoff(S_T)]`` by backward induction on the state grid.

    With a kernel the density factor ``1 + k dB`` enters each step; since
    the game value is positively homogeneous in the running density it
    factors out of the state. ``factor(t, x, sigma)`` multiplies each
    one-step expectation (a running exponential weight, for instance).
    With ``smooth_last`` the step into the payoff uses Gaussian increments
    (trapezoid rule on ``[-8, 8]``), which removes the odd-even oscillation
    a two-point step produces on kinked payoffs.
    """
    m = model.noise_model() if mode == "noise" else model
    if width_sd is not None:
        m = m.with_(width_sd=width_sd)
    M = M or 2 * model.M
    x = m.space_grid(M)
    dt = m.T / n_steps
    sq = math.sqrt(dt)
    pay = payoff if callable(payoff) else grid_function(payoff, ("t", "x"))
    sig = (m.sigma_low, m.sigma_high)

    zq = np.linspace(-8.0, 8.0, 801)
    wq = np.exp(-0.5 * zq**2)
    wq[[0, -1]] *= 0.5
    wq /= wq.sum()

    def step(w: Callable, t: float, gaussian: bool = False) -> np.ndarray:
        mu = m.drift(t, x)
        V = m.diffusion(t, x)
        kv = np.zeros_like(x) if kernel is None else np.asarray(kernel(t, x), dtype=float)
        best = None
        for s in sig:
            dB = s * sq
            if gaussian:
                inc = dB * zq[None, :]
                nxt = (x + mu * s * s * dt)[:, None] + V[:, None] * inc
                wt = 1.0 + kv[:, None] * inc
                e = (wt * w(nxt)) @ wq
            else:
                up = x + mu * s * s * dt + V * dB
                dn = x + mu * s * s * dt - V * dB
                fu, fd = 1.0 + kv * dB, 1.0 - kv * dB
                if kernel is not None and (np.any(fu <= 0) or np.any(fd <= 0)):
                    bound = 1.0 / (float(np.max(np.abs(kv))) * s) ** 2
                    raise GModelError(f"density step is not positive; need dt < {bound:.3g}")
                e = 0.5 * (fu * w(up) + fd * w(dn))
            if factor is not None:
                e = e * factor(t, x, s)
            best = e if best is None else (np.maximum(best, e) if upper else np.minimum(best, e))
        return best

    w: Callable = lambda z: np.asarray(pay(np.full(np.shape(z), m.T), z), dtype=float)
    vals = None
    for k in range(n_steps - 1, -1, -1):
        vals = step(w, k * dt, smooth_last and k == n_steps - 1)
        w = _extrapolating(x, vals)
    return MarkovResult(float(vals[M // 2]), x, vals, n_steps, M)


# ---------------------------------------------------------------------------
# Brute-force control enumeration
# ---------------------------------------------------------------------------

def control_enumeration_value(payoff, model: GModel, n_steps: int, mode: str = "noise", upper: bool = True) -> tuple[float, tuple[int, ...]]:
    """Best linear expectation over every adapted control on the binary sign tree.

    A control assigns a volatility index to each of the ``2^N - 1`` sign
    histories; all ``2^(2^N - 1)`` assignments are evaluated.
    """
    if n_steps > 4:
        raise GModelError("control enumeration is limited to 4 steps")
    m = model.noise_model() if mode == "noise" else model
    pay = payoff if callable(payoff) else grid_function(payoff, ("t", "x"))
    dt = m.T / n_steps
    sq = math.sqrt(dt)
    sig = (m.sigma_low, m.sigma_high)
    hist = [h for k in range(n_steps) for h in itertools.product((0, 1), repeat=k)]
    index = {h: i for i, h in enumerate(hist)}
    paths = list(itertools.product((0, 1), repeat=n_steps))
    best_val, best_ctrl = None, None
    for ctrl in itertools.product((0, 1), repeat=len(hist)):
        tot = 0.0
        for p in paths:
            x = m.S0
            for k in range(n_steps):
                s = sig[ctrl[index[p[:k]]]]
                dB = s * sq * (1 if p[k] == 0 else -1)
                x = x + float(m.drift(k * dt, x)) * s * s * dt + float(m.diffusion(k * dt, x)) * dB
            tot += float(pay(np.array(m.T), np.array(x)))
        val = tot / len(paths)
        if best_val is None or (val > best_val if upper else val < best_val):
            best_val, best_ctrl = val, ctrl
    return best_val, best_ctrl


# ---------------------------------------------------------------------------
# Symmetric martingale test on the path lattice
# ---------------------------------------------------------------------------

@dataclass
class GMartingaleReport:
    symmetric: bool
    martingale: bool
    max_asymmetry: float
    K_T: float
    K_levels: list[float]


def g_martingale_report(levels: Sequence[np.ndarray], lattice: PathLattice, tol: float = 1e-10) -> GMartingaleReport:
    """One-step check of ``M`` and ``-M``; ``K`` accumulates the nonsymmetric part.

    At each node the conditional means under the two volatilities are
    compared with ``M``: ``M`` is a martingale of the upper expectation when
    the larger one equals ``M``, and a symmetric one when both do. ``K``
    adds up the per-level maximal spread between the two means.
    """
    asym = 0.0
    up_gap = 0.0
    K = [0.0]
    for k in range(lattice.n):
        mk = np.asarray(levels[k], dtype=float)
        means = lattice.one_step_means(mk, np.asarray(levels[k + 1], dtype=float))
        hi = means.max(axis=1) - mk
        lo = means.min(axis=1) - mk
        asym = max(asym, float(np.max(np.abs(hi))), float(np.max(np.abs(lo))))
        up_gap = max(up_gap, float(np.max(np.abs(hi))))
        K.append(K[-1] + float(np.max(hi - lo)))
    return GMartingaleReport(asym <= tol, up_gap <= tol, asym, K[-1], K)
