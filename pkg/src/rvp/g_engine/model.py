"""Continuous-time model under volatility uncertainty and the G generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..expr import grid_function


class GModelError(ValueError):
    pass


def g_function(a, sigma_low: float, sigma_high: float):
    """``G(a) = (sigma_high^2 a^+ - sigma_low^2 a^-) / 2``, elementwise."""
    a = np.asarray(a, dtype=float)
    out = 0.5 * (sigma_high**2 * np.maximum(a, 0.0) - sigma_low**2 * np.maximum(-a, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GModel:
    """``dS = mu(t, S) d<B> + V(t, S) dB`` with ``d<B>/dt`` in ``[sigma_low^2, sigma_high^2]``.

    ``mu`` and ``V`` accept a number, an expression in ``t, x`` or a
    vectorised callable. ``M`` space intervals, ``n_steps`` time steps
    (``None`` lets the scheme pick from its stability bound).
    """

    sigma_low: float
    sigma_high: float
    T: float = 1.0
    mu: object = 0.0
    V: object = 1.0
    S0: float = 1.0
    M: int = 400
    n_steps: int | None = None
    x_min: float | None = None
    x_max: float | None = None
    width_sd: float = 6.0
    safety: float = 0.9
    v_min: float = 1e-8
    _mu_fn: Callable = field(init=False, repr=False, compare=False)
    _V_fn: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.sigma_low <= self.sigma_high:
            raise GModelError("need 0 < sigma_low <= sigma_high")
        if self.T <= 0:
            raise GModelError("horizon must be positive")
        if self.M < 4 or self.M % 2:
            raise GModelError("M must be an even number of intervals >= 4")
        object.__setattr__(self, "_mu_fn", grid_function(self.mu))
        object.__setattr__(self, "_V_fn", grid_function(self.V))

    # -- coefficients -------------------------------------------------------
    def drift(self, t, x) -> np.ndarray:
        return self._mu_fn(np.asarray(t, dtype=float), np.asarray(x, dtype=float))

    def diffusion(self, t, x) -> np.ndarray:
        return self._V_fn(np.asarray(t, dtype=float), np.asarray(x, dtype=float))

    def g(self, a):
        return g_function(a, self.sigma_low, self.sigma_high)

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == self.sigma_high

    def with_(self, **kw) -> "GModel":
        return replace(self, **kw)

    def driftless(self) -> "GModel":
        return replace(self, mu=0.0)

    def single(self, sigma: float) -> "GModel":
        return replace(self, sigma_low=sigma, sigma_high=sigma)

    def noise_model(self) -> "GModel":
        """Same band with ``S = B`` (``mu = 0``, ``V = 1``, ``S0 = 0``)."""
        return replace(self, mu=0.0, V=1.0, S0=0.0)

    # -- grid ---------------------------------------------------------------
    def space_grid(self, M: int | None = None) -> np.ndarray:
        """Uniform grid with ``S0`` at the centre node."""
        M = M or self.M
        lo, hi = self.bounds()
        half = max(self.S0 - lo, hi - self.S0)
        return self.S0 + np.linspace(-half, half, M + 1)

    def bounds(self) -> tuple[float, float]:
        scale = abs(float(self.diffusion(0.0, self.S0)))
        w = self.width_sd * self.sigma_high * math.sqrt(self.T) * max(scale, self.v_min)
        lo = self.S0 - w if self.x_min is None else self.x_min
        hi = self.S0 + w if self.x_max is None else self.x_max
        if not lo < self.S0 < hi:
            raise GModelError("the spot must lie inside the space grid")
        return lo, hi

    def to_json(self) -> dict:
        def enc(v):
            return getattr(v, "source", v) if not isinstance(v, (int, float, str)) else v

        return {
            "sigma_band": [self.sigma_low, self.sigma_high],
            "T": self.T,
            "mu": enc(self.mu),
            "V": enc(self.V),
            "S0": self.S0,
            "M": self.M,
            "n_steps": self.n_steps,
        }


@dataclass(frozen=True)
class PricingKernel:
    """``theta`` with ``V theta = mu``."""

    theta: Callable

    @classmethod
    def from_model(cls, model: GModel) -> "PricingKernel":
        def theta(t, x):
            v = model.diffusion(t, x)
            if np.any(np.abs(v) < model.v_min):
                raise GModelError("diffusion vanishes on the grid; the pricing kernel is undefined")
            return model.drift(t, x) / v

        return cls(theta)

    @classmethod
    def constant(cls, c: float) -> "PricingKernel":
        return cls(lambda t, x: np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, float(c)))

    def __call__(self, t, x) -> np.ndarray:
        return np.asarray(self.theta(t, x), dtype=float)

    def negated(self) -> "PricingKernel":
        f = self.theta
        return PricingKernel(lambda t, x: -np.asarray(f(t, x), dtype=float))

    def residual(self, model: GModel, M: int | None = None) -> float:
        """``max |V theta - mu|`` on the space grid at the time nodes of the default scheme."""
        x = model.space_grid(M)
        ts = np.linspace(0.0, model.T, 11)
        return max(float(np.max(np.abs(model.diffusion(t, x) * self(t, x) - model.drift(t, x)))) for t in ts)

    def sup_norm(self, model: GModel, M: int | None = None) -> float:
        x = model.space_grid(M)
        ts = np.linspace(0.0, model.T, 11)
        return max(float(np.max(np.abs(self(t, x)))) for t in ts)


def load_model(spec: Mapping | str | Path) -> tuple[GModel, str | None]:
    """Model JSON: ``sigma_band``, ``T``, ``mu``, ``V``, ``S0``, grid fields and an optional ``payoff``."""
    if not isinstance(spec, Mapping):
        spec = json.loads(Path(spec).read_text())
    lo, hi = (float(v) for v in spec["sigma_band"])
    kw = {}
    for k in ("T", "S0", "x_min", "x_max", "width_sd", "safety"):
        if k in spec:
            kw[k] = float(spec[k])
    for k in ("M", "n_steps"):
        if k in spec and spec[k] is not None:
            kw[k] = int(spec[k])
    grid = spec.get("grid", {})
    for k in ("M", "n_steps"):
        if k in grid:
            kw[k] = int(grid[k])
    model = GModel(lo, hi, mu=spec.get("mu", 0.0), V=spec.get("V", 1.0), **kw)
    return model, spec.get("payoff")
