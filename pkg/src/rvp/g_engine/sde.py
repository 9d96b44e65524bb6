"""Euler paths of the asset under a fixed volatility control, and the
density process of a pricing kernel along them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import GModel, GModelError, PricingKernel


@dataclass
class Paths:
    t: np.ndarray  # (n+1,)
    B: np.ndarray  # (paths, n+1)
    QV: np.ndarray
    S: np.ndarray
    dB: np.ndarray  # (paths, n)
    dQV: np.ndarray
    sigma: np.ndarray  # (paths, n)


def simulate_gsde(
    model: GModel,
    control: float | Callable = None,
    n_steps: int = 100,
    seed: int = 0,
    n_paths: int = 1,
    noise: str = "binary",
) -> Paths:
    """Euler scheme ``dB = sigma sqrt(dt) xi``, ``d<B> = sigma^2 dt``, ``dS = mu d<B> + V dB``.

    ``control`` is a constant or a function ``(t, B, QV, S) -> sigma`` of
    the current state (vectorised over paths); ``xi`` is a fair sign or a
    standard normal.
    """
    if noise not in ("binary", "normal"):
        raise GModelError("noise must be 'binary' or 'normal'")
    rng = np.random.default_rng(seed)
    dt = model.T / n_steps
    sq = math.sqrt(dt)
    t = np.linspace(0.0, model.T, n_steps + 1)
    B = np.zeros((n_paths, n_steps + 1))
    QV = np.zeros_like(B)
    S = np.full_like(B, float(model.S0))
    dB = np.zeros((n_paths, n_steps))
    dQ = np.zeros_like(dB)
    sig = np.zeros_like(dB)
    lo, hi = model.sigma_low, model.sigma_high
    tol = 1e-12 * hi
    for k in range(n_steps):
        if control is None:
            s = np.full(n_paths, hi)
        elif callable(control):
            s = np.broadcast_to(np.asarray(control(t[k], B[:, k], QV[:, k], S[:, k]), dtype=float), (n_paths,))
        else:
            s = np.full(n_paths, float(control))
        if np.any(s < lo - tol) or np.any(s > hi + tol):
            raise GModelError(f"control leaves the band [{lo}, {hi}] at step {k}")
        xi = rng.choice((-1.0, 1.0), size=n_paths) if noise == "binary" else rng.standard_normal(n_paths)
        db = s * sq * xi
        dq = s * s * dt
        x = S[:, k]
        S[:, k + 1] = x + model.drift(t[k], x) * dq + model.diffusion(t[k], x) * db
        B[:, k + 1] = B[:, k] + db
        QV[:, k + 1] = QV[:, k] + dq
        dB[:, k], dQ[:, k], sig[:, k] = db, dq, s
    return Paths(t, B, QV, S, dB, dQ, sig)


@dataclass
class DensityPaths:
    sde: np.ndarray  # recursion E_{k+1} = E_k (1 + k dB)
    exp: np.ndarray  # exp(int k dB - 1/2 int k^2 d<B>)

    @property
    def discrepancy(self) -> float:
        return float(np.mean(np.abs(self.sde[:, -1] - self.exp[:, -1])))


def exponential_martingale(kernel: PricingKernel | Callable, paths: Paths, state: str = "S") -> DensityPaths:
    """Solve ``dE = E k dB`` along ``paths`` both by the Euler recursion and the closed exponential.

    ``kernel(t, x)`` is evaluated on the ``state`` process (``"S"`` or ``"B"``).
    Refuses when the recursion leaves the positive half-line.
    """
    X = paths.S if state == "S" else paths.B
    n = paths.dB.shape[1]
    sde = np.ones((X.shape[0], n + 1))
    logE = np.zeros_like(sde)
    for k in range(n):
        kv = np.broadcast_to(np.asarray(kernel(paths.t[k], X[:, k]), dtype=float), X[:, k].shape)
        sde[:, k + 1] = sde[:, k] * (1.0 + kv * paths.dB[:, k])
        logE[:, k + 1] = logE[:, k] + kv * paths.dB[:, k] - 0.5 * kv * kv * paths.dQV[:, k]
        if np.any(sde[:, k + 1] <= 0):
            kmax = float(np.max(np.abs(kv)))
            smax = float(np.max(paths.sigma[:, k]))
            dt = paths.t[1] - paths.t[0]
            raise GModelError(
                f"density recursion not positive at step {k}; "
                f"suggested dt < {1.0 / (kmax * smax) ** 2:.3g} (current {dt:.3g})"
            )
    return DensityPaths(sde, np.exp(logE))


def consistency_rate(kernel, model: GModel, steps=(25, 50, 100, 200, 400), n_paths: int = 2000, seed: int = 0, noise: str = "binary", control=None, state: str = "S") -> tuple[float, list[float]]:
    """Fitted order of ``mean |E_sde - E_exp|`` in ``dt``."""
    errs = []
    for n in steps:
        p = simulate_gsde(model, control, n, seed, n_paths, noise)
        errs.append(exponential_martingale(kernel, p, state).discrepancy)
    slope = np.polyfit(np.log([model.T / n for n in steps]), np.log(errs), 1)[0]
    return float(slope), errs
