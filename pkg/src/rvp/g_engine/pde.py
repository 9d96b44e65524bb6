"""Finite-difference solvers for the fully nonlinear pricing PDE

    u_t + max_{s in {sigma_low, sigma_high}} s^2 (mu u_x + V^2 u_xx / 2) = 0,

solved backward from the payoff. With ``mu = 0`` and ``V = 1`` this is the
G-heat equation ``u_t + G(u_xx) = 0``. The generator is linear in ``s^2``,
so only the two band endpoints are compared.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..expr import grid_function
from .model import GModel, GModelError

log = logging.getLogger(__name__)


@dataclass
class PDEResult:
    value: float
    x: np.ndarray
    u0: np.ndarray
    grid: dict
    error: float | None = None
    coarse: float | None = None

    def slice_csv(self) -> str:
        rows = ["x,u"] + [f"{a:.10g},{b:.10g}" for a, b in zip(self.x, self.u0)]
        return "\n".join(rows) + "\n"


def payoff_function(payoff):
    """Payoff as a vectorised function of ``(t, x)``."""
    return grid_function(payoff, ("t", "x"))


def _terminal(payoff, model: GModel, x: np.ndarray) -> np.ndarray:
    u = np.asarray(payoff_function(payoff)(np.full_like(x, model.T), x), dtype=float)
    if not np.all(np.isfinite(u)):
        warnings.warn("payoff is not finite on the whole grid; non-finite values clipped", RuntimeWarning)
        big = np.finfo(float).max / 1e6
        u = np.nan_to_num(u, nan=0.0, posinf=big, neginf=-big)
    return u


def stable_step(model: GModel, x: np.ndarray) -> float:
    """Largest explicit step keeping ``dt s^2 (V^2/dx^2 + |mu|/dx) <= 1`` for all coefficients seen."""
    dx = x[1] - x[0]
    worst = 0.0
    for t in np.linspace(0.0, model.T, 9):
        v2 = model.diffusion(t, x) ** 2
        mu = np.abs(model.drift(t, x))
        worst = max(worst, float(np.max(v2 / dx**2 + mu / dx)))
    if worst == 0.0:
        return model.T
    return 1.0 / (model.sigma_high**2 * worst)


def _operator_parts(model: GModel, t: float, x: np.ndarray, dx: float):
    mu = model.drift(t, x[1:-1])
    v2 = model.diffusion(t, x[1:-1]) ** 2
    return mu, v2


def _explicit(payoff, model: GModel, M: int, n_steps: int | None) -> PDEResult:
    x = model.space_grid(M)
    dx = x[1] - x[0]
    dt_max = stable_step(model, x)
    n = n_steps if n_steps is not None else max(1, math.ceil(model.T / (model.safety * dt_max)))
    dt = model.T / n
    if dt > dt_max * (1 + 1e-12):
        raise GModelError(f"explicit scheme unstable: dt={dt:.3g} exceeds bound {dt_max:.3g}; use n_steps >= {math.ceil(model.T / dt_max)}")
    s1, s2 = model.sigma_low**2, model.sigma_high**2
    u = _terminal(payoff, model, x)
    const_coef = _is_constant(model)
    if const_coef:
        mu, v2 = _operator_parts(model, 0.0, x, dx)
    for k in range(n - 1, -1, -1):
        if not const_coef:
            mu, v2 = _operator_parts(model, k * dt, x, dx)
        d2 = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx**2
        fwd = (u[2:] - u[1:-1]) / dx
        bwd = (u[1:-1] - u[:-2]) / dx
        d1 = np.where(mu > 0, fwd, bwd)
        L = mu * d1 + 0.5 * v2 * d2
        inner = u[1:-1] + dt * np.where(L > 0, s2 * L, s1 * L)
        u = np.concatenate(([2 * inner[0] - inner[1]], inner, [2 * inner[-1] - inner[-2]]))
    i0 = M // 2
    grid = {"backend": "explicit", "M": M, "n_steps": n, "dx": dx, "dt": dt, "dt_bound": dt_max, "x_min": x[0], "x_max": x[-1], "width": x[-1] - x[0]}
    return PDEResult(float(u[i0]), x, u, grid)


def _is_constant(model: GModel) -> bool:
    return isinstance(model.mu, (int, float)) and isinstance(model.V, (int, float))


def _implicit(payoff, model: GModel, M: int, n_steps: int | None, max_policy: int = 50) -> PDEResult:
    """Fully implicit upwind steps; the volatility policy is found by policy iteration.

    The zero-curvature boundary values ``u_0 = 2u_1 - u_2`` (and likewise at
    the top) are substituted into the first and last interior rows, so the
    interior system stays tridiagonal.
    """
    x = model.space_grid(M)
    dx = x[1] - x[0]
    n = n_steps if n_steps is not None else 2 * M
    dt = model.T / n
    s1, s2 = model.sigma_low**2, model.sigma_high**2
    u = _terminal(payoff, model, x)
    iters = 0
    for k in range(n - 1, -1, -1):
        mu, v2 = _operator_parts(model, k * dt, x, dx)
        lo = np.where(mu < 0, -mu / dx, 0.0) + 0.5 * v2 / dx**2  # weight of u_{i-1}
        hi = np.where(mu > 0, mu / dx, 0.0) + 0.5 * v2 / dx**2  # weight of u_{i+1}
        dg = -(lo + hi)
        # operator on interior unknowns after eliminating the boundary values
        dmain = dg.copy()
        dupper = hi[:-1].copy()
        dlower = lo[1:].copy()
        dmain[0] += 2 * lo[0]
        dupper[0] -= lo[0]
        dmain[-1] += 2 * hi[-1]
        dlower[-1] -= hi[-1]
        rhs = u[1:-1]
        v = rhs
        policy = None
        for _ in range(max_policy):
            Lv = dmain * v
            Lv[:-1] += dupper * v[1:]
            Lv[1:] += dlower * v[:-1]
            new_policy = np.where(Lv > 0, s2, s1)
            if policy is not None and np.array_equal(new_policy, policy):
                break
            policy = new_policy
            ab = np.zeros((3, M - 1))
            ab[0, 1:] = -dt * policy[:-1] * dupper
            ab[1, :] = 1 - dt * policy * dmain
            ab[2, :-1] = -dt * policy[1:] * dlower
            v = solve_banded((1, 1), ab, rhs)
            iters += 1
        u = np.concatenate(([2 * v[0] - v[1]], v, [2 * v[-1] - v[-2]]))
    i0 = M // 2
    grid = {"backend": "implicit", "M": M, "n_steps": n, "dx": dx, "dt": dt, "policy_iterations": iters, "x_min": x[0], "x_max": x[-1], "width": x[-1] - x[0]}
    return PDEResult(float(u[i0]), x, u, grid)


def solve(payoff, model: GModel, M: int | None = None, n_steps: int | None = None, backend: str = "explicit") -> PDEResult:
    M = M or model.M
    n_steps = n_steps if n_steps is not None else model.n_steps
    if backend == "explicit":
        return _explicit(payoff, model, M, n_steps)
    if backend == "implicit":
        return _implicit(payoff, model, M, n_steps)
    raise GModelError(f"unknown backend {backend!r}")


def solve_with_error(payoff, model: GModel, M: int | None = None, backend: str = "explicit") -> PDEResult:
    """Solve on ``M`` and ``M/2`` intervals; the difference is the reported error estimate."""
    M = M or model.M
    fine = solve(payoff, model, M, None, backend)
    coarse = solve(payoff, model, M // 2, None, backend)
    fine.error = abs(fine.value - coarse.value)
    fine.coarse = coarse.value
    return fine
