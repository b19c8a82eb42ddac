"""Independent oracles used to cross-check the implicit scheme."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from crossdiff.grid import Grid
from crossdiff.system import CrossDiffusionSystem, psd_2x2

__all__ = [
    "OracleConfig",
    "StabilityError",
    "explicit_reference",
    "homogeneous_step_oracle",
    "max_diffusion_estimate",
    "psd_2x2",
    "spectral_heat",
    "stable_tau",
]


class StabilityError(RuntimeError):
    """The explicit oracle left the region where forward Euler is trustworthy."""


@dataclass(frozen=True)
class OracleConfig:
    tau_ref: float
    spectral_modes: int | None = None

    def __post_init__(self) -> None:
        if not self.tau_ref > 0:
            raise ValueError("tau_ref must be positive")
        if self.spectral_modes is not None and self.spectral_modes < 1:
            raise ValueError("spectral_modes must be >= 1")


def max_diffusion_estimate(system: CrossDiffusionSystem, U: np.ndarray) -> float:
    """Largest Gershgorin row sum of ``DA`` over the cells of ``U``."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        J = system.jacobian_A(np.maximum(U, 1e-300))
    rows = np.abs(J).sum(axis=1)
    if not np.all(np.isfinite(rows)):
        return np.inf
    return float(rows.max())


def stable_tau(system: CrossDiffusionSystem, grid: Grid, U: np.ndarray) -> float:
    h2 = min(grid.spacing) ** 2
    return h2 / (2 * grid.dim * max_diffusion_estimate(system, U))


def explicit_reference(
    system: CrossDiffusionSystem,
    grid: Grid,
    U0: np.ndarray,
    T: float,
    tau_ref: float,
    check_every: int = 1,
) -> np.ndarray:
    """Forward Euler for ``dU/dt = Lap_h A(U) + R(U)`` up to ``T``.

    The step is shrunk to ``T / ceil(T / tau_ref)`` so that ``T`` is hit
    exactly. The stability bound is re-sampled every ``check_every`` steps
    and a negative value aborts the run instead of being clipped.
    """
    U = grid.check(U0).copy()
    if np.any(U < 0):
        raise ValueError("initial data must be nonnegative")
    if T < 0 or tau_ref <= 0:
        raise ValueError("need T >= 0 and tau_ref > 0")
    n = int(np.ceil(T / tau_ref - 1e-12)) if T > 0 else 0
    dt = T / n if n else 0.0
    for k in range(n):
        if k % check_every == 0 and dt > stable_tau(system, grid, U):
            raise StabilityError(
                f"step {k}: dt={dt:.3e} exceeds stability bound {stable_tau(system, grid, U):.3e}"
            )
        U = U + dt * (grid.laplacian(system.eval_A(U)) + system.eval_R(U))
        if np.any(U < 0) or not np.all(np.isfinite(U)):
            raise StabilityError(f"step {k + 1}: negative or non-finite value")
    return U


def spectral_heat(grid: Grid, u0: np.ndarray, d: float, t: float, tau: float | None = None):
    """Linear heat ``u_t = d Lap_h u`` through the cosine eigenbasis.

    With ``tau`` the result is ``t / tau`` implicit Euler steps, otherwise the
    exact semi-discrete flow.
    """
    lam = grid.eigenvalues()
    coeffs = grid.dct(u0)
    if tau is None:
        factor = np.exp(-d * lam * t)
    else:
        steps = int(round(t / tau))
        if not np.isclose(steps * tau, t):
            raise ValueError("t must be a multiple of tau")
        factor = (1.0 + tau * d * lam) ** (-steps)
    return grid.idct(coeffs * factor)


def homogeneous_step_oracle(
    system: CrossDiffusionSystem,
    s: np.ndarray,
    tau: float,
    tol: float = 1e-14,
    max_sweeps: int = 10_000,
) -> np.ndarray:
    """One implicit step for spatially constant data: ``u = s + tau R(u)``."""
    s = np.asarray(s, dtype=float)
    n = system.n_species
    if s.shape != (n,):
        raise ValueError(f"s must have shape ({n},)")
    if np.any(s < 0):
        raise ValueError("s must be nonnegative")
    if not system.rho_bar * tau < 0.5:
        raise ValueError("rho*tau < 1/2 violated")
    if not system.reactions:
        return s.copy()

    if n == 1 and system.s[0, 0] == 1.0:
        # tau*b u^2 + (1 - tau*rho) u - s = 0
        a = tau * system.comp[0, 0]
        b = 1.0 - tau * system.rho[0]
        c = -s[0]
        if a == 0:
            return np.array([s[0] / b])
        disc = b * b - 4 * a * c
        return np.array([2 * s[0] / (b + np.sqrt(disc))])

    u = s.copy()
    for _ in range(max_sweeps):
        previous = u.copy()
        for i in range(n):
            if s[i] == 0:
                u[i] = 0.0
                continue

            def g(x, i=i):
                trial = u.copy()
                trial[i] = x
                rate = system.reaction_rates(trial[:, None])[i, 0]
                return x - tau * x * rate - s[i]

            hi = s[i] / (1.0 - tau * system.rho[i])
            if g(hi) <= 0:
                u[i] = hi
            else:
                u[i] = brentq(g, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
        if np.max(np.abs(u - previous)) <= tol * max(1.0, float(np.max(u))):
            return u
    raise RuntimeError("homogeneous oracle did not converge")
