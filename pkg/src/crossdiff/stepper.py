"""Implicit time stepping for ``U - tau Lap_h A(U) = S + tau R(U)``.

One step is the fixed-point iteration

    W_{n+1} = (M - tau Lap_h)^{-1} (S + M A(U_n) - U_n + tau R(U_n))
    U_{n+1} = A^{-1}(W_{n+1})

with the shift ``M = mbar(U_0)`` chosen so that the right-hand side stays
nonnegative. Any fixed point solves the scheme. When the iteration stops
contracting, a damped Newton method on ``W = A(U)`` takes over.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from crossdiff.grid import Grid
from crossdiff.inversion import InversionConfig, InversionError, invert
from crossdiff.system import CrossDiffusionSystem

log = logging.getLogger(__name__)

STALL_WINDOW = 25


class StepFailure(RuntimeError):
    """Neither the fixed-point iteration nor Newton reached the tolerance."""

    def __init__(self, message: str, best: np.ndarray | None = None, residual: float = np.inf):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.step_index: int | None = None


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    n_steps: int
    mbar_floor: float = 0.0
    fp_tol: float = 1e-10
    fp_max: int = 500
    newton_fallback: bool = True
    newton_max: int = 50
    linear_solver: str = "dct"  # or "cg"
    linear_tol: float = 1e-12
    linear_max: int = 1000
    inversion: InversionConfig = field(default_factory=InversionConfig)

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self, rho_bar: float | None = None) -> list[str]:
        out = []
        if not self.tau > 0:
            out.append("tau must be positive")
        if self.n_steps < 0:
            out.append("n_steps must be >= 0")
        if self.fp_tol <= 0 or self.linear_tol <= 0:
            out.append("tolerances must be positive")
        if self.fp_max < 1 or self.linear_max < 1 or self.newton_max < 1:
            out.append("iteration caps must be >= 1")
        if self.mbar_floor < 0:
            out.append("mbar_floor must be >= 0")
        if self.linear_solver not in ("dct", "cg"):
            out.append(f"unknown linear_solver {self.linear_solver!r}")
        if rho_bar is not None and not rho_bar * self.tau < 0.5:
            out.append(f"rho*tau < 1/2 violated: rho={rho_bar}, tau={self.tau}")
        return out

    def validate_for(self, system: CrossDiffusionSystem) -> None:
        problems = self.violations(system.rho_bar)
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class StepReport:
    iterations: int
    final_residual: float
    mbar_used: float
    min_value: float
    solver_path: str  # "fixed-point" or "newton"
    newton_iterations: int = 0


# -- building blocks --------------------------------------------------------


def mbar(system: CrossDiffusionSystem, U: np.ndarray, tau: float, floor: float = 0.0) -> float:
    """Shift making ``M A(U) - U + tau R(U)`` componentwise nonnegative."""
    rates = system.reaction_rates(U)
    r_inf = float(np.max(np.abs(rates))) if rates.size else 0.0
    return max(floor, (2.0 + tau * r_inf) / system.alpha)


def _helmholtz_matrix(grid: Grid, M: float, tau: float) -> sp.csr_matrix:
    ops = []
    for n, h in zip(grid.extents, grid.spacing):
        main = -2.0 * np.ones(n)
        main[0] = main[-1] = -1.0
        off = np.ones(n - 1)
        ops.append(sp.diags([off, main, off], [-1, 0, 1]) / h**2)
    if grid.dim == 1:
        lap = ops[0]
    else:
        lap = sp.kron(ops[0], sp.identity(grid.extents[1])) + sp.kron(
            sp.identity(grid.extents[0]), ops[1]
        )
    return (M * sp.identity(grid.size) - tau * lap).tocsr()


def theta_solve(
    grid: Grid,
    F: np.ndarray,
    M: float,
    tau: float,
    method: str = "dct",
    tol: float = 1e-12,
    maxiter: int = 1000,
) -> np.ndarray:
    """Solve ``(M - tau Lap_h) W = F`` for each leading component of ``F``."""
    if M <= 0:
        raise ValueError("M must be positive")
    F = grid.check(F)
    if method == "dct":
        return grid.idct(grid.dct(F) / (M + tau * grid.eigenvalues()))
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    K = _helmholtz_matrix(grid, M, tau)
    precond = sp.diags(1.0 / K.diagonal())
    lead = F.shape[: F.ndim - grid.dim]
    flat = F.reshape((-1, grid.size))
    out = np.empty_like(flat)
    for j, rhs in enumerate(flat):
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        x, info = spla.cg(K, rhs, x0=rhs / M, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
        if info != 0 or np.max(np.abs(K @ x - rhs)) > 10 * tol * scale * np.sqrt(grid.size):
            raise LinearSolveError(f"CG did not converge (info={info})")
        out[j] = x
    return out.reshape(lead + grid.shape)


def scheme_residual(
    system: CrossDiffusionSystem, grid: Grid, U: np.ndarray, S: np.ndarray, tau: float
) -> np.ndarray:
    """``U - tau Lap_h A(U) - S - tau R(U)``."""
    return U - tau * grid.laplacian(system.eval_A(U)) - S - tau * system.eval_R(U)


# -- Newton on W = A(U) -------------------------------------------------------


def _laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    return (_helmholtz_matrix(grid, 0.0, -1.0)).tocsr()


def _newton(system, grid, S, U, config) -> tuple[np.ndarray, float, int]:
    """Damped Newton for ``G(W) = A^{-1}(W) - tau Lap W - S - tau R(A^{-1}(W))``."""
    tau = config.tau
    n = system.n_species
    m = grid.size
    lap = _laplacian_matrix(grid)
    big_lap = sp.kron(sp.identity(n), lap).tocsr()
    cert = _certificate(config, S)

    W = system.eval_A(U)

    def G(W, U):
        return U - tau * grid.laplacian(W) - S - tau * system.eval_R(U)

    res = G(W, U)
    norm = float(np.max(np.abs(res)))
    for it in range(1, config.newton_max + 1):
        if norm <= 0.1 * cert:
            return U, norm, it - 1
        Upos = np.maximum(U, 1e-300)
        JA = system.jacobian_A(Upos).reshape(n, n, m)
        JR = system.jacobian_R(Upos).reshape(n, n, m)
        inv = np.linalg.inv(np.moveaxis(JA, -1, 0))  # dU/dW per cell
        local = np.einsum("cij,cjk->cik", np.eye(n)[None] - tau * np.moveaxis(JR, -1, 0), inv)
        blocks = sp.bmat(
            [[sp.diags(local[:, i, k]) for k in range(n)] for i in range(n)], format="csr"
        )
        jac = blocks - tau * big_lap
        delta = spla.spsolve(jac.tocsc(), -res.reshape(-1)).reshape(W.shape)
        step = 1.0
        for _ in range(40):
            W_try = W + step * delta
            if np.all(W_try >= 0):
                try:
                    U_try = invert(system, W_try, config.inversion, initial=U)
                except InversionError:
                    U_try = None
                if U_try is not None:
                    res_try = G(W_try, U_try)
                    n_try = float(np.max(np.abs(res_try)))
                    if n_try < norm:
                        break
            step *= 0.5
        else:
            if norm <= cert:
                # no descent left at roundoff level, but already certified
                return U, norm, it - 1
            raise StepFailure("Newton line search failed", best=U, residual=norm)
        W, U, res, norm = W_try, U_try, res_try, n_try
    if norm <= cert:
        return U, norm, config.newton_max
    raise StepFailure(f"Newton did not converge (residual {norm:.3e})", best=U, residual=norm)


def _certificate(config: SchemeConfig, S: np.ndarray) -> float:
    return 10.0 * config.fp_tol * (1.0 + float(np.max(np.abs(S))))


# -- one step ------------------------------------------------------------------


def step(
    system: CrossDiffusionSystem, grid: Grid, S: np.ndarray, config: SchemeConfig
) -> tuple[np.ndarray, StepReport]:
    """Advance one implicit step from ``S``; returns the new state and diagnostics."""
    S = grid.check(S)
    if np.any(S < 0) or not np.all(np.isfinite(S)):
        raise ValueError("previous state must be finite and nonnegative")
    config.validate_for(system)
    tau = config.tau
    cert = _certificate(config, S)
    fp_target = config.fp_tol * (1.0 + float(np.max(np.abs(S))))

    U = S.copy()
    M = mbar(system, U, tau, config.mbar_floor)
    A_U = system.eval_A(U)
    best = np.inf
    since_best = 0
    residual = np.inf
    iterations = 0
    path = "fixed-point"
    converged = False
    try:
        for iterations in range(1, config.fp_max + 1):
            R_U = system.eval_R(U)
            rhs = S + M * A_U - U + tau * R_U
            if np.min(rhs) < 0:
                # the frozen shift no longer covers this iterate
                M = max(M, mbar(system, U, tau, config.mbar_floor))
                rhs = S + M * A_U - U + tau * R_U
            W = theta_solve(
                grid, rhs, M, tau, config.linear_solver, config.linear_tol, config.linear_max
            )
            # the solve is monotone; only roundoff can push W below zero
            U_new = invert(system, np.maximum(W, 0.0), config.inversion, initial=U)
            increment = float(np.max(np.abs(U_new - U)))
            U = U_new
            A_U = system.eval_A(U)
            residual = float(np.max(np.abs(
                U - tau * grid.laplacian(A_U) - S - tau * system.eval_R(U)
            )))
            if increment <= config.fp_tol and residual <= fp_target:
                converged = True
                break
            if increment < 0.999 * best:
                best, since_best = increment, 0
            else:
                since_best += 1
                if since_best >= STALL_WINDOW:
                    log.debug("fixed point stalled after %d sweeps", iterations)
                    break
    except (InversionError, LinearSolveError) as exc:
        log.debug("fixed point aborted: %s", exc)

    newton_iterations = 0
    if not converged:
        if not config.newton_fallback:
            raise StepFailure(
                f"fixed point did not converge (residual {residual:.3e})", best=U, residual=residual
            )
        path = "newton"
        start = U if np.all(np.isfinite(U)) and np.all(U >= 0) else S.copy()
        if np.any(start <= 0):
            start = np.maximum(start, 1e-12)
        U, residual, newton_iterations = _newton(system, grid, S, start, config)

    if residual > cert:
        raise StepFailure(f"residual {residual:.3e} above certificate {cert:.3e}", U, residual)
    report = StepReport(
        iterations=iterations,
        final_residual=residual,
        mbar_used=M,
        min_value=float(np.min(U)),
        solver_path=path,
        newton_iterations=newton_iterations,
    )
    return U, report


# -- time loop -------------------------------------------------------------------


@dataclass
class Trajectory:
    """States kept at ``store_every`` and one report per step."""

    grid: Grid
    tau: float
    times: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)
    store_every: int = 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def iterate(
    system: CrossDiffusionSystem, grid: Grid, U0: np.ndarray, config: SchemeConfig
) -> Iterator[tuple[int, np.ndarray, StepReport]]:
    """Yield ``(k, U^k, report)`` for ``k = 1..n_steps``."""
    U0 = grid.check(U0)
    if np.any(U0 <= 0):
        raise ValueError("initial data must be strictly positive")
    config.validate_for(system)
    U = U0
    for k in range(1, config.n_steps + 1):
        try:
            U, report = step(system, grid, U, config)
        except StepFailure as exc:
            exc.step_index = k
            raise
        yield k, U, report


def run(
    system: CrossDiffusionSystem,
    grid: Grid,
    U0: np.ndarray,
    config: SchemeConfig,
    store_every: int = 1,
    callbacks: list[Callable[[int, float, np.ndarray, StepReport | None], None]] | None = None,
) -> Trajectory:
    """Run ``n_steps`` steps; every callback sees every step (``k = 0`` with ``report=None``)."""
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    U0 = grid.check(U0)
    callbacks = callbacks or []
    traj = Trajectory(grid=grid, tau=config.tau, store_every=store_every)
    traj.times.append(0.0)
    traj.steps.append(0)
    traj.states.append(U0.copy())
    for cb in callbacks:
        cb(0, 0.0, U0, None)
    for k, U, report in iterate(system, grid, U0, config):
        t = k * config.tau
        traj.reports.append(report)
        if k % store_every == 0 or k == config.n_steps:
            traj.times.append(t)
            traj.steps.append(k)
            traj.states.append(U)
        for cb in callbacks:
            cb(k, t, U, report)
    return traj
