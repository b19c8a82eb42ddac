"""Inverse of the diffusion map ``A`` on the nonnegative cone.

Two species: for fixed ``v`` the first equation ``a_1(u, v) u = f`` has a
unique root ``u_f(v)``; substituting it, ``v -> a_2(u_f(v), v) v`` is
continuous and strictly increasing, so one bracketed scalar root finding
per cell recovers ``(u, v)``. Both stages run vectorised over cells.

General ``I``: damped Newton from ``target / alpha`` with a
Gauss-Seidel sweep over the scalar monotone equations as fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossdiff.system import CrossDiffusionSystem

_FLOOR = 1e-30


class InversionError(RuntimeError):
    """Raised when ``A^{-1}`` cannot be evaluated within the iteration caps."""


@dataclass(frozen=True)
class InversionConfig:
    abs_tol: float = 1e-12
    max_bisect: int = 200
    max_newton: int = 50

    def __post_init__(self) -> None:
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if self.max_bisect < 1 or self.max_newton < 1:
            raise ValueError("iteration caps must be >= 1")


DEFAULT = InversionConfig()


def _check_target(system: CrossDiffusionSystem, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape[0] != system.n_species:
        raise ValueError(f"target must have {system.n_species} components on its leading axis")
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    if np.any(target < 0):
        raise ValueError("target must be nonnegative")
    return target


def _rate(system: CrossDiffusionSystem, i: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return system.diffusion_rates(np.stack([u, v]))[i]


def _inner(system, f, v, config):
    """``u_f(v)``: closed form when ``a_1`` does not depend on ``u``."""
    if system.cross[0, 0] == 0:
        return f / _rate(system, 0, np.zeros_like(v), v)
    lo = np.zeros_like(f)
    hi = f / system.alpha
    for _ in range(config.max_bisect):
        mid = 0.5 * (lo + hi)
        val = _rate(system, 0, mid, v) * mid - f
        lo = np.where(val < 0, mid, lo)
        hi = np.where(val < 0, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            break
    return 0.5 * (lo + hi)


def invert_two_species(
    system: CrossDiffusionSystem,
    target: np.ndarray,
    config: InversionConfig = DEFAULT,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``A(u, v) = (f, g)`` cellwise; ``initial`` is an optional warm start."""
    if system.n_species != 2:
        raise ValueError("invert_two_species needs a two-species system")
    target = _check_target(system, target)
    f = target[0].ravel()
    g = target[1].ravel()
    eps = np.finfo(float).eps
    tol = config.abs_tol * np.maximum(1.0, g)

    lo = np.zeros_like(g)
    hi = g / system.alpha
    h_lo = -g.copy()
    h_hi = np.full_like(g, np.inf)
    if initial is None:
        v = 0.5 * hi
    else:
        v = np.clip(np.asarray(initial, dtype=float)[1].ravel(), lo, hi)
    done = g == 0
    v[done] = 0.0

    for _ in range(config.max_bisect):
        active = ~done
        if not np.any(active):
            break
        fa, va = f[active], v[active]
        u = _inner(system, fa, va, config)
        a2 = _rate(system, 1, u, va)
        h = a2 * va - g[active]

        lo_a, hi_a, hlo_a, hhi_a = lo[active], hi[active], h_lo[active], h_hi[active]
        inside = (va > lo_a) & (va < hi_a)
        slack = 1e-12 * np.maximum(1.0, g[active])
        if np.any(inside & ((h < hlo_a - slack) | (h > hhi_a + slack))):
            raise InversionError("outer map is not monotone on the bracket")
        neg = h < 0
        lo_a = np.where(neg, va, lo_a)
        hlo_a = np.where(neg, h, hlo_a)
        hi_a = np.where(neg, hi_a, va)
        hhi_a = np.where(neg, hhi_a, h)
        conv = (np.abs(h) <= tol[active]) | (hi_a - lo_a <= 4 * eps * np.maximum(va, 1e-300))

        # Newton candidate: dh/dv = det(DA) / dA1/du
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            J = system.jacobian_A(np.stack([np.maximum(u, _FLOOR), np.maximum(va, _FLOOR)]))
            dh = (J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]) / J[0, 0]
            cand = va - h / dh
        ok = np.isfinite(cand) & (cand > lo_a) & (cand < hi_a)
        new_v = np.where(ok, cand, 0.5 * (lo_a + hi_a))
        # converged cells still take the Newton step when it stays in the
        # bracket: it costs nothing and lands at roundoff level
        new_v = np.where(conv, np.where(ok, cand, va), new_v)

        lo[active], hi[active] = lo_a, hi_a
        h_lo[active], h_hi[active] = hlo_a, hhi_a
        v[active] = new_v
        idx = np.flatnonzero(active)
        done[idx[conv]] = True
    else:
        if not np.all(done):
            bad = int(np.flatnonzero(~done)[0])
            raise InversionError(
                f"two-species inversion did not converge in {config.max_bisect} iterations "
                f"(cell {bad}, target=({f[bad]}, {g[bad]}))"
            )
    if not np.all(done):
        raise InversionError("two-species inversion did not converge")
    u = _inner(system, f, v, config)
    return np.stack([u, v]).reshape(target.shape)


def _gauss_seidel(system, target, U, config):
    """Sweep ``a_i(U) u_i = target_i`` for ``u_i`` by bisection, others frozen."""
    n = system.n_species
    for _ in range(config.max_bisect):
        previous = U.copy()
        for i in range(n):
            lo = np.zeros(U.shape[1])
            hi = target[i] / system.alpha
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                trial = U.copy()
                trial[i] = mid
                val = system.diffusion_rates(trial)[i] * mid - target[i]
                lo = np.where(val < 0, mid, lo)
                hi = np.where(val < 0, hi, mid)
            U[i] = 0.5 * (lo + hi)
        if np.max(np.abs(U - previous)) <= config.abs_tol * max(1.0, float(np.max(U))):
            break
    return U


def invert_general(
    system: CrossDiffusionSystem,
    target: np.ndarray,
    config: InversionConfig = DEFAULT,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Damped Newton for ``A(U) = target`` with zero components held at 0."""
    target = _check_target(system, target)
    n = system.n_species
    Y = target.reshape(n, -1)
    active = Y > 0
    tol = config.abs_tol * np.maximum(1.0, Y)
    if initial is None:
        U = Y / system.alpha
    else:
        U = np.where(active, np.maximum(np.asarray(initial, dtype=float).reshape(n, -1), _FLOOR), 0.0)

    def residual(V):
        return np.where(active, system.eval_A(V) - Y, 0.0)

    F = residual(U)
    eye = np.eye(n)
    polished = False
    for _ in range(config.max_newton):
        if polished:
            break
        # one extra step once inside the tolerance (a warm start may already be)
        polished = bool(np.all(np.abs(F) <= tol))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            J = system.jacobian_A(U, strict=False)
        J = np.moveaxis(J, (0, 1), (-2, -1)).copy()  # (cells, I, I)
        inactive = ~active.T
        for i in range(n):
            J[inactive[:, i], i, :] = eye[i]
            J[inactive[:, i], :, i] = eye[i]
        try:
            delta = np.linalg.solve(J, -F.T[..., None])[..., 0].T
        except np.linalg.LinAlgError as exc:
            raise InversionError("singular Jacobian in Newton inversion") from exc
        delta = np.where(np.isfinite(delta), delta, 0.0)
        norm = np.max(np.abs(F), axis=0)
        step = np.ones(U.shape[1])
        for _ in range(60):
            trial = np.where(active, np.maximum(U + step * delta, _FLOOR), 0.0)
            F_trial = residual(trial)
            bad = (np.any(active & (U + step * delta <= 0), axis=0)) | (
                np.max(np.abs(F_trial), axis=0) > norm
            )
            if not np.any(bad):
                break
            step = np.where(bad, 0.5 * step, step)
        else:
            # cells that never found a decreasing step keep their iterate
            trial = np.where(bad, U, trial)
            F_trial = np.where(bad, F, F_trial)
        U, F = trial, F_trial

    if not np.all(np.abs(F) <= tol):
        U = _gauss_seidel(system, Y, U, config)
        F = residual(U)
        if not np.all(np.abs(F) <= 100 * tol):
            raise InversionError(
                f"general inversion did not converge (max residual {np.max(np.abs(F)):.3e})"
            )
    return U.reshape(target.shape)


def invert(
    system: CrossDiffusionSystem,
    target: np.ndarray,
    config: InversionConfig = DEFAULT,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """``A^{-1}(target)``, picking the two-species path when it applies."""
    if system.n_species == 2:
        return invert_two_species(system, target, config, initial)
    return invert_general(system, target, config, initial)
