"""Per-step a-priori quantities and the inequalities they must satisfy.

:class:`EstimateLedger` is fed one state per step (as a :func:`crossdiff.stepper.run`
callback) and stores integrals; the ``audit_*`` functions read it back and
return an :class:`AuditResult` carrying a verdict and the margins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from crossdiff.grid import Grid
from crossdiff.stepper import StepReport
from crossdiff.system import CrossDiffusionSystem, Entropy, entropy_admissible


@dataclass
class AuditResult:
    name: str
    passed: bool
    status: str
    margin: float
    details: dict[str, Any] = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.status} (margin {self.margin:.3e})"


def mixture_mu(system: CrossDiffusionSystem, U: np.ndarray) -> np.ndarray:
    """``mu = sum a_i u_i / sum u_i``, set to ``alpha`` where all densities vanish."""
    total = U.sum(axis=0)
    flux = system.eval_A(U).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(total > 0, flux / total, system.alpha)


class EstimateLedger:
    """Append-only record of the audited integrals, one row per step ``k``."""

    columns = (
        "k", "t", "mass_1", "mass_2", "entropy", "diss_g1", "diss_g2", "diss_cross",
        "dual_mu_u2", "dual_mu", "entropy_reaction", "fp_iters", "residual", "min_value",
    )

    def __init__(self, system: CrossDiffusionSystem, grid: Grid, tau: float):
        self.system = system
        self.grid = grid
        self.tau = tau
        self.entropy = Entropy.for_system(system) if system.n_species == 2 else None
        self.k: list[int] = []
        self.t: list[float] = []
        self.mass: list[np.ndarray] = []
        self.entropy_value: list[float] = []
        self.dissipation: list[np.ndarray] = []
        self.reaction_sink: list[np.ndarray] = []
        self.dual_mu: list[float] = []
        self.dual_mu_u2: list[float] = []
        self.entropy_reaction: list[float] = []
        self.u2_power: list[float] = []
        self.pairing: list[float] = []
        self.fp_iters: list[int] = []
        self.residual: list[float] = []
        self.min_value: list[float] = []
        self.u0: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.k)

    def __call__(self, k: int, t: float, U: np.ndarray, report: StepReport | None) -> None:
        self.record(k, t, U, report)

    def record(self, k: int, t: float, U: np.ndarray, report: StepReport | None = None) -> None:
        grid, system = self.grid, self.system
        if k != len(self.k):
            raise ValueError(f"ledger expects step {len(self.k)}, got {k}")
        if k == 0:
            self.u0 = U.copy()
        A_U = system.eval_A(U)
        R_U = system.eval_R(U)
        self.k.append(k)
        self.t.append(t)
        self.mass.append(np.atleast_1d(grid.integrate(U)))
        self.reaction_sink.append(np.atleast_1d(grid.integrate(system.rho_bar * U - R_U)))

        total = U.sum(axis=0)
        mu = mixture_mu(system, U)
        self.dual_mu.append(float(grid.integrate(mu)))
        self.dual_mu_u2.append(float(grid.integrate(mu * total**2)))

        if self.entropy is not None:
            g1, g2 = self.entropy.gammas
            u1, u2 = U[0], U[1]
            self.entropy_value.append(float(grid.integrate(self.entropy.density(U))))
            self.dissipation.append(np.array([
                grid.edge_sum(u1 ** (g1 / 2)),
                grid.edge_sum(u2 ** (g2 / 2)),
                grid.edge_sum(np.sqrt(u1**g1 * u2**g2)),
            ]))
            s21, s22 = system.s[1, 0], system.s[1, 1]
            self.entropy_reaction.append(float(grid.integrate(u2**g2 * (u1**s21 + u2**s22))))
            self.u2_power.append(float(grid.integrate(u2**g2)))
            if k > 0:
                with np.errstate(divide="ignore", invalid="ignore"):
                    grad_phi = self.entropy.phi_prime(U)
                drive = grid.laplacian(A_U) + R_U
                self.pairing.append(self.tau * float(grid.integrate((grad_phi * drive).sum(axis=0))))
            else:
                self.pairing.append(0.0)
        else:
            nan = float("nan")
            self.entropy_value.append(nan)
            self.dissipation.append(np.full(3, nan))
            self.entropy_reaction.append(nan)
            self.u2_power.append(nan)
            self.pairing.append(nan)

        self.fp_iters.append(report.iterations if report else 0)
        self.residual.append(report.final_residual if report else 0.0)
        self.min_value.append(report.min_value if report else float(np.min(U)))

    # -- derived series ----------------------------------------------------

    @property
    def n_steps(self) -> int:
        return len(self.k) - 1

    def gamma(self) -> np.ndarray:
        """``Gamma_k``: sum of the three dissipation terms per step."""
        return np.array([d.sum() for d in self.dissipation])

    def duality_terms(self) -> np.ndarray:
        return np.asarray(self.dual_mu_u2)

    def duality_sum(self) -> np.ndarray:
        """Cumulative ``sum_{j<=k} tau * int (sum u)(sum a u)``."""
        return self.tau * np.cumsum(self.duality_terms())

    def rows(self) -> list[list[float]]:
        out = []
        for j, k in enumerate(self.k):
            mass = list(self.mass[j]) + [float("nan")] * max(0, 2 - len(self.mass[j]))
            out.append([
                k, self.t[j], mass[0], mass[1], self.entropy_value[j],
                *self.dissipation[j], self.dual_mu_u2[j], self.dual_mu[j],
                self.entropy_reaction[j], self.fp_iters[j], self.residual[j], self.min_value[j],
            ])
        return out


# -- audits -------------------------------------------------------------------


def audit_mass(ledger: EstimateLedger, rtol: float = 1e-13) -> AuditResult:
    """Per-step ``int U^k <= (1 - rho tau)^{-k} int U^0`` plus the two global bounds.

    Steps are solved only up to the recorded residual ``e_j``, and each one
    may add ``|Omega| e_j`` of mass; that amount (propagated by the same
    growth factor) plus ``rtol * int U^0`` of roundoff is allowed. The raw
    margins are reported as well.
    """
    rho, tau = ledger.system.rho_bar, ledger.tau
    N = ledger.n_steps
    if N <= 0:
        return AuditResult("mass", True, "vacuous (no steps)", 0.0)
    mass = np.array(ledger.mass)
    m0 = mass[0]
    q = 1.0 / (1.0 - rho * tau)
    k = np.arange(N + 1)[:, None]
    growth = q ** k
    slack = np.zeros(N + 1)
    for j in range(1, N + 1):
        slack[j] = q * (slack[j - 1] + ledger.grid.volume * ledger.residual[j])
    allow = slack[:, None] + rtol * m0 * growth
    step_margin = (growth * m0 - mass)[1:]
    global_bound = 2.0 ** (2 * rho * tau * N) * m0
    max_margin = global_bound - mass.max(axis=0)
    sink = tau * np.array(ledger.reaction_sink)[1:].sum(axis=0)
    sink_margin = global_bound - sink
    violations = [int(j) + 1 for j in np.flatnonzero(np.any(step_margin < -allow[1:], axis=1))]
    passed = (
        not violations
        and np.all(max_margin >= -allow[-1])
        and np.all(sink_margin >= -allow[-1])
    )
    margin = float(min((step_margin / m0).min(), (max_margin / m0).min(), (sink_margin / m0).min()))
    return AuditResult(
        "mass",
        bool(passed),
        "ok" if passed else f"violated at steps {violations[:10]}",
        margin,
        {
            "violations": violations,
            "min_step_margin": float(step_margin.min()),
            "residual_allowance": float(slack[-1]),
            "max_mass_margin": max_margin.tolist(),
            "sink_margin": sink_margin.tolist(),
        },
    )


def audit_duality(ledger: EstimateLedger, rtol: float = 1e-10) -> AuditResult:
    """Discrete duality inequality for ``u = sum u_i`` and ``mu = sum a_i u_i / u``.

    With ``||f||_{H^-1_m} = ||grad phi||``, ``-Lap phi = f - <f>``, the pairing
    ``int f (S - <S>) = int grad phi . grad S`` needs no Poincare factor, so the
    verdict uses ``C = max(1, C_Omega)``. The bound with ``C_Omega`` itself is
    reported alongside (``rhs_poincare``).
    """
    grid, tau = ledger.grid, ledger.tau
    rho = ledger.system.rho_bar
    N = ledger.n_steps
    if ledger.u0 is None:
        raise ValueError("ledger has no initial state")
    u0 = ledger.u0.sum(axis=0)
    c_omega = grid.poincare_constant()
    c_eff = max(1.0, c_omega)
    h1 = grid.hminus1m_norm(u0)
    avg = float(grid.mean(u0))
    lhs = tau * float(np.sum(ledger.dual_mu_u2[1:]))
    sum_mu = tau * float(np.sum(ledger.dual_mu[1:]))
    factor = (1 - rho * tau) ** (-2 * N)
    rhs = factor * (c_eff**2 * h1**2 + avg**2 * sum_mu)
    rhs_poincare = factor * (c_omega**2 * h1**2 + avg**2 * sum_mu)
    margin = rhs - lhs
    passed = lhs <= rhs * (1 + rtol)
    return AuditResult(
        "duality",
        bool(passed),
        "ok" if passed else "LHS exceeds RHS",
        float(margin),
        {
            "lhs": lhs,
            "rhs": rhs,
            "rhs_poincare": rhs_poincare,
            "poincare_holds": bool(lhs <= rhs_poincare * (1 + rtol)),
            "poincare_constant": c_omega,
            "hminus1m_norm_u0": h1,
            "mean_u0": avg,
            "functional": float(tau * np.sum(ledger.dual_mu_u2)),
        },
    )


def duality_refinement_ok(coarse: float, fine: float, growth: float = 0.05) -> bool:
    """The total duality functional must not grow by more than ``growth`` when tau halves."""
    return fine <= (1 + growth) * coarse


def audit_entropy(
    ledger: EstimateLedger,
    slack: float = 10.0,
    K: float | None = None,
    tol: float = 1e-9,
    admissibility_samples: int = 10_000,
    seed: int = 0,
) -> AuditResult:
    """Convexity inequality per step, monotonicity (reactions off) and the cumulative bound."""
    system = ledger.system
    if ledger.entropy is None:
        return AuditResult("entropy", True, "not applicable (needs two species)", 0.0)
    adm = entropy_admissible(system, samples=admissibility_samples, seed=seed)
    E = np.array(ledger.entropy_value)
    P = np.array(ledger.pairing)
    gam = ledger.gamma()
    h2 = max(ledger.grid.spacing) ** 2
    N = ledger.n_steps

    convex_defect = P[1:] - (E[1:] - E[:-1])
    scale = 1 + np.abs(E[1:]) + np.abs(E[:-1]) + np.abs(P[1:])
    convex_bad = np.flatnonzero(convex_defect < -tol * scale)
    details: dict[str, Any] = {
        "admissibility": adm.status,
        "l_det": adm.l_det,
        "min_convexity_defect": float((convex_defect / scale).min()) if N else 0.0,
        "convexity_violations": convex_bad.tolist(),
        "gamma_nonnegative": bool(np.all(gam >= 0)),
    }
    ok = len(convex_bad) == 0 and bool(np.all(gam >= 0))
    margin = float((convex_defect + tol * scale).min()) if N else 0.0

    if not system.reactions:
        allowance = slack * h2 * gam[1:]
        mono = E[:-1] + allowance - E[1:]
        mono_bad = np.flatnonzero(mono < -tol * scale)
        details["monotonicity_violations"] = mono_bad.tolist()
        details["min_monotonicity_margin"] = float(mono.min()) if N else 0.0
        ok = ok and len(mono_bad) == 0
        if N:
            margin = min(margin, float(mono.min()))

    u0 = ledger.u0
    g2 = ledger.entropy.gammas[1]
    norm = 1 + float(ledger.grid.integrate(np.abs(u0[0]))) + float(
        ledger.grid.integrate(u0[1] ** g2)
    )
    cumulative = max(ledger.u2_power) + ledger.tau * (
        float(np.sum(ledger.entropy_reaction[1:])) + float(np.sum(gam[1:]))
    )
    details["cumulative"] = cumulative
    details["cumulative_ratio"] = cumulative / norm
    if K is not None:
        details["K"] = K
        ok = ok and cumulative <= K * norm

    if adm.status == "inadmissible":
        return AuditResult("entropy", False, "inadmissible system", margin, details)
    return AuditResult("entropy", ok, "ok" if ok else "violated", margin, details)


# -- weak formulation ------------------------------------------------------------


@dataclass(frozen=True)
class CosineTestFunction:
    """``psi(t, x) = amplitude * exp(-decay t) * prod_a cos(m_a pi x_a / L_a)``.

    Integer modes give zero normal flux on every face.
    """

    modes: tuple[int, ...] = (1,)
    decay: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        modes = tuple(self.modes)
        if any(int(m) != m or m < 0 for m in modes):
            raise ValueError("modes must be nonnegative integers (nonzero boundary flux otherwise)")
        object.__setattr__(self, "modes", tuple(int(m) for m in modes))

    def profile(self, grid: Grid) -> np.ndarray:
        if len(self.modes) != grid.dim:
            raise ValueError("one mode per grid axis is required")
        out = np.full(grid.shape, float(self.amplitude))
        for x, m, L in zip(grid.coordinates(), self.modes, grid.lengths):
            out = out * np.cos(m * np.pi * x / L)
        return out

    def eigenvalue(self, grid: Grid) -> float:
        """``-Lap psi = kappa psi``."""
        return float(sum((m * np.pi / L) ** 2 for m, L in zip(self.modes, grid.lengths)))

    def time_factor(self, t: float) -> float:
        return float(np.exp(-self.decay * t))

    def time_integral(self, t0: float, t1: float) -> float:
        if self.decay == 0:
            return t1 - t0
        return float((np.exp(-self.decay * t0) - np.exp(-self.decay * t1)) / self.decay)


@dataclass
class WeakResidual:
    defects: np.ndarray

    @property
    def value(self) -> float:
        return float(np.sum(np.abs(self.defects)))


def weak_residual(
    trajectory, psi: CosineTestFunction, system: CrossDiffusionSystem
) -> WeakResidual:
    """Defect of the very weak formulation on ``[0, T]`` with a terminal term.

    ``U^k`` is taken constant on ``((k-1) tau, k tau]``; time integrals of the
    test function and its Laplacian are exact.
    """
    if trajectory.store_every != 1:
        raise ValueError("weak_residual needs every step stored (store_every=1)")
    grid, tau = trajectory.grid, trajectory.tau
    X = psi.profile(grid)
    kappa = psi.eigenvalue(grid)
    states = trajectory.states
    N = len(states) - 1
    T = N * tau
    defect = grid.integrate(states[-1] * X) * psi.time_factor(T) - grid.integrate(
        states[0] * X
    ) * psi.time_factor(0.0)
    defect = np.atleast_1d(np.asarray(defect, dtype=float))
    for k in range(1, N + 1):
        U = states[k]
        t0, t1 = (k - 1) * tau, k * tau
        dpsi = psi.time_factor(t1) - psi.time_factor(t0)
        ipsi = psi.time_integral(t0, t1)
        defect -= np.atleast_1d(grid.integrate(U * X)) * dpsi
        defect -= -kappa * ipsi * np.atleast_1d(grid.integrate(system.eval_A(U) * X))
        defect -= ipsi * np.atleast_1d(grid.integrate(system.eval_R(U) * X))
    return WeakResidual(defects=defect)
