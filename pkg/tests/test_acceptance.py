"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; the lines are printed in the
terminal summary (see ``conftest.py``) and when this file is run directly.
"""

import time

import numpy as np
import pytest

from crossdiff.estimates import (
    CosineTestFunction,
    EstimateLedger,
    audit_duality,
    audit_entropy,
    audit_mass,
    weak_residual,
)
from crossdiff.grid import Grid
from crossdiff.inversion import invert_two_species
from crossdiff.reference import explicit_reference, stable_tau
from crossdiff.stepper import SchemeConfig, run
from crossdiff.system import CrossDiffusionSystem, PowerLawParams, entropy_admissible

RESULTS: list[str] = []

THEOREM = PowerLawParams(d=(1, 1), gamma=(0.5, 1.5), rho=(1, 1), s=(0.5, 1, 1, 1))


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def bump_data(grid):
    (x,) = grid.coordinates()
    return np.stack([
        0.5 + np.exp(-((x - 0.3) ** 2) / (2 * 0.08**2)),
        0.5 + np.exp(-((x - 0.7) ** 2) / (2 * 0.08**2)),
    ])


def simulate(system, grid, U0, config):
    ledger = EstimateLedger(system, grid, config.tau)
    start = time.perf_counter()
    traj = run(system, grid, U0, config, callbacks=[ledger])
    return ledger, traj, time.perf_counter() - start


@pytest.fixture(scope="module")
def scenario2():
    """1D, n=64, tau=1e-3, N=200, theorem-regime exponents, reactions on."""
    grid = Grid.uniform(64)
    system = CrossDiffusionSystem.two_species(THEOREM)
    config = SchemeConfig(tau=1e-3, n_steps=200)
    return (system, grid, config) + simulate(system, grid, bump_data(grid), config)


@pytest.fixture(scope="module")
def scenario2_no_reactions():
    grid = Grid.uniform(64)
    system = CrossDiffusionSystem.two_species(THEOREM, reactions=False)
    # mass drift equals the accumulated solver residual; fp_tol 1e-11 keeps it
    # an order of magnitude under the 1e-8 target
    config = SchemeConfig(tau=1e-3, n_steps=200, fp_tol=1e-11)
    return (system, grid, config) + simulate(system, grid, bump_data(grid), config)


def test_criterion_1_inversion_round_trip():
    system = CrossDiffusionSystem.two_species(THEOREM)
    rng = np.random.default_rng(20240601)
    U = 10.0 * (1.0 - rng.random((2, 1000)))  # (0, 10]
    target = system.eval_A(U)
    start = time.perf_counter()
    back = invert_two_species(system, target)
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(back - U)))
    bound = 1e-10 * (1 + float(np.max(U)))
    report(1, err <= bound and elapsed < 1.0, f"max error {err:.2e} <= {bound:.1e}, {elapsed:.3f} s < 1 s")


def test_criterion_2_scheme_residual(scenario2):
    system, grid, config, ledger, traj, elapsed = scenario2
    worst = 0.0
    S = traj.states[0]
    for k, rep in enumerate(traj.reports, start=1):
        cert = 10 * config.fp_tol * (1 + float(np.max(np.abs(S))))
        worst = max(worst, rep.final_residual / cert)
        S = traj.states[k]
    paths = {r.solver_path for r in traj.reports}
    report(
        2,
        worst <= 1.0 and elapsed < 30 and len(traj.reports) == 200,
        f"max residual/certificate {worst:.3f} over 200 steps ({'/'.join(sorted(paths))}), "
        f"{elapsed:.1f} s < 30 s",
    )


def test_criterion_3_mass_bounds(scenario2, scenario2_no_reactions):
    system, grid, config, ledger, traj, _ = scenario2
    result = audit_mass(ledger)
    mass = np.array(ledger.mass)
    k = np.arange(len(mass))[:, None]
    raw = (1 - system.rho_bar * config.tau) ** (-k) * mass[0] - mass
    raw_violations = int(np.sum(np.any(raw < 0, axis=1)))

    _, _, _, ledger0, _, _ = scenario2_no_reactions
    m0 = np.array(ledger0.mass)
    drift = float(np.max(np.abs(m0 - m0[0]) / m0[0]))
    ok = result.passed and raw_violations == 0 and drift <= 1e-8
    report(
        3,
        ok,
        f"per-step bound: {raw_violations} violations (min margin {raw[1:].min():.2e}); "
        f"R=0 mass drift {drift:.1e} <= 1e-8",
    )


def test_criterion_4_duality(scenario2):
    _, _, _, ledger, _, _ = scenario2
    result = audit_duality(ledger)
    d = result.details
    positive = result.passed and result.margin > 0 and d["poincare_holds"]
    positive = positive and d["rhs_poincare"] - d["lhs"] > 0

    grid = Grid.uniform(64)
    system = CrossDiffusionSystem.two_species(THEOREM, reactions=False)
    U0 = np.stack([np.full(64, 0.8), np.full(64, 1.7)])
    flat, _, _ = simulate(system, grid, U0, SchemeConfig(tau=1e-3, n_steps=50))
    eq = audit_duality(flat).details
    rel = abs(eq["lhs"] - eq["rhs"]) / eq["rhs"]
    report(
        4,
        positive and rel <= 1e-8,
        f"LHS {d['lhs']:.4f} <= RHS {d['rhs_poincare']:.4f} (C_Omega) / {d['rhs']:.4f} (unit); "
        f"constant-data sides agree to {rel:.1e}",
    )


def test_criterion_5_entropy(scenario2_no_reactions):
    system, grid, config, ledger, _, _ = scenario2_no_reactions
    adm = entropy_admissible(system)
    result = audit_entropy(ledger, slack=10.0)
    d = result.details
    gam_ok = bool(np.all(ledger.gamma() >= 0))

    bad = CrossDiffusionSystem.two_species(PowerLawParams(gamma=(2.0, 2.0)))
    neg = entropy_admissible(bad)
    negative_control = neg.status == "inadmissible" and neg.l_det < 0
    ok = (
        adm.status == "admissible"
        and result.passed
        and not d["convexity_violations"]
        and not d["monotonicity_violations"]
        and gam_ok
        and negative_control
    )
    report(
        5,
        ok,
        f"convexity defect min {d['min_convexity_defect']:.1e} >= -1e-9, monotone within "
        f"10 h^2 Gamma_k (min margin {d['min_monotonicity_margin']:.1e}), Gamma_k >= 0; "
        f"gamma=(2,2) flagged inadmissible (det L = {neg.l_det:g})",
    )


def test_criterion_6_explicit_oracle():
    grid = Grid.uniform(32)
    (x,) = grid.coordinates()
    U0 = np.stack([1 + 0.5 * np.cos(np.pi * x), 1 - 0.5 * np.cos(np.pi * x)])
    system = CrossDiffusionSystem.two_species(THEOREM)
    T = 0.1
    start = time.perf_counter()
    reference = explicit_reference(system, grid, U0, T, 0.25 * stable_tau(system, grid, U0))
    taus = [4e-3, 2e-3, 1e-3, 5e-4]
    errors = []
    for tau in taus:
        traj = run(system, grid, U0, SchemeConfig(tau=tau, n_steps=int(round(T / tau))))
        errors.append(float(np.max(np.abs(traj.final - reference))))
    elapsed = time.perf_counter() - start
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    C = max(e / t for e, t in zip(errors, taus))
    ok = bool(np.all((orders >= 0.8) & (orders <= 1.3))) and elapsed < 60
    report(
        6,
        ok,
        f"errors {', '.join(f'{e:.2e}' for e in errors)} (C = {C:.2f}), "
        f"orders {', '.join(f'{o:.2f}' for o in orders)} in [0.8, 1.3], {elapsed:.1f} s < 60 s",
    )


def test_criterion_7_weak_residual():
    system = CrossDiffusionSystem.two_species(THEOREM)
    psi = CosineTestFunction(modes=(1,), decay=1.0)
    T = 0.1
    values = []
    for tau, n in ((4e-3, 32), (2e-3, 45), (1e-3, 64)):
        grid = Grid.uniform(n)
        (x,) = grid.coordinates()
        U0 = np.stack([1 + 0.5 * np.cos(np.pi * x), 1 - 0.5 * np.cos(np.pi * x)])
        traj = run(system, grid, U0, SchemeConfig(tau=tau, n_steps=int(round(T / tau))))
        values.append(weak_residual(traj, psi, system).value)
    ok = values[0] > values[1] > values[2]
    report(7, ok, "defects " + " > ".join(f"{v:.2e}" for v in values) + " across (tau, h) -> (tau/2, h/sqrt2)")


def test_criterion_8_positivity(scenario2):
    _, _, _, ledger, traj, _ = scenario2
    lowest = min(float(np.min(r.min_value)) for r in traj.reports)
    lowest = min(lowest, float(np.min(traj.states[0])))
    report(8, lowest > 0, f"min over cells/species/steps = {lowest:.4f} > 0")


def test_criterion_9_grid_contracts():
    rng = np.random.default_rng(99)
    worst = 0.0
    for trial in range(100):
        if trial % 2:
            grid = Grid.uniform(int(rng.integers(2, 80)), float(rng.uniform(0.2, 5)))
        else:
            grid = Grid.uniform(
                (int(rng.integers(2, 20)), int(rng.integers(2, 20))),
                (float(rng.uniform(0.2, 5)), float(rng.uniform(0.2, 5))),
            )
        f = rng.normal(size=grid.shape)
        g = rng.normal(size=grid.shape)
        lhs = grid.edge_sum(f, g)
        rhs = -grid.integrate(f * grid.laplacian(g))
        scale = grid.cell_volume * float(np.sum(np.abs(f * grid.laplacian(g))))
        worst = max(worst, abs(lhs - rhs) / scale)

    poincare_err = 0.0
    for n in (16, 64):
        grid = Grid.uniform(n)
        h = grid.spacing[0]
        closed = 1 / np.sqrt((2 / h**2) * (1 - np.cos(np.pi / n)))
        L = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
        L[0, 0] = L[-1, -1] = -1.0
        dense = 1 / np.sqrt(np.sort(np.linalg.eigvalsh(-L / h**2))[1])
        for ref in (closed, dense):
            poincare_err = max(poincare_err, abs(grid.poincare_constant() - ref) / ref)
    report(
        9,
        worst <= 1e-12 and poincare_err <= 1e-10,
        f"summation by parts rel error {worst:.1e} <= 1e-12 on 100 pairs; "
        f"Poincare constant rel error {poincare_err:.1e} <= 1e-10 at n = 16, 64",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
