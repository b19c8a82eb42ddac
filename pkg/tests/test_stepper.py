import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossdiff.grid import Grid
from crossdiff.reference import homogeneous_step_oracle
from crossdiff.stepper import (
    SchemeConfig,
    StepFailure,
    mbar,
    run,
    scheme_residual,
    step,
    theta_solve,
)
from crossdiff.system import CrossDiffusionSystem, PowerLawParams

PARAMS = PowerLawParams()
SYS = CrossDiffusionSystem.two_species(PARAMS)
SYS_NOREACT = CrossDiffusionSystem.two_species(PARAMS, reactions=False)


def bumps(grid, floor=0.5, amp=0.5):
    (x,) = grid.coordinates()
    return np.stack([
        floor + amp * np.exp(-((x - 0.3) ** 2) / (2 * 0.1**2)),
        floor + amp * np.exp(-((x - 0.7) ** 2) / (2 * 0.1**2)),
    ])


def test_mbar_examples():
    U = np.random.default_rng(0).uniform(0.1, 3, size=(2, 10))
    assert mbar(SYS_NOREACT, U, 0.01) == 2.0
    assert mbar(SYS_NOREACT, U, 0.01, floor=5.0) == 5.0
    assert mbar(SYS, U, 0.02) >= mbar(SYS, U, 0.01)


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(1e-4, 0.49), seed=st.integers(0, 10_000))
def test_mbar_makes_rhs_nonnegative(tau, seed):
    U = np.random.default_rng(seed).uniform(0, 4, size=(2, 16))
    M = mbar(SYS, U, tau)
    assert np.all(M * SYS.eval_A(U) - U + tau * SYS.eval_R(U) >= -1e-12)


@pytest.mark.parametrize("method", ["dct", "cg"])
def test_theta_solve_contracts(method):
    g = Grid.uniform((8, 12), (1.0, 1.5))
    W = theta_solve(g, np.full((2,) + g.shape, 3.0), 2.0, 0.1, method)
    assert np.allclose(W, 1.5)
    rng = np.random.default_rng(1)
    F = rng.random((2,) + g.shape)
    W = theta_solve(g, F, 2.0, 0.1, method, tol=1e-13)
    residual = 2.0 * W - 0.1 * g.laplacian(W) - F
    assert np.max(np.abs(residual)) <= 1e-10 * np.max(np.abs(F))
    assert W.min() >= 0 and W.max() <= F.max() / 2.0 + 1e-12


def test_theta_solve_methods_agree():
    g = Grid.uniform(40)
    F = np.random.default_rng(2).random(40)
    a = theta_solve(g, F, 3.0, 0.05, "dct")
    b = theta_solve(g, F, 3.0, 0.05, "cg", tol=1e-14)
    assert np.allclose(a, b, atol=1e-11)


def test_constant_state_is_fixed_in_one_sweep():
    g = Grid.uniform(16)
    S = np.stack([np.full(16, 0.7), np.full(16, 1.9)])
    U, report = step(SYS_NOREACT, g, S, SchemeConfig(tau=0.01, n_steps=1))
    assert report.iterations == 1 and report.solver_path == "fixed-point"
    assert np.allclose(U, S, rtol=1e-14, atol=0)


def test_single_species_logistic_closed_form():
    # u = 1 + 0.1 u (1 - u)  <=>  0.1 u^2 + 0.9 u - 1 = 0, positive root 1
    sys_ = CrossDiffusionSystem.single_species(d=1.0, rho=1.0, s=1.0)
    g = Grid.uniform(8)
    U, _ = step(sys_, g, np.ones((1, 8)), SchemeConfig(tau=0.1, n_steps=1))
    assert np.allclose(U, 1.0, atol=1e-12)
    S = np.full((1, 8), 0.4)
    U, _ = step(sys_, g, S, SchemeConfig(tau=0.1, n_steps=1, fp_tol=1e-13))
    root = (-(0.9) + np.sqrt(0.81 + 4 * 0.1 * 0.4)) / 0.2
    assert np.allclose(U, root, atol=1e-12)


def test_homogeneous_two_species_matches_oracle():
    g = Grid.uniform(6)
    s = np.array([0.8, 1.6])
    S = s[:, None] * np.ones((2, 6))
    U, _ = step(SYS, g, S, SchemeConfig(tau=0.05, n_steps=1, fp_tol=1e-13))
    expected = homogeneous_step_oracle(SYS, s, 0.05)
    assert np.allclose(U, expected[:, None], atol=1e-11)


def test_mass_identity_without_reactions():
    g = Grid.uniform(32)
    S = bumps(g)
    U, report = step(SYS_NOREACT, g, S, SchemeConfig(tau=1e-3, n_steps=1))
    assert np.allclose(g.integrate(U), g.integrate(S), rtol=1e-9)
    res = scheme_residual(SYS_NOREACT, g, U, S, 1e-3)
    assert np.max(np.abs(res)) <= 10 * 1e-10 * (1 + S.max())


def test_linear_heat_against_dense_implicit_euler():
    n, d, tau, N = 24, 0.7, 0.01, 15
    g = Grid.uniform(n)
    sys_ = CrossDiffusionSystem.single_species(d=d, reactions=False)
    (x,) = g.coordinates()
    u0 = 1.0 + 0.5 * np.cos(np.pi * x) + 0.2 * np.cos(3 * np.pi * x)
    traj = run(sys_, g, u0[None], SchemeConfig(tau=tau, n_steps=N, fp_tol=1e-13))
    h = g.spacing[0]
    L = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    L[0, 0] = L[-1, -1] = -1.0
    L /= h * h
    lam, V = np.linalg.eigh(np.eye(n) - tau * d * L)
    expected = V @ ((V.T @ u0) / lam**N)
    assert np.allclose(traj.final[0], expected, atol=1e-10)


def test_newton_fallback_path():
    g = Grid.uniform(32)
    cfg = SchemeConfig(tau=1e-3, n_steps=1, fp_max=3)
    S = bumps(g)
    U, report = step(SYS, g, S, cfg)
    assert report.solver_path == "newton"
    assert report.final_residual <= 10 * cfg.fp_tol * (1 + S.max())
    U_fp, _ = step(SYS, g, S, SchemeConfig(tau=1e-3, n_steps=1))
    assert np.allclose(U, U_fp, atol=1e-9)


def test_no_fallback_raises():
    g = Grid.uniform(32)
    with pytest.raises(StepFailure) as info:
        step(SYS, g, bumps(g), SchemeConfig(tau=1e-3, n_steps=1, fp_max=2, newton_fallback=False))
    assert info.value.best is not None


def test_rho_tau_condition():
    with pytest.raises(ValueError, match=r"rho\*tau < 1/2"):
        SchemeConfig(tau=0.6, n_steps=1).validate_for(SYS)
    SchemeConfig(tau=0.6, n_steps=1).validate_for(SYS_NOREACT)


def test_two_dimensional_cg_matches_dct():
    g = Grid.uniform((8, 8))
    X, Y = g.coordinates()
    U0 = np.stack([0.5 + 0.5 * np.exp(-((X - 0.3) ** 2 + (Y - 0.4) ** 2) / 0.02), 0.8 + 0 * X])
    a = run(SYS, g, U0, SchemeConfig(tau=2e-3, n_steps=3)).final
    b = run(SYS, g, U0, SchemeConfig(tau=2e-3, n_steps=3, linear_solver="cg")).final
    assert np.allclose(a, b, atol=1e-8)


def test_run_edge_cases():
    g = Grid.uniform(8)
    U0 = np.ones((2, 8))
    traj = run(SYS, g, U0, SchemeConfig(tau=0.01, n_steps=0))
    assert len(traj.states) == 1 and np.array_equal(traj.final, U0)
    seen = []
    traj = run(
        SYS_NOREACT, g, 0.3 * U0, SchemeConfig(tau=0.01, n_steps=5), store_every=2,
        callbacks=[lambda k, t, U, r: seen.append((k, r is None))],
    )
    assert traj.steps == [0, 2, 4, 5]
    assert seen == [(0, True)] + [(k, False) for k in range(1, 6)]
    for U in traj.states:
        assert np.ptp(U, axis=1).max() < 1e-14
    with pytest.raises(ValueError):
        run(SYS, g, np.zeros((2, 8)), SchemeConfig(tau=0.01, n_steps=1))


def test_first_order_in_time():
    g = Grid.uniform(32)
    U0 = bumps(g)
    T = 0.02
    finals = [
        run(SYS, g, U0, SchemeConfig(tau=tau, n_steps=int(round(T / tau)))).final
        for tau in (4e-3, 2e-3, 1e-3)
    ]
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert 1.6 < ratio < 2.5


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.sampled_from([1e-3, 1e-2, 0.1]))
def test_positivity_preserved(seed, tau):
    g = Grid.uniform(12)
    S = np.random.default_rng(seed).uniform(1e-3, 3.0, size=(2, 12))
    U, report = step(SYS, g, S, SchemeConfig(tau=tau, n_steps=1))
    assert U.min() > 0 and report.min_value == U.min()
