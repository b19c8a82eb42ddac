"""Power-law cross-diffusion systems.

Species ``i`` diffuses with rate ``a_i(U) = d_i + sum_j c_ij u_j^gamma_ij`` and
reacts with rate ``r_i(U) = rho_i - sum_j b_ij u_j^s_ij``; the vector maps are
``A(U) = (a_i(U) u_i)_i`` and ``R(U) = (r_i(U) u_i)_i``.

The two-species competition model

    a_1 = d_1 + u_2^g2,   r_1 = rho_1 - u_1^s11 - u_2^s12
    a_2 = d_2 + u_1^g1,   r_2 = rho_2 - u_2^s22 - u_1^s21

is built with :meth:`CrossDiffusionSystem.two_species`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PowerLawParams:
    """Parameters of the two-species competition model.

    ``s`` is ordered ``(s11, s12, s21, s22)``.
    """

    d: tuple[float, float] = (1.0, 1.0)
    gamma: tuple[float, float] = (0.5, 1.5)
    rho: tuple[float, float] = (1.0, 1.0)
    s: tuple[float, float, float, float] = (0.5, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        for name, size in (("d", 2), ("gamma", 2), ("rho", 2), ("s", 4)):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != size:
                raise ValueError(f"{name} needs {size} entries, got {len(value)}")
            object.__setattr__(self, name, value)
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if any(v < 0 for v in self.d):
            out.append(f"d must be nonnegative, got {self.d}")
        if any(v <= 0 for v in self.gamma):
            out.append(f"gamma must be positive, got {self.gamma}")
        if any(v == 1.0 for v in self.gamma):
            out.append("gamma_i = 1 is not supported (the power entropy degenerates)")
        if any(v <= 0 for v in self.rho):
            out.append(f"rho must be positive, got {self.rho}")
        if any(v <= 0 for v in self.s):
            out.append(f"s must be positive, got {self.s}")
        return out

    @property
    def theorem_regime(self) -> bool:
        g1, g2 = self.gamma
        s11, s12, s21, s22 = self.s
        return g2 > 1 and 0 < g1 < 1 / g2 and s11 < 1 and s12 < g2 + s22 / 2 and s21 < 2


def _power(x: np.ndarray, p: float) -> np.ndarray:
    # 0**p with p > 0 is 0; avoid warnings from negative exponents at 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.power(x, p)


@dataclass(frozen=True)
class CrossDiffusionSystem:
    """Maps ``A``, ``R`` and their Jacobians for ``I`` species.

    Arrays ``cross``/``gamma`` and ``comp``/``s`` are ``I x I``; a zero
    coefficient switches the corresponding term off. With ``reactions=False``
    the reaction map is identically zero and ``rho_bar`` is 0.
    """

    d: np.ndarray
    rho: np.ndarray
    cross: np.ndarray
    gamma: np.ndarray
    comp: np.ndarray
    s: np.ndarray
    reactions: bool = True
    params: PowerLawParams | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        n = d.size
        object.__setattr__(self, "rho", np.atleast_1d(np.asarray(self.rho, dtype=float)))
        for name in ("cross", "gamma", "comp", "s"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(n, n)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "d", d)
        if self.rho.shape != (n,):
            raise ValueError("rho must have one entry per species")
        if np.any(self.cross < 0) or np.any(self.comp < 0):
            raise ValueError("coefficients must be nonnegative")
        if np.any(self.gamma[self.cross > 0] <= 0) or np.any(self.s[self.comp > 0] <= 0):
            raise ValueError("active exponents must be positive")

    @classmethod
    def two_species(cls, params: PowerLawParams, reactions: bool = True) -> CrossDiffusionSystem:
        g1, g2 = params.gamma
        s11, s12, s21, s22 = params.s
        return cls(
            d=np.array(params.d),
            rho=np.array(params.rho),
            cross=np.array([[0.0, 1.0], [1.0, 0.0]]),
            gamma=np.array([[1.0, g2], [g1, 1.0]]),
            comp=np.ones((2, 2)),
            s=np.array([[s11, s12], [s21, s22]]),
            reactions=reactions,
            params=params,
        )

    @classmethod
    def single_species(
        cls, d: float, rho: float = 1.0, s: float = 1.0, reactions: bool = True
    ) -> CrossDiffusionSystem:
        """Linear diffusion ``u_t = d Lap u`` with optional logistic growth."""
        return cls(
            d=np.array([d]),
            rho=np.array([rho]),
            cross=np.zeros((1, 1)),
            gamma=np.ones((1, 1)),
            comp=np.ones((1, 1)),
            s=np.array([[s]]),
            reactions=reactions,
        )

    @property
    def n_species(self) -> int:
        return self.d.size

    @property
    def alpha(self) -> float:
        """Uniform lower bound of the diffusion rates."""
        return float(np.min(self.d))

    @property
    def rho_bar(self) -> float:
        """Uniform upper bound of the reaction rates (0 when reactions are off)."""
        return float(np.max(self.rho)) if self.reactions else 0.0

    # -- pointwise maps ----------------------------------------------------

    def _check(self, U: np.ndarray, strict: bool = False) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.shape[0] != self.n_species:
            raise ValueError(f"expected {self.n_species} species, got leading axis {U.shape[0]}")
        if strict and np.any(U <= 0):
            raise ValueError("Jacobian needs strictly positive densities")
        if np.any(U < 0):
            raise ValueError("densities must be nonnegative")
        return U

    def _powers(self, U: np.ndarray, coef: np.ndarray, expo: np.ndarray) -> np.ndarray:
        """``P[i, j] = coef_ij * u_j**expo_ij`` broadcast over cells."""
        n = self.n_species
        out = np.zeros((n, n) + U.shape[1:])
        for i in range(n):
            for j in range(n):
                if coef[i, j] != 0:
                    out[i, j] = coef[i, j] * _power(U[j], expo[i, j])
        return out

    def diffusion_rates(self, U: np.ndarray) -> np.ndarray:
        U = self._check(U)
        extra = (slice(None),) + (None,) * (U.ndim - 1)
        return self.d[extra] + self._powers(U, self.cross, self.gamma).sum(axis=1)

    def reaction_rates(self, U: np.ndarray) -> np.ndarray:
        U = self._check(U)
        extra = (slice(None),) + (None,) * (U.ndim - 1)
        if not self.reactions:
            return np.zeros_like(U)
        return self.rho[extra] - self._powers(U, self.comp, self.s).sum(axis=1)

    def eval_A(self, U: np.ndarray) -> np.ndarray:
        U = self._check(U)
        return self.diffusion_rates(U) * U

    def eval_R(self, U: np.ndarray) -> np.ndarray:
        U = self._check(U)
        return self.reaction_rates(U) * U

    def _jacobian(self, U, rates, coef, expo) -> np.ndarray:
        n = self.n_species
        J = np.zeros((n, n) + U.shape[1:])
        for i in range(n):
            J[i, i] = rates[i]
            for k in range(n):
                if coef[i, k] != 0:
                    J[i, k] += U[i] * coef[i, k] * expo[i, k] * _power(U[k], expo[i, k] - 1)
        return J

    def jacobian_A(self, U: np.ndarray, strict: bool = True) -> np.ndarray:
        """``DA`` with shape ``(I, I, *cells)``.

        With ``strict`` (default) ``U`` must be positive; otherwise entries
        with a negative power of a zero density come out infinite.
        """
        U = self._check(U, strict=strict)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._jacobian(U, self.diffusion_rates(U), self.cross, self.gamma)

    def jacobian_R(self, U: np.ndarray) -> np.ndarray:
        U = self._check(U, strict=True)
        if not self.reactions:
            return np.zeros((self.n_species,) + U.shape)
        return -self._jacobian(U, -self.reaction_rates(U), self.comp, self.s)

    # -- hypotheses --------------------------------------------------------

    def check_hypotheses(self, samples: int = 10_000, seed: int = 0) -> HypothesisReport:
        return check_hypotheses(self, samples=samples, seed=seed)


# -- entropy -------------------------------------------------------------


@dataclass(frozen=True)
class Entropy:
    """``Phi(x) = sum_i phi_i(x_i)`` with

    ``phi_i(z) = g/(g-1) * (z^g/g - z + 1 - 1/g)``, ``g = gammas[i]``.
    """

    gammas: tuple[float, ...]

    def __post_init__(self) -> None:
        gammas = tuple(float(g) for g in self.gammas)
        if any(g <= 0 or g == 1.0 for g in gammas):
            raise ValueError(f"entropy exponents must be positive and != 1, got {gammas}")
        object.__setattr__(self, "gammas", gammas)

    @classmethod
    def for_system(cls, system: CrossDiffusionSystem) -> Entropy:
        """Exponents of ``a_j`` in ``u_i`` (species 1 gets gamma_1, species 2 gamma_2)."""
        if system.n_species != 2:
            raise ValueError("the power entropy is defined for two species")
        return cls((system.gamma[1, 0], system.gamma[0, 1]))

    def phi(self, U: np.ndarray) -> np.ndarray:
        out = np.empty(np.shape(U))
        for i, g in enumerate(self.gammas):
            z = U[i]
            out[i] = g / (g - 1) * (_power(z, g) / g - z + 1 - 1 / g)
        return out

    def phi_prime(self, U: np.ndarray) -> np.ndarray:
        out = np.empty(np.shape(U))
        for i, g in enumerate(self.gammas):
            out[i] = g / (g - 1) * (_power(U[i], g - 1) - 1)
        return out

    def phi_second(self, U: np.ndarray) -> np.ndarray:
        out = np.empty(np.shape(U))
        for i, g in enumerate(self.gammas):
            out[i] = g * _power(U[i], g - 2)
        return out

    def density(self, U: np.ndarray) -> np.ndarray:
        return self.phi(U).sum(axis=0)

    def l_matrix(self) -> np.ndarray:
        g1, g2 = self.gammas
        return np.array([[g1, g1 * g2], [g1 * g2, g2]])


def entropy_value(grid, U: np.ndarray, entropy: Entropy) -> float:
    """``integral of Phi(U)`` over the grid."""
    return float(grid.integrate(entropy.density(U)))


# -- admissibility and hypothesis checks -----------------------------------


def psd_2x2(matrix: np.ndarray, tol: float = 1e-12) -> tuple[bool, np.ndarray]:
    """Closed-form eigenvalues of the symmetric part; broadcast over trailing axes."""
    m = np.asarray(matrix, dtype=float)
    a = m[0, 0]
    c = m[1, 1]
    b = 0.5 * (m[0, 1] + m[1, 0])
    half_tr = 0.5 * (a + c)
    det = a * c - b * b
    disc = np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    eig = np.stack([half_tr - disc, half_tr + disc])
    return bool(np.all(eig >= -tol)), eig


def _log_uniform(rng: np.random.Generator, samples: int, dim: int = 2) -> np.ndarray:
    return 10.0 ** rng.uniform(-3.0, 3.0, size=(dim, samples))


@dataclass
class AdmissibilityReport:
    admissible: bool
    status: str  # "admissible", "boundary", "inadmissible"
    l_det: float
    l_eigenvalues: np.ndarray
    min_eigenvalue: float
    witness: np.ndarray | None = None
    witness_eigenvalue: float | None = None


def entropy_admissible(
    system: CrossDiffusionSystem, samples: int = 10_000, seed: int = 0
) -> AdmissibilityReport:
    """Sample the symmetric part of ``D2Phi DA`` on ``[1e-3, 1e3]^2`` (log-uniform).

    The reduced matrix ``L = [[g1, g1 g2], [g1 g2, g2]]`` decides strict
    admissibility of the pure cross-diffusion part; ``g1 g2 = 1`` is reported
    as ``"boundary"``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    entropy = Entropy.for_system(system)
    L = entropy.l_matrix()
    _, l_eig = psd_2x2(L)
    l_det = float(L[0, 0] * L[1, 1] - L[0, 1] * L[1, 0])
    X = _log_uniform(np.random.default_rng(seed), samples)
    hess = entropy.phi_second(X)
    M = hess[:, None] * system.jacobian_A(X)
    _, eig = psd_2x2(M)
    # relative tolerance: entries span many orders of magnitude
    scale = np.abs(eig).max(axis=0) + 1e-300
    rel = eig[0] / scale
    worst = int(np.argmin(rel))
    min_eig = float(rel[worst])
    g1, g2 = entropy.gammas
    if np.isclose(g1 * g2, 1.0, rtol=0, atol=1e-12):
        status = "boundary"
    elif l_det > 0 and min_eig >= -1e-10:
        status = "admissible"
    else:
        status = "inadmissible"
    report = AdmissibilityReport(
        admissible=status != "inadmissible",
        status=status,
        l_det=l_det,
        l_eigenvalues=l_eig,
        min_eigenvalue=min_eig,
    )
    if min_eig < -1e-10 or status == "inadmissible":
        report.witness = X[:, worst]
        report.witness_eigenvalue = float(eig[0, worst])
    return report


@dataclass
class HypothesisReport:
    h1: bool
    h2: bool
    h3: bool
    details: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return self.h1 and self.h2 and self.h3


def check_hypotheses(
    system: CrossDiffusionSystem, samples: int = 10_000, seed: int = 0
) -> HypothesisReport:
    """Structural H1, bound-based H2, sampled H3 (monotone ``A`` with ``det DA > 0``)."""
    details: dict = {}
    h1 = bool(np.all(np.isfinite(system.d)) and np.all(np.isfinite(system.rho)))
    h2 = system.alpha > 0 and (system.rho_bar > 0 or not system.reactions)
    details["alpha"] = system.alpha
    details["rho_bar"] = system.rho_bar
    n = system.n_species
    X = _log_uniform(np.random.default_rng(seed), samples, dim=n)
    J = system.jacobian_A(X)
    monotone = bool(np.all(J >= 0) and np.all(np.einsum("ii...->i...", J) > 0))
    det = np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1)))
    worst = int(np.argmin(det))
    h3 = monotone and bool(det[worst] > 0)
    details["monotone"] = monotone
    details["min_det"] = float(det[worst])
    if not h3:
        details["witness"] = X[:, worst]
    return HypothesisReport(h1=h1, h2=h2, h3=h3, details=details)
