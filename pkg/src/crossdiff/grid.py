"""Uniform cell-centred grids with homogeneous Neumann boundaries.

Fields are plain numpy arrays whose trailing axes match ``grid.shape``.
A species state with ``I`` components is an array of shape
``(I, *grid.shape)``.

The Laplacian uses the standard second-difference stencil with mirrored
ghost cells, so that

.. math::

    \\sum_e \\frac{\\delta f\\,\\delta g}{h^2} |K| = -\\int f\\,\\Delta_h g

holds exactly (discrete summation by parts). The operator is diagonalised
by the type-II cosine transform, which gives closed-form eigenvalues
``(2/h^2)(1 - cos(pi k / n))`` per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft


@dataclass(frozen=True)
class Grid:
    """Axis-aligned rectangle ``[0, L_1] x ... x [0, L_d]`` split into equal cells.

    Attributes:
        extents: cells per axis.
        lengths: physical length per axis.
    """

    extents: tuple[int, ...]
    lengths: tuple[float, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        extents = tuple(int(n) for n in np.atleast_1d(self.extents))
        lengths = tuple(float(L) for L in np.atleast_1d(self.lengths))
        if len(extents) not in (1, 2):
            raise ValueError(f"only 1D and 2D grids are supported, got dim={len(extents)}")
        if len(lengths) != len(extents):
            raise ValueError("extents and lengths must have the same number of axes")
        if any(n < 2 for n in extents):
            raise ValueError(f"every extent must be >= 2, got {extents}")
        if any(not np.isfinite(L) or L <= 0 for L in lengths):
            raise ValueError(f"every length must be positive, got {lengths}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "spacing", tuple(L / n for L, n in zip(lengths, extents)))

    @classmethod
    def uniform(cls, n: int | tuple[int, ...], length: float | tuple[float, ...] = 1.0) -> Grid:
        extents = (n,) if np.isscalar(n) else tuple(n)
        lengths = (length,) * len(extents) if np.isscalar(length) else tuple(length)
        return cls(extents, lengths)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extents

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one broadcastable array per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.extents, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-self.dim :] != self.shape:
            raise ValueError(f"field shape {f.shape} does not end with grid shape {self.shape}")
        return f

    # -- discrete calculus -------------------------------------------------

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Neumann Laplacian; leading axes (species, ...) are broadcast."""
        f = self.check(f)
        out = np.zeros_like(f)
        for ax, h in enumerate(self.spacing):
            axis = f.ndim - self.dim + ax
            flux = np.diff(f, axis=axis) / h**2
            # zero flux through the two boundary faces
            pad = [(0, 0)] * f.ndim
            pad[axis] = (1, 1)
            flux = np.pad(flux, pad)
            out += np.diff(flux, axis=axis)
        return out

    def integrate(self, f: np.ndarray) -> np.ndarray | float:
        f = self.check(f)
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        total = self.cell_volume * np.sum(f, axis=axes)
        return float(total) if np.ndim(total) == 0 else total

    def mean(self, f: np.ndarray) -> np.ndarray | float:
        return self.integrate(f) / self.volume

    def edge_sum(self, f: np.ndarray, g: np.ndarray | None = None) -> np.ndarray | float:
        """Sum over interior edges of ``delta f * delta g / h^2`` times the cell volume."""
        f = self.check(f)
        g = f if g is None else self.check(g)
        if f.shape != g.shape:
            raise ValueError(f"grid mismatch: {f.shape} vs {g.shape}")
        total = 0.0
        spatial = tuple(range(f.ndim - self.dim, f.ndim))
        for ax, h in enumerate(self.spacing):
            axis = f.ndim - self.dim + ax
            prod = np.diff(f, axis=axis) * np.diff(g, axis=axis)
            total = total + np.sum(prod, axis=spatial) / h**2
        total = self.cell_volume * total
        return float(total) if np.ndim(total) == 0 else total

    # -- spectral machinery ------------------------------------------------

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``-laplacian`` laid out like the cosine-transform coefficients."""
        lam = np.zeros(self.shape)
        for ax, (n, h) in enumerate(zip(self.extents, self.spacing)):
            mu = (2.0 / h**2) * (1.0 - np.cos(np.pi * np.arange(n) / n))
            shape = [1] * self.dim
            shape[ax] = n
            lam = lam + mu.reshape(shape)
        return lam

    def _axes(self, f: np.ndarray) -> tuple[int, ...]:
        return tuple(range(f.ndim - self.dim, f.ndim))

    def dct(self, f: np.ndarray) -> np.ndarray:
        return scipy.fft.dctn(f, type=2, norm="ortho", axes=self._axes(f))

    def idct(self, c: np.ndarray) -> np.ndarray:
        return scipy.fft.idctn(c, type=2, norm="ortho", axes=self._axes(c))

    def solve_neumann_poisson(self, f: np.ndarray) -> np.ndarray:
        """Zero-mean ``phi`` with ``-laplacian(phi) = f - mean(f)``."""
        f = self.check(f)
        coeffs = self.dct(f)
        lam = self.eigenvalues()
        zero = (0,) * self.dim
        lam = lam.copy()
        lam[zero] = 1.0
        coeffs = coeffs / lam
        coeffs[(...,) + zero] = 0.0
        return self.idct(coeffs)

    def hminus1m_norm(self, f: np.ndarray) -> float:
        """Dual norm of the zero-mean part: ``||grad phi||_2`` with ``-Lap phi = f - <f>``."""
        phi = self.solve_neumann_poisson(f)
        return float(np.sqrt(max(self.edge_sum(phi, phi), 0.0)))

    def poincare_constant(self) -> float:
        """``1/sqrt(lambda_1)`` for the smallest nonzero Neumann eigenvalue."""
        lam1 = min(
            (2.0 / h**2) * (1.0 - np.cos(np.pi / n)) for n, h in zip(self.extents, self.spacing)
        )
        return float(1.0 / np.sqrt(lam1))
