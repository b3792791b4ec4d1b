"""Periodic grid, Fourier transforms and projections on the unit torus.

Fields are plain numpy arrays.  A physical field has shape
``components + grid.shape`` (scalar ``(n, n, n)``, vector ``(dim, n, n, n)``,
tensor ``(dim, dim, n, n, n)``), sampled at the cell centres ``x_j = j h``.
A spectral field has the same shape, complex, in numpy FFT ordering.

The forward transform divides by ``n**dim`` so the zero mode is the spatial
mean and ``f(x) = sum_k F[k] exp(2 pi i k.x)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "MalformedInputError",
    "to_spectral",
    "to_physical",
    "leray_project",
    "dealias",
    "inner",
    "norm2",
    "spectral_derivative",
]


class MalformedInputError(ValueError):
    """Raised when a field violates the representation invariants."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the volume-normalized torus ``[0, 1)^dim``."""

    dim: int = 3
    n: int = 16

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavevectors, shape ``(dim,) + shape``."""
        k1 = np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(np.int64)
        return np.stack(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` as float."""
        return np.sum(self.k.astype(float) ** 2, axis=0)

    @cached_property
    def ik(self) -> np.ndarray:
        """Derivative multipliers ``2 pi i k`` with the Nyquist mode removed."""
        k = self.k.astype(float)
        k[k == -self.n // 2] = 0.0
        return 2j * np.pi * k

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True where every ``|k_j| <= n/3`` (2/3 rule)."""
        return np.all(3 * np.abs(self.k) <= self.n, axis=0)

    @cached_property
    def x(self) -> np.ndarray:
        """Sample coordinates, shape ``(dim,) + shape``."""
        x1 = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(*([x1] * self.dim), indexing="ij"))


def to_spectral(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Forward DFT over the trailing ``dim`` axes, normalized by ``n**dim``."""
    f = np.asarray(f, dtype=float)
    return sfft.fftn(f, axes=grid.axes, norm="forward")


def hermitian_defect(F: np.ndarray, grid: GridSpec) -> float:
    """Largest ``|F[k] - conj(F[-k])|`` over all modes and components."""
    G = np.conj(F)
    for ax in grid.axes:
        G = np.roll(np.flip(G, axis=ax), 1, axis=ax)
    return float(np.max(np.abs(F - G))) if F.size else 0.0


def to_physical(F: np.ndarray, grid: GridSpec, check: bool = True) -> np.ndarray:
    """Inverse of :func:`to_spectral`; returns real samples.

    With ``check`` the Hermitian symmetry of ``F`` is verified first and a
    defect above ``1e-10`` (relative to the largest coefficient, floor 1)
    raises :class:`MalformedInputError`.
    """
    F = np.asarray(F)
    if check:
        scale = max(1.0, float(np.max(np.abs(F)))) if F.size else 1.0
        defect = hermitian_defect(F, grid)
        if defect > 1e-10 * scale:
            raise MalformedInputError(
                f"spectral field is not Hermitian (defect {defect:.3e})"
            )
    return sfft.ifftn(F, axes=grid.axes, norm="forward").real


def leray_project(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Project a spectral vector field onto mean-free divergence-free fields.

    Per mode ``w <- w - k (k.w) / |k|^2``; the zero mode is set to 0.
    """
    F = np.asarray(F)
    if F.shape[0] != grid.dim or F.shape[1:] != grid.shape:
        raise MalformedInputError(
            f"expected vector field of shape {(grid.dim,) + grid.shape}, got {F.shape}"
        )
    k = grid.k.astype(float)
    k2 = grid.k2.copy()
    k2[(0,) * grid.dim] = 1.0
    kdotw = np.sum(k * F, axis=0)
    out = F - k * (kdotw / k2)
    out[(slice(None),) + (0,) * grid.dim] = 0.0
    return out


def dealias(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Zero every mode with some ``|k_j| > n/3``."""
    return np.where(grid.dealias_mask, F, 0.0)


def spectral_derivative(F: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """Spectral ``d/dx_axis`` of every component of ``F``."""
    return grid.ik[axis] * F


def inner(F: np.ndarray, G: np.ndarray) -> float:
    """Discrete L2 inner product of two spectral fields (Parseval, unit volume)."""
    return float(np.sum(np.conj(F) * G).real)


def norm2(F: np.ndarray) -> float:
    """Discrete L2 norm of a spectral field."""
    return float(np.sqrt(np.sum(np.abs(F) ** 2)))
