"""Phase-space primitives shared by every other module.

Quadratures are ordered ``(q1, p1, ..., qn, pn)`` with ``[q, p] = i``.
Covariances use the convention ``cov_jk = <{r_j, r_k}> - 2 <r_j><r_k>``,
so the vacuum has ``cov = I`` and ``Var(r_j) = cov_jj / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import InputError

SYMMETRY_TOL = 1e-10
PHYSICAL_TOL = 1e-8


@dataclass(frozen=True)
class QuadratureLayout:
    n_modes: int

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise InputError(f"n_modes must be a positive integer, got {self.n_modes!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n_modes

    def q_index(self, mode: int) -> int:
        if not 0 <= mode < self.n_modes:
            raise InputError(f"mode {mode} out of range for {self.n_modes} mode(s)")
        return 2 * mode

    def p_index(self, mode: int) -> int:
        return self.q_index(mode) + 1


@lru_cache(maxsize=None)
def _symplectic(n: int) -> np.ndarray:
    omega = np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    omega.setflags(write=False)
    return omega


def build_symplectic(layout: QuadratureLayout | int) -> np.ndarray:
    """Block-diagonal symplectic form with ``i * Omega_jk = [r_j, r_k]``."""
    n = layout.n_modes if isinstance(layout, QuadratureLayout) else QuadratureLayout(layout).n_modes
    return _symplectic(n).copy()


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_symmetric(mat: np.ndarray, name: str, tol: float = SYMMETRY_TOL):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError(f"{name} must be square, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if np.max(np.abs(mat - mat.T), initial=0.0) > tol * scale:
        raise InputError(f"{name} is not symmetric")


@dataclass(frozen=True)
class GaussianMoments:
    """Mean vector and covariance matrix of a Gaussian Wigner function.

    Used for density matrices and, after normalisation, for effect matrices.
    Arrays are copied and made read-only on construction.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean)
        cov = _frozen(self.cov)
        if mean.ndim != 1 or mean.size % 2 or mean.size == 0:
            raise InputError(f"mean must be a non-empty vector of even length, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise InputError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        _check_symmetric(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def n_modes(self) -> int:
        return self.mean.size // 2

    @classmethod
    def vacuum(cls, n_modes: int = 1) -> "GaussianMoments":
        return cls(np.zeros(2 * n_modes), np.eye(2 * n_modes))

    @classmethod
    def coherent(cls, alpha: complex) -> "GaussianMoments":
        return cls(np.sqrt(2.0) * np.array([alpha.real, alpha.imag]), np.eye(2))

    @classmethod
    def thermal(cls, nbar: float, mean=(0.0, 0.0)) -> "GaussianMoments":
        return cls(np.asarray(mean, dtype=float), (2.0 * nbar + 1.0) * np.eye(2))

    @classmethod
    def squeezed(cls, r: float, angle: float = 0.0, mean=(0.0, 0.0), nbar: float = 0.0) -> "GaussianMoments":
        """Single-mode squeezed (thermal) state; ``angle`` is the squeezed quadrature direction."""
        rot = rotation(angle)
        cov = (2.0 * nbar + 1.0) * rot @ np.diag([np.exp(-2 * r), np.exp(2 * r)]) @ rot.T
        return cls(np.asarray(mean, dtype=float), 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class CovarianceEffect:
    """Effect moments stored as a normalised Gaussian (mean ``r̄``, covariance ``gamma``)."""

    moments: GaussianMoments

    @property
    def n_modes(self) -> int:
        return self.moments.n_modes


@dataclass(frozen=True)
class InformationEffect:
    """Effect moments in information form: ``precision = gamma^-1``, ``shift = precision @ r̄``.

    ``precision == 0`` is the identity effect (flat Wigner function).
    """

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        prec = _frozen(self.precision)
        shift = _frozen(self.shift)
        if prec.shape != (shift.size, shift.size) or shift.size % 2 or shift.ndim != 1:
            raise InputError(f"inconsistent information-form shapes {prec.shape} and {shift.shape}")
        _check_symmetric(prec, "precision")
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "shift", shift)

    @property
    def n_modes(self) -> int:
        return self.shift.size // 2

    @property
    def is_flat(self) -> bool:
        return not np.any(self.precision) and not np.any(self.shift)


EffectMoments = Union[CovarianceEffect, InformationEffect]


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def min_uncertainty_eigenvalue(cov: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian matrix ``cov + i Omega``."""
    cov = np.asarray(cov, dtype=float)
    return float(np.linalg.eigvalsh(cov + 1j * _symplectic(cov.shape[0] // 2))[0])


def check_physical(m: GaussianMoments | np.ndarray, tol: float = PHYSICAL_TOL) -> tuple[bool, float]:
    """Test the uncertainty relation ``cov + i Omega >= 0``.

    Returns ``(ok, min_eigenvalue)``.  Accepts either moments or a bare
    covariance matrix; a non-symmetric matrix raises :class:`InputError`.
    """
    cov = m.cov if isinstance(m, GaussianMoments) else np.asarray(m, dtype=float)
    _check_symmetric(cov, "cov")
    if cov.shape[0] % 2:
        raise InputError("covariance dimension must be even")
    lam = min_uncertainty_eigenvalue(cov)
    return lam >= -tol, lam


def select_mode(m: GaussianMoments, mode: int) -> GaussianMoments:
    """Reduced single-mode moments of ``mode``."""
    if not 0 <= mode < m.n_modes:
        raise InputError(f"mode {mode} out of range for {m.n_modes} mode(s)")
    sl = slice(2 * mode, 2 * mode + 2)
    return GaussianMoments(m.mean[sl], m.cov[sl, sl])


def quadrature_marginals(means: np.ndarray, covs: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised mean and variance of ``x_theta`` for stacks of single-mode moments.

    ``means`` has shape ``(..., 2)`` and ``covs`` ``(..., 2, 2)``.  Written
    elementwise so a single point and a stack round identically.
    """
    c, s = np.cos(theta), np.sin(theta)
    mean = c * means[..., 0] + s * means[..., 1]
    var = (c * c * covs[..., 0, 0] + c * s * (covs[..., 0, 1] + covs[..., 1, 0]) + s * s * covs[..., 1, 1]) / 2.0
    return mean, var


def marginal_variance(m: GaussianMoments, theta: float) -> tuple[float, float]:
    """Mean and variance of ``x_theta = q cos(theta) + p sin(theta)``.

    The variance is ``u^T cov u / 2`` with ``u = (cos theta, sin theta)``.
    """
    if m.dim != 2:
        raise InputError(f"marginal_variance needs single-mode moments, got dimension {m.dim}; use select_mode")
    # same operation order as quadrature_marginals, on Python floats for speed
    c, s = float(np.cos(theta)), float(np.sin(theta))
    (m0, m1), ((a, b), (b2, d)) = m.mean.tolist(), m.cov.tolist()
    return c * m0 + s * m1, (c * c * a + c * s * (b + b2) + s * s * d) / 2.0
