"""Physical model: quadratic Hamiltonian, linear channels, detector efficiencies.

A channel is a row of the complex matrix ``Ctilde`` so that ``c_h = Ctilde[h] @ r``.
From the model we derive the constant matrices of the moment equations:

* drift      ``A = Omega (R + Im(Ctilde^H Ctilde))``
* back-action ``B = Re(Ctilde)`` and ``N`` with ``N^T = Omega Im(Ctilde)^T``
* diffusion  ``D = -2 Omega Re(Ctilde^H Ctilde) Omega``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .phase_core import QuadratureLayout, build_symplectic


@dataclass(frozen=True)
class ModelSpec:
    layout: QuadratureLayout
    hamiltonian: np.ndarray
    channels: np.ndarray
    efficiencies: np.ndarray

    def __post_init__(self):
        d = self.layout.dim
        R = np.array(self.hamiltonian, dtype=float)
        if R.shape != (d, d):
            raise InputError(f"hamiltonian must be {d}x{d}, got {R.shape}")
        if np.max(np.abs(R - R.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(R))):
            raise InputError("hamiltonian matrix R is not symmetric")
        C = np.array(self.channels, dtype=complex).reshape(-1, d)
        eta = np.array(self.efficiencies, dtype=float).reshape(-1)
        if eta.size != C.shape[0]:
            raise InputError(f"{C.shape[0]} channel(s) but {eta.size} efficiencies")
        if np.any((eta < 0) | (eta > 1)) or not np.all(np.isfinite(eta)):
            raise InputError(f"efficiencies must lie in [0, 1], got {eta.tolist()}")
        for name, arr in (("hamiltonian", R), ("channels", C), ("efficiencies", eta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def dim(self) -> int:
        return self.layout.dim

    @classmethod
    def build(cls, n_modes=1, hamiltonian=None, channels=(), efficiencies=()):
        """Convenience constructor; ``hamiltonian=None`` means ``R = 0``."""
        layout = QuadratureLayout(n_modes)
        d = layout.dim
        R = np.zeros((d, d)) if hamiltonian is None else hamiltonian
        C = np.array(channels, dtype=complex).reshape(-1, d)
        return cls(layout, R, C, np.asarray(efficiencies, dtype=float))


@dataclass(frozen=True)
class DerivedMatrices:
    drift: np.ndarray
    backaction: np.ndarray
    coupling: np.ndarray
    diffusion: np.ndarray

    # short aliases matching the usual notation
    @property
    def A(self):
        return self.drift

    @property
    def B(self):
        return self.backaction

    @property
    def N(self):
        return self.coupling

    @property
    def D(self):
        return self.diffusion


def derive_matrices(spec: ModelSpec) -> DerivedMatrices:
    omega = build_symplectic(spec.layout)
    C = spec.channels
    CC = C.conj().T @ C
    A = omega @ (spec.hamiltonian + CC.imag)
    B = C.real.copy()
    N = (omega @ C.imag.T).T
    D = -2.0 * omega @ CC.real @ omega
    D = 0.5 * (D + D.T)
    if D.size and np.linalg.eigvalsh(D)[0] < -1e-10 * max(1.0, np.max(np.abs(D))):
        raise InputError("diffusion matrix is not positive semidefinite")
    return DerivedMatrices(A, B, N, D)


def oscillator_hamiltonian(frequencies) -> np.ndarray:
    """``R`` for ``H = sum_k w_k a_k^dag a_k`` (up to a constant), i.e. ``diag(w_1, w_1, ...)``."""
    w = np.atleast_1d(np.asarray(frequencies, dtype=float))
    return np.diag(np.repeat(w, 2))


def _row(n_modes: int, mode: int, q_coeff: complex, p_coeff: complex) -> np.ndarray:
    layout = QuadratureLayout(n_modes)
    row = np.zeros(layout.dim, dtype=complex)
    row[layout.q_index(mode)] = q_coeff
    row[layout.p_index(mode)] = p_coeff
    return row


def _check_rate(rate: float):
    if not rate >= 0:
        raise InputError(f"rate must be non-negative, got {rate}")


def damping_channel(mode: int, rate: float, n_modes: int = 1) -> np.ndarray:
    """Row for ``c = sqrt(rate) a``: ``sqrt(rate/2) (q + i p)``."""
    _check_rate(rate)
    s = np.sqrt(rate / 2.0)
    return _row(n_modes, mode, s, 1j * s)


def dispersive_channel(mode: int, rate: float, n_modes: int = 1) -> np.ndarray:
    """Row for ``c = sqrt(rate) (a + a^dag) = sqrt(2 rate) q``."""
    _check_rate(rate)
    return _row(n_modes, mode, np.sqrt(2.0 * rate), 0.0)


def rotated_channel(row, phi: float) -> np.ndarray:
    """Apply a global phase ``exp(i phi)``; sets the homodyne local-oscillator phase."""
    return np.exp(1j * phi) * np.asarray(row, dtype=complex)


def heterodyne_split(row) -> np.ndarray:
    """Split one channel into two homodyne channels a quarter period apart.

    Returns a ``(2, d)`` array whose rows are ``row / sqrt(2)`` and
    ``i row / sqrt(2)``; the unconditional dissipator is unchanged.
    """
    row = np.asarray(row, dtype=complex).reshape(-1)
    return np.vstack([row, 1j * row]) / np.sqrt(2.0)
