"""Backward propagation of the effect-matrix moments.

Time runs from the final time ``T`` down to ``t0``.  In covariance form the
effect is described by its normalised mean ``r̄`` and covariance ``gamma``:

    r̄(t - dt) - r̄(t)  = -A r̄ dt + (gamma B^T + N^T) sqrt(eta) ds
    (gamma(t - dt) - gamma(t)) / dt = -A gamma - gamma A^T + D
                                      - 2 (gamma B^T + N^T) eta (gamma B^T + N^T)^T

with ``ds = dY - 2 sqrt(eta) B r̄ dt``.  The identity effect has infinite
``gamma`` and is handled in information form (``Lambda = gamma^-1``,
``xi = Lambda r̄``), where with ``tau = T - t``

    dLambda/dtau = Lambda A + A^T Lambda - Lambda D Lambda
                   + 2 (B^T + Lambda N^T) eta (B + N Lambda)
    dxi = [A^T xi - Lambda D xi + 2 (B^T + Lambda N^T) eta N xi] dtau
          + (B^T + Lambda N^T) sqrt(eta) dY

Both start cleanly from ``Lambda = 0, xi = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InputError, SingularFormError
from .forward import MeasurementRecord, _check_eta, _check_square, _guard_path, riccati_field, riccati_path
from .model import DerivedMatrices, ModelSpec, derive_matrices
from .phase_core import (
    CovarianceEffect,
    EffectMoments,
    GaussianMoments,
    InformationEffect,
    check_physical,
)

MAX_CONDITION = 1e12


def final_condition_identity(n_modes: int = 1) -> InformationEffect:
    """``E(T) = 1``: flat Wigner function, zero precision."""
    d = 2 * n_modes
    return InformationEffect(np.zeros((d, d)), np.zeros(d))


def final_condition_projection(target: GaussianMoments) -> CovarianceEffect:
    """Projection onto a Gaussian state (e.g. the ground state) at the final time."""
    ok, lam = check_physical(target)
    if not ok:
        raise InputError(f"projection target is unphysical (min eigenvalue {lam:.3e})")
    return CovarianceEffect(target)


def _invert(mat: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(mat)):
        raise SingularFormError(f"{what} has non-finite entries")
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularFormError(f"{what} is singular or ill-conditioned (condition number {cond:.3e})")
    inv = np.linalg.inv(mat)
    return 0.5 * (inv + inv.T)


def to_information_form(e: EffectMoments) -> InformationEffect:
    if isinstance(e, InformationEffect):
        return e
    prec = _invert(e.moments.cov, "effect covariance")
    return InformationEffect(prec, prec @ e.moments.mean)


def to_covariance_form(e: EffectMoments) -> CovarianceEffect:
    if isinstance(e, CovarianceEffect):
        return e
    cov = _invert(e.precision, "effect precision")
    return CovarianceEffect(GaussianMoments(cov @ e.shift, cov))


def backward_riccati_rhs(gamma, derived: DerivedMatrices, eta) -> np.ndarray:
    """``(gamma(t - dt) - gamma(t)) / dt`` in the limit of small ``dt``, symmetrised."""
    gamma = np.asarray(gamma, dtype=float)
    _check_square(gamma, derived.A.shape[0], "gamma")
    eta = _check_eta(derived, eta)
    return riccati_field(-derived.A, derived.D, derived.B.T, derived.N.T, eta)(gamma)


def information_riccati_rhs(precision, derived: DerivedMatrices, eta) -> np.ndarray:
    """Rate of change of ``Lambda = gamma^-1`` per unit backward time."""
    L = np.asarray(precision, dtype=float)
    _check_square(L, derived.A.shape[0], "precision")
    return _information_field(derived, _check_eta(derived, eta))(L)


def _information_field(derived: DerivedMatrices, eta: np.ndarray):
    A, At, D, Bt, Nt, B, N = derived.A, derived.A.T, derived.D, derived.B.T, derived.N.T, derived.B, derived.N

    def f(L):
        out = L @ A + At @ L - L @ D @ L + 2.0 * (Bt + L @ Nt) @ (eta[:, None] * (B + N @ L))
        return 0.5 * (out + out.T)

    return f


def _guard_precision(mats: np.ndarray):
    finite = np.all(np.isfinite(mats), axis=(1, 2))
    lam = np.full(mats.shape[0], -np.inf)
    lam[finite] = np.linalg.eigvalsh(mats[finite])[:, 0]
    scale = np.maximum(1.0, np.max(np.abs(np.where(np.isfinite(mats), mats, 0.0)), axis=(1, 2)))
    bad = np.flatnonzero(~(lam >= -1e-8 * scale))
    if bad.size:
        k = int(bad[0])
        raise SingularFormError(f"precision lost positive semidefiniteness at grid point {k} (eigenvalue {lam[k]:.3e})")


@dataclass(frozen=True)
class BackwardTrajectory:
    """Effect moments on the record grid; index 0 is ``t0``, index -1 is ``T``.

    ``form`` is ``"covariance"`` (``means``/``covs`` hold ``r̄``/``gamma``) or
    ``"information"`` (``means``/``covs`` hold ``xi``/``Lambda``).
    """

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    form: str
    final: EffectMoments
    spec: ModelSpec
    record: MeasurementRecord

    def effect(self, k: int) -> EffectMoments:
        if self.form == "covariance":
            return CovarianceEffect(GaussianMoments(self.means[k], self.covs[k]))
        return InformationEffect(self.covs[k], self.means[k])

    def covariance_path(self) -> np.ndarray:
        """``gamma(t)`` on the grid (converting from information form if needed)."""
        if self.form == "covariance":
            return self.covs
        return np.stack([_invert(L, f"precision at index {k}") for k, L in enumerate(self.covs)])

    def __len__(self):
        return self.times.size


def integrate_backward(spec: ModelSpec, record: MeasurementRecord, final: EffectMoments, form: str | None = None) -> BackwardTrajectory:
    """Integrate the effect moments from ``record.T`` down to ``record.t0``.

    ``form`` defaults to information form for an :class:`InformationEffect`
    final condition and covariance form otherwise.  Each step from grid
    point ``k + 1`` to ``k`` uses ``record.increments[k]`` and the moments at
    the later time.
    """
    if record.n_channels != spec.n_channels:
        raise InputError(f"record has {record.n_channels} channel(s), model has {spec.n_channels}")
    if final.n_modes != spec.layout.n_modes:
        raise InputError(f"final condition has {final.n_modes} mode(s), model has {spec.layout.n_modes}")
    if form is None:
        form = "information" if isinstance(final, InformationEffect) else "covariance"
    if form not in ("covariance", "information"):
        raise InputError(f"unknown form {form!r}")
    derived = derive_matrices(spec)
    eta = spec.efficiencies
    sqrt_eta = np.sqrt(eta)
    dt = record.dt
    means = np.empty((record.steps + 1, spec.dim))
    B, N = derived.B, derived.N
    expect = 2.0 * sqrt_eta[:, None] * B * dt

    if form == "covariance":
        start = to_covariance_form(final).moments
        mats = riccati_path(riccati_field(-derived.A, derived.D, derived.B.T, derived.N.T, eta), start.cov, dt, record.steps, reverse=True)
        _guard_path(mats, dt, "effect covariance")
        F = expm(-derived.A * dt)
        gains = (mats[1:] @ B.T + N.T) * sqrt_eta
        means[-1] = start.mean
        for k in range(record.steps - 1, -1, -1):
            rbar = means[k + 1]
            ds = record.increments[k] - expect @ rbar
            means[k] = F @ rbar + gains[k] @ ds
    else:
        start = to_information_form(final)
        mats = riccati_path(_information_field(derived, eta), start.precision, dt, record.steps, reverse=True)
        _guard_precision(mats)
        F = expm(derived.A.T * dt)
        G = B.T + mats[1:] @ N.T
        # xi drift beyond A^T xi: (-Lambda D + 2 G eta N) xi
        extra = (-mats[1:] @ derived.D + (G * eta) @ (2.0 * N)) * dt
        gains = G * sqrt_eta
        means[-1] = start.shift
        for k in range(record.steps - 1, -1, -1):
            xi = means[k + 1]
            means[k] = F @ xi + extra[k] @ xi + gains[k] @ record.increments[k]
    return BackwardTrajectory(record.times, means, mats, form, final, spec, record)
