"""Conditioned forward dynamics of the density-matrix moments.

The covariance obeys a deterministic Riccati equation and is integrated with
classical RK4.  The mean obeys an Ito SDE driven by the innovation
``dW_h = dY_h - 2 sqrt(eta_h) (B mean)_h dt`` and is stepped with
Euler-Maruyama using the covariance at the start of the step.  Trajectory
integrators propagate the linear drift exactly with ``expm(A dt)``; at
``dt = 1e-3`` the plain Euler drift of a fast oscillator accumulates
amplitude errors of several percent.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import InputError, IntegrationInstabilityError
from .model import DerivedMatrices, ModelSpec, derive_matrices
from .phase_core import PHYSICAL_TOL, GaussianMoments, build_symplectic, check_physical


@dataclass(frozen=True)
class MeasurementRecord:
    """Homodyne increments on a uniform grid.

    ``increments[k, h]`` is ``dY_h`` accumulated over ``[t0 + k dt, t0 + (k+1) dt]``.
    """

    t0: float
    dt: float
    increments: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt}")
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 2:
            raise InputError(f"increments must be (steps, channels), got shape {inc.shape}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_channels(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def T(self) -> float:
        return self.t0 + self.dt * self.steps

    @classmethod
    def empty(cls, t0: float, dt: float, steps: int, n_channels: int) -> "MeasurementRecord":
        return cls(t0, dt, np.zeros((steps, n_channels)))

    def to_csv(self, path=None) -> str:
        """Write ``t,dY_1,...,dY_m`` with one row per step (``t`` is the step start)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"dY_{h + 1}" for h in range(self.n_channels)])
        for t, row in zip(self.times[:-1], self.increments):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "MeasurementRecord":
        return cls.from_csv_text(Path(path).read_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "MeasurementRecord":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "t":
            raise InputError("record CSV must start with a 't' column")
        data = np.array([[float(x) for x in r] for r in body if r], dtype=float)
        if data.shape[0] < 2:
            raise InputError("record CSV needs at least two rows to infer dt")
        t = data[:, 0]
        dt = float(t[1] - t[0])
        if np.max(np.abs(np.diff(t) - dt)) > 1e-9 * max(1.0, abs(dt)):
            raise InputError("record CSV time column is not a uniform grid")
        return cls(float(t[0]), dt, data[:, 1:])


@dataclass(frozen=True)
class ForwardTrajectory:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    spec: ModelSpec
    seed: int | None = None

    def moments(self, k: int) -> GaussianMoments:
        return GaussianMoments(self.means[k], self.covs[k])

    def __len__(self):
        return self.times.size


def _check_eta(derived: DerivedMatrices, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size != derived.B.shape[0]:
        raise InputError(f"{eta.size} efficiencies for {derived.B.shape[0]} channel(s)")
    return eta


def _check_square(mat: np.ndarray, d: int, name: str):
    if mat.shape != (d, d):
        raise InputError(f"{name} must be {d}x{d}, got {mat.shape}")


def riccati_field(drift: np.ndarray, diffusion: np.ndarray, Bt: np.ndarray, offset: np.ndarray, eta: np.ndarray):
    """Unchecked ``s -> F s + s F^T + D - 2 G eta G^T`` with ``G = s Bt + offset``.

    Shared by the forward (``F = A``, ``offset = -N^T``) and backward
    (``F = -A``, ``offset = +N^T``) Riccati equations.  ``s`` must be
    symmetric; the result is symmetric up to roundoff.
    """
    monitored = eta > 0
    if not np.any(monitored):

        def linear(s):
            m = drift @ s
            return m + m.T + diffusion

        return linear
    # unmonitored channels drop out of the measurement term
    Bt, offset = Bt[:, monitored], offset[:, monitored]
    two_eta = 2.0 * eta[monitored]

    def f(s):
        gain = s @ Bt + offset
        m = drift @ s
        return m + m.T + diffusion - (gain * two_eta) @ gain.T

    return f


def riccati_rhs(sigma, derived: DerivedMatrices, eta) -> np.ndarray:
    """``A s + s A^T + D - 2 (s B^T - N^T) eta (s B^T - N^T)^T``, symmetrised."""
    sigma = np.asarray(sigma, dtype=float)
    _check_square(sigma, derived.A.shape[0], "sigma")
    eta = _check_eta(derived, eta)
    out = riccati_field(derived.A, derived.D, derived.B.T, -derived.N.T, eta)(sigma)
    return 0.5 * (out + out.T)


def rk4_step(f, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guard_path(path: np.ndarray, dt: float, what: str):
    """Check ``cov + i Omega >= 0`` at every grid point of a stacked path."""
    omega = build_symplectic(path.shape[-1] // 2)
    finite = np.all(np.isfinite(path), axis=(1, 2))
    lam = np.full(path.shape[0], -np.inf)
    lam[finite] = np.linalg.eigvalsh(path[finite] + 1j * omega)[:, 0]
    bad = np.flatnonzero(~(lam >= -PHYSICAL_TOL))
    if bad.size:
        k = int(bad[0])
        raise IntegrationInstabilityError(
            f"{what} became unphysical at grid point {k} (min eigenvalue {lam[k]:.3e}); try a smaller dt than {dt}"
        )


def riccati_path(rhs, start: np.ndarray, dt: float, steps: int, reverse: bool = False) -> np.ndarray:
    """RK4 path of an autonomous symmetric matrix ODE, symmetrised after every step.

    With ``reverse`` the path is filled from the last index down to 0.
    """
    path = np.empty((steps + 1,) + start.shape)
    path[steps if reverse else 0] = start
    order = range(steps, 0, -1) if reverse else range(steps)
    step = -1 if reverse else 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in order:
            x = rk4_step(rhs, path[k], dt)
            path[k + step] = 0.5 * (x + x.T)
    return path


def integrate_covariance(spec: ModelSpec, sigma0, dt: float, steps: int, derived: DerivedMatrices | None = None) -> np.ndarray:
    """Covariance path on ``steps + 1`` grid points, shape ``(steps + 1, d, d)``."""
    sigma0 = np.asarray(sigma0, dtype=float)
    ok, lam = check_physical(sigma0)
    if not ok:
        raise InputError(f"initial covariance is unphysical (min eigenvalue {lam:.3e})")
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    derived = derived or derive_matrices(spec)
    rhs = riccati_field(derived.A, derived.D, derived.B.T, -derived.N.T, _check_eta(derived, spec.efficiencies))
    path = riccati_path(rhs, sigma0, dt, steps)
    _guard_path(path, dt, "covariance")
    return path


def step_mean(mean, sigma, derived: DerivedMatrices, eta, dY, dt: float, drift_propagator=None) -> np.ndarray:
    """One Euler-Maruyama step of the conditioned mean driven by record increments ``dY``.

    The drift term is ``A mean dt`` unless ``drift_propagator`` (normally
    ``expm(A dt)``) is supplied, in which case it replaces ``I + A dt``.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    mean = np.asarray(mean, dtype=float)
    eta = _check_eta(derived, eta)
    dY = np.asarray(dY, dtype=float).reshape(-1)
    if dY.size != eta.size:
        raise InputError(f"{dY.size} increments for {eta.size} channel(s)")
    sqrt_eta = np.sqrt(eta)
    dW = dY - 2.0 * sqrt_eta * (derived.B @ mean) * dt
    gain = np.asarray(sigma) @ derived.B.T - derived.N.T
    drifted = mean + derived.A @ mean * dt if drift_propagator is None else drift_propagator @ mean
    return drifted + gain @ (sqrt_eta * dW)


def _mean_path(derived: DerivedMatrices, eta: np.ndarray, covs: np.ndarray, mean0, dt: float, increments=None, noise=None):
    """Euler-Maruyama mean path with exact drift; returns ``(means, dY)``.

    Either ``increments`` (a recorded ``dY``) or ``noise`` (innovations from
    which ``dY`` is synthesised) must be given.  The innovation is always
    reconstructed from ``dY`` so filtering a simulated record repeats the
    same arithmetic.
    """
    sqrt_eta = np.sqrt(eta)
    F = expm(derived.A * dt)
    gains = (covs[:-1] @ derived.B.T - derived.N.T) * sqrt_eta
    expect = 2.0 * sqrt_eta[:, None] * derived.B * dt
    steps = covs.shape[0] - 1
    means = np.empty((steps + 1, covs.shape[1]))
    means[0] = mean0
    dY = np.empty((steps, eta.size)) if increments is None else increments
    for k in range(steps):
        m = means[k]
        predicted = expect @ m
        if increments is None:
            dY[k] = predicted + noise[k]
        means[k + 1] = F @ m + gains[k] @ (dY[k] - predicted)
    return means, dY


def filter_record(spec: ModelSpec, initial: GaussianMoments, record: MeasurementRecord, seed=None) -> ForwardTrajectory:
    """Run the forward filter over an existing record."""
    if record.n_channels != spec.n_channels:
        raise InputError(f"record has {record.n_channels} channel(s), model has {spec.n_channels}")
    derived = derive_matrices(spec)
    covs = integrate_covariance(spec, initial.cov, record.dt, record.steps, derived)
    means, _ = _mean_path(derived, spec.efficiencies, covs, initial.mean, record.dt, increments=record.increments)
    return ForwardTrajectory(record.times, means, covs, spec, seed)


def simulate_record(spec: ModelSpec, initial: GaussianMoments, t0: float, dt: float, steps: int, seed: int):
    """Draw a synthetic homodyne record together with the conditioned trajectory.

    Innovations ``dW ~ N(0, dt)`` come from ``numpy.random.default_rng(seed)``;
    the record is ``dY = 2 sqrt(eta) B mean dt + dW``.  Filtering the returned
    record with :func:`filter_record` reproduces the trajectory bit for bit.
    """
    ok, lam = check_physical(initial)
    if not ok:
        raise InputError(f"initial state is unphysical (min eigenvalue {lam:.3e})")
    derived = derive_matrices(spec)
    rng = np.random.default_rng(seed)
    dW = rng.normal(0.0, np.sqrt(dt), size=(steps, spec.n_channels))
    covs = integrate_covariance(spec, initial.cov, dt, steps, derived)
    means, dY = _mean_path(derived, spec.efficiencies, covs, initial.mean, dt, noise=dW)
    record = MeasurementRecord(t0, dt, dY)
    return record, ForwardTrajectory(record.times, means, covs, spec, seed)


def simulate_ensemble_means(spec: ModelSpec, initial: GaussianMoments, dt: float, steps: int, seed: int, n_traj: int) -> np.ndarray:
    """Conditioned means of ``n_traj`` independent trajectories, shape ``(n_traj, steps + 1, d)``.

    Trajectory ``j`` draws its innovations from ``default_rng(seed + j)``.  The
    covariance path is shared, so the loop over time is vectorised across
    trajectories.
    """
    derived = derive_matrices(spec)
    sqrt_eta = np.sqrt(spec.efficiencies)
    covs = integrate_covariance(spec, initial.cov, dt, steps, derived)
    dW = np.stack([np.random.default_rng(seed + j).normal(0.0, np.sqrt(dt), size=(steps, spec.n_channels)) for j in range(n_traj)])
    means = np.empty((n_traj, steps + 1, spec.dim))
    means[:, 0] = initial.mean
    step = expm(derived.A * dt)
    for k in range(steps):
        gain = covs[k] @ derived.B.T - derived.N.T
        means[:, k + 1] = means[:, k] @ step.T + (dW[:, k] * sqrt_eta) @ gain.T
    return means
