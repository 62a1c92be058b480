"""Dense truncated-Fock-basis reference integrator for a single mode.

This is the independent check on the Gaussian moment equations: it evolves
the full density matrix with the stochastic master equation and the effect
matrix with its adjoint, then extracts moments.  Nothing here is fast.

The Hamiltonian is applied as an exact unitary (it is quadratic, so its
truncated matrix is cheap to exponentiate once); the dissipative and
measurement parts are stepped with either Euler-Maruyama on the
trace-preserving equations (``scheme="euler"``) or a symmetric splitting
(``scheme="split"``, the default): half a step of unitary and unmonitored
dissipation, the exponential homodyne measurement operator
``exp(sqrt(eta) c dY - eta (c^dag c + c^2) dt / 2)``, then the other half.
The measurement operator maps Gaussian states to Gaussian states, so the
split scheme has no spurious non-Gaussian error at finite ``dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .errors import InputError, StepSizeError, TruncationError
from .forward import MeasurementRecord
from .model import ModelSpec
from .phase_core import GaussianMoments, check_physical

TRACE_STEP_TOL = 1e-4
SCHEMES = ("euler", "split")


@dataclass(frozen=True)
class OracleConfig:
    n_max: int = 60
    renormalize: bool = True
    leak_tol: float = 1e-6
    check_leak: bool = True
    scheme: str = "split"

    def __post_init__(self):
        if self.n_max < 4:
            raise InputError(f"n_max must be at least 4, got {self.n_max}")
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


def build_mode_operators(n_max: int):
    """Ladder and quadrature matrices ``(a, a_dag, q, p)`` on levels ``0..n_max``."""
    if n_max < 1:
        raise InputError(f"n_max must be at least 1, got {n_max}")
    a = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(complex)
    ad = a.conj().T
    q = (a + ad) / np.sqrt(2.0)
    p = (a - ad) / (1j * np.sqrt(2.0))
    return a, ad, q, p


@lru_cache(maxsize=8)
def _moment_ops(n_max: int):
    _, _, q, p = build_mode_operators(n_max)
    rr = _quadratic_ops(n_max)
    sym = [[rr[i][j] + rr[j][i] for j in range(2)] for i in range(2)]
    return q, p, sym


def _quadratic_ops(n_max: int):
    """Exact products ``r_j r_k`` on the truncated space (built two levels larger, then cropped)."""
    _, _, q, p = build_mode_operators(n_max + 2)
    r = (q, p)
    k = n_max + 1
    return [[(r[i] @ r[j])[:k, :k] for j in range(2)] for i in range(2)]


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Position wavefunctions ``<x|n>`` for ``n = 0..n_max``; shape ``(n_max + 1, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi = np.empty((n_max + 1, x.size))
    psi[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if n_max >= 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(1, n_max):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * x * psi[n] - np.sqrt(n / (n + 1)) * psi[n - 1]
    return psi


def quadrature_kets(n_max: int, theta: float, x) -> np.ndarray:
    """Rows are Fock components of the eigenkets ``|x, theta>`` of ``q cos(theta) + p sin(theta)``."""
    phases = np.exp(1j * theta * np.arange(n_max + 1))
    return (hermite_functions(n_max, x) * phases[:, None]).T


def quadrature_density(X: np.ndarray, theta: float, x) -> np.ndarray:
    """Diagonal elements ``<x, theta| X |x, theta>`` on the grid ``x``."""
    kets = quadrature_kets(X.shape[0] - 1, theta, x)
    return np.real(np.einsum("km,mn,kn->k", kets.conj(), X, kets))


def gaussian_operator(moments: GaussianMoments, n_max: int, pad: int = 80) -> np.ndarray:
    """Trace-one Fock matrix of a single-mode Gaussian state with the given moments.

    Built as ``D(alpha) R(phi) S(r) rho_thermal S^dag R^dag D^dag`` in an
    enlarged space and cropped to ``n_max + 1`` levels.
    """
    if moments.dim != 2:
        raise InputError("gaussian_operator is single-mode only")
    ok, lam = check_physical(moments)
    if not ok:
        raise InputError(f"unphysical moments (min eigenvalue {lam:.3e})")
    big = n_max + pad
    a, ad, _, _ = build_mode_operators(big)
    nu = np.sqrt(max(np.linalg.det(moments.cov), 1.0))
    nbar = max((nu - 1.0) / 2.0, 0.0)
    evals, evecs = np.linalg.eigh(moments.cov / nu)
    r = 0.25 * np.log(evals[1] / evals[0])
    phi = np.arctan2(evecs[1, 0], evecs[0, 0])
    levels = np.arange(big + 1)
    if nbar > 0:
        pops = (nbar / (nbar + 1.0)) ** levels / (nbar + 1.0)
    else:
        pops = (levels == 0).astype(float)
    rho = np.diag(pops).astype(complex)
    squeeze = expm(0.5 * r * (a @ a - ad @ ad))
    rotate = np.diag(np.exp(1j * phi * levels))
    alpha = (moments.mean[0] + 1j * moments.mean[1]) / np.sqrt(2.0)
    displace = expm(alpha * ad - np.conj(alpha) * a)
    G = displace @ rotate @ squeeze
    rho = G @ rho @ G.conj().T
    rho = rho[: n_max + 1, : n_max + 1]
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def fock_state(n: int, n_max: int) -> np.ndarray:
    rho = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    rho[n, n] = 1.0
    return rho


def extract_moments(X: np.ndarray) -> GaussianMoments:
    """Mean and covariance (vacuum = identity convention) of the trace-normalised ``X``."""
    tr = np.trace(X)
    if abs(tr) == 0:
        raise InputError("operator has zero trace")
    q, p, sym = _moment_ops(X.shape[0] - 1)
    Xn = X / tr
    # Tr(O X) = sum(O.T * X) avoids the full matrix product
    mean = np.real([np.sum(q.T * Xn), np.sum(p.T * Xn)])
    cov = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            cov[i, j] = np.real(np.sum(sym[i][j].T * Xn)) - 2.0 * mean[i] * mean[j]
    return GaussianMoments(mean, 0.5 * (cov + cov.T))


def top_population(X: np.ndarray) -> float:
    """Population of the two highest levels of the trace-normalised ``X``."""
    d = np.real(np.diag(X))
    return float(d[-2:].sum() / d.sum())


def past_probability(rho: np.ndarray, effect: np.ndarray, projectors) -> np.ndarray:
    """Retrodicted outcome distribution ``Tr(M rho M^dag E)`` normalised over outcomes.

    ``projectors`` is either a sequence of measurement operators ``M_m`` or a
    2-D array whose rows are kets ``|m>`` (projective measurement, giving
    ``<m|rho|m><m|E|m>``).
    """
    P = np.asarray(projectors)
    if P.ndim == 2:
        num = np.real(np.einsum("km,mn,kn->k", P.conj(), rho, P)) * np.real(
            np.einsum("km,mn,kn->k", P.conj(), effect, P)
        )
    elif P.ndim == 3:
        num = np.real(np.einsum("kab,bc,kdc,da->k", P, rho, P.conj(), effect))
    else:
        raise InputError(f"projectors must be kets (2-D) or operators (3-D), got {P.ndim}-D")
    total = num.sum()
    if total <= 0:
        raise InputError("all past-probability numerators vanish")
    return num / total


class FockModel:
    """Truncated-space operators of a single-mode :class:`ModelSpec`.

    Channels of the form ``c = k a`` (damping, possibly phase-rotated) get
    O(N^2) fast paths; any other linear channel uses dense products.
    """

    def __init__(self, spec: ModelSpec, n_max: int):
        if spec.layout.n_modes != 1:
            raise InputError("the Fock oracle supports single-mode models only")
        self.spec = spec
        self.n_max = n_max
        a, ad, q, p = build_mode_operators(n_max)
        self.q, self.p = q, p
        rr = _quadratic_ops(n_max)
        R = spec.hamiltonian
        self.H = 0.5 * sum(R[i, j] * rr[i][j] for i in range(2) for j in range(2))
        self.eta = spec.efficiencies
        self.channels = [row[0] * q + row[1] * p for row in spec.channels]
        # bilinears from exact quadratic products (no truncation corner)
        self.cdc = [sum(np.conj(row[i]) * row[j] * rr[i][j] for i in range(2) for j in range(2)) for row in spec.channels]
        self.cc = [sum(row[i] * row[j] * rr[i][j] for i in range(2) for j in range(2)) for row in spec.channels]
        # c = kappa a + mu a^dag
        self.lowering = []
        for row in spec.channels:
            mu = (row[0] + 1j * row[1]) / np.sqrt(2.0)
            kappa = (row[0] - 1j * row[1]) / np.sqrt(2.0)
            self.lowering.append(kappa if abs(mu) <= 1e-14 * max(1.0, abs(kappa)) else None)
        self._hdiag = np.real(np.diag(self.H)) if not np.any(self.H - np.diag(np.diag(self.H))) else None
        levels = np.arange(n_max + 1)
        self._sqrt = np.sqrt(levels.astype(float))
        m, n = np.meshgrid(levels, levels, indexing="ij")
        self._power = np.where(n >= m, n - m, 0)
        logc = 0.5 * (gammaln(n + 1) - gammaln(m + 1)) - gammaln(np.abs(n - m) + 1)
        self._coef = np.where(n >= m, np.exp(np.where(n >= m, logc, 0.0)), 0.0)
        self._eig = {}
        self._cache = {}

    def propagator(self, dt: float) -> np.ndarray:
        key = ("U", dt)
        if key not in self._cache:
            self._cache[key] = expm(-1j * self.H * dt)
        return self._cache[key]

    def unitary(self, X: np.ndarray, dt: float, adjoint: bool = False) -> np.ndarray:
        """``U X U^dag`` with ``U = exp(-i H dt)`` (``U^dag X U`` when ``adjoint``)."""
        if self._hdiag is not None:
            ph = np.exp((1j if adjoint else -1j) * self._hdiag * dt)
            return ph[:, None] * X * ph.conj()[None, :]
        U = self.propagator(dt)
        return U.conj().T @ X @ U if adjoint else U @ X @ U.conj().T

    def expectations(self, X: np.ndarray) -> np.ndarray:
        """``Tr((c_h + c_h^dag) X)`` for every channel (``X`` trace one)."""
        return np.array([2.0 * np.real(np.sum(c.T * X)) for c in self.channels])

    def jump(self, h: int, X: np.ndarray, adjoint: bool) -> np.ndarray:
        kappa = self.lowering[h]
        if kappa is None:
            c = self.channels[h]
            return c.conj().T @ X @ c if adjoint else c @ X @ c.conj().T
        out = np.zeros_like(X)
        w = abs(kappa) ** 2
        if adjoint:
            out[1:, 1:] = w * self._sqrt[1:, None] * X[:-1, :-1] * self._sqrt[None, 1:]
        else:
            out[:-1, :-1] = w * self._sqrt[1:, None] * X[1:, 1:] * self._sqrt[None, 1:]
        return out

    def anticommutator(self, h: int, X: np.ndarray) -> np.ndarray:
        if self.lowering[h] is not None:
            d = np.real(np.diag(self.cdc[h]))
            return (d[:, None] + d[None, :]) * X
        return self.cdc[h] @ X + X @ self.cdc[h]

    def channel_exp(self, h: int, lam: complex) -> np.ndarray:
        """``exp(lam c_h)``."""
        kappa = self.lowering[h]
        if kappa is not None:
            return self._coef * np.power(complex(lam * kappa), self._power)
        c = self.channels[h]
        if np.allclose(c, c.conj().T):
            if h not in self._eig:
                self._eig[h] = np.linalg.eigh(c)
            w, V = self._eig[h]
            return (V * np.exp(lam * w)) @ V.conj().T
        return expm(lam * c)

    def measurement_operator(self, dY: np.ndarray, dt: float) -> np.ndarray:
        """Gaussian-preserving homodyne measurement operator for one step.

        ``exp(sum_h sqrt(eta_h) c_h dY_h - eta_h (c_h^dag c_h + c_h^2) dt / 2)``,
        factorised symmetrically; the factorisation error is a scalar (removed
        by normalisation) because commutators of linear operators are scalars.
        """
        key = ("Q", dt)
        if key not in self._cache:
            gen = np.zeros((self.n_max + 1,) * 2, dtype=complex)
            for h in range(len(self.channels)):
                gen -= 0.25 * self.eta[h] * (self.cdc[h] + self.cc[h]) * dt
            self._cache[key] = expm(gen)
        half = self._cache[key]
        M = half
        for h in range(len(self.channels)):
            if self.eta[h] > 0:
                M = M @ self.channel_exp(h, np.sqrt(self.eta[h]) * dY[h])
        return M @ half


def _hermitize(X):
    return 0.5 * (X + X.conj().T)


def _unmonitored(model: FockModel, X: np.ndarray, adjoint: bool) -> np.ndarray:
    """Dissipator of the unmonitored fraction ``(1 - eta_h)`` of every channel (or its adjoint)."""
    out = np.zeros_like(X)
    for h in range(len(model.channels)):
        w = 1.0 - model.eta[h]
        if w == 0.0:
            continue
        out += w * (model.jump(h, X, adjoint) - 0.5 * model.anticommutator(h, X))
    return out


def _rk4(f, X, h):
    k1 = f(X)
    k2 = f(X + 0.5 * h * k1)
    k3 = f(X + 0.5 * h * k2)
    k4 = f(X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def forward_sme_step(rho, model: FockModel, dW, dt: float, config: OracleConfig = OracleConfig()) -> np.ndarray:
    """Advance the conditioned density matrix by one step of the homodyne SME.

    ``dW`` are the innovations; the record increment is reconstructed from
    the expectations in ``rho`` at the start of the step.
    """
    dW = np.asarray(dW, dtype=float).reshape(-1)
    s = np.sqrt(model.eta)
    if config.scheme == "euler":
        U = model.propagator(dt)
        r1 = U @ rho @ U.conj().T
        out = r1.copy()
        for h, c in enumerate(model.channels):
            cr = c @ r1
            out += (cr @ c.conj().T - 0.5 * (model.cdc[h] @ r1 + r1 @ model.cdc[h])) * dt
            if s[h]:
                expect = np.real(np.trace(cr + r1 @ c.conj().T))
                out += s[h] * (cr + r1 @ c.conj().T - expect * r1) * dW[h]
        tr = np.real(np.trace(out))
        if abs(tr - 1.0) > TRACE_STEP_TOL:
            raise StepSizeError(f"trace drifted to {tr:.6g} in one step; reduce dt")
    else:
        dY = dW + s * model.expectations(rho) * dt
        diss = lambda X: _unmonitored(model, X, adjoint=False)
        out = _rk4(diss, model.unitary(rho, 0.5 * dt), 0.5 * dt)
        M = model.measurement_operator(dY, dt)
        out = M @ out @ M.conj().T
        out = model.unitary(_rk4(diss, out, 0.5 * dt), 0.5 * dt)
    out = _hermitize(out)
    if config.renormalize:
        out = out / np.real(np.trace(out))
    return out


def backward_step(E, model: FockModel, dY, dt: float, config: OracleConfig = OracleConfig()) -> np.ndarray:
    """Propagate the effect matrix from ``t`` to ``t - dt`` using the increment over that step.

    With ``config.renormalize`` the trace-preserving adjoint equation is used
    (expectations ``<X> = Tr(X E)`` on the trace-one ``E``); without it the
    linear adjoint equation is applied and ``E`` keeps its natural scale.
    The split scheme is the exact adjoint of :func:`forward_sme_step`.
    """
    dY = np.asarray(dY, dtype=float).reshape(-1)
    s = np.sqrt(model.eta)
    if config.scheme == "euler":
        if config.renormalize:
            E = E / np.real(np.trace(E))
        out = E.copy()
        for h, c in enumerate(model.channels):
            cd = c.conj().T
            diss = cd @ E @ c - 0.5 * (model.cdc[h] @ E + E @ model.cdc[h])
            out += diss * dt
            if config.renormalize:
                # trace of the same truncated term, so E proportional to 1 stays fixed
                out -= np.real(np.trace(diss)) * E * dt
            if s[h]:
                if config.renormalize:
                    expect = np.real(np.trace(cd @ E + E @ c))
                    ds = dY[h] - s[h] * expect * dt
                    out += s[h] * (cd @ E + E @ c - expect * E) * ds
                else:
                    out += s[h] * (cd @ E + E @ c) * dY[h]
        if config.renormalize:
            tr = np.real(np.trace(out))
            if abs(tr - 1.0) > TRACE_STEP_TOL:
                raise StepSizeError(f"effect trace drifted to {tr:.6g} in one step; reduce dt")
        U = model.propagator(dt)
        out = U.conj().T @ out @ U
    else:
        diss = lambda X: _unmonitored(model, X, adjoint=True)
        out = _rk4(diss, model.unitary(E, 0.5 * dt, adjoint=True), 0.5 * dt)
        M = model.measurement_operator(dY, dt)
        out = M.conj().T @ out @ M
        out = model.unitary(_rk4(diss, out, 0.5 * dt), 0.5 * dt, adjoint=True)
    out = _hermitize(out)
    if config.renormalize:
        out = out / np.real(np.trace(out))
    return out


def _guard(X, k, config: OracleConfig, what: str):
    if config.check_leak:
        leak = top_population(X)
        if leak > config.leak_tol:
            raise TruncationError(
                f"{what}: top-level population {leak:.3e} exceeds {config.leak_tol:.0e} at step {k}; increase n_max"
            )


@dataclass(frozen=True)
class OracleTrajectory:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    states: list | None = None


def integrate_forward(spec: ModelSpec, rho0: np.ndarray, record: MeasurementRecord, config: OracleConfig = OracleConfig(), keep_states: bool = False) -> OracleTrajectory:
    """Filter ``record`` with the full density matrix; innovations use the oracle's own expectations."""
    model = FockModel(spec, config.n_max)
    if rho0.shape != (config.n_max + 1,) * 2:
        raise InputError(f"rho0 must be {config.n_max + 1}-dimensional")
    s = np.sqrt(model.eta)
    rho = np.array(rho0, dtype=complex)
    states = [rho] if keep_states else None
    means = np.empty((record.steps + 1, 2))
    covs = np.empty((record.steps + 1, 2, 2))
    m = extract_moments(rho)
    means[0], covs[0] = m.mean, m.cov
    _guard(rho, 0, config, "density matrix")
    for k in range(record.steps):
        dW = record.increments[k] - s * model.expectations(rho) * record.dt
        rho = forward_sme_step(rho, model, dW, record.dt, config)
        _guard(rho, k + 1, config, "density matrix")
        m = extract_moments(rho)
        means[k + 1], covs[k + 1] = m.mean, m.cov
        if keep_states:
            states.append(rho)
    return OracleTrajectory(record.times, means, covs, states)


def integrate_backward(spec: ModelSpec, final: np.ndarray, record: MeasurementRecord, config: OracleConfig = OracleConfig(), keep_states: bool = False) -> OracleTrajectory:
    """Propagate the effect matrix from ``record.T`` back to ``record.t0``.

    Arrays are indexed by grid point (index 0 is ``t0``), matching the
    Gaussian backward trajectory.
    """
    model = FockModel(spec, config.n_max)
    E = np.array(final, dtype=complex)
    n = record.steps + 1
    means = np.empty((n, 2))
    covs = np.empty((n, 2, 2))
    states = [None] * n if keep_states else None
    m = extract_moments(E)
    means[-1], covs[-1] = m.mean, m.cov
    _guard(E, record.steps, config, "effect matrix")
    if keep_states:
        states[-1] = E
    for k in range(record.steps - 1, -1, -1):
        E = backward_step(E, model, record.increments[k], record.dt, config)
        _guard(E, k, config, "effect matrix")
        m = extract_moments(E)
        means[k], covs[k] = m.mean, m.cov
        if keep_states:
            states[k] = E
    return OracleTrajectory(record.times, means, covs, states)
