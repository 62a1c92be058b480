"""Past quadrature distributions from a forward state and a backward effect.

For a quadrature ``x_theta = u . r`` with ``u = (cos theta, sin theta)`` the
retrodicted distribution is the normalised product of the two Gaussian
marginals of ``rho`` and ``E``:

    x_p   = (m_rho gamma_theta + m_E sigma_theta) / (sigma_theta + gamma_theta)
    Delta = sigma_theta gamma_theta / (sigma_theta + gamma_theta)

with ``sigma_theta = u^T sigma u`` and ``Var = Delta / 2``.  Effects in
information form are handled without inverting the precision, so the flat
effect (zero precision) returns the forward marginal exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backward import BackwardTrajectory, to_covariance_form, to_information_form
from .errors import DegenerateDistributionError, InputError
from .phase_core import (
    CovarianceEffect,
    EffectMoments,
    GaussianMoments,
    marginal_variance,
    quadrature_marginals,
    select_mode,
)

# relative size below which the precision along the complementary direction counts as zero
_FLAT_TOL = 1e-14


@dataclass(frozen=True)
class PastDistribution:
    """Retrodicted Gaussian for ``x_theta``; ``variance = Delta / 2``."""

    theta: float
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def delta(self) -> float:
        return 2.0 * self.variance


def _single_mode_effect(eff: EffectMoments, mode: int) -> EffectMoments:
    if isinstance(eff, CovarianceEffect):
        return CovarianceEffect(select_mode(eff.moments, mode))
    if eff.n_modes == 1:
        return eff
    # marginalising an information-form Gaussian needs the full covariance
    cov = to_covariance_form(eff).moments
    return to_information_form(CovarianceEffect(select_mode(cov, mode)))


def effect_marginal(eff: EffectMoments, theta: float) -> tuple[float, float]:
    """Marginal of the effect along ``theta`` as ``(precision, shift)`` in ``Delta`` units.

    Returns ``(lambda_x, xi_x)`` with ``lambda_x = 1 / gamma_theta`` and
    ``xi_x = m_E / gamma_theta``; ``(0, 0)`` for a flat effect.
    """
    u = np.array([np.cos(theta), np.sin(theta)])
    if isinstance(eff, CovarianceEffect):
        m_e, g = marginal_variance(eff.moments, theta)
        g_theta = 2.0 * g
        if g_theta <= 0:
            return np.inf, m_e
        return 1.0 / g_theta, m_e / g_theta
    L, xi = np.asarray(eff.precision), np.asarray(eff.shift)
    if L.shape != (2, 2):
        raise InputError(f"effect_marginal needs single-mode moments, got dimension {L.shape[0]}")
    if not np.any(L) and not np.any(xi):
        return 0.0, 0.0
    w = np.array([-u[1], u[0]])
    l_uu, l_uw, l_ww = u @ L @ u, u @ L @ w, w @ L @ w
    scale = max(abs(l_uu), abs(l_ww), 1.0)
    if abs(l_ww) <= _FLAT_TOL * scale:
        # no information about the orthogonal direction: marginal is the u-block
        return float(l_uu), float(xi @ u)
    # Schur complement eliminates the orthogonal direction
    lam = l_uu - l_uw * l_uw / l_ww
    shift = xi @ u - l_uw * (xi @ w) / l_ww
    return float(lam), float(shift)


def past_quadrature(rho_m: GaussianMoments, eff: EffectMoments, theta: float, mode: int | None = None) -> PastDistribution:
    """Retrodicted distribution of ``x_theta`` for one mode.

    ``mode`` selects a mode of multi-mode moments; single-mode input needs none.
    """
    if mode is not None:
        rho_m = select_mode(rho_m, mode)
        eff = _single_mode_effect(eff, mode)
    elif rho_m.n_modes != 1:
        raise InputError("multi-mode moments need an explicit mode")
    if eff.n_modes != 1:
        raise InputError("effect and state have different mode counts")
    m_rho, var_rho = marginal_variance(rho_m, theta)
    sigma_theta = 2.0 * var_rho
    lam, shift = effect_marginal(eff, theta)
    if lam == 0.0:
        return PastDistribution(theta, m_rho, var_rho)
    if np.isinf(lam):
        if sigma_theta <= 0:
            raise DegenerateDistributionError(f"both marginals have zero variance at theta={theta}")
        return PastDistribution(theta, float(eff.moments.mean @ [np.cos(theta), np.sin(theta)]), 0.0)
    if sigma_theta <= 0:
        return PastDistribution(theta, m_rho, 0.0)
    if isinstance(eff, CovarianceEffect):
        m_e, var_e = marginal_variance(eff.moments, theta)
        gamma_theta = 2.0 * var_e
        total = sigma_theta + gamma_theta
        mean = (m_rho * gamma_theta + m_e * sigma_theta) / total
        delta = sigma_theta * gamma_theta / total
    else:
        precision = 1.0 / sigma_theta + lam
        delta = 1.0 / precision
        mean = (m_rho / sigma_theta + shift) * delta
    return PastDistribution(theta, float(mean), float(delta / 2.0))


def past_path(means: np.ndarray, covs: np.ndarray, bwd: BackwardTrajectory, theta: float, mode: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Past mean and variance of ``x_theta`` at every grid point, vectorised.

    Gives the same numbers as calling :func:`past_quadrature` point by point.
    """
    sl = slice(2 * mode, 2 * mode + 2)
    u = np.array([np.cos(theta), np.sin(theta)])
    m_rho, var_rho = quadrature_marginals(means[:, sl], covs[:, sl, sl], theta)
    sigma = 2.0 * var_rho
    if bwd.form == "information" and bwd.spec.layout.n_modes != 1:
        rows = [past_quadrature(GaussianMoments(means[k], covs[k]), bwd.effect(k), theta, mode) for k in range(means.shape[0])]
        return np.array([r.mean for r in rows]), np.array([r.variance for r in rows])
    if bwd.form == "covariance":
        m_e, var_e = quadrature_marginals(bwd.means[:, sl], bwd.covs[:, sl, sl], theta)
        gamma = 2.0 * var_e
        if np.any((sigma <= 0) & (gamma <= 0)):
            raise DegenerateDistributionError(f"both marginals have zero variance at theta={theta}")
        with np.errstate(divide="ignore", invalid="ignore"):
            total = sigma + gamma
            mean = (m_rho * gamma + m_e * sigma) / total
            var = sigma * gamma / total / 2.0
        mean = np.where(gamma <= 0, m_e, np.where(sigma <= 0, m_rho, mean))
        var = np.where((gamma <= 0) | (sigma <= 0), 0.0, var)
        return mean, var
    L, xi = bwd.covs, bwd.means
    w = np.array([-u[1], u[0]])
    l_uu, l_uw, l_ww = (u @ L) @ u, (u @ L) @ w, (w @ L) @ w
    xi_u, xi_w = xi @ u, xi @ w
    flat = ~np.any(L, axis=(1, 2)) & ~np.any(xi, axis=1)
    scale = np.maximum(np.maximum(np.abs(l_uu), np.abs(l_ww)), 1.0)
    no_w = np.abs(l_ww) <= _FLAT_TOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(no_w, l_uu, l_uu - l_uw * l_uw / l_ww)
        shift = np.where(no_w, xi_u, xi_u - l_uw * xi_w / l_ww)
        delta = 1.0 / (1.0 / sigma + lam)
        mean = (m_rho / sigma + shift) * delta
    mean = np.where(flat | (lam == 0.0), m_rho, np.where(sigma <= 0, m_rho, mean))
    var = np.where(flat | (lam == 0.0), var_rho, np.where(sigma <= 0, 0.0, delta / 2.0))
    return mean, var


@dataclass(frozen=True)
class SweepRow:
    theta: float
    std_forward: float
    std_backward: float
    std_past: float


def uncertainty_sweep(rho_m: GaussianMoments, eff: EffectMoments, thetas, mode: int | None = None) -> list[SweepRow]:
    """Forward, backward and past standard deviations over a grid of angles.

    ``std_backward`` is ``inf`` where the effect carries no information.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size == 0:
        raise InputError("theta grid is empty")
    if mode is not None:
        rho_m = select_mode(rho_m, mode)
        eff = _single_mode_effect(eff, mode)
    rows = []
    for th in thetas:
        _, var_f = marginal_variance(rho_m, th)
        if isinstance(eff, CovarianceEffect):
            std_b = np.sqrt(marginal_variance(eff.moments, th)[1])
        else:
            lam, _ = effect_marginal(eff, th)
            std_b = np.inf if lam == 0 else np.sqrt(0.5 / lam)
        past = past_quadrature(rho_m, eff, th)
        rows.append(SweepRow(float(th), float(np.sqrt(var_f)), float(std_b), past.std))
    return rows


def sweep_to_csv(rows: list[SweepRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "std_forward", "std_backward", "std_past"])
    for r in rows:
        w.writerow([f"{v:.17g}" for v in (r.theta, r.std_forward, r.std_backward, r.std_past)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def gaussian_overlap(a: GaussianMoments, b: GaussianMoments) -> float:
    """``Tr(G_a G_b)`` for two normalised Gaussian operators.

    Equals ``det(S)^(-1/2) exp(-delta^T S^-1 delta / 2)`` with
    ``S = (sigma_a + sigma_b) / 2`` and ``delta`` the mean difference, so that
    the vacuum self-overlap is 1.
    """
    if a.dim != b.dim:
        raise InputError(f"mode counts differ: {a.n_modes} and {b.n_modes}")
    S = 0.5 * (a.cov + b.cov)
    det = np.linalg.det(S)
    if not det > 0 or np.linalg.cond(S) >= 1e12:
        raise InputError("sum of covariances is singular")
    delta = a.mean - b.mean
    return float(np.exp(-0.5 * delta @ np.linalg.solve(S, delta)) / np.sqrt(det))
