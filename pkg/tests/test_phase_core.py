import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_physical
from gaussian_retrodiction.errors import InputError
from gaussian_retrodiction.phase_core import (
    GaussianMoments,
    InformationEffect,
    QuadratureLayout,
    build_symplectic,
    check_physical,
    marginal_variance,
    rotation,
    select_mode,
)


def test_symplectic_single_mode():
    assert np.array_equal(build_symplectic(1), [[0, 1], [-1, 0]])


def test_symplectic_two_modes_is_block_diagonal():
    om = build_symplectic(QuadratureLayout(2))
    expected = np.zeros((4, 4))
    expected[:2, :2] = expected[2:, 2:] = [[0, 1], [-1, 0]]
    assert np.array_equal(om, expected)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_symplectic_invariants(n):
    om = build_symplectic(n)
    assert np.array_equal(om, -om.T)
    assert np.array_equal(om @ om, -np.eye(2 * n))
    assert np.array_equal(om @ om.T, np.eye(2 * n))


def test_symplectic_returns_fresh_array():
    om = build_symplectic(1)
    om[0, 0] = 7
    assert build_symplectic(1)[0, 0] == 0


def test_layout_rejects_bad_mode_count():
    with pytest.raises(InputError):
        QuadratureLayout(0)
    with pytest.raises(InputError):
        QuadratureLayout(1).q_index(1)


def test_vacuum_is_physical_and_saturates():
    ok, lam = check_physical(GaussianMoments.vacuum())
    assert ok and abs(lam) < 1e-14


@pytest.mark.parametrize("r", [0.0, 0.3, 1.0, 2.0])
def test_pure_squeezed_is_physical(r):
    ok, lam = check_physical(np.diag([np.exp(-2 * r), np.exp(2 * r)]))
    assert ok and lam > -1e-8


def test_half_identity_is_unphysical():
    ok, lam = check_physical(0.5 * np.eye(2))
    assert not ok and lam == pytest.approx(-0.5)


def test_check_physical_rejects_asymmetric():
    with pytest.raises(InputError):
        check_physical(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_moments_reject_asymmetric_and_bad_shapes():
    with pytest.raises(InputError):
        GaussianMoments([0, 0], [[1, 0.1], [0, 1]])
    with pytest.raises(InputError):
        GaussianMoments([0, 0, 0], np.eye(3))
    with pytest.raises(InputError):
        GaussianMoments([0, 0], np.eye(4))


def test_moments_are_read_only():
    m = GaussianMoments.vacuum()
    with pytest.raises(ValueError):
        m.cov[0, 0] = 2.0


def test_coherent_and_thermal_constructors():
    c = GaussianMoments.coherent(1 + 0.5j)
    assert np.allclose(c.mean, np.sqrt(2) * np.array([1, 0.5]))
    assert np.array_equal(c.cov, np.eye(2))
    assert np.allclose(GaussianMoments.thermal(2).cov, 5 * np.eye(2))


def test_squeezed_along_p():
    m = GaussianMoments.squeezed(0.5, np.pi / 2)
    assert np.allclose(m.cov, np.diag([np.e, 1 / np.e]))


def test_information_effect_flat_flag():
    assert InformationEffect(np.zeros((2, 2)), np.zeros(2)).is_flat
    assert not InformationEffect(np.eye(2), np.zeros(2)).is_flat


@pytest.mark.parametrize("theta", [0.0, 0.4, 1.3, np.pi, 5.0])
def test_marginal_of_vacuum(theta):
    assert marginal_variance(GaussianMoments.vacuum(), theta) == pytest.approx((0.0, 0.5))


def test_marginal_diagonal_read_off():
    m = GaussianMoments([0, 0], np.diag([np.exp(-2), np.exp(2)]))
    assert marginal_variance(m, 0.0)[1] == pytest.approx(np.exp(-2) / 2)


def test_marginal_cross_term_enters_with_plus_sign():
    m = GaussianMoments([0, 0], [[1, 0.5], [0.5, 1]])
    assert marginal_variance(m, np.pi / 4)[1] == pytest.approx(0.75, abs=1e-15)


def test_marginal_mean():
    m = GaussianMoments([1.0, 2.0], np.eye(2))
    assert marginal_variance(m, np.pi / 3)[0] == pytest.approx(0.5 + 2 * np.sqrt(3) / 2)


def test_marginal_requires_single_mode():
    with pytest.raises(InputError):
        marginal_variance(GaussianMoments.vacuum(2), 0.0)
    assert marginal_variance(select_mode(GaussianMoments.vacuum(2), 1), 0.0)[1] == 0.5


def test_marginal_matches_rotated_covariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = random_physical(rng)
        theta = rng.uniform(-2 * np.pi, 2 * np.pi)
        R = rotation(-theta)
        rotated = R @ m.cov @ R.T
        assert marginal_variance(m, theta)[1] == pytest.approx(rotated[0, 0] / 2, abs=1e-12)


@given(
    r=st.floats(-1.5, 1.5),
    angle=st.floats(0, np.pi),
    nbar=st.floats(0, 3),
    phi=st.floats(-10, 10),
)
def test_physicality_invariant_under_rotation(r, angle, nbar, phi):
    cov = GaussianMoments.squeezed(r, angle, nbar=nbar).cov
    R = rotation(phi)
    ok1, lam1 = check_physical(cov)
    ok2, lam2 = check_physical(0.5 * (R @ cov @ R.T + (R @ cov @ R.T).T))
    assert ok1 == ok2
    assert lam1 == pytest.approx(lam2, abs=1e-9 * max(1.0, np.abs(cov).max()))


@given(scale=st.floats(0.01, 0.99), phi=st.floats(-5, 5))
def test_sub_vacuum_stays_unphysical_under_rotation(scale, phi):
    R = rotation(phi)
    cov = scale * R @ np.eye(2) @ R.T
    assert not check_physical(0.5 * (cov + cov.T))[0]
