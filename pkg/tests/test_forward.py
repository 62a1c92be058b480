import numpy as np
import pytest
from scipy.linalg import expm

from gaussian_retrodiction.errors import InputError, IntegrationInstabilityError
from gaussian_retrodiction.forward import (
    MeasurementRecord,
    filter_record,
    integrate_covariance,
    riccati_rhs,
    simulate_ensemble_means,
    simulate_record,
    step_mean,
)
from gaussian_retrodiction.model import ModelSpec, damping_channel, derive_matrices
from gaussian_retrodiction.phase_core import GaussianMoments, check_physical


def _lyapunov_solution(A, D, sigma0, t):
    """Exact solution of ds/dt = A s + s A^T + D by vectorisation."""
    d = A.shape[0]
    K = np.kron(A, np.eye(d)) + np.kron(np.eye(d), A)
    aug = np.zeros((d * d + 1, d * d + 1))
    aug[: d * d, : d * d] = K
    aug[: d * d, -1] = D.reshape(-1)
    v = expm(aug * t) @ np.append(sigma0.reshape(-1), 1.0)
    return v[:-1].reshape(d, d)


# --- riccati_rhs ---------------------------------------------------------------


def test_rhs_unmonitored_decay(decay_spec):
    s0 = np.array([[3.0, 0.4], [0.4, 2.0]])
    assert np.allclose(riccati_rhs(s0, derive_matrices(decay_spec), [0.0]), np.eye(2) - s0)


def test_rhs_coherent_fixed_point(monitored_decay_spec):
    assert np.allclose(riccati_rhs(np.eye(2), derive_matrices(monitored_decay_spec), [1.0]), 0.0, atol=1e-15)


def test_rhs_dispersive_probe(probe_spec):
    kappa = 0.5
    out = riccati_rhs(np.eye(2), derive_matrices(probe_spec), [1.0])
    assert np.allclose(out, np.diag([-4 * kappa, 4 * kappa]))


def test_rhs_shape_errors(decay_spec):
    dm = derive_matrices(decay_spec)
    with pytest.raises(InputError):
        riccati_rhs(np.eye(3), dm, [0.0])
    with pytest.raises(InputError):
        riccati_rhs(np.eye(2), dm, [0.0, 1.0])


def test_rhs_is_symmetric(oscillator_spec):
    s = np.array([[2.0, 0.3], [0.3, 1.5]])
    out = riccati_rhs(s, derive_matrices(oscillator_spec), oscillator_spec.efficiencies)
    assert np.array_equal(out, out.T)


# --- integrate_covariance ----------------------------------------------------------


def test_covariance_unmonitored_decay(decay_spec):
    dt, steps = 1e-3, 2000
    path = integrate_covariance(decay_spec, 10 * np.eye(2), dt, steps)
    t = dt * np.arange(steps + 1)
    expected = 1 + 9 * np.exp(-t)
    assert np.max(np.abs(path[:, 0, 0] / expected - 1)) < 1e-10
    assert np.max(np.abs(path[:, 0, 1])) == 0.0


def test_covariance_coherent_fixed_point(monitored_decay_spec):
    path = integrate_covariance(monitored_decay_spec, np.eye(2), 1e-2, 100)
    assert np.allclose(path, np.eye(2), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_covariance_unmonitored_matches_lyapunov(seed):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(2, 2))
    C = 0.5 * (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    spec = ModelSpec.build(1, R + R.T, C, [0.0, 0.0])
    dm = derive_matrices(spec)
    sigma0 = GaussianMoments.squeezed(0.4, 0.3, nbar=0.5).cov
    path = integrate_covariance(spec, sigma0, 1e-3, 500)
    exact = _lyapunov_solution(dm.A, dm.D, sigma0, 0.5)
    assert np.allclose(path[-1], exact, rtol=1e-8, atol=1e-8)


def test_covariance_rejects_unphysical_start(decay_spec):
    with pytest.raises(InputError):
        integrate_covariance(decay_spec, 0.5 * np.eye(2), 1e-3, 10)


def test_covariance_instability_is_reported(probe_spec):
    # a huge step overshoots the Riccati contraction
    with pytest.raises(IntegrationInstabilityError, match="smaller dt"):
        integrate_covariance(probe_spec, 100 * np.eye(2), 5.0, 3)


def test_dispersive_information_gain_is_monotone(probe_spec):
    path = integrate_covariance(probe_spec, 4 * np.eye(2), 1e-3, 3000)
    assert np.all(np.diff(path[:, 0, 0]) <= 0)


# --- step_mean ---------------------------------------------------------------------


def test_step_mean_unmonitored_is_pure_drift(oscillator_spec):
    spec = ModelSpec.build(1, oscillator_spec.hamiltonian, oscillator_spec.channels, [0.0])
    dm = derive_matrices(spec)
    mean = np.array([1.0, -2.0])
    out = step_mean(mean, 3 * np.eye(2), dm, [0.0], [0.37], 1e-3)
    assert np.array_equal(out, mean + dm.A @ mean * 1e-3)


def test_step_mean_dispersive_single_step(probe_spec):
    dm = derive_matrices(probe_spec)
    out = step_mean(np.zeros(2), np.eye(2), dm, [1.0], [0.1], 1e-3)
    assert np.allclose(out, [np.sqrt(2 * 0.5) * 0.1, 0.0])


def test_step_mean_uses_propagator(oscillator_spec):
    dm = derive_matrices(oscillator_spec)
    F = expm(dm.A * 0.01)
    mean = np.array([1.0, 0.5])
    out = step_mean(mean, np.eye(2), dm, [0.5], [0.0], 0.01, F)
    dW = -2 * np.sqrt(0.5) * (dm.B @ mean) * 0.01
    assert np.allclose(out, F @ mean + (np.eye(2) @ dm.B.T - dm.N.T) @ (np.sqrt(0.5) * dW))


def test_step_mean_rejects_bad_input(probe_spec):
    dm = derive_matrices(probe_spec)
    with pytest.raises(InputError):
        step_mean(np.zeros(2), np.eye(2), dm, [1.0], [0.1], 0.0)
    with pytest.raises(InputError):
        step_mean(np.zeros(2), np.eye(2), dm, [1.0], [0.1, 0.2], 1e-3)


def test_coherent_state_decays_deterministically(monitored_decay_spec):
    init = GaussianMoments.coherent(1.5)
    dt, steps = 1e-3, 1000
    for seed in (0, 1):
        _, traj = simulate_record(monitored_decay_spec, init, 0.0, dt, steps, seed)
        t = traj.times
        assert np.allclose(traj.means[:, 0], np.sqrt(2) * 1.5 * np.exp(-t / 2), rtol=1e-12)


# --- records and trajectories ---------------------------------------------------------


def test_record_shapes_and_times():
    rec = MeasurementRecord.empty(0.5, 0.1, 4, 2)
    assert rec.steps == 4 and rec.n_channels == 2
    assert np.allclose(rec.times, [0.5, 0.6, 0.7, 0.8, 0.9])
    assert rec.T == pytest.approx(0.9)
    with pytest.raises(InputError):
        MeasurementRecord(0.0, 0.0, np.zeros((3, 1)))
    with pytest.raises(InputError):
        MeasurementRecord(0.0, 0.1, np.zeros(3))


def test_record_csv_roundtrip_is_lossless(oscillator_spec, displaced_thermal, tmp_path):
    rec, _ = simulate_record(oscillator_spec, displaced_thermal, 0.25, 1e-3, 50, 4)
    text = rec.to_csv(tmp_path / "r.csv")
    assert text.splitlines()[0] == "t,dY_1"
    back = MeasurementRecord.from_csv(tmp_path / "r.csv")
    assert np.array_equal(back.increments, rec.increments)
    assert back.t0 == rec.t0 and back.dt == pytest.approx(rec.dt, rel=1e-12)


def test_record_csv_rejects_non_uniform_grid():
    with pytest.raises(InputError):
        MeasurementRecord.from_csv_text("t,dY_1\n0,0.1\n0.1,0.2\n0.3,0.1\n")


def test_simulation_is_reproducible(oscillator_spec, displaced_thermal):
    a = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 300, 11)
    b = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 300, 11)
    assert np.array_equal(a[0].increments, b[0].increments)
    assert np.array_equal(a[1].means, b[1].means)


def test_filter_reproduces_simulation(oscillator_spec, displaced_thermal):
    rec, traj = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 500, 5)
    again = filter_record(oscillator_spec, displaced_thermal, rec)
    assert np.array_equal(again.means, traj.means)
    assert np.array_equal(again.covs, traj.covs)


def test_covariance_independent_of_record(oscillator_spec, displaced_thermal):
    _, a = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 500, 1)
    _, b = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 500, 2)
    assert np.array_equal(a.covs, b.covs)
    assert not np.array_equal(a.means, b.means)


def test_trajectory_stays_physical(oscillator_spec, displaced_thermal):
    _, traj = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 2000, 3)
    for k in range(0, len(traj), 50):
        assert check_physical(traj.moments(k))[0]


def test_unmonitored_record_is_pure_noise(oscillator_spec, displaced_thermal):
    spec = ModelSpec.build(1, oscillator_spec.hamiltonian, oscillator_spec.channels, [0.0])
    dt, steps = 1e-3, 500
    rec, traj = simulate_record(spec, displaced_thermal, 0.0, dt, steps, 7)
    noise = np.random.default_rng(7).normal(0.0, np.sqrt(dt), size=(steps, 1))
    assert np.array_equal(rec.increments, noise)
    F = expm(derive_matrices(spec).A * dt)
    expected = [displaced_thermal.mean]
    for _ in range(steps):
        expected.append(F @ expected[-1])
    assert np.allclose(traj.means, expected, atol=1e-12)


def test_innovation_whiteness(oscillator_spec, displaced_thermal):
    dt = 1e-3
    rec, _ = simulate_record(oscillator_spec, GaussianMoments.vacuum(), 0.0, dt, 10_000, 9)
    assert np.var(rec.increments) == pytest.approx(dt, rel=0.1)


def test_ensemble_mean_follows_unconditional_drift(oscillator_spec, displaced_thermal):
    dt, steps, n = 1e-3, 2000, 1000
    means = simulate_ensemble_means(oscillator_spec, displaced_thermal, dt, steps, 0, n)
    ens = means.mean(axis=0)
    A = derive_matrices(oscillator_spec).A
    t = dt * np.arange(steps + 1)
    exact = np.array([expm(A * tk) @ displaced_thermal.mean for tk in t])
    rel = np.max(np.linalg.norm(ens - exact, axis=1)) / np.max(np.linalg.norm(exact, axis=1))
    assert rel < 0.05


def test_ensemble_trajectory_matches_single_simulation(oscillator_spec, displaced_thermal):
    means = simulate_ensemble_means(oscillator_spec, displaced_thermal, 1e-3, 200, 40, 3)
    _, traj = simulate_record(oscillator_spec, displaced_thermal, 0.0, 1e-3, 200, 42)
    assert np.allclose(means[2], traj.means, atol=1e-12)
