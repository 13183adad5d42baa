"""Tests for sim module."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from imu_preint.errors import InvalidArgumentError
from imu_preint.preintegration import DEFAULT_GRAVITY, integrate_increments, predict_states
from imu_preint.sim import (
    ImuBias,
    ImuNoise,
    TrajectoryParams,
    gen_trajectory,
    sample_imu,
    sample_times,
    simulate_gps,
)


class TestTrajectories:
    def test_rest_is_constant(self):
        traj = gen_trajectory("rest", TrajectoryParams(center=(1.0, 2.0, 3.0)), duration=2.0)
        assert np.allclose(traj.p, [1.0, 2.0, 3.0])
        assert np.all(traj.v == 0.0)
        assert np.allclose(traj.q, traj.q[0])

    def test_circle_speed(self):
        traj = gen_trajectory("circle", TrajectoryParams(radius=4.0, omega=0.25), duration=10.0)
        assert np.allclose(np.linalg.norm(traj.v, axis=1), 1.0)

    def test_line_heading(self):
        traj = gen_trajectory("line", TrajectoryParams(speed=3.0, heading=np.pi / 2), duration=1.0)
        assert np.allclose(traj.p[-1], [0.0, 3.0, 0.0], atol=1e-12)

    def test_figure8_continuity(self):
        rate = 100.0
        traj = gen_trajectory("figure8", TrajectoryParams(height_amplitude=1.0), duration=20.0, rate=rate)
        gaps = np.linalg.norm(np.diff(traj.p, axis=0), axis=1)
        assert gaps.max() < np.linalg.norm(traj.v, axis=1).max() / rate

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError):
            gen_trajectory("spiral")

    def test_sample_times(self):
        t = sample_times(1.0, 200.0)
        assert len(t) == 201
        assert t[-1] == 1.0

    def test_bad_rate(self):
        with pytest.raises(InvalidArgumentError):
            sample_times(1.0, 0.0)


class TestSampleImu:
    def test_rest_reads_gravity(self):
        imu = sample_imu(gen_trajectory("rest", duration=1.0))
        assert np.allclose(imu.w, 0.0)
        assert np.allclose(imu.a, [0.0, 0.0, 9.81])

    def test_reintegration_reproduces_velocity(self):
        traj = gen_trajectory("circle", duration=5.0)
        imu = sample_imu(traj)
        _, _, v, p = predict_states(traj[0], integrate_increments(imu), DEFAULT_GRAVITY)
        # state k+1 is reached after integrating sample k
        assert np.allclose(v[:-1], traj.v[1:], atol=1e-9)
        assert np.max(np.linalg.norm(p[:-1] - traj.p[1:], axis=1)) < 1e-3

    def test_bias_added(self):
        traj = gen_trajectory("line", duration=1.0)
        clean = sample_imu(traj)
        biased = sample_imu(traj, bias=ImuBias([0.1, 0.0, 0.0], [0.0, 0.2, 0.0]))
        assert np.allclose(biased.w - clean.w, [0.1, 0.0, 0.0])
        assert np.allclose(biased.a - clean.a, [0.0, 0.2, 0.0])

    def test_noise_statistics(self):
        traj = gen_trajectory("rest", duration=50.0)
        imu = sample_imu(traj, noise=ImuNoise(0.01, 0.1), seed=3)
        assert np.isclose(imu.w.std(), 0.01, rtol=0.05)
        assert np.isclose((imu.a - [0.0, 0.0, 9.81]).std(), 0.1, rtol=0.05)

    def test_seed_reproducible(self):
        traj = gen_trajectory("circle", duration=1.0)
        a = sample_imu(traj, noise=ImuNoise(0.01, 0.1), seed=5)
        b = sample_imu(traj, noise=ImuNoise(0.01, 0.1), seed=5)
        assert np.array_equal(a.w, b.w)

    def test_central_differences(self):
        traj = gen_trajectory("circle", duration=2.0)
        forward = sample_imu(traj)
        central = sample_imu(traj, accel_diff="central")
        assert np.allclose(forward.a, central.a, atol=0.05)
        with pytest.raises(InvalidArgumentError):
            sample_imu(traj, accel_diff="backward")

    def test_central_leaves_velocity_offset(self):
        traj = gen_trajectory("circle", duration=5.0)
        imu = sample_imu(traj, accel_diff="central")
        _, _, v, _ = predict_states(traj[0], integrate_increments(imu), DEFAULT_GRAVITY)
        err = np.linalg.norm(v[:-1] - traj.v[1:], axis=1)
        assert err.max() > 1e-5
        assert err.max() < np.linalg.norm(np.diff(traj.v, axis=0), axis=1).max() * 2.0

    def test_negative_noise(self):
        with pytest.raises(InvalidArgumentError):
            ImuNoise(-0.1, 0.0)

    def test_too_short(self):
        traj = gen_trajectory("rest", duration=0.005)
        with pytest.raises(InvalidArgumentError):
            sample_imu(traj)


class TestSimulateGps:
    def test_noiseless_epochs_exact(self):
        traj = gen_trajectory("circle", duration=10.0)
        gps = simulate_gps(traj, rate=1.0, sigma=0.0)
        assert len(gps) == 11
        assert np.allclose(gps.p, traj.p[::200])

    def test_epoch_count(self):
        gps = simulate_gps(gen_trajectory("line", duration=60.0), rate=1.0)
        assert len(gps) == 61
        assert np.allclose(gps.sigma, 0.1)

    def test_low_rate(self):
        gps = simulate_gps(gen_trajectory("line", duration=60.0), rate=0.1)
        assert gps.t.tolist() == [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0]

    def test_noise_std(self):
        traj = gen_trajectory("rest", duration=10_000.0, rate=1.0)
        gps = simulate_gps(traj, rate=1.0, sigma=0.1, seed=9)
        assert np.isclose(gps.p.std(), 0.1, rtol=0.05)

    def test_invalid(self):
        traj = gen_trajectory("rest", duration=1.0)
        with pytest.raises(InvalidArgumentError):
            simulate_gps(traj, rate=0.0)
        with pytest.raises(InvalidArgumentError):
            simulate_gps(traj, sigma=-1.0)
