"""Tests for pgo module."""

import sys
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from imu_preint.config import SolverConfig
from imu_preint.correction import ConstantBias, ConstantDiag, IdentityCorrection
from imu_preint.covariance import DIM, StateCov
from imu_preint.errors import InvalidArgumentError
from imu_preint.lie_so3 import Rotation
from imu_preint.metrics import ate, interpolate_states
from imu_preint.pgo import (
    GpsFactor,
    ImuFactor,
    PoseGraph,
    _Problem,
    gps_residual,
    imu_jacobians,
    imu_residual,
    keyframe_graph,
    numeric_imu_jacobians,
    reseed_imu_covariances,
    retract,
    solve,
)
from imu_preint.preintegration import (
    DEFAULT_GRAVITY,
    Increments,
    NavState,
    compose_increments,
    increments_between,
    integrate_increments,
    predict_state,
)
from imu_preint.sim import GpsStream, ImuBias, ImuNoise, TrajectoryParams, gen_trajectory, sample_imu, simulate_gps

GYRO_STD = 0.002
ACC_STD = 0.04
BIAS = ImuBias([0.002, -0.001, 0.001], [0.03, -0.02, 0.02])


def _random_state(rng, t=0.0):
    return NavState(Rotation.exp(rng.normal(0.0, 0.6, 3)), rng.normal(size=3), rng.normal(0.0, 3.0, 3), t)


def _random_increment(rng):
    return Increments(Rotation.exp(rng.normal(0.0, 0.3, 3)), rng.normal(size=3), rng.normal(size=3), 1.0)


def _circle(duration):
    return gen_trajectory("circle", TrajectoryParams(radius=10.0, omega=0.5), duration=duration, rate=200.0)


def _noiseless_graph(seconds=10):
    traj = _circle(float(seconds))
    truth = [traj[200 * k] for k in range(seconds + 1)]
    cov = StateCov(np.diag([1e-6] * 3 + [1e-4] * 3 + [1e-4] * 3))
    factors = [ImuFactor(k, k + 1, increments_between(truth[k], truth[k + 1]), cov) for k in range(seconds)]
    gps = [GpsFactor.isotropic(k, x.p, 0.1) for k, x in enumerate(truth)]
    return PoseGraph(truth, factors, gps, DEFAULT_GRAVITY.copy()), truth


def _ate_at_nodes(graph, traj):
    est = graph.trajectory()
    return ate(est, interpolate_states(traj, est.t))


def _fused_ate(seed, gps_rate, correction, uncertainty):
    traj = _circle(60.0)
    imu = sample_imu(traj, noise=ImuNoise(GYRO_STD, ACC_STD), bias=BIAS, seed=seed)
    gps = simulate_gps(traj, rate=gps_rate, sigma=0.1, seed=seed + 1000)
    graph = keyframe_graph(imu, correction, uncertainty, gps, initial_state=traj[0])
    fused, report = solve(graph)
    assert report.termination != "max_iters"
    return _ate_at_nodes(fused, traj)


class TestResiduals:
    def test_zero_at_prediction(self):
        rng = np.random.default_rng(0)
        x_i, inc = _random_state(rng), _random_increment(rng)
        x_j = predict_state(x_i, inc)
        assert np.allclose(imu_residual(x_i, x_j, inc), 0.0, atol=1e-12)

    def test_position_offset(self):
        rng = np.random.default_rng(1)
        x_i, inc = _random_state(rng), _random_increment(rng)
        x_j = predict_state(x_i, inc)
        moved = replace(x_j, p=x_j.p + np.array([0.1, 0.0, 0.0]))
        r = imu_residual(x_i, moved, inc)
        assert np.allclose(r[6:9], [-0.1, 0.0, 0.0], atol=1e-12)
        assert np.allclose(r[0:6], 0.0, atol=1e-12)

    def test_gps_residual(self):
        x = NavState(p=np.array([1.0, 2.0, 3.0]))
        assert np.allclose(gps_residual(x, [1.5, 2.0, 2.0]), [0.5, 0.0, -1.0])

    def test_retract_zero(self):
        x = _random_state(np.random.default_rng(2))
        y = retract(x, np.zeros(DIM))
        assert y.r.distance(x.r) == 0.0
        assert np.array_equal(y.p, x.p)


class TestJacobians:
    @pytest.mark.parametrize("seed", range(5))
    def test_analytic_matches_numeric(self, seed):
        rng = np.random.default_rng(seed)
        x_i, inc = _random_state(rng), _random_increment(rng)
        x_j = retract(predict_state(x_i, inc), rng.normal(0.0, 0.3, DIM))
        a_i, a_j = imu_jacobians(x_i, x_j, inc)
        n_i, n_j = numeric_imu_jacobians(x_i, x_j, inc)
        assert np.allclose(a_i, n_i, atol=1e-6)
        assert np.allclose(a_j, n_j, atol=1e-6)

    def test_solver_reports_jacobian_check(self):
        graph, _ = _noiseless_graph(3)
        _, report = solve(graph, SolverConfig(check_jacobians=True))
        assert report.jacobian_error is not None
        assert report.jacobian_error < 1e-5


class TestSolve:
    def test_noiseless_graph_at_truth(self):
        graph, truth = _noiseless_graph()
        fused, report = solve(graph)
        assert report.converged
        assert report.iterations <= 2
        assert report.final_cost < 1e-16
        assert all(a.r.distance(b.r) < 1e-9 for a, b in zip(fused.nodes, truth))

    def test_recovers_from_perturbed_start(self):
        graph, truth = _noiseless_graph()
        rng = np.random.default_rng(3)
        start = [retract(x, np.concatenate([rng.normal(0, 0.01, 3), rng.normal(0, 0.1, 6)])) for x in truth]
        fused, report = solve(replace(graph, nodes=start))
        assert report.converged
        assert report.final_cost < 1e-10
        assert max(np.linalg.norm(a.p - b.p) for a, b in zip(fused.nodes, truth)) < 1e-5

    def test_accepted_costs_nonincreasing(self):
        graph, truth = _noiseless_graph(5)
        rng = np.random.default_rng(4)
        start = [retract(x, rng.normal(0, 0.05, DIM)) for x in truth]
        _, report = solve(replace(graph, nodes=start))
        assert np.all(np.diff(report.costs) <= 0.0)
        assert len(report.damping) == len(report.accepted) == report.iterations

    def test_gauge_without_anchor(self):
        graph, _ = _noiseless_graph(2)
        with pytest.raises(InvalidArgumentError):
            solve(replace(graph, gps_factors=[]))

    def test_fixed_node_stays_put(self):
        graph, truth = _noiseless_graph(4)
        moved = list(truth)
        moved[2] = retract(truth[2], np.full(DIM, 0.05))
        fused, report = solve(replace(graph, nodes=moved, gps_factors=[], fixed=frozenset({0})))
        assert fused.nodes[0] is moved[0]
        assert np.linalg.norm(fused.nodes[2].p - truth[2].p) < 1e-6
        assert report.converged

    def test_all_fixed(self):
        graph, _ = _noiseless_graph(2)
        _, report = solve(replace(graph, fixed=frozenset({0, 1, 2})))
        assert report.termination == "all_fixed"

    def test_lambda_max_is_not_convergence(self):
        graph, truth = _noiseless_graph(3)
        start = [retract(x, np.full(DIM, 0.05)) for x in truth]
        options = SolverConfig(lambda_max=1e-2)
        with patch.object(_Problem, "cost", return_value=np.inf):
            fused, report = solve(replace(graph, nodes=start), options)
        assert report.termination == "lambda_max"
        assert not report.converged
        assert report.accepted == [False] * report.iterations
        assert all(a is b for a, b in zip(fused.nodes, start))

    def test_invalid_factor_index(self):
        graph, _ = _noiseless_graph(2)
        bad = ImuFactor(0, 7, Increments.identity(), StateCov(np.eye(DIM)))
        with pytest.raises(InvalidArgumentError):
            solve(replace(graph, imu_factors=[bad]))

    def test_indefinite_covariance(self):
        with pytest.raises(InvalidArgumentError):
            PoseGraph([NavState()], [], [GpsFactor(0, np.zeros(3), -np.eye(3))]).validate()

    def test_report_serializes(self):
        graph, _ = _noiseless_graph(2)
        _, report = solve(graph)
        d = report.to_dict()
        assert d["termination"] == report.termination
        assert "marginals" not in d


class TestMarginals:
    def test_marginal_blocks(self):
        graph, _ = _noiseless_graph(3)
        _, report = solve(graph, compute_marginals=True)
        m = report.marginals
        assert m.shape == (4, DIM, DIM)
        for block in m:
            assert np.allclose(block, block.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(0.5 * (block + block.T)) > 0.0)
        # GPS bounds every position marginal
        assert np.all(np.diagonal(m[:, 6:9, 6:9], axis1=1, axis2=2) <= 0.01 + 1e-9)

    def test_fixed_node_marginal_zero(self):
        graph, _ = _noiseless_graph(3)
        _, report = solve(replace(graph, fixed=frozenset({1})), compute_marginals=True)
        assert np.all(report.marginals[1] == 0.0)

    def test_reseed(self):
        traj = _circle(5.0)
        imu = sample_imu(traj)
        gps = simulate_gps(traj, rate=1.0, sigma=0.1, seed=1)
        graph = keyframe_graph(imu, IdentityCorrection(), ConstantDiag.from_std(GYRO_STD, ACC_STD), gps, initial_state=traj[0])
        zero = reseed_imu_covariances(graph, np.zeros((len(graph.nodes), DIM, DIM)))
        assert np.allclose(zero.imu_factors[0].cov.m, graph.imu_factors[0].cov.m)
        grown = reseed_imu_covariances(graph, np.tile(1e-2 * np.eye(DIM), (len(graph.nodes), 1, 1)))
        assert np.trace(grown.imu_factors[0].cov.m) > np.trace(graph.imu_factors[0].cov.m)
        _, report = solve(graph, SolverConfig(reseed_sigma0=True))
        assert report.converged


class TestKeyframeGraph:
    def test_counts(self):
        traj = _circle(10.0)
        gps = simulate_gps(traj, rate=1.0, sigma=0.1)
        graph = keyframe_graph(sample_imu(traj), IdentityCorrection(), ConstantDiag.from_std(0.01, 0.1), gps)
        assert len(graph.nodes) == 11
        assert len(graph.imu_factors) == 10
        assert len(graph.gps_factors) == 11
        assert [n.t for n in graph.nodes] == list(gps.t)

    def test_factor_increments_match_window_integration(self):
        traj = _circle(10.0)
        imu = sample_imu(traj, noise=ImuNoise(GYRO_STD, ACC_STD), seed=3)
        gps = simulate_gps(traj, rate=1.0, sigma=0.1)
        graph = keyframe_graph(imu, IdentityCorrection(), ConstantDiag.from_std(0.01, 0.1), gps)
        inc = graph.imu_factors[4].inc
        direct = integrate_increments(imu.window(4.0, 5.0)).last()
        halves = compose_increments(
            integrate_increments(imu.window(4.0, 4.37)).last(),
            integrate_increments(imu.window(4.37, 5.0)).last(),
        )
        for ref in (direct, halves):
            assert inc.dR.distance(ref.dR) < 1e-12
            assert np.allclose(inc.dv, ref.dv, atol=1e-12)
            assert np.allclose(inc.dp, ref.dp, atol=1e-12)
        assert np.isclose(inc.dt, 1.0)

    def test_correction_applied(self):
        traj = _circle(3.0)
        imu = sample_imu(traj, bias=BIAS)
        gps = simulate_gps(traj, rate=1.0, sigma=0.0)
        fixed = ConstantDiag.from_std(0.01, 0.1)
        raw = keyframe_graph(imu, IdentityCorrection(), fixed, gps, initial_state=traj[0])
        corrected = keyframe_graph(imu, ConstantBias(BIAS.b_g, BIAS.b_a), fixed, gps, initial_state=traj[0])
        assert np.linalg.norm(corrected.nodes[-1].p - traj.p[-1]) < 1e-2
        assert np.linalg.norm(raw.nodes[-1].p - traj.p[-1]) > 0.05

    def test_empty_gps(self):
        traj = _circle(2.0)
        empty = GpsStream(np.zeros(0), np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(InvalidArgumentError):
            keyframe_graph(sample_imu(traj), IdentityCorrection(), ConstantDiag(), empty)

    def test_epochs_outside_imu_range(self):
        traj = _circle(2.0)
        late = GpsStream([1.0, 5.0], np.zeros((2, 3)), [0.1, 0.1])
        with pytest.raises(InvalidArgumentError):
            keyframe_graph(sample_imu(traj), IdentityCorrection(), ConstantDiag(), late)


class TestAblation:
    def test_matched_covariance_beats_overconfident_at_1hz(self):
        matched = ConstantDiag.from_std(GYRO_STD, ACC_STD)
        overconfident = ConstantDiag.from_std(0.01 * GYRO_STD, 0.01 * ACC_STD)
        good = [_fused_ate(seed, 1.0, IdentityCorrection(), matched) for seed in range(10)]
        bad = [_fused_ate(seed, 1.0, IdentityCorrection(), overconfident) for seed in range(10)]
        assert np.median(good) <= 0.8 * np.median(bad)

    def test_corrected_matched_beats_raw_fixed_at_point1hz(self):
        correction = ConstantBias(BIAS.b_g, BIAS.b_a)
        matched = ConstantDiag.from_std(GYRO_STD, ACC_STD)
        good = [_fused_ate(seed, 0.1, correction, matched) for seed in range(10)]
        bad = [_fused_ate(seed, 0.1, IdentityCorrection(), ConstantDiag.from_std(0.004, 0.08)) for seed in range(10)]
        assert np.median(good) <= 0.5 * np.median(bad)

    def test_inflated_imu_covariance_falls_back_to_gps(self):
        traj = _circle(20.0)
        imu = sample_imu(traj, noise=ImuNoise(GYRO_STD, ACC_STD), bias=BIAS, seed=5)
        gps = simulate_gps(traj, rate=1.0, sigma=0.1, seed=6)
        graph = keyframe_graph(imu, IdentityCorrection(), ConstantDiag.from_std(GYRO_STD, ACC_STD), gps,
                               initial_state=traj[0])
        weak = [replace(f, cov=StateCov(f.cov.m * 1e6)) for f in graph.imu_factors]
        fused, _ = solve(replace(graph, imu_factors=weak))
        for g in graph.gps_factors:
            assert np.linalg.norm(fused.nodes[g.i].p - g.p_hat) <= 2.0 * 0.1
