"""Tests for the imu-preint command line."""

import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from imu_preint.cli import main, run_bench
from imu_preint.dataset_io import load_cov_csv, load_groundtruth_csv, load_state_csv, write_state_csv
from imu_preint.metrics import evaluate

B_G = (0.02, -0.01, 0.005)
B_A = (0.05, 0.0, -0.03)


@pytest.fixture(autouse=True)
def _restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def _simulate(out, *extra):
    code = main(["--seed", "4", "simulate", "--out", str(out), *extra])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def noisy_run(tmp_path_factory):
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    out = tmp_path_factory.mktemp("sim")
    main([
        "--seed", "1", "simulate", "--out", str(out), "--duration", "20",
        "--gyro-std", "0.002", "--acc-std", "0.04",
        "--gyro-bias", ",".join(map(str, B_G)), "--acc-bias", ",".join(map(str, B_A)),
    ])
    root.handlers[:] = handlers
    root.setLevel(level)
    return out


class TestSimulate:
    def test_writes_three_files(self, tmp_path):
        out = _simulate(tmp_path / "a", "--duration", "2")
        assert sorted(p.name for p in out.iterdir()) == ["gps.csv", "gt.csv", "imu.csv"]
        assert len(pd.read_csv(out / "imu.csv")) == 401

    def test_seed_reproducible(self, tmp_path):
        a = _simulate(tmp_path / "a", "--duration", "2", "--gyro-std", "0.01")
        b = _simulate(tmp_path / "b", "--duration", "2", "--gyro-std", "0.01")
        for name in ("imu.csv", "gt.csv", "gps.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_traj_kind(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["simulate", "--traj", "spiral", "--out", str(tmp_path)])
        assert excinfo.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_out_from_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IMU_PREINT_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["simulate", "--duration", "1"]) == 0
        assert (tmp_path / "env" / "imu.csv").exists()


class TestIntegrate:
    def test_batched_matches_iterative(self, tmp_path):
        sim = _simulate(tmp_path / "sim", "--duration", "3")
        args = ["--imu", str(sim / "imu.csv"), "--gt", str(sim / "gt.csv"), "--uncertainty", "vinsmono"]
        assert main(["integrate", *args, "--out", str(tmp_path / "fast")]) == 0
        assert main(["integrate", *args, "--method", "iterative", "--cov", "iterative", "--out", str(tmp_path / "slow")]) == 0
        fast = load_state_csv(tmp_path / "fast" / "est.csv")
        slow = load_state_csv(tmp_path / "slow" / "est.csv")
        assert len(fast) == 602
        assert np.allclose(fast.p, slow.p, atol=1e-8)
        _, c_fast = load_cov_csv(tmp_path / "fast" / "cov.csv")
        _, c_slow = load_cov_csv(tmp_path / "slow" / "cov.csv")
        assert np.all(c_fast[0] == 0.0)
        assert np.linalg.norm(c_fast - c_slow) <= 1e-8 * np.linalg.norm(c_slow)

    def test_dead_reckoning_follows_truth(self, tmp_path):
        sim = _simulate(tmp_path / "sim", "--duration", "3")
        assert main(["integrate", "--imu", str(sim / "imu.csv"), "--gt", str(sim / "gt.csv"), "--out", str(tmp_path)]) == 0
        est = load_state_csv(tmp_path / "est.csv")
        gt = load_groundtruth_csv(sim / "gt.csv")
        assert np.max(np.linalg.norm(est.p[:-1] - gt.p, axis=1)) < 1e-3

    def test_cov_off(self, tmp_path):
        sim = _simulate(tmp_path / "sim", "--duration", "1")
        assert main(["integrate", "--imu", str(sim / "imu.csv"), "--cov", "off", "--out", str(tmp_path / "o")]) == 0
        assert not (tmp_path / "o" / "cov.csv").exists()
        assert (tmp_path / "o" / "est.csv").exists()

    def test_masks_do_not_drop_samples(self, tmp_path):
        sim = _simulate(tmp_path / "sim", "--duration", "10")
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("masks = [[4.0, 5.0]]\n")
        args = ["--imu", str(sim / "imu.csv"), "--gt", str(sim / "gt.csv"), "--cov", "off"]
        assert main(["integrate", *args, "--out", str(tmp_path / "plain")]) == 0
        assert main(["--config", str(cfg), "integrate", *args, "--out", str(tmp_path / "masked")]) == 0
        plain = (tmp_path / "plain" / "est.csv").read_bytes()
        assert (tmp_path / "masked" / "est.csv").read_bytes() == plain
        est = load_state_csv(tmp_path / "masked" / "est.csv")
        gt = load_groundtruth_csv(sim / "gt.csv")
        assert len(est) == 2001 + 1
        assert np.linalg.norm(est.p[-2] - gt.p[-1]) < 1e-3

    def test_missing_input(self, tmp_path, capsys):
        assert main(["integrate", "--imu", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == 2
        assert "Error:" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("gravity = [\n")
        assert main(["--config", str(cfg), "bench", "--frames", "1", "--repeat", "1", "--out", str(tmp_path)]) == 2


class TestCalibrate:
    def test_recovers_bias(self, tmp_path):
        train = _simulate(
            tmp_path / "train", "--duration", "40",
            "--gyro-bias", ",".join(map(str, B_G)), "--acc-bias", ",".join(map(str, B_A)),
        )
        out = tmp_path / "cal"
        assert main(["calibrate", "--train", str(train), "--lr", "0.002", "--epochs", "300", "--out", str(out)]) == 0
        report = json.loads((out / "calibration_report.json").read_text())
        assert report["segments"] == 8
        assert np.linalg.norm(np.subtract(report["b_g"], B_G)) <= 0.05 * np.linalg.norm(B_G)
        assert np.linalg.norm(np.subtract(report["b_a"], B_A)) <= 0.05 * np.linalg.norm(B_A)
        assert report["correction_spec"].startswith("bias:")
        table = pd.read_csv(out / "correction.csv")
        assert len(table) == 8001
        assert np.allclose(table["sg_x"], -report["b_g"][0])

    def test_deterministic(self, tmp_path):
        train = _simulate(tmp_path / "train", "--duration", "10", "--acc-bias", "0.02,0,0")
        args = ["calibrate", "--train", str(train), "--epochs", "20", "--length", "500"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "calibration_report.json").read_bytes()
        assert a == (tmp_path / "b" / "calibration_report.json").read_bytes()

    def test_empty_train_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["calibrate", "--train", str(tmp_path / "empty"), "--out", str(tmp_path)]) == 2


class TestFuse:
    @pytest.mark.parametrize(
        "correction,uncertainty",
        [
            ("none", "vinsmono"),
            ("none", "fixed:0.002,0.04"),
            ("bias:" + ",".join(map(str, B_G + B_A)), "vinsmono"),
            ("bias:" + ",".join(map(str, B_G + B_A)), "fixed:0.002,0.04"),
        ],
    )
    def test_configurations(self, noisy_run, tmp_path, correction, uncertainty):
        out = tmp_path / "fuse"
        code = main([
            "fuse", "--imu", str(noisy_run / "imu.csv"), "--gps", str(noisy_run / "gps.csv"),
            "--gt", str(noisy_run / "gt.csv"), "--correction", correction, "--uncertainty", uncertainty,
            "--out", str(out),
        ])
        assert code == 0
        report = json.loads((out / "solve_report.json").read_text())
        assert report["converged"]
        assert report["nodes"] == 21
        assert report["imu_factors"] == 20
        assert len(load_state_csv(out / "fused.csv")) == 21

    def test_marginals_and_jacobian_check(self, noisy_run, tmp_path):
        code = main([
            "fuse", "--imu", str(noisy_run / "imu.csv"), "--gps", str(noisy_run / "gps.csv"),
            "--gt", str(noisy_run / "gt.csv"), "--check-jacobians", "--marginals", "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "solve_report.json").read_text())
        assert report["jacobian_error"] < 1e-5
        t, m = load_cov_csv(tmp_path / "marginals.csv")
        assert m.shape == (21, 9, 9)

    def test_non_overlapping_times(self, noisy_run, tmp_path):
        gps = tmp_path / "late.csv"
        gps.write_text("t,px,py,pz,sigma\n100,0,0,0,0.1\n101,1,0,0,0.1\n")
        code = main(["fuse", "--imu", str(noisy_run / "imu.csv"), "--gps", str(gps), "--out", str(tmp_path)])
        assert code == 2


class TestEvaluate:
    def _gt_as_est(self, sim, path):
        gt = load_groundtruth_csv(sim / "gt.csv")
        write_state_csv(path, gt)
        return gt

    def test_identical_is_zero(self, tmp_path, capsys):
        sim = _simulate(tmp_path / "sim", "--duration", "3")
        self._gt_as_est(sim, tmp_path / "est.csv")
        code = main(["evaluate", "--est", str(tmp_path / "est.csv"), "--gt", str(sim / "gt.csv"), "--out", str(tmp_path)])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"roe", "rpe", "rrmse", "prmse", "ate"}
        assert all(abs(entry["value"]) < 1e-9 for entry in report.values())
        assert (tmp_path / "metrics.json").exists()

    def test_matches_library(self, noisy_run, tmp_path):
        out = tmp_path / "int"
        assert main(["integrate", "--imu", str(noisy_run / "imu.csv"), "--gt", str(noisy_run / "gt.csv"), "--cov", "off", "--out", str(out)]) == 0
        code = main([
            "evaluate", "--est", str(out / "est.csv"), "--gt", str(noisy_run / "gt.csv"),
            "--imu", str(noisy_run / "imu.csv"), "--interval", "1,2", "--metrics", "rpe,ate", "--out", str(tmp_path),
        ])
        assert code == 0
        written = json.loads((tmp_path / "metrics.json").read_text())
        direct = evaluate(load_state_csv(out / "est.csv"), load_groundtruth_csv(noisy_run / "gt.csv"), ["rpe", "ate"], [1.0, 2.0])
        assert np.isclose(written["ate"]["value"], direct["ate"]["value"], rtol=1e-12)
        assert np.isclose(written["rpe"]["2"]["value"], direct["rpe"]["2"]["value"], rtol=1e-12)

    def test_unknown_metric(self, tmp_path):
        sim = _simulate(tmp_path / "sim", "--duration", "1")
        self._gt_as_est(sim, tmp_path / "est.csv")
        code = main(["evaluate", "--est", str(tmp_path / "est.csv"), "--gt", str(sim / "gt.csv"), "--metrics", "bogus"])
        assert code == 2


class TestBench:
    def test_rows(self):
        rows = run_bench([1, 8], repeat=2)
        assert [(r["length"], r["group"]) for r in rows] == [
            (n, g) for n in (1, 8) for g in ("a", "b", "c", "d")
        ]
        assert all(r["mean_s"] > 0.0 for r in rows)

    def test_batched_at_least_ten_times_faster(self):
        rows = {r["group"]: r["mean_s"] for r in run_bench([1000], repeat=5)}
        assert rows["c"] / rows["a"] >= 10.0

    def test_repeat_one_has_no_std(self, tmp_path):
        assert main(["bench", "--frames", "1,4", "--repeat", "1", "--out", str(tmp_path)]) == 0
        frame = pd.read_csv(tmp_path / "bench.csv")
        assert list(frame.columns) == ["length", "group", "mean_s", "std_s"]
        assert frame["std_s"].isna().all()
        assert (tmp_path / "bench.txt").read_text().startswith("# workers:")

    def test_bad_frames(self, tmp_path):
        assert main(["bench", "--frames", "0", "--repeat", "1", "--out", str(tmp_path)]) == 2
