"""imu-preint command line: simulate, integrate, calibrate, fuse, evaluate, bench.

Exit codes: 0 success, 1 runtime or solver failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from pydantic import ValidationError

from imu_preint import __version__, parallel
from imu_preint.artifacts import (
    dumps_report,
    ensure_dir,
    format_table,
    get_output_dir,
    write_json_report,
    write_rows_csv,
    write_table,
)
from imu_preint.calibration import CalibrationReport, fit_constant_bias
from imu_preint.config import AppConfig, NoiseConfig, load_config, with_overrides
from imu_preint.correction import (
    ConstantDiag,
    IdentityCorrection,
    UncertaintyModel,
    apply_correction,
    load_correction_csv,
    parse_correction_spec,
    parse_uncertainty_spec,
    uncertainty_of,
    write_correction_csv,
)
from imu_preint.covariance import NoiseDiag, NoiseSeries, propagate_batched, propagate_iterative
from imu_preint.dataset_io import (
    load_cov_csv,
    load_gps_csv,
    load_groundtruth_csv,
    load_imu_csv,
    load_state_csv,
    segments,
    write_cov_csv,
    write_gps_csv,
    write_groundtruth_csv,
    write_imu_csv,
    write_state_csv,
)
from imu_preint.errors import ImuPreintError, InvalidArgumentError
from imu_preint.metrics import METRIC_NAMES, evaluate, interpolate_states
from imu_preint.pgo import keyframe_graph, solve
from imu_preint.preintegration import (
    ImuSequence,
    NavState,
    Trajectory,
    gravity_vector,
    integrate_increments,
    integrate_increments_iterative,
    predict_states,
)
from imu_preint.sim import (
    TRAJECTORY_KINDS,
    ImuBias,
    ImuNoise,
    TrajectoryParams,
    gen_trajectory,
    sample_imu,
    simulate_gps,
)
from imu_preint.utils import parse_floats, parse_names, parse_vec3

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "IMU_PREINT_LOG_LEVEL"
LOG_FORMAT = "[imu-preint] %(levelname)s %(name)s: %(message)s"
BENCH_GROUPS = ("a", "b", "c", "d")
BENCH_RATE = 200.0


def _configure_logging(verbosity: int) -> None:
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = getattr(logging, os.getenv(LOG_LEVEL_ENV, "WARNING").strip().upper(), logging.WARNING)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _out_dir(args: argparse.Namespace) -> Path:
    return ensure_dir(get_output_dir(args.out))


def _uncertainty_from_config(noise: NoiseConfig, imu: ImuSequence) -> UncertaintyModel:
    if not noise.density:
        return ConstantDiag.from_std(noise.gyro_std, noise.acc_std)
    dt = float(np.median(imu.dts())) if len(imu) else 0.0
    return ConstantDiag(NoiseDiag.from_density(noise.gyro_std, noise.acc_std, dt))


def _uncertainty(spec: str | None, cfg: AppConfig, imu: ImuSequence) -> UncertaintyModel:
    if spec:
        return parse_uncertainty_spec(spec)
    return _uncertainty_from_config(cfg.noise, imu)


def _correction(spec: str | None):
    return parse_correction_spec(spec) if spec else IdentityCorrection()


def _gravity(args: argparse.Namespace, cfg: AppConfig) -> np.ndarray:
    magnitude = cfg.gravity if getattr(args, "gravity", None) is None else args.gravity
    return gravity_vector(magnitude)


def _initial_state(gt_path: str | None, imu: ImuSequence, t0: float) -> NavState:
    if not gt_path:
        return NavState(t=t0)
    gt = load_groundtruth_csv(gt_path, origin_ns=imu.t0_ns)
    if not gt.t[0] - 1e-9 <= t0 <= gt.t[-1] + 1e-9:
        raise InvalidArgumentError(f"ground truth does not cover the IMU start time {t0}")
    return interpolate_states(gt, [t0])[0]


def cmd_simulate(args: argparse.Namespace, cfg: AppConfig) -> int:
    sim = with_overrides(
        cfg.simulate,
        {
            "traj": args.traj,
            "duration": args.duration,
            "rate": args.rate,
            "radius": args.radius,
            "omega": args.omega,
            "speed": args.speed,
            "gyro_std": args.gyro_std,
            "acc_std": args.acc_std,
            "gyro_bias": None if args.gyro_bias is None else tuple(parse_vec3(args.gyro_bias)),
            "acc_bias": None if args.acc_bias is None else tuple(parse_vec3(args.acc_bias)),
            "gps_rate": args.gps_rate,
            "gps_sigma": args.gps_sigma,
            "accel_diff": args.accel_diff,
        },
    )
    params = TrajectoryParams(radius=sim.radius, omega=sim.omega, speed=sim.speed)
    traj = gen_trajectory(sim.traj, params, sim.duration, sim.rate)
    imu = sample_imu(
        traj,
        gravity=gravity_vector(cfg.gravity),
        noise=ImuNoise(sim.gyro_std, sim.acc_std),
        bias=ImuBias(sim.gyro_bias, sim.acc_bias),
        seed=cfg.seed,
        accel_diff=sim.accel_diff,
    )
    gps = simulate_gps(traj, sim.gps_rate, sim.gps_sigma, seed=cfg.seed + 1)

    out = _out_dir(args)
    load_imu_csv(write_imu_csv(out / "imu.csv", imu))
    load_groundtruth_csv(write_groundtruth_csv(out / "gt.csv", traj))
    load_gps_csv(write_gps_csv(out / "gps.csv", gps))
    print(f"[imu-preint] simulated {sim.traj}: {len(imu)} IMU samples, {len(gps)} GPS fixes -> {out}")
    return 0


def cmd_integrate(args: argparse.Namespace, cfg: AppConfig) -> int:
    # masks only apply to training and metrics; dead reckoning needs every sample
    g = _gravity(args, cfg)
    # masks exclude evaluation windows only; dead reckoning needs every sample
    imu = load_imu_csv(args.imu)
    samples = apply_correction(imu, _correction(args.correction))

    integrate = integrate_increments_iterative if args.method == "iterative" else integrate_increments
    series = integrate(samples)
    x0 = _initial_state(args.gt, imu, float(samples.t[0]))
    _, q, v, p = predict_states(x0, series, g)
    t_end = samples.t + samples.dts()
    est = Trajectory(
        np.concatenate([[x0.t], t_end]),
        np.vstack([x0.r.q, q]),
        np.vstack([x0.v, v]),
        np.vstack([x0.p, p]),
    )

    out = _out_dir(args)
    load_state_csv(write_state_csv(out / "est.csv", est))

    if args.cov != "off":
        eta = uncertainty_of(imu, _uncertainty(args.uncertainty, cfg, imu))
        propagate = propagate_iterative if args.cov == "iterative" else propagate_batched
        cov = propagate(series, samples, eta).m
        cov = np.concatenate([np.zeros((1, 9, 9)), cov], axis=0)
        load_cov_csv(write_cov_csv(out / "cov.csv", est.t, cov))
    print(f"[imu-preint] integrated {len(samples)} samples ({args.method}, cov={args.cov}) -> {out}")
    return 0


def _training_pairs(train_dir: Path) -> list[tuple[Path, Path]]:
    if not train_dir.is_dir():
        raise FileNotFoundError(f"No such directory: {train_dir}")
    candidates = [train_dir] + sorted(p for p in train_dir.iterdir() if p.is_dir())
    return [
        (d / "imu.csv", d / "gt.csv")
        for d in candidates
        if (d / "imu.csv").is_file() and (d / "gt.csv").is_file()
    ]


def cmd_calibrate(args: argparse.Namespace, cfg: AppConfig) -> int:
    cal = with_overrides(
        cfg.calibration,
        {
            "lr": args.lr,
            "epochs": args.epochs,
            "segment_length": args.length,
            "segment_stride": args.stride,
            "weight_decay": args.weight_decay,
        },
    )
    pairs = _training_pairs(Path(args.train))
    if not pairs:
        raise InvalidArgumentError(f"no imu.csv/gt.csv pairs under {args.train}")

    sequences = []
    training = []
    for imu_path, gt_path in pairs:
        imu = load_imu_csv(imu_path)
        gt = load_groundtruth_csv(gt_path, origin_ns=imu.t0_ns)
        sequences.append(imu)
        training.extend(segments(imu, gt, cal.segment_length, cal.segment_stride, cfg.masks))
    if not training:
        raise InvalidArgumentError(
            f"no {cal.segment_length}-frame segments with ground-truth coverage under {args.train}"
        )
    logger.info("calibrating on %d segments from %d sequences", len(training), len(pairs))

    report = CalibrationReport()
    bias = fit_constant_bias(training, cal, gravity=_gravity(args, cfg), seed=cfg.seed, report=report)

    target = load_imu_csv(args.imu) if args.imu else sequences[0]
    sg, sa = bias.offsets(target)
    eta = uncertainty_of(target, _uncertainty_from_config(cfg.noise, target))
    out = _out_dir(args)
    correction_path = write_correction_csv(out / "correction.csv", target.t, sg, sa, eta.eta_gyro, eta.eta_acc)
    load_correction_csv(correction_path)

    vector = bias.as_vector()
    write_json_report(
        out / "calibration_report.json",
        {
            "b_g": bias.b_g,
            "b_a": bias.b_a,
            "correction_spec": "bias:" + ",".join(repr(float(x)) for x in vector),
            "final_loss": report.final_loss,
            "final_lr": report.final_lr,
            "iterations": report.iterations,
            "accepted": report.accepted,
            "rejected": report.rejected,
            "converged": report.converged,
            "loss_trace": report.loss_trace,
            "segments": len(training),
            "sequences": [str(p[0].parent) for p in pairs],
            "seed": report.seed,
        },
    )
    print(f"[imu-preint] b_g={bias.b_g.tolist()} b_a={bias.b_a.tolist()} loss={report.final_loss:.6g} -> {out}")
    return 0


def cmd_fuse(args: argparse.Namespace, cfg: AppConfig) -> int:
    imu = load_imu_csv(args.imu)
    gps = load_gps_csv(args.gps)
    g = _gravity(args, cfg)
    initial = _initial_state(args.gt, imu, float(gps.t[0])) if args.gt else None
    graph = keyframe_graph(
        imu,
        _correction(args.correction),
        _uncertainty(args.uncertainty, cfg, imu),
        gps,
        initial_state=initial,
        gravity=g,
    )
    options = with_overrides(
        cfg.solver,
        {
            "max_iters": args.max_iters,
            "check_jacobians": True if args.check_jacobians else None,
            "reseed_sigma0": True if args.reseed_sigma0 else None,
        },
    )
    solved, report = solve(graph, options, compute_marginals=args.marginals)

    out = _out_dir(args)
    fused = solved.trajectory()
    load_state_csv(write_state_csv(out / "fused.csv", fused))
    if args.marginals:
        load_cov_csv(write_cov_csv(out / "marginals.csv", fused.t, report.marginals))
    summary = report.to_dict()
    summary.update(
        {
            "nodes": len(solved.nodes),
            "imu_factors": len(solved.imu_factors),
            "gps_factors": len(solved.gps_factors),
        }
    )
    write_json_report(out / "solve_report.json", summary)
    if not report.converged:
        logger.warning("solver stopped without converging (%s)", report.termination)
    print(
        f"[imu-preint] fused {len(fused)} nodes: cost {report.initial_cost:.6g} -> "
        f"{report.final_cost:.6g} ({report.termination}) -> {out}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: AppConfig) -> int:
    metrics = parse_names(args.metrics, set(METRIC_NAMES))
    intervals = [float(x) for x in parse_floats(args.interval)]
    if not intervals or any(x <= 0.0 for x in intervals):
        raise InvalidArgumentError("intervals must be positive")
    est = load_state_csv(args.est)
    origin = load_imu_csv(args.imu).t0_ns if args.imu else None
    gt = load_groundtruth_csv(args.gt, origin_ns=origin)
    report = evaluate(est, gt, metrics, intervals, cfg.masks)
    print(dumps_report(report))
    if args.out:
        write_json_report(ensure_dir(Path(args.out)) / "metrics.json", report)
    return 0


def _bench_stream(frames: int, seed: int) -> ImuSequence:
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / BENCH_RATE
    w = rng.normal(0.0, 0.5, (frames, 3))
    a = rng.normal(0.0, 1.0, (frames, 3)) + np.array([0.0, 0.0, 9.81])
    return ImuSequence(t, w, a, dt=np.full(frames, 1.0 / BENCH_RATE))


def _bench_task(group: str, samples: ImuSequence, eta: NoiseSeries) -> Callable[[], object]:
    if group == "a":
        return lambda: propagate_batched(integrate_increments(samples), samples, eta)
    if group == "b":
        return lambda: integrate_increments(samples)
    if group == "c":
        return lambda: propagate_iterative(integrate_increments_iterative(samples), samples, eta)
    return lambda: integrate_increments_iterative(samples)


def _time(task: Callable[[], object], repeat: int) -> tuple[float, float]:
    task()
    elapsed = []
    for _ in range(repeat):
        start = time.perf_counter()
        task()
        elapsed.append(time.perf_counter() - start)
    arr = np.asarray(elapsed)
    return float(arr.mean()), float(arr.std(ddof=1)) if repeat > 1 else float("nan")


def run_bench(frames: Sequence[int], repeat: int, seed: int = 0) -> list[dict]:
    """Timing rows for groups a: batched + cov, b: batched, c: iterative + cov, d: iterative."""
    rows = []
    noise = NoiseDiag.from_std(0.004, 0.08)
    for n in frames:
        if n < 1:
            raise InvalidArgumentError("bench frame counts must be positive")
        samples = _bench_stream(n, seed)
        eta = NoiseSeries.constant(noise, n)
        for group in BENCH_GROUPS:
            task = _bench_task(group, samples, eta)
            if group in ("c", "d"):
                with parallel.single_threaded():
                    mean, std = _time(task, repeat)
            else:
                mean, std = _time(task, repeat)
            rows.append({"length": n, "group": group, "mean_s": mean, "std_s": std})
            logger.info("bench N=%d group %s: %.6g s", n, group, mean)
    return rows


def cmd_bench(args: argparse.Namespace, cfg: AppConfig) -> int:
    bench = with_overrides(
        cfg.bench,
        {
            "frames": None if args.frames is None else [int(x) for x in parse_floats(args.frames)],
            "repeat": args.repeat,
        },
    )
    rows = run_bench(bench.frames, bench.repeat, seed=cfg.seed)
    columns = ["length", "group", "mean_s", "std_s"]
    header = (
        f"# workers: batched={parallel.max_workers()} iterative=1 repeat={bench.repeat}\n"
        "# groups: a batched+cov, b batched, c iterative+cov, d iterative\n"
    )
    out = _out_dir(args)
    table = header + format_table(rows, columns)
    write_table(out / "bench.txt", rows, columns, header=header)
    write_rows_csv(out / "bench.csv", rows, columns)
    print(table, end="")
    return 0


def _add_common_io(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="Output directory (default: $IMU_PREINT_OUTPUT_DIR or ./outputs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imu-preint", description="IMU preintegration toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="TOML configuration file (or $IMU_PREINT_CONFIG).")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG.")
    parser.add_argument("--seed", type=int, help="Random seed (overrides config).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Synthesize imu.csv, gt.csv and gps.csv.")
    p.add_argument("--traj", choices=TRAJECTORY_KINDS)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float, help="IMU rate in Hz.")
    p.add_argument("--radius", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--speed", type=float)
    p.add_argument("--gyro-std", type=float)
    p.add_argument("--acc-std", type=float)
    p.add_argument("--gyro-bias", help="x,y,z in rad/s")
    p.add_argument("--acc-bias", help="x,y,z in m/s^2")
    p.add_argument("--gps-rate", type=float)
    p.add_argument("--gps-sigma", type=float)
    p.add_argument("--accel-diff", choices=("forward", "central"))
    _add_common_io(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("integrate", help="Dead-reckon an IMU file into est.csv (+ cov.csv).")
    p.add_argument("--imu", required=True)
    p.add_argument("--correction", help="Correction CSV, 'bias:gx,gy,gz,ax,ay,az' or 'none'.")
    p.add_argument("--uncertainty", help="Correction CSV, 'fixed:GYRO_STD,ACC_STD' or 'vinsmono'.")
    p.add_argument("--gravity", type=float, help="Gravity magnitude (m/s^2).")
    p.add_argument("--cov", choices=("batched", "iterative", "off"), default="batched")
    p.add_argument("--method", choices=("batched", "iterative"), default="batched")
    p.add_argument("--gt", help="Ground truth used for the initial state.")
    _add_common_io(p)
    p.set_defaults(handler=cmd_integrate)

    p = sub.add_parser("calibrate", help="Fit a constant bias on training sequences.")
    p.add_argument("--train", required=True, help="Directory with imu.csv/gt.csv or subdirectories of them.")
    p.add_argument("--imu", help="IMU stream the correction table is written for (default: first sequence).")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--length", type=int, help="Segment length in frames.")
    p.add_argument("--stride", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--gravity", type=float)
    _add_common_io(p)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("fuse", help="IMU + GPS pose-graph optimization.")
    p.add_argument("--imu", required=True)
    p.add_argument("--gps", required=True)
    p.add_argument("--correction")
    p.add_argument("--uncertainty")
    p.add_argument("--gravity", type=float)
    p.add_argument("--gt", help="Ground truth used for the first node.")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--check-jacobians", action="store_true")
    p.add_argument("--reseed-sigma0", action="store_true")
    p.add_argument("--marginals", action="store_true", help="Also write node marginal covariances.")
    _add_common_io(p)
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("evaluate", help="Trajectory metrics as JSON.")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--imu", help="IMU file whose first timestamp is the estimate's time origin.")
    p.add_argument("--interval", default="1.0", help="Comma-separated intervals in seconds.")
    p.add_argument("--metrics", default="roe,rpe,rrmse,prmse,ate")
    p.add_argument("--out", help="Also write metrics.json here.")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("bench", help="Batched vs iterative timing.")
    p.add_argument("--frames", help="Comma-separated stream lengths.")
    p.add_argument("--repeat", type=int)
    _add_common_io(p)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, {"seed": args.seed})
        return args.handler(args, cfg)
    except (InvalidArgumentError, FileNotFoundError, tomllib.TOMLDecodeError, ValidationError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    except (ImuPreintError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
