"""Command-line entry point: simulate, run, eval and plot."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import DatasetReader, DatasetWriter, prefetch
from .errors import BitVOError, InitializationFailed
from .evaluation import align_umeyama_sim3, associate, compute_ate, euler_traces
from .odometry import VisualOdometry
from .sim import TRAJECTORY_KINDS, TrajectoryModel, frame_times, generate_scene, iter_sequence
from .trajectory import Trajectory
from .trajio import read_tum, write_tum

EXIT_ERROR = 1
EXIT_INIT_FAILED = 3


def load_config(path, seed=None) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    if seed is not None:
        cfg = cfg.with_overrides({"vo.seed": seed})
    return cfg


def simulation_seeds(seed: int):
    """Independent scene and noise seeds derived from one user seed."""
    s = np.random.SeedSequence(seed).generate_state(2)
    return int(s[0]), int(s[1])


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    model = TrajectoryModel.preset(args.kind)
    scene_seed, seq_seed = simulation_seeds(args.seed)
    scene = generate_scene(scene_seed, cfg.sim.n_segments, cfg.sim.n_corners)
    n = len(frame_times(cfg.sim.fps, args.duration))
    gt = Trajectory()
    density = []
    with DatasetWriter(args.out, n, cfg.sim.fps) as w:
        for frame, pose in iter_sequence(scene, model, cfg.camera, cfg.noise, cfg.sim.fps, args.duration, seq_seed):
            w.write(frame)
            gt.append(frame.timestamp_ns * 1e-9, pose)
            density.append(frame.edge_density())
    write_tum(args.gt, gt)
    d = np.asarray(density)
    print(f"frames={n}")
    print(f"edge_density_mean={d.mean():.4f}")
    print(f"edge_density_min={d.min():.4f}")
    print(f"edge_density_max={d.max():.4f}")
    return 0


def run_dataset(dataset, cfg: RunConfig):
    """Replay a dataset file through the odometry. Returns ``(trajectory, vo)``."""
    reader = DatasetReader(dataset)
    vo = VisualOdometry(cfg.camera, cfg.vo, cfg.match)
    est = Trajectory()
    for frame in prefetch(reader, capacity=4):
        res = vo.process(frame)
        if res.pose_cw is not None:
            est.append(frame.timestamp_ns * 1e-9, res.pose_wc)
    return est, vo


def run_report(vo: VisualOdometry, poses: int) -> dict:
    ms = np.asarray(vo.stats.frame_seconds) * 1e3
    mean = float(ms.mean()) if len(ms) else 0.0
    return {
        "frames": vo.stats.frames,
        "init_frame": vo.stats.init_frame,
        "poses": poses,
        "mean_ms": round(mean, 4),
        "median_ms": round(float(np.median(ms)) if len(ms) else 0.0, 4),
        "mean_fps": round(1e3 / mean, 1) if mean > 0 else 0.0,
        "keyframes": vo.stats.keyframes,
        "map_points": len(vo.map),
        "lost": vo.stats.lost,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed)
    est, vo = run_dataset(args.dataset, cfg)
    if not vo.initialized:
        raise InitializationFailed(f"odometry never initialised over {vo.stats.frames} frames of {args.dataset}")
    write_tum(args.out, est)
    for k, v in run_report(vo, len(est)).items():
        print(f"{k}={v}")
    return 0


def evaluate(est: Trajectory, gt: Trajectory):
    pairs = associate(est, gt)
    alignment = align_umeyama_sim3(pairs)
    return pairs, alignment, compute_ate(pairs, alignment)


def format_ate_table(sequence: str, stats) -> str:
    return (
        "sequence length_m rmse_m median_m\n"
        f"{sequence} {stats.length:.3f} {stats.rmse:.6f} {stats.median:.6f}\n"
    )


def cmd_eval(args) -> int:
    est, gt = read_tum(args.est), read_tum(args.gt)
    _, _, stats = evaluate(est, gt)
    table = format_ate_table(args.sequence or Path(args.est).stem, stats)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return 0


PLOT_COLUMNS = (
    "t",
    "x_est", "y_est", "z_est",
    "x_gt", "y_gt", "z_gt",
    "roll_est", "pitch_est", "yaw_est",
    "roll_gt", "pitch_gt", "yaw_gt",
)  # fmt: skip


def plot_rows(est: Trajectory, gt: Trajectory):
    pairs, alignment, _ = evaluate(est, gt)
    s, R, t = alignment
    pe = s * pairs.est_positions() @ R.T + t
    pg = pairs.gt_positions()
    ee, eg = euler_traces(pairs, alignment)
    return np.column_stack([pairs.times(), pe, pg, ee, eg])


def cmd_plot(args) -> int:
    rows = plot_rows(read_tum(args.est), read_tum(args.gt))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_COLUMNS)
        for r in rows:
            w.writerow([f"{r[0]:.9f}"] + [f"{v:.6f}" for v in r[1:]])
    print(f"rows={len(rows)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitvo", description="Binary-edge visual odometry on simulated sensor frames.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic dataset and its ground truth")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=TRAJECTORY_KINDS, default="circle")
    s.add_argument("--duration", type=float, default=20.0, help="seconds")
    s.add_argument("--out", required=True, help="dataset file to write")
    s.add_argument("--gt", required=True, help="ground-truth TUM file to write")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the odometry over a dataset")
    r.add_argument("--config")
    r.add_argument("--seed", type=int, help="overrides vo.seed")
    r.add_argument("--dataset", required=True)
    r.add_argument("--out", required=True, help="estimated TUM trajectory to write")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="absolute trajectory error after similarity alignment")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--sequence", help="name in the report (default: estimate file stem)")
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("plot", help="aligned position and Euler-angle traces as CSV")
    q.add_argument("--est", required=True)
    q.add_argument("--gt", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InitializationFailed as exc:
        print(f"error: initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT_FAILED
    except (BitVOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
