"""Command-line interface.

Subcommands:
  simulate  --spec F --out-dir D          write a synthetic bundle
  localize  --matches F --intrinsics F --out F   camera pose per query frame
  fuse      --sequence F --scene F --config F --out F [--baseline B]
  evaluate  --result F --truth F --scene F --report F

Every failure exits nonzero with a stage-named diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="posefusion",
        description="Drift-free human trajectory and pose recovery from "
        "IMU streams, camera self-localization, and scene contacts.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic data bundle")
    sim.add_argument("--spec", required=True, help="SimSpec JSON file")
    sim.add_argument("--out-dir", required=True, help="output directory")

    loc = sub.add_parser("localize", help="camera pose from 2D-3D matches")
    loc.add_argument("--matches", required=True, help="correspondence JSONL")
    loc.add_argument("--intrinsics", required=True, help="intrinsics JSON")
    loc.add_argument("--out", required=True, help="output trajectory JSONL")
    loc.add_argument("--px-threshold", type=float, default=4.0)
    loc.add_argument("--max-iter", type=int, default=1000)
    loc.add_argument("--seed", type=int, default=0)

    fuse = sub.add_parser("fuse", help="run the joint optimization pipeline")
    fuse.add_argument("--sequence", required=True, help="sequence JSONL")
    fuse.add_argument("--scene", required=True, help="scene PLY or JSON")
    fuse.add_argument("--config", default=None, help="FusionConfig JSON")
    fuse.add_argument("--out", required=True, help="output result JSONL")
    fuse.add_argument(
        "--baseline",
        choices=["imu", "imu-cam", "imu-cam-filtered", "no-scene"],
        default=None,
        help="replace the full pipeline by an ablation baseline",
    )
    fuse.add_argument("--skeleton", default=None, help="skeleton JSON (default: bundled)")
    fuse.add_argument("--scale", type=float, default=1.0, help="subject scale factor")

    ev = sub.add_parser("evaluate", help="metrics against ground truth")
    ev.add_argument("--result", required=True, help="result JSONL")
    ev.add_argument("--truth", required=True, help="ground-truth sequence JSONL")
    ev.add_argument("--scene", required=True, help="scene PLY or JSON")
    ev.add_argument("--report", required=True, help="output MetricsReport JSON")
    ev.add_argument("--skeleton", default=None, help="skeleton JSON (default: bundled)")
    ev.add_argument("--scale", type=float, default=1.0, help="subject scale factor")
    return p


def _fail(stage: str, exc: Exception) -> int:
    print(f"posefusion {stage}: {exc}", file=sys.stderr)
    return 1


def _cmd_simulate(args) -> int:
    from .scene import save_scene
    from .sequence import save_sequence
    from .simulate import generate, load_spec

    try:
        spec = load_spec(args.spec)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        return _fail("simulate[spec]", e)
    try:
        bundle = generate(spec)
    except Exception as e:
        return _fail("simulate[generate]", e)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_sequence(bundle.clean, out / "clean.jsonl")
    save_sequence(bundle.corrupted, out / "corrupted.jsonl")
    save_scene(bundle.scene, out / "scene.json")
    print(
        f"wrote {len(bundle.clean)} frames and a {len(bundle.scene.points)}-point "
        f"scene to {out}"
    )
    return 0


def _cmd_localize(args) -> int:
    from .localization import (
        CameraTrajectory,
        load_intrinsics,
        load_matches,
        ransac_localize,
        save_trajectory,
    )

    try:
        K = load_intrinsics(args.intrinsics)
        frames = load_matches(args.matches)
    except Exception as e:
        return _fail("localize[input]", e)
    if not frames:
        return _fail("localize[input]", ValueError("matches file has no frames"))
    ts, valid, Rs, t = [], [], [], []
    n_ok = 0
    for i, fr in enumerate(frames):
        ts.append(fr["timestamp"])
        try:
            est, _ = ransac_localize(
                fr["pixels"],
                fr["world"],
                K,
                px_threshold=args.px_threshold,
                max_iter=args.max_iter,
                seed=args.seed + i,
                timestamp=fr["timestamp"],
            )
        except Exception:
            est = None
        if est is not None and est.valid:
            n_ok += 1
            valid.append(True)
            Rs.append(est.R_C)
            t.append(est.t_C)
        else:
            valid.append(False)
            Rs.append(np.eye(3))
            t.append(np.zeros(3))
    try:
        traj = CameraTrajectory(
            timestamps=np.asarray(ts), valid=np.asarray(valid), R=np.stack(Rs), t=np.stack(t)
        )
        save_trajectory(traj, args.out)
    except Exception as e:
        return _fail("localize[output]", e)
    print(f"localized {n_ok}/{len(frames)} frames -> {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    from .body import load_skeleton
    from .config import FusionConfig, load_config
    from .fusion import run_baseline
    from .scene import build_index, load_scene
    from .sequence import load_sequence, save_result

    try:
        seq = load_sequence(args.sequence, scale=args.scale)
    except Exception as e:
        return _fail("fuse[sequence]", e)
    try:
        scene = load_scene(args.scene)
        idx = build_index(scene)
    except Exception as e:
        return _fail("fuse[scene]", e)
    try:
        cfg = load_config(args.config) if args.config else FusionConfig()
    except Exception as e:
        return _fail("fuse[config]", e)
    try:
        sk = load_skeleton(args.skeleton)
        if args.scale != 1.0:
            sk = sk.with_scale(args.scale)
    except Exception as e:
        return _fail("fuse[skeleton]", e)
    try:
        out = run_baseline(seq, idx, cfg, sk, args.baseline)
    except Exception as e:
        return _fail("fuse[optimize]", e)
    try:
        save_result(out.timestamps, out.theta, out.trans, args.out)
    except OSError as e:
        return _fail("fuse[output]", e)
    label = args.baseline or "full"
    print(f"fused {len(out.timestamps)} frames ({label}) -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .body import load_skeleton
    from .metrics import (
        MetricsReport,
        drift_curve,
        foot_metrics,
        save_drift_csv,
        sequence_chamfer,
    )
    from .scene import build_index, load_scene
    from .sequence import load_result, load_sequence

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        ts, theta, trans = load_result(args.result)
        truth = load_sequence(args.truth, scale=args.scale)
    except Exception as e:
        return _fail("evaluate[input]", e)
    if len(truth) != len(ts):
        return _fail(
            "evaluate[input]",
            ValueError(f"result has {len(ts)} frames, truth has {len(truth)}"),
        )
    try:
        scene = load_scene(args.scene)
        idx = build_index(scene)
    except Exception as e:
        return _fail("evaluate[scene]", e)
    try:
        sk = load_skeleton(args.skeleton)
        if args.scale != 1.0:
            sk = sk.with_scale(args.scale)
    except Exception as e:
        return _fail("evaluate[skeleton]", e)
    timings["load"] = time.perf_counter() - t0
    try:
        t0 = time.perf_counter()
        ch = sequence_chamfer(sk, theta, trans, truth.theta_imu, truth.t_imu)
        timings["chamfer"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        dist, slide = foot_metrics(theta, trans, idx, truth.contacts, sk)
        timings["foot"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        curve = drift_curve(trans, truth.t_imu, rate_hz=truth.rate_hz)
        timings["drift"] = time.perf_counter() - t0
    except Exception as e:
        return _fail("evaluate[metrics]", e)
    report = MetricsReport(
        chamfer_cm=ch,
        dist_to_surface_cm=dist,
        foot_sliding_cm=slide,
        drift_curve=curve,
        timings_s=timings,
    )
    try:
        report.to_json(args.report)
        save_drift_csv(curve, Path(args.report).with_suffix(".csv"))
    except OSError as e:
        return _fail("evaluate[output]", e)
    slide_s = "n/a" if slide is None else f"{slide:.3f}"
    dist_s = "n/a" if dist is None else f"{dist:.3f}"
    print(
        f"chamfer {ch:.3f} cm | dist-to-surface {dist_s} cm | sliding {slide_s} cm | "
        f"{len(curve)} drift milestones -> {args.report}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "simulate": _cmd_simulate,
        "localize": _cmd_localize,
        "fuse": _cmd_fuse,
        "evaluate": _cmd_evaluate,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
