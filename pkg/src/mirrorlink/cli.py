"""Single entry point wiring the harness: serve, record, replay, eval,
align, latency, stats, heatmap. Every subcommand is deterministic given its
inputs and seeds, and emits one JSON document under --json.

Exit codes: 0 success, 1 task failure (failed trial, replay divergence),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, HarnessConfig


def _emit(args, payload: dict, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human if human is not None else json.dumps(payload, indent=2, sort_keys=True))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="emit one machine-readable JSON document")
    p.add_argument("--config", help="harness config file (default: $MIRRORLINK_CONFIG)")


def _config(args) -> HarnessConfig:
    cfg = getattr(args, "_cfg", None)
    return cfg if cfg is not None else HarnessConfig.load(getattr(args, "config", None))


# -- serve ----------------------------------------------------------------


def cmd_serve(args) -> int:
    from .server import StreamServer

    cfg = _config(args)
    server = StreamServer(
        bind=args.bind or cfg.bind,
        port=args.port or cfg.port,
        tick_hz=args.tick_hz or cfg.tick_hz,
        task_id=args.task,
        seed=args.seed,
        filter_cfg=cfg.filter,
        dataset_dir=args.dataset_dir or cfg.dataset_dir,
        manifest_dir=cfg.task_dir,
        teleop_hz_expected=args.teleop_hz_expected or cfg.teleop_hz_expected,
    )
    server.start()
    print(f"serving {args.task} on {server.url} (tick {server.tick_hz} Hz); Ctrl-C to stop", file=sys.stderr)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


# -- record / replay ---------------------------------------------------------


def cmd_record(args) -> int:
    from .dataset import EpisodeHeader, build_index, record_episode
    from .evaluation import DEFAULT_MAX_TICKS
    from .kinematics import load_robot_model
    from .policy import ClosedLoopConfig, run_closed_loop
    from .scene import reset_scene
    from .evaluation import _make_policy

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_robot_model()
    written = []
    failures = 0
    for i in range(args.count):
        seed = args.seed + i
        scene = reset_scene(args.task, seed, model, cfg.task_dir)
        policy = _make_policy(args.policy, scene, model, {"horizon": 16, "chunk_every": 8})
        loop_cfg = ClosedLoopConfig(
            max_ticks=args.max_ticks or DEFAULT_MAX_TICKS[args.task], filter=cfg.filter
        )
        result = run_closed_loop(scene, policy, loop_cfg)
        header = EpisodeHeader(
            task_id=args.task,
            seed=seed,
            instruction=scene.task.instruction,
            object_count=len(scene.objects),
            frame_count=len(result.frames),
            tick_hz=scene.tick_hz,
            model_version=model.model_version,
            task_version=scene.task.task_version,
            object_ids=[o.object_id for o in scene.ordered_objects()],
            success=result.success,
        )
        path = out / f"{args.task}_seed{seed:06d}.bin"
        digest = record_episode(result.frames, header, path)
        written.append(
            {"file": str(path), "seed": seed, "success": result.success,
             "frames": len(result.frames), "digest": digest}
        )
        failures += 0 if result.success else 1
    build_index(out)
    _emit(
        args,
        {"episodes": written, "failures": failures},
        "\n".join(f"{w['file']} success={w['success']} frames={w['frames']}" for w in written),
    )
    return 1 if failures else 0


def cmd_replay(args) -> int:
    from .dataset import DivergenceDetected, VersionMismatch, replay_episode

    cfg = _config(args)
    try:
        result = replay_episode(args.episode, manifest_dir=cfg.task_dir)
    except (DivergenceDetected, VersionMismatch) as exc:
        _emit(args, {"ok": False, "error": str(exc)}, f"FAIL: {exc}")
        return 1
    ok = result.success_recorded is None or result.success_replayed == result.success_recorded
    payload = {
        "ok": bool(ok),
        "frames": result.frames,
        "success_replayed": bool(result.success_replayed),
        "success_recorded": result.success_recorded,
        "detail": {k: bool(v) for k, v in result.detail.items()},
    }
    _emit(
        args,
        payload,
        f"replayed {result.frames} frames, success={result.success_replayed} "
        f"(recorded {result.success_recorded})",
    )
    return 0 if ok else 1


# -- eval / stats / heatmap ----------------------------------------------------


def cmd_eval(args) -> int:
    from .evaluation import (
        DEFAULT_TRIALS,
        EvalPlan,
        build_heatmap,
        report_markdown,
        run_evaluation,
        write_heatmap,
        write_report,
    )

    cfg = _config(args)
    if args.plan:
        plan = EvalPlan.from_dict(json.loads(Path(args.plan).read_text()))
    else:
        counts = (
            {t: args.trials for t in DEFAULT_TRIALS} if args.trials else dict(DEFAULT_TRIALS)
        )
        plan = EvalPlan.default(counts, policy=args.policy or cfg.policy)
    if args.jobs:
        plan.jobs = args.jobs
    if args.seed_base:
        for tp in plan.tasks:
            tp.seed_base = args.seed_base
    report = run_evaluation(plan)
    files = []
    if args.out:
        files += [str(p) for p in write_report(report, args.out, figures=args.figures)]
        for tp in plan.tasks:
            grid = build_heatmap(report.trials, tp.task_id, (args.bins, args.bins))
            files += [str(p) for p in write_heatmap(grid, args.out, figures=args.figures)]
    payload = report.to_dict()
    payload["files"] = files
    _emit(args, payload, report_markdown(report) + ("\n".join(files) if files else ""))
    all_pass = all(t["successes"] == t["trials"] for t in report.tasks.values())
    return 0 if all_pass or args.allow_failures else 1


def cmd_stats(args) -> int:
    from .dataset import dataset_stats, load_index

    stats = dataset_stats(load_index(args.dataset))
    per_task = "\n".join(f"  {k}: {v}" for k, v in stats["per_task"].items())
    _emit(
        args,
        stats,
        f"episodes by task:\n{per_task}\ntotal {stats['total']}, "
        f"mean duration {stats['mean_duration_s']} s",
    )
    return 0


def cmd_heatmap(args) -> int:
    from .evaluation import TrialRecord, build_heatmap, write_heatmap

    data = json.loads(Path(args.report).read_text())
    records = [
        TrialRecord(
            t["task_id"], t["seed"], t["success"], t["ticks"], tuple(t["spawn"])
        )
        for t in data["trials"]
    ]
    nx, ny = (int(v) for v in args.bins.split(","))
    grid = build_heatmap(records, args.task, (nx, ny))
    files = [str(p) for p in write_heatmap(grid, args.out, figures=args.figures)]
    _emit(args, {"grid": grid.to_dict(), "files": files}, "\n".join(files))
    return 0


# -- align ----------------------------------------------------------------------


def cmd_align(args) -> int:
    from . import alignment as al

    if args.mode == "umeyama":
        src = al.read_ply(args.source)
        dst = al.read_ply(args.target)
        if src.shape != dst.shape:
            print("umeyama requires corresponded clouds of equal size", file=sys.stderr)
            return 2
        t = al.estimate_similarity(src, dst, with_scale=not args.no_scale)
        payload = al.transform_to_dict(t)
        residual = al.apply_similarity(t, src) - dst
        payload["rmse"] = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    elif args.mode == "icp":
        src = al.read_ply(args.source)
        dst = al.read_ply(args.target)
        res = al.icp_register(
            src, dst, max_iterations=args.max_iterations, with_scale=not args.no_scale
        )
        payload = al.transform_to_dict(res.transform)
        payload.update(
            rmse=res.rmse, iterations=res.iterations, converged=res.converged,
            rmse_history=res.rmse_history,
        )
    else:  # camera
        intr = al.load_intrinsics(args.intrinsics)
        pts, px, _ = al.read_correspondences(args.correspondences)
        pose, rmse = al.register_camera(intr, pts, px)
        q = pose.orientation
        payload = {
            "position": [float(v) for v in pose.position],
            "quat_wxyz": [q.w, q.x, q.y, q.z],
            "reprojection_rmse_px": rmse,
        }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    _emit(args, payload)
    return 0


def cmd_latency(args) -> int:
    from .server import InsufficientSamples, measure_latency

    try:
        stats = measure_latency(args.connect, n=args.samples, rate_hz=args.rate)
    except (InsufficientSamples, OSError, TimeoutError) as exc:
        _emit(args, {"ok": False, "error": str(exc)}, f"FAIL: {exc}")
        return 1
    _emit(
        args,
        stats.to_dict(),
        f"one-way latency over {stats.samples} samples: "
        f"mean {stats.mean_us / 1000:.2f} ms, p50 {stats.p50_us / 1000:.2f} ms, "
        f"p99 {stats.p99_us / 1000:.2f} ms",
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirrorlink",
        description="Desk-scale teleoperation, dataset, and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the teleop server with a live scene")
    p.add_argument("--bind", default="")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--tick-hz", type=int, default=0)
    p.add_argument("--teleop-hz-expected", type=int, default=0)
    p.add_argument("--task", default="kitchen_cleanup")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-dir", default="")
    _add_common(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("record", help="record policy-driven episodes")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--policy", default="oracle")
    p.add_argument("--max-ticks", type=int, default=0)
    _add_common(p)
    p.set_defaults(fn=cmd_record)

    p = sub.add_parser("replay", help="re-drive an episode and verify it")
    p.add_argument("--episode", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("eval", help="run the benchmark evaluation protocol")
    p.add_argument("--plan", help="eval plan JSON (overrides --trials/--policy)")
    p.add_argument("--policy", default="")
    p.add_argument("--trials", type=int, default=0, help="per-task trial count override")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--out", help="directory for report.json/report.md/heatmaps")
    p.add_argument("--jobs", type=int, default=0)
    p.add_argument("--bins", type=int, default=4, help="heatmap bins per axis")
    p.add_argument("--allow-failures", action="store_true")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics from episode headers")
    p.add_argument("--dataset", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("heatmap", help="bin trial outcomes by spawn position")
    p.add_argument("--report", required=True, help="report.json from eval")
    p.add_argument("--task", required=True)
    p.add_argument("--bins", default="4,4")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("align", help="similarity / ICP / camera registration")
    mode = p.add_subparsers(dest="mode", required=True)
    pm = mode.add_parser("umeyama", help="closed-form similarity on corresponded clouds")
    pm.add_argument("--source", required=True, help="source PLY")
    pm.add_argument("--target", required=True, help="target PLY")
    pm.add_argument("--no-scale", action="store_true")
    pm.add_argument("--out")
    _add_common(pm)
    pm.set_defaults(fn=cmd_align)
    pm = mode.add_parser("icp", help="iterative closest point registration")
    pm.add_argument("--source", required=True)
    pm.add_argument("--target", required=True)
    pm.add_argument("--no-scale", action="store_true")
    pm.add_argument("--max-iterations", type=int, default=50)
    pm.add_argument("--out")
    _add_common(pm)
    pm.set_defaults(fn=cmd_align)
    pm = mode.add_parser("camera", help="camera pose from 2D-3D correspondences")
    pm.add_argument("--intrinsics", required=True, help="intrinsics JSON")
    pm.add_argument("--correspondences", required=True, help="CSV id,X,Y,Z,u,v")
    pm.add_argument("--out")
    _add_common(pm)
    pm.set_defaults(fn=cmd_align)

    p = sub.add_parser("latency", help="measure one-way latency against a server")
    p.add_argument("--connect", default="ws://127.0.0.1:8765")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--rate", type=float, default=90.0)
    _add_common(p)
    p.set_defaults(fn=cmd_latency)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # Strict config parsing applies to every subcommand, whether or not
        # it ends up reading any of the values.
        args._cfg = HarnessConfig.load(getattr(args, "config", None))
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
