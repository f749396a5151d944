"""Command-line entry point: ``deformodo {synth,odom,eval,palindrome}``.

Exit codes are 0 on success, 1 on runtime or I/O failure and 2 on usage
errors. Every command writes a JSON run manifest listing its outputs with
SHA-256 checksums; wall-clock timing lives under its own key so reruns can
be compared by checksum.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import evaluation as ev
from .dataset import REMAP_FILE, Dataset
from .odometry import FLOW_SOURCES, INIT_MODES, OdometryConfig, run_sequence
from .synth import PRESETS, generate_sequence, make_scene, sha256_file
from .trajectory import Trajectory

log = logging.getLogger("deformodo")

MAX_RES = 640
SEED_ENV = "DRK_SEED"
RUN_MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like WxH, got {text!r}") from None
    if not (1 <= w <= MAX_RES and 1 <= h <= MAX_RES):
        raise argparse.ArgumentTypeError(f"resolution must lie within 1..{MAX_RES} per side, got {text}")
    return w, h


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(args) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _checksums(paths, base: Path | None = None) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        key = p.relative_to(base).as_posix() if base is not None else str(p)
        out[key] = sha256_file(p)
    return out


def _write_run_manifest(path: Path, args, config: dict, seed, inputs: dict, outputs: dict, started: float):
    doc = {
        "command": ["deformodo"] + list(args.argv),
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "timing": {"wall_clock_s": round(time.perf_counter() - started, 3)},
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _dataset_inputs(root: Path) -> dict:
    for name in ("manifest.txt", REMAP_FILE, "intrinsics.txt"):
        if (root / name).exists():
            return _checksums([root / name])
    return {}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.perf_counter()
    seed = _seed(args)
    w, h = args.res
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    scene = make_scene(args.scene, args.level, args.frames, (w, h), seed)
    out = Path(args.out)
    manifest = generate_sequence(scene, out, threads=args.threads)
    config = {"scene": args.scene, "level": args.level, "frames": args.frames, "res": [w, h]}
    _write_run_manifest(out / RUN_MANIFEST, args, config, seed, {}, manifest, started)
    log.info("wrote %d frames to %s", args.frames, out)
    return 0


def cmd_odom(args) -> int:
    started = time.perf_counter()
    cfg = OdometryConfig(iterations=args.iters, flow_source=args.flow, init_mode=args.init)
    data = Dataset(args.data, flow_dir=args.flow_dir)
    if len(data) < 2:
        raise OSError(f"{data.root}: odometry needs at least two frames")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    diag = Path(args.diagnostics) if args.diagnostics else out.parent / "diagnostics.csv"
    traj = run_sequence(data, cfg, diagnostics=diag)
    traj.save(out)
    outputs = [out, diag]
    if (data.root / REMAP_FILE).exists() and len(traj) % 2 == 0 and len(traj) >= 4:
        # palindrome run: also emit the two halves that eval apte consumes
        n = len(traj) // 2
        ids = traj.frame_ids
        for suffix, sel in (("forward", ids[:n]), ("backward", ids[n:])):
            path = out.with_name(f"{out.stem}.{suffix}{out.suffix}")
            traj.subset(sel).save(path)
            outputs.append(path)
    config = dataclasses.asdict(cfg)
    config["flow_dir"] = args.flow_dir
    _write_run_manifest(Path(f"{out}.manifest.json"), args, config, None, _dataset_inputs(data.root),
                        _checksums(outputs), started)
    log.info("tracked %d frames into %s", len(traj), out)
    return 0


def _load(path, what: str) -> Trajectory:
    try:
        return Trajectory.load(path)
    except ValueError as exc:
        raise OSError(f"invalid {what} trajectory: {exc}") from exc


def cmd_eval(args) -> int:
    started = time.perf_counter()
    if args.metric == "apte" and args.est_back is None:
        raise UsageError("eval apte requires --est-back")
    gt = _load(args.gt, "ground-truth")
    est = _load(args.est, "estimated")
    if args.metric == "apte":
        # the two palindrome halves each cover part of the ground truth
        full_gt = gt
        ev.require_known_ids(est, full_gt, "forward")
        gt = gt.subset(est.frame_ids)
    else:
        ev.require_same_ids(est, gt)
    align_mode = args.align or ("none" if args.metric == "rpe" else "sim3")
    if align_mode == "none" and args.metric == "ate":
        raise UsageError("ate needs --align se3 or sim3")
    scale = 1.0
    if align_mode != "none":
        res = ev.align(est, gt, align_mode)
        scale = res.scale
    if args.metric == "rpe":
        scaled = Trajectory(est.frame_ids, [ev.scale_pose(p, scale) for p in est.poses])
        r = ev.rpe(scaled, gt)
        rows = [
            ("rpe_trans_rmse", r.trans_rmse, "m"),
            ("rpe_rot_rmse", math.degrees(r.rot_rmse), "deg"),
            ("rpe_trans_mean", r.trans_mean, "m"),
            ("rpe_rot_mean", math.degrees(r.rot_mean), "deg"),
            ("pairs", len(r.frame_pairs), "count"),
            ("scale", scale, "1"),
        ]
        ev.write_metrics_csv(args.out, rows)
        print(f"RPE {r.trans_rmse:.6g} m, {math.degrees(r.rot_rmse):.6g} deg")
    elif args.metric == "ate":
        rows = [(f"ate_{align_mode}", res.residual_rmse, "m"), ("scale", scale, "1"),
                ("frames", res.n_matched, "count")]
        ev.write_metrics_csv(args.out, rows)
        print(f"ATE ({align_mode}) {res.residual_rmse:.6g} m")
    else:
        back = _load(args.est_back, "backward")
        ev.require_known_ids(back, full_gt, "backward")
        if len(back) != len(est):
            bad = ev.first_mismatch(est, back) or (min(len(est), len(back)), None, None)
            raise ev.FrameMismatchError(
                f"backward run has {len(back)} poses, forward {len(est)} (first mismatch at line {bad[0]})")
        report = ev.apte(est.relative_poses(), back.relative_poses(), args.apte_mode, scale)
        ev.write_apte_csv(args.out, report)
        for msg in report.warnings:
            log.warning(msg)
        print(f"APTE ({args.apte_mode}) {report.mean:.6g} m")
    inputs = _checksums([p for p in (args.gt, args.est, args.est_back) if p])
    config = {"metric": args.metric, "align": align_mode, "apte_mode": args.apte_mode}
    _write_run_manifest(Path(f"{args.out}.manifest.json"), args, config, None, inputs,
                        _checksums([args.out]), started)
    return 0


def cmd_palindrome(args) -> int:
    started = time.perf_counter()
    manifest = ev.palindrome(args.data, args.out)
    out = Path(args.out)
    _write_run_manifest(out / RUN_MANIFEST, args, {}, None, _dataset_inputs(Path(args.data)), manifest, started)
    n = sum(1 for k in manifest if k.startswith("pal_"))
    log.info("palindrome of %s written to %s (%d rendered labels)", args.data, out, n)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                        help="cap on worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="deformodo", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=_positive_int, default=1, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic deformable sequence")
    s.add_argument("--scene", choices=PRESETS, default="sheet")
    s.add_argument("--level", type=int, choices=(0, 1, 2, 3), default=0)
    s.add_argument("--frames", type=_positive_int, default=30)
    s.add_argument("--res", type=_resolution, default=(128, 128), help="WxH, at most 640 per side")
    s.add_argument("--seed", type=int, default=0, help=f"overridden by ${SEED_ENV}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    o = sub.add_parser("odom", parents=[common], help="track a sequence")
    o.add_argument("--data", required=True)
    o.add_argument("--flow", choices=FLOW_SOURCES, default="oracle")
    o.add_argument("--flow-dir", help="directory of external flow rasters for --flow file")
    o.add_argument("--iters", type=_positive_int, default=12)
    o.add_argument("--init", choices=INIT_MODES, default="identity")
    o.add_argument("--out", required=True)
    o.add_argument("--diagnostics", help="CSV path (default: diagnostics.csv next to --out)")
    o.set_defaults(func=cmd_odom)

    e = sub.add_parser("eval", parents=[common], help="trajectory metrics")
    e.add_argument("metric", choices=("rpe", "ate", "apte"))
    e.add_argument("--gt", required=True)
    e.add_argument("--est", required=True)
    e.add_argument("--est-back")
    e.add_argument("--align", choices=("none", "se3", "sim3"),
                   help="default: none for rpe, sim3 otherwise")
    e.add_argument("--apte-mode", choices=ev.APTE_MODES, default="loopwise")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("palindrome", parents=[common], help="build a 1..N,N..1 looped dataset")
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_palindrome)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deformodo: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"deformodo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
