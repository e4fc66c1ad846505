"""
Command line - track, bench, replay, synth and pose

Usage:
    python -m app.cli track <seq-dir> [--variant autotrack] [--config file] [--trace out.jsonl]
    python -m app.cli bench <dataset-dir> [--report out.json] [--csv out.csv] [--variants a,b]
    python -m app.cli replay <seq-dir> <trace.jsonl>
    python -m app.cli synth <spec.json> <out-dir>
    python -m app.cli pose <seq-dir> <markers.json> <camera.json> [--report out.json]

Exit codes: 0 success, 1 a sequence failed, 2 bad arguments or config.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from app.config import EvalOptions, TrackerConfig, Variant, load_settings
from app.services import bench, pose, synthetic
from app.services.errors import ConfigError, TrackingError
from app.services.tracker import configure_variant

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _variant_list(text: str) -> List[Variant]:
    try:
        return [Variant(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="autotrack", description="Correlation filter tracking engine")
    sub = parser.add_subparsers(dest="command", required=True)

    variants = [v.value for v in Variant]

    track = sub.add_parser("track", parents=[common], help="track one sequence")
    track.add_argument("seq_dir")
    track.add_argument("--variant", choices=variants)
    track.add_argument("--trace", help="per-frame trace JSONL output")
    track.add_argument("--report", help="JSON report output")

    run = sub.add_parser("bench", parents=[common], help="one-pass evaluation over a dataset directory")
    run.add_argument("dataset_dir")
    run.add_argument("--variant", choices=variants)
    run.add_argument("--variants", type=_variant_list, help="comma separated variants to compare")
    run.add_argument("--report", help="JSON report output")
    run.add_argument("--csv", help="CSV curves output")
    run.add_argument("--workers", type=int, help="parallel sequences")
    run.add_argument("--pooled", action="store_true", help="pool frames across sequences")

    replay = sub.add_parser("replay", parents=[common], help="recompute metrics from a saved trace")
    replay.add_argument("seq_dir")
    replay.add_argument("trace")

    synth = sub.add_parser("synth", parents=[common], help="render a synthetic sequence")
    synth.add_argument("spec")
    synth.add_argument("out_dir")

    locate = sub.add_parser("pose", parents=[common], help="camera pose from four tracked markers")
    locate.add_argument("seq_dir")
    locate.add_argument("markers")
    locate.add_argument("camera")
    locate.add_argument("--report", help="JSON pose report output")
    return parser


def _settings(args) -> tuple:
    cfg, options = load_settings(args.config)
    variant = getattr(args, "variant", None) or cfg.variant
    return configure_variant(cfg, variant), options


def _print(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def cmd_track(args, cfg: TrackerConfig, options: EvalOptions) -> int:
    seq = bench.load_sequence(args.seq_dir)
    report = bench.run_ope(seq, cfg, options.precision_threshold)
    if args.trace:
        bench.write_trace_jsonl(report.trace, args.trace)
    if args.report:
        bench.write_report_json(report, args.report)
    _print({
        "sequence": report.name,
        "variant": report.variant,
        "precision": report.metrics.precision,
        "auc": report.metrics.auc,
        "fps": report.fps,
        "failed": report.failed,
    })
    return EXIT_FAILED if report.failed else EXIT_OK


def cmd_bench(args, cfg: TrackerConfig, options: EvalOptions) -> int:
    updates = {}
    if args.workers:
        updates["workers"] = args.workers
    if args.pooled:
        updates["pooled_precision"] = True
    options = options.model_copy(update=updates)

    report = bench.evaluate_directory(args.dataset_dir, cfg, options, args.variants)
    if args.report:
        bench.write_report_json(report, args.report)
    if args.csv:
        bench.write_report_csv(report, args.csv)
    _print({"aggregates": [a.model_dump() for a in report.aggregates]})
    return EXIT_FAILED if any(r.failed for r in report.sequences) else EXIT_OK


def cmd_replay(args, cfg: TrackerConfig, options: EvalOptions) -> int:
    seq = bench.load_sequence(args.seq_dir)
    metrics = bench.replay_trace(args.trace, seq, options.precision_threshold)
    _print({"sequence": seq.name, "precision": metrics.precision, "auc": metrics.auc})
    return EXIT_OK


def cmd_synth(args, cfg: TrackerConfig, options: EvalOptions) -> int:
    spec = synthetic.load_spec(args.spec)
    seq = synthetic.make_synthetic(spec, args.out_dir)
    _print({"sequence": seq.name, "frames": len(seq), "out_dir": args.out_dir})
    return EXIT_OK


def cmd_pose(args, cfg: TrackerConfig, options: EvalOptions) -> int:
    markers = pose.load_markers(args.markers)
    cam = pose.load_camera(args.camera)
    report = pose.run_pose_directory(args.seq_dir, markers, cam, cfg, options)
    if args.report:
        bench.write_report_json(report, args.report)
    _print({"frames": len(report.frames), "failed_frames": report.failed_frames})
    return EXIT_FAILED if report.failed_frames else EXIT_OK


COMMANDS = {
    "track": cmd_track,
    "bench": cmd_bench,
    "replay": cmd_replay,
    "synth": cmd_synth,
    "pose": cmd_pose,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg, options = _settings(args)
        return COMMANDS[args.command](args, cfg, options)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except TrackingError as e:
        logger.error("%s", e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
