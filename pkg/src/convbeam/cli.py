"""Command-line interface.

Subcommands: enhance, evaluate, simulate, track, atf info|convert.
Every command prints a UTF-8 JSON report to stdout (or --out) and exits
nonzero on error without leaving partial outputs behind.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .metrics import TestCase
from .tracker import TrackerConfig


def _emit(report, out_path=None) -> None:
    if out_path:
        pipeline._write_json_atomic(out_path, report)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write the JSON report here instead of stdout")


def _cmd_enhance(args) -> None:
    config = (
        pipeline.PipelineConfig.from_json(args.config)
        if args.config
        else pipeline.PipelineConfig()
    )
    config = config.with_overrides(
        atf_path=args.atf,
        input_path=args.input,
        output_path=args.output,
        pose_path=args.poses,
        target_id=args.target_id,
        wearer_id=args.wearer_id,
        ref_channel=args.ref_channel,
        loading=args.loading,
        frame_len=args.frame_len,
        hop=args.hop,
        passthrough=True if args.passthrough else None,
    )
    _emit(pipeline.enhance(config), args.out)


def _cmd_evaluate(args) -> None:
    report = pipeline.evaluate(
        args.enhanced,
        args.reference,
        args.mixture,
        args.va,
        args.target_id,
        args.wearer_id,
        TestCase(args.case),
        mixture_channel=args.mixture_channel,
        coarse_offset=args.coarse_offset,
        max_lag=args.max_lag,
    )
    _emit(report, args.out)


def _cmd_simulate(args) -> None:
    _emit(pipeline.simulate(args.manifest, args.out_dir, seed=args.seed), args.out)


def _cmd_track(args) -> None:
    config = TrackerConfig(
        threshold_t=args.threshold,
        alpha=args.alpha,
        max_life=args.max_life,
        min_track_len=args.min_track_len,
    )
    _emit(pipeline.track_file(args.detections, args.faces, config), args.out)


def _cmd_atf(args) -> None:
    if args.atf_command == "info":
        _emit(pipeline.atf_info(args.path), args.out)
    else:
        report = pipeline.atf_convert(
            args.output,
            in_path=args.input,
            geometry_path=args.geometry,
            n_directions=args.directions,
            n_bins=args.bins,
            sample_rate=args.rate,
            speed_of_sound=args.sound_speed,
        )
        _emit(report, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convbeam",
        description="Pose-steered maximum-directivity beamforming toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="beamform a multichannel recording toward a tracked target")
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--atf", help="ATF set file")
    p.add_argument("--input", help="multichannel input WAV")
    p.add_argument("--output", help="mono output WAV")
    p.add_argument("--poses", help="pose CSV file")
    p.add_argument("--target-id", dest="target_id")
    p.add_argument("--wearer-id", dest="wearer_id")
    p.add_argument("--ref-channel", dest="ref_channel", type=int)
    p.add_argument("--loading", type=float)
    p.add_argument("--frame-len", dest="frame_len", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument(
        "--passthrough",
        action="store_true",
        help="bypass steering; pass the reference channel through the filterbank",
    )
    _add_out(p)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("evaluate", help="score an enhanced signal against an aligned reference")
    p.add_argument("--enhanced", required=True)
    p.add_argument("--reference", required=True, help="close-microphone reference WAV")
    p.add_argument("--mixture", required=True, help="unprocessed array recording WAV")
    p.add_argument("--mixture-channel", dest="mixture_channel", type=int, default=0)
    p.add_argument("--va", required=True, help="voice activity JSON")
    p.add_argument("--target-id", dest="target_id", required=True)
    p.add_argument("--wearer-id", dest="wearer_id", required=True)
    p.add_argument("--case", choices=[c.value for c in TestCase], default=TestCase.NOISE.value)
    p.add_argument("--coarse-offset", dest="coarse_offset", type=int, default=0)
    p.add_argument("--max-lag", dest="max_lag", type=int, default=2400)
    _add_out(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="render a synthetic scene from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, help="override the manifest seed")
    _add_out(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("track", help="associate head detections into labeled tracks")
    p.add_argument("--detections", required=True, help="JSON-lines detection file")
    p.add_argument("--faces", help="JSON-lines face box file")
    p.add_argument("--threshold", type=float, default=100.0)
    p.add_argument("--alpha", type=float, default=50.0)
    p.add_argument("--max-life", dest="max_life", type=int, default=20)
    p.add_argument("--min-track-len", dest="min_track_len", type=int, default=5)
    _add_out(p)
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("atf", help="inspect or produce ATF set files")
    atf_sub = p.add_subparsers(dest="atf_command", required=True)
    q = atf_sub.add_parser("info", help="print the header of an ATF file")
    q.add_argument("path")
    _add_out(q)
    q.set_defaults(func=_cmd_atf)
    q = atf_sub.add_parser(
        "convert", help="rewrite an ATF file or synthesize a free-field set from a geometry"
    )
    q.add_argument("--input", help="existing ATF file to rewrite")
    q.add_argument("--geometry", help="JSON file with {mic_positions: [[x,y,z], ...]}")
    q.add_argument("--output", required=True)
    q.add_argument("--directions", type=int, default=642)
    q.add_argument("--bins", type=int, default=513)
    q.add_argument("--rate", type=float, default=48000.0)
    q.add_argument("--sound-speed", dest="sound_speed", type=float, default=343.0)
    _add_out(q)
    q.set_defaults(func=_cmd_atf)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
