"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
Diagnostics go to stderr as ``level=<lvl> event=<name> key=value ...`` lines.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

from .bench import (load_composition, load_manifest, load_votes, parse_filter, render_table, score_table,
                    validate_manifest)
from .cascade import plan_segments, select_anchors
from .conditioning import build_audio_mask, load_keypoints
from .config import Config
from .curation import run_curation, write_manifest
from .errors import JobFailed, MediaIOError, ValidationError
from .media import TimeGrid, load_audio, load_clip, load_frame
from .pipeline import generate_video, write_outputs

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def log(level: str, event: str, **fields) -> None:
    parts = [f"level={level}", f"event={event}"]
    for k, v in fields.items():
        text = str(v)
        if any(c.isspace() for c in text) or '"' in text or not text:
            text = json.dumps(text)
        parts.append(f"{k}={text}")
    print(" ".join(parts), file=sys.stderr)


def _load_config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    return cfg


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    cfg = _load_config(args).override(
        fps=args.fps, workers=args.workers, seed=args.seed, num_clips=args.clips,
        director=args.director, backend=args.backend, blueprint_fps=args.blueprint_fps,
        boost_factor=args.boost,
    )
    reference = load_frame(args.image)
    audio = load_audio(args.audio)
    boxes = load_keypoints(args.keypoints) if args.keypoints else None
    result = generate_video(reference, audio, args.prompt, cfg, blueprint_boxes=boxes)
    write_outputs(result, audio, args.out, cfg)
    log("info", "generate.done", out=args.out, frames=len(result.clip), clips=len(result.jobs),
        seconds=f"{result.timings['total_s']:.3f}")
    return EXIT_OK


def cmd_curate(args) -> int:
    cfg = _load_config(args)
    cfg = cfg.override(workers=args.workers).with_thresholds(
        max_scene_cuts=args.max_scene_cuts, min_lip_clarity=args.min_lip_clarity,
        min_sync_confidence=args.min_sync, max_abs_lag_frames=args.max_lag,
        min_aesthetic=args.min_aesthetic,
    )
    dirs = []
    for pattern in args.input:
        matches = sorted(p for p in glob.glob(pattern) if Path(p).is_dir())
        dirs.extend(matches if matches or glob.has_magic(pattern) else [pattern])
    if not dirs:
        raise ValidationError("no input clip directories matched")
    records = run_curation(dirs, cfg.thresholds, cfg.workers, args.keypoints_suffix)
    write_manifest(records, args.out)
    kept = sum(r["verdict"] == "keep" for r in records)
    for r in records:
        if r["error"]:
            log("warning", "curate.io_error", clip=r["clip"], error=r["error"])
    log("info", "curate.done", out=args.out, clips=len(records), kept=kept, dropped=len(records) - kept)
    return EXIT_OK


def cmd_bench_validate(args) -> int:
    report = validate_manifest(load_manifest(args.manifest), load_composition(args.spec))
    for v in report.violations:
        log("error", "bench.violation", detail=v)
    log("info", "bench.validate", manifest=args.manifest, valid=str(report.valid).lower(),
        violations=len(report.violations))
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_bench_score(args) -> int:
    votes = load_votes(args.votes)
    samples = load_manifest(args.manifest) if args.manifest else None
    rows = score_table(votes, samples, parse_filter(args.filter))
    table = render_table(rows)
    if args.out:
        payload = [{"category": name, **{d: r.to_dict() for d, r in res.items()}} for name, res in rows]
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_inspect_mask(args) -> int:
    grid = TimeGrid(args.fps, args.token_rate)
    mask = build_audio_mask(grid, args.frames, args.tokens, args.pad)
    print(" ".join(f"[{lo},{hi}]" for lo, hi in mask.ranges))
    return EXIT_OK


def cmd_inspect_anchors(args) -> int:
    cfg = _load_config(args)
    blueprint = load_clip(args.blueprint)
    reference = load_frame(args.image)
    boxes = load_keypoints(args.keypoints) if args.keypoints else {}
    if not boxes:
        from .backend import make_backend
        boxes = make_backend(cfg.backend).mouth_boxes(blueprint)
    duration = len(blueprint) / float(blueprint.fps)
    plan = plan_segments(duration, args.clips)
    anchors = select_anchors(blueprint, plan, reference, boxes,
                             window_s=cfg.anchor_window_s if args.window is None else args.window,
                             fps=args.fps or cfg.fps, weights=cfg.anchor_weights)
    for a in anchors:
        print(json.dumps(a.to_dict(), sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="avatar-cascade", description="Cascaded audio-driven portrait video toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="generate a video from a portrait, audio and prompt")
    g.add_argument("--image", required=True, help="reference portrait (PPM)")
    g.add_argument("--audio", required=True, help="PCM16 WAV")
    g.add_argument("--prompt", default="")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--clips", type=int, help="number of sub-clips (default ceil(duration / clip_seconds))")
    g.add_argument("--fps", type=int)
    g.add_argument("--blueprint-fps", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--boost", type=float, help="audio attention boost factor")
    g.add_argument("--keypoints", help="mouth boxes for blueprint frames (JSONL)")
    g.add_argument("--director", help="rules | external:<url>")
    g.add_argument("--backend", help="generation backend name")
    g.add_argument("--config", help="JSON config file")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("curate", help="score clip directories and write a keep/drop manifest")
    c.add_argument("--input", required=True, nargs="+", help="clip directories or glob patterns")
    c.add_argument("--keypoints-suffix", default=".kp.jsonl")
    c.add_argument("--out", required=True)
    c.add_argument("--workers", type=int)
    c.add_argument("--max-scene-cuts", type=int)
    c.add_argument("--min-lip-clarity", type=float)
    c.add_argument("--min-sync", type=float)
    c.add_argument("--max-lag", type=int)
    c.add_argument("--min-aesthetic", type=float)
    c.add_argument("--config")
    c.set_defaults(func=cmd_curate)

    b = sub.add_parser("bench", help="benchmark manifest validation and GSB scoring")
    bsub = b.add_subparsers(dest="bench_command", parser_class=_Parser)
    bsub.required = True
    bv = bsub.add_parser("validate")
    bv.add_argument("--manifest", required=True)
    bv.add_argument("--spec", required=True, help="composition spec JSON")
    bv.set_defaults(func=cmd_bench_validate)
    bs = bsub.add_parser("score")
    bs.add_argument("--votes", required=True)
    bs.add_argument("--manifest", help="needed for category rows and filters")
    bs.add_argument("--filter", default="", help="e.g. language=zh,kind=speech")
    bs.add_argument("--out", help="write the table as JSON")
    bs.set_defaults(func=cmd_bench_score)

    i = sub.add_parser("inspect", help="inspect internal mechanisms")
    isub = i.add_subparsers(dest="inspect_command", parser_class=_Parser)
    isub.required = True
    im = isub.add_parser("mask")
    im.add_argument("--fps", type=float, default=48)
    im.add_argument("--token-rate", type=float, default=50)
    im.add_argument("--pad", type=int, default=2)
    im.add_argument("--frames", type=int, required=True)
    im.add_argument("--tokens", type=int, required=True)
    im.set_defaults(func=cmd_inspect_mask)
    ia = isub.add_parser("anchors")
    ia.add_argument("--blueprint", required=True, help="blueprint clip directory")
    ia.add_argument("--image", required=True)
    ia.add_argument("--clips", type=int, required=True)
    ia.add_argument("--window", type=float)
    ia.add_argument("--fps", type=int)
    ia.add_argument("--keypoints")
    ia.add_argument("--config")
    ia.set_defaults(func=cmd_inspect_anchors)
    return p


def _num(x):
    return int(x) if float(x).is_integer() else x


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "inspect" and args.inspect_command == "mask":
            args.fps, args.token_rate = _num(args.fps), _num(args.token_rate)
        return args.func(args)
    except UsageError as exc:
        log("error", "usage", detail=exc)
        return EXIT_INVALID
    except JobFailed as exc:
        cause = exc.cause
        log("error", "job_failed", clip_index=exc.clip_index, detail=cause)
        return EXIT_IO if isinstance(cause, OSError) and not isinstance(cause, ValidationError) else EXIT_INVALID
    except ValidationError as exc:
        log("error", "validation", detail=exc)
        return EXIT_INVALID
    except (MediaIOError, OSError) as exc:
        log("error", "io", detail=exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
