"""Command line for the extraction adapter.

    vidextract --video clip.mp4 --kinds object2d,audio --out features/

Exit codes: 0 success, 1 usage, 2 job or data problem, 3 missing
pretrained weights.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from vidcap.errors import VidcapError
from vidcap.featio import StreamKind

from .backbones import build_backbones
from .errors import JobError, SetupError
from .extract import ExtractionJob, append_manifest_entry, run_job

VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov", ".webm")

DEFAULT_KINDS = "object2d,scene,action3d,audio"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="vidextract",
                     description="Extract FVEC feature streams from video files.")
    source = parser.add_argument_group("input (exactly one of)")
    source.add_argument("--video", action="append", metavar="PATH",
                        help="video file to extract; may be repeated")
    source.add_argument("--dir", metavar="PATH",
                        help="extract every video file in this directory "
                             f"({', '.join(VIDEO_SUFFIXES)})")
    parser.add_argument("--kinds", default=DEFAULT_KINDS, metavar="LIST",
                        help="comma-separated stream kinds (default: %(default)s)")
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="directory receiving .fvec files and sidecars")
    parser.add_argument("--manifest-append", metavar="PATH",
                        help="append one manifest entry per video (requires --caption)")
    parser.add_argument("--caption", action="append", metavar="TEXT",
                        help="caption recorded in the manifest entry; may be repeated")
    parser.add_argument("--split", choices=("train", "val", "test"),
                        help="split recorded in the manifest entry")
    parser.add_argument("--weights-dir", metavar="DIR",
                        help="look for pretrained weight files here instead of "
                             "the torch hub cache")
    parser.add_argument("--allow-random-init", action="store_true",
                        help="build seeded untrained networks when weights are "
                             "missing (features will carry no meaning)")
    return parser


def _collect_videos(args) -> list[Path]:
    if bool(args.video) == bool(args.dir):
        raise _UsageError("exactly one of --video and --dir is required")
    if args.video:
        return [Path(v) for v in args.video]
    root = Path(args.dir)
    if not root.is_dir():
        raise JobError(f"{root}: not a directory")
    found = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in VIDEO_SUFFIXES)
    if not found:
        raise JobError(f"{root}: no video files "
                       f"(looked for {', '.join(VIDEO_SUFFIXES)})")
    return found


def _parse_kinds(raw: str) -> tuple[str, ...]:
    labels = []
    for piece in raw.split(","):
        label = piece.strip()
        if not label:
            continue
        StreamKind.from_label(label)  # unknown kinds fail here
        if label not in labels:
            labels.append(label)
    if not labels:
        raise _UsageError("--kinds lists no stream kinds")
    return tuple(labels)


def _run(args) -> int:
    if args.manifest_append and not args.caption:
        raise _UsageError("--manifest-append requires at least one --caption")
    for flag, value in (("--caption", args.caption), ("--split", args.split)):
        if value and not args.manifest_append:
            raise _UsageError(f"{flag} only applies with --manifest-append")
    videos = _collect_videos(args)
    kinds = _parse_kinds(args.kinds)
    backbones = build_backbones(kinds, allow_random_init=args.allow_random_init,
                                weights_dir=args.weights_dir)
    out_dir = Path(args.out)
    for path in videos:
        job = ExtractionJob(video=path, kinds=kinds, out_dir=out_dir)
        written = run_job(job, backbones)
        if args.manifest_append:
            append_manifest_entry(args.manifest_append, path.stem,
                                  args.caption, written, split=args.split)
        print(f"{path.stem}: wrote {len(written)} streams to {out_dir}",
              file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SetupError as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return 3
    except (JobError, VidcapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
