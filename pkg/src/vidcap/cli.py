"""Command-line front end.

Subcommands cover the whole pipeline: synth-features, build-vocab, train,
caption, evaluate, inspect.  Exit codes: 0 success, 1 usage (bad flags or
broken preconditions), 2 data or file-format problems, 3 numeric aborts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import (ContractError, DataError, DimensionError, DomainError,
                     FormatError, NumericError, RangeError)
from .featio import load_manifest, read_fvec, synth_features
from .infer import caption_manifest
from .metrics import evaluate
from .s2vt import load_checkpoint
from .textkit import Vocabulary, build_vocab
from .train import TrainConfig, train_loop


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _comma_list(text: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in text.split(",") if part.strip())
    if not items:
        raise _UsageError(f"empty list argument: {text!r}")
    return items


# ------------------------------------------------------------- subcommands


def _cmd_synth(args) -> int:
    spec = {"clips": args.clips, "concepts": list(_comma_list(args.concepts)),
            "kinds": list(_comma_list(args.kinds)), "frames": args.frames,
            "audio_silent_every": args.audio_silent_every}
    dims = {}
    for item in args.dim or []:
        kind, _, value = item.partition("=")
        if not value.isdigit():
            raise _UsageError(f"--dim wants KIND=N, got {item!r}")
        dims[kind] = int(value)
    if dims:
        spec["dims"] = dims
    manifest_path = synth_features(spec, args.out, args.seed)
    print(manifest_path)
    return 0


def _split_captions(manifest, split):
    entries = manifest.entries if split == "all" else manifest.by_split(split)
    return [c for e in entries for c in e.captions]


def _cmd_build_vocab(args) -> int:
    manifest = load_manifest(args.manifest, check_files=False)
    captions = _split_captions(manifest, args.split)
    vocab = build_vocab(captions, min_count=args.min_count)
    vocab.save(args.out)
    print(f"{len(vocab)} ids ({args.split} split, min_count {args.min_count})"
          f" -> {args.out}")
    return 0


_TRAIN_FLAGS = ("learning_rate", "batch_size", "epochs", "seed", "hidden",
                "dropout", "attention_layer", "min_count", "eval_every",
                "workers")


def _cmd_train(args) -> int:
    record = {}
    if args.config:
        record.update(json.loads(Path(args.config).read_text()))
    for name in _TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            record[name] = value
    if args.features is not None:
        record["features"] = list(_comma_list(args.features))
    cfg = TrainConfig.from_dict(record)
    print("config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)

    manifest = load_manifest(args.manifest)

    def show(rec):
        line = (f"epoch {rec['epoch']}: loss {rec['mean_loss']:.4f} "
                f"({rec['examples']} examples, {rec['wall_ms']:.0f} ms)")
        if "val" in rec:
            line += f", val CIDEr-D {rec['val']['cider_d']:.3f}"
        print(line)

    out = train_loop(cfg, manifest, args.out, resume_from=args.resume,
                     log_cb=show)
    print(f"checkpoint -> {out['checkpoint']}")
    return 0


def _cmd_caption(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab_path = args.vocab or Path(args.checkpoint).parent / "vocab.json"
    vocab = Vocabulary.load(vocab_path)
    records = caption_manifest(ckpt, vocab, load_manifest(args.manifest),
                               args.split, decoder=args.decoder,
                               width=args.width, alpha=args.alpha)
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if args.out == "-":
        sys.stdout.write(lines)
    else:
        Path(args.out).write_text(lines)
        print(f"{len(records)} captions -> {args.out}", file=sys.stderr)
    return 0


def _read_caption_lines(path) -> dict[str, str]:
    hyps = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            vid, caption = record["video_id"], record["caption"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise FormatError(f"{path}:{line_no}: bad caption record: {exc}")
        if vid in hyps:
            raise DataError(f"{path}: duplicate caption for video {vid!r}")
        hyps[vid] = caption
    if not hyps:
        raise DataError(f"{path}: no caption records")
    return hyps


def _cmd_evaluate(args) -> int:
    hyps = _read_caption_lines(args.captions)
    manifest = load_manifest(args.manifest, check_files=False)
    refs = {e.video_id: e.captions for e in manifest.entries}
    report = evaluate(hyps, refs)
    payload = json.dumps(report.to_dict(), sort_keys=True)
    if args.json:
        print(payload)
    else:
        print(report.format_table())
    if args.out:
        Path(args.out).write_text(payload + "\n")
    return 0


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise DataError(f"inspect: no such file: {path}")
    magic = path.open("rb").read(4)
    if magic == b"FVC1":
        stream = read_fvec(path)
        print(f"feature stream: kind {stream.kind.label}, "
              f"{stream.values.shape[0]} frames x {stream.values.shape[1]} dims")
    elif magic == b"S2C1":
        ckpt = load_checkpoint(path)
        count = sum(t.data.size for _, t in ckpt.params.items())
        cfg = ckpt.cfg
        print(f"checkpoint: fused_dim {cfg.fused_dim}, hidden {cfg.hidden}, "
              f"vocab {cfg.vocab_size}, attention layer {cfg.attention_layer}")
        print(f"  {count} parameters, epoch {ckpt.meta.get('epoch')}, "
              f"step {ckpt.meta.get('step')}, features "
              f"{','.join(ckpt.meta.get('features', []) or ['?'])}")
    elif path.suffix == ".jsonl":
        manifest = load_manifest(path, check_files=False)
        tally: dict[str, int] = {}
        kinds = set()
        n_caps = 0
        for e in manifest.entries:
            tally[str(e.split)] = tally.get(str(e.split), 0) + 1
            kinds.update(k.label for k in e.features)
            n_caps += len(e.captions)
        splits = ", ".join(f"{k}={v}" for k, v in sorted(tally.items()))
        print(f"manifest: {len(manifest.entries)} videos ({splits}), "
              f"{n_caps} captions, streams: {', '.join(sorted(kinds)) or 'none'}")
    else:
        try:
            payload = json.loads(path.read_text())
        except (UnicodeDecodeError, json.JSONDecodeError):
            payload = None
        if isinstance(payload, dict) and "tokens" in payload:
            vocab = Vocabulary.load(path)
            print(f"vocabulary: {len(vocab)} ids "
                  f"(min_count {payload.get('min_count')})")
        else:
            raise DataError(f"inspect: unrecognized file: {path}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidcap",
                     description="S2VT-style video captioning over fused "
                                 "feature streams")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth-features", help="write a deterministic toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--concepts", default="alpha,beta")
    p.add_argument("--kinds", default="object2d")
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--dim", action="append", metavar="KIND=N")
    p.add_argument("--audio-silent-every", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-vocab", help="collect caption tokens")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--split", default="train")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="fit a captioner on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--attention-layer", type=int, dest="attention_layer")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--workers", type=int)
    p.add_argument("--features", help="comma list of stream kinds")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("caption", help="decode captions for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", help="defaults to vocab.json beside the checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--decoder", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--width", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--out", default="-", help="JSON-lines file, - for stdout")
    p.set_defaults(func=_cmd_caption)

    p = sub.add_parser("evaluate", help="score captions against references")
    p.add_argument("--captions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("inspect", help="describe a dataset or model file")
    p.add_argument("path")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, DimensionError, DomainError,
            RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main())
