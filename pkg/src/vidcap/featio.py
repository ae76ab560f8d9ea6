"""Feature files, temporal alignment, stream fusion, and the dataset manifest.

FVEC container, little-endian: magic "FVC1", u8 stream-kind code, u8 + u16
reserved (zero), u32 frame count T, u32 feature dim D, then T*D float32
values row-major.  Round-trips are bit-exact.

A dataset manifest is a JSON-lines file, one clip per line:
  {"video_id": ..., "split": "train"|"test"|"val"|null,
   "captions": [...], "features": {"object2d": "path.fvec", ...},
   "category": ...}
Feature paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ContractError, DataError, FormatError

STEPS = 40  # every fused clip is aligned onto this many model steps

MAGIC = b"FVC1"
_HEADER = struct.Struct("<4sBBHII")

SPLITS = ("train", "test", "val")


class StreamKind(enum.IntEnum):
    OBJECT2D = 0
    INTERMEDIATE2D = 1
    SCENE = 2
    ACTION3D = 3
    AUDIO = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "StreamKind":
        try:
            return cls[label.upper()]
        except KeyError:
            raise DataError(f"unknown stream kind {label!r}") from None


# Default per-kind feature widths; a dataset whose files declare other widths
# simply overrides these, they are never a hard requirement.
CANONICAL_DIMS = {
    StreamKind.OBJECT2D: 2048,
    StreamKind.SCENE: 2048,
    StreamKind.ACTION3D: 1024,
    StreamKind.AUDIO: 1024,
}


@dataclass
class FeatureStream:
    """One extracted stream: (T, D) float32 rows, one row per sampled frame.

    Audio is clip-level: T is 1 or, for a silent clip, 0.
    """

    kind: StreamKind
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ContractError(f"FeatureStream: values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[1] == 0:
            raise ContractError("FeatureStream: feature dim must be positive")
        if self.kind == StreamKind.AUDIO and self.values.shape[0] > 1:
            raise ContractError(
                f"FeatureStream: audio is clip-level, T must be 0 or 1, got {self.values.shape[0]}")
        if self.values.dtype != np.float32:
            self.values = self.values.astype(np.float32)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# FVEC read/write


def write_fvec(stream: FeatureStream, path) -> None:
    payload = np.ascontiguousarray(stream.values, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, int(stream.kind), 0, 0,
                          stream.frames, stream.dim)
    Path(path).write_bytes(header + payload)


def read_fvec_header(path) -> tuple[StreamKind, int, int]:
    """Kind, frame count, and dim from the 16-byte header alone."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    return _parse_header(raw, path)


def _parse_header(raw: bytes, path) -> tuple[StreamKind, int, int]:
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an FVEC file", offset=0)
    magic, kind_code, res8, res16, frames, dim = _HEADER.unpack(raw[:_HEADER.size])
    try:
        kind = StreamKind(kind_code)
    except ValueError:
        raise FormatError(f"{path}: unknown stream kind code {kind_code}", offset=4) from None
    if dim == 0:
        raise FormatError(f"{path}: feature dim must be positive", offset=12)
    return kind, frames, dim


def read_fvec(path) -> FeatureStream:
    raw = Path(path).read_bytes()
    kind, frames, dim = _parse_header(raw, path)
    expected = frames * dim * 4
    actual = len(raw) - _HEADER.size
    if actual < expected:
        raise FormatError(
            f"{path}: truncated payload, header promises {expected} bytes but {actual} follow",
            offset=len(raw))
    if actual > expected:
        raise FormatError(
            f"{path}: {actual - expected} trailing bytes after payload",
            offset=_HEADER.size + expected)
    values = np.frombuffer(raw, dtype="<f4", count=frames * dim,
                           offset=_HEADER.size).reshape(frames, dim).copy()
    return FeatureStream(kind, values)


# --------------------------------------------------------------------------
# alignment and fusion


def align_to_40(stream: FeatureStream) -> tuple[np.ndarray, int]:
    """Map a (T, D) stream onto the fixed 40-step grid.

    T each >= 40: rows floor(k*T/40), k = 0..39 (valid_steps 40).
    T == 1: broadcast the single row (valid_steps 40; the audio case).
    1 < T < 40: keep all rows, zero-pad the tail (valid_steps T).
    T == 0: all zeros (valid_steps 0).
    """
    T, D = stream.values.shape
    if T == 0:
        return np.zeros((STEPS, D), dtype=np.float32), 0
    if T == 1:
        return np.repeat(stream.values, STEPS, axis=0), STEPS
    if T < STEPS:
        out = np.zeros((STEPS, D), dtype=np.float32)
        out[:T] = stream.values
        return out, T
    idx = [(k * T) // STEPS for k in range(STEPS)]
    return stream.values[idx].copy(), STEPS


@dataclass
class FusedClip:
    """40 model steps of column-concatenated streams, plus how many are real."""

    values: np.ndarray  # (40, sum of selected dims)
    valid_steps: int
    selection: tuple[StreamKind, ...]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def fuse(streams: dict[StreamKind, FeatureStream],
         selection: list[StreamKind] | tuple[StreamKind, ...],
         *, audio_dim: int | None = None,
         video_id: str | None = None) -> FusedClip:
    """Column-concatenate the selected streams in selection order.

    A missing audio stream is zero-filled (silent clip); any other missing
    kind is a data error.  valid_steps is the max over the selected visual
    streams -- the audio broadcast never extends validity.
    """
    if not selection:
        raise ContractError("fuse: empty stream selection")
    blocks = []
    visual_valid = []
    all_valid = []
    for kind in selection:
        stream = streams.get(kind)
        if stream is None:
            if kind != StreamKind.AUDIO:
                raise DataError(
                    f"video {video_id!r}: missing feature stream {kind.label}")
            dim = audio_dim or CANONICAL_DIMS[StreamKind.AUDIO]
            stream = FeatureStream(StreamKind.AUDIO, np.zeros((0, dim), dtype=np.float32))
        if stream.kind != kind:
            raise DataError(
                f"video {video_id!r}: stream kind mismatch, wanted {kind.label} got {stream.kind.label}")
        aligned, valid = align_to_40(stream)
        blocks.append(aligned)
        all_valid.append(valid)
        if kind != StreamKind.AUDIO:
            visual_valid.append(valid)
    valid_steps = max(visual_valid) if visual_valid else max(all_valid)
    return FusedClip(np.concatenate(blocks, axis=1), valid_steps, tuple(selection))


def fused_dim(selection, dims: dict[StreamKind, int] | None = None) -> int:
    """Total width of a fused clip for the given selection."""
    dims = dims or {}
    total = 0
    for kind in selection:
        dim = dims.get(kind) or CANONICAL_DIMS.get(kind)
        if dim is None:
            raise DataError(f"no declared dim for stream kind {kind.label}")
        total += dim
    return total


# --------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    video_id: str
    captions: list[str]
    features: dict[StreamKind, str] = field(default_factory=dict)
    split: str | None = None
    category: str | None = None

    def to_json(self) -> str:
        record = {
            "video_id": self.video_id,
            "split": self.split,
            "captions": self.captions,
            "features": {k.label: v for k, v in self.features.items()},
        }
        if self.category is not None:
            record["category"] = self.category
        return json.dumps(record, sort_keys=True)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path
    dims: dict[StreamKind, int] = field(default_factory=dict)

    def resolve(self, entry: ManifestEntry, kind: StreamKind) -> Path:
        return self.root / entry.features[kind]

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def load_fused(self, entry: ManifestEntry,
                   selection: list[StreamKind] | tuple[StreamKind, ...]) -> FusedClip:
        streams = {}
        for kind in selection:
            if kind in entry.features:
                streams[kind] = read_fvec(self.resolve(entry, kind))
        return fuse(streams, selection,
                    audio_dim=self.dims.get(StreamKind.AUDIO),
                    video_id=entry.video_id)


def load_manifest(path, *, check_files: bool = True) -> Manifest:
    """Parse and validate a JSON-lines manifest.

    Checks ids are unique, every entry has at least one caption, all feature
    paths resolve, and per-kind dims agree across the referenced files.
    """
    path = Path(path)
    entries = []
    seen_ids = set()
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from None
        vid = record.get("video_id")
        if not vid:
            raise DataError(f"{path}:{line_no}: entry without video_id")
        if vid in seen_ids:
            raise DataError(f"{path}: duplicate video_id {vid!r}")
        seen_ids.add(vid)
        captions = record.get("captions") or []
        if not captions:
            raise DataError(f"{path}: video {vid!r} has no captions")
        split = record.get("split")
        if split is not None and split not in SPLITS:
            raise DataError(f"{path}: video {vid!r} has unknown split {split!r}")
        features = {StreamKind.from_label(k): v
                    for k, v in (record.get("features") or {}).items()}
        entries.append(ManifestEntry(video_id=vid, captions=list(captions),
                                     features=features, split=split,
                                     category=record.get("category")))

    manifest = Manifest(entries=entries, root=path.parent)
    if check_files:
        for entry in entries:
            for kind, rel in entry.features.items():
                fpath = manifest.root / rel
                if not fpath.exists():
                    raise DataError(
                        f"{path}: video {entry.video_id!r} references missing file {rel}")
                file_kind, _, dim = read_fvec_header(fpath)
                if file_kind != kind:
                    raise DataError(
                        f"{path}: video {entry.video_id!r}: {rel} declares {file_kind.label}, "
                        f"manifest says {kind.label}")
                prior = manifest.dims.get(kind)
                if prior is None:
                    manifest.dims[kind] = dim
                elif prior != dim:
                    raise DataError(
                        f"{path}: inconsistent {kind.label} dims, {prior} vs {dim} ({rel})")
    return manifest


def save_manifest(entries: list[ManifestEntry], path) -> None:
    text = "".join(e.to_json() + "\n" for e in entries)
    Path(path).write_text(text)


# --------------------------------------------------------------------------
# synthetic data


def synth_features(spec: dict, out_dir, seed: int) -> Path:
    """Deterministic concept-tagged toy dataset; returns the manifest path.

    Every clip carries one concept word.  Feature rows are N(0, 0.1) noise
    plus +3.0 on that concept's coordinate block (the dim splits into one
    disjoint block per concept), so a nearest-centroid rule on mean features
    recovers the concept exactly and captions are learnable from features.
    Files depend only on (video_id, kind, seed); rerunning is byte-identical.

    Spec keys (all optional): clips, concepts, kinds, dims, frames,
    audio_silent_every, caption_template.
    """
    clips = int(spec.get("clips", 8))
    concepts = list(spec.get("concepts", ["alpha", "beta"]))
    kinds = [StreamKind.from_label(k) for k in spec.get("kinds", ["object2d"])]
    dims = {StreamKind.from_label(k): int(v)
            for k, v in spec.get("dims", {}).items()}
    frames = int(spec.get("frames", 12))
    silent_every = int(spec.get("audio_silent_every", 0))
    template = spec.get("caption_template", "the {concept} object moves")
    if clips <= 0 or not concepts:
        raise ContractError("synth_features: need at least one clip and one concept")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(clips):
        vid = f"clip{i:04d}"
        concept_idx = i % len(concepts)
        features = {}
        for kind in kinds:
            dim = dims.get(kind, 64 if kind != StreamKind.AUDIO else 32)
            if kind == StreamKind.AUDIO:
                silent = silent_every > 0 and (i + 1) % silent_every == 0
                T = 0 if silent else 1
            else:
                T = frames
            gen = rng.stream(seed, "synth", vid, kind.label)
            values = gen.normal(0.0, 0.1, size=(T, dim))
            block = dim // len(concepts)
            if T > 0 and block > 0:
                lo = concept_idx * block
                values[:, lo:lo + block] += 3.0
            fname = f"{vid}.{kind.label}.fvec"
            write_fvec(FeatureStream(kind, values.astype(np.float32)), out_dir / fname)
            features[kind] = fname
        entries.append(ManifestEntry(
            video_id=vid,
            captions=[template.format(concept=concepts[concept_idx])],
            features=features,
            split="train",
            category=concepts[concept_idx]))

    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(entries, manifest_path)
    return manifest_path
