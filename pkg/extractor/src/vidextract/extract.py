"""Turn one video into FVEC feature files plus provenance sidecars.

Each requested stream kind becomes <stem>.<kind>.fvec in the output
directory, written through the captioning package's own writer so the
files are valid by construction, plus <stem>.<kind>.fvec.json recording
which network produced the rows.  Writes go through a temp file and a
rename, so readers never observe a half-written artifact.

Row conventions: the three frame-grid kinds (object2d, scene, action3d)
always emit exactly 40 rows.  A clip with fewer decodable frames than the
budget keeps them all and zero-fills the remaining rows; the 3-D net's
coarser temporal output is spread over the grid with the same floor rule
used for sampling.  The 1-per-second kind keeps its natural row count,
and audio is clip-level: one row, or zero rows for a silent clip (no
sibling WAV, or all-zero samples).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vidcap.featio import FeatureStream, ManifestEntry, StreamKind, write_fvec

from . import video
from .backbones import Backbone
from .errors import JobError

GRID_KINDS = ("object2d", "scene", "action3d")  # always written with 40 rows


@dataclass(frozen=True)
class ExtractionJob:
    video: Path
    kinds: tuple[str, ...]
    out_dir: Path
    frame_budget: int = video.FRAME_BUDGET


# --------------------------------------------------------------------------
# atomic artifact writes


def _write_fvec_atomic(stream: FeatureStream, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_fvec(stream, tmp)
    os.replace(tmp, path)


def _write_sidecar(path: Path, record: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# per-kind feature assembly


def _grid_resample(rows: np.ndarray, budget: int) -> np.ndarray:
    idx = [(k * rows.shape[0]) // budget for k in range(budget)]
    return rows[idx]


def _pad_rows(rows: np.ndarray, budget: int) -> np.ndarray:
    if rows.shape[0] == budget:
        return rows
    out = np.zeros((budget, rows.shape[1]), dtype=rows.dtype)
    out[:rows.shape[0]] = rows
    return out


def _audio_stream(job: ExtractionJob, backbone: Backbone) -> FeatureStream:
    wav = video.audio_path_for(job.video)
    if wav.exists():
        samples = video.load_waveform(wav)
        if np.any(samples):
            return FeatureStream(StreamKind.AUDIO, backbone.features(samples))
    silent = np.zeros((0, backbone.spec.dim), dtype=np.float32)
    return FeatureStream(StreamKind.AUDIO, silent)


def run_job(job: ExtractionJob, backbones: dict[str, Backbone]) -> dict[str, Path]:
    """Extract every requested kind; returns {kind label: written path}."""
    missing = [k for k in job.kinds if k not in backbones]
    if missing:
        raise JobError(f"{job.video}: no backbone built for {', '.join(missing)}")
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(job.video).stem

    # Probe even for audio-only jobs: an unreadable clip must fail loudly
    # rather than quietly produce a silent stream.
    info = video.probe(job.video)
    grid_idx: list[int] = []
    sec_idx: list[int] = []
    if any(k in GRID_KINDS for k in job.kinds):
        grid_idx = video.select_indices(info.frames, job.frame_budget)
    if "intermediate2d" in job.kinds:
        sec_idx = video.second_indices(info.frames, info.fps)

    # One decoding pass serves every visual kind; frames are preprocessed
    # as they stream by so the raw clip never sits in memory.
    wanted = sorted(set(grid_idx) | set(sec_idx))
    by_index: dict[int, np.ndarray] = {}
    if wanted:
        decoded = video.decode_frames(job.video, wanted,
                                      transform=video.preprocess_frame)
        by_index = dict(zip(wanted, decoded))
    grid_batch = (np.stack([by_index[i] for i in grid_idx])
                  if grid_idx else None)

    written: dict[str, Path] = {}
    for label in job.kinds:
        backbone = backbones[label]
        if label == "audio":
            stream = _audio_stream(job, backbone)
        elif label in ("object2d", "scene"):
            rows = _pad_rows(backbone.features(grid_batch), job.frame_budget)
            stream = FeatureStream(StreamKind.from_label(label), rows)
        elif label == "action3d":
            rows = _grid_resample(backbone.features(grid_batch), job.frame_budget)
            stream = FeatureStream(StreamKind.ACTION3D, rows)
        elif label == "intermediate2d":
            batch = np.stack([by_index[i] for i in sec_idx])
            stream = FeatureStream(StreamKind.INTERMEDIATE2D, backbone.features(batch))
        else:
            raise JobError(f"{job.video}: unknown stream kind {label!r}")

        path = out_dir / f"{stem}.{label}.fvec"
        _write_fvec_atomic(stream, path)
        _write_sidecar(path.with_name(path.name + ".json"), backbone.sidecar())
        written[label] = path
    return written


# --------------------------------------------------------------------------
# manifest plumbing


def append_manifest_entry(manifest_path, video_id: str, captions: list[str],
                          features: dict[str, Path], split: str | None = None) -> None:
    """Add one clip to a JSON-lines manifest the captioning package can load.

    Feature paths are stored relative to the manifest's directory.  A
    second entry for the same video id is refused, since the consumer
    treats duplicates as a corrupt dataset.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.exists():
        for line in manifest_path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                seen = json.loads(line).get("video_id")
            except json.JSONDecodeError:
                seen = None
            if seen == video_id:
                raise JobError(f"{manifest_path}: already has an entry for {video_id!r}")
    entry = ManifestEntry(
        video_id=video_id,
        captions=list(captions),
        features={StreamKind.from_label(label): os.path.relpath(path, manifest_path.parent)
                  for label, path in features.items()},
        split=split)
    with open(manifest_path, "a") as fh:
        fh.write(entry.to_json() + "\n")
