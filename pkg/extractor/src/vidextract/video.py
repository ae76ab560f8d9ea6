"""Video and audio decoding, frame sampling, and backbone-ready preprocessing.

Frames are decoded with OpenCV and sampled onto a fixed 40-slot grid with
the same floor rule the captioning package applies when it aligns feature
rows: slot k reads source frame floor(k*N/40).  Clips shorter than the
budget keep every frame.  Each sampled frame is resized so its short side
is 256, center-cropped to 224x224, scaled to [0, 1], and normalized
channelwise; the exact recipe is hashed into the feature sidecars so a
reader can tell whether two extractions are comparable.

Audio rides next to the video as a sibling WAV (clip.mp4 -> clip.wav),
decoded with the stdlib wave module to mono float32 in [-1, 1].
"""

from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import JobError

FRAME_BUDGET = 40
RESIZE_SHORT = 256
CROP = 224
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

FALLBACK_FPS = 30.0  # containers that do not declare a frame rate

AUDIO_MIN_SAMPLES = 8000  # shorter waveforms are zero-padded to this length


# --------------------------------------------------------------------------
# preprocessing provenance


def image_preprocessing_spec() -> dict:
    return {
        "colorspace": "rgb",
        "crop": CROP,
        "interpolation": "bilinear",
        "mean": list(MEAN),
        "resize_short_side": RESIZE_SHORT,
        "scale": "1/255",
        "std": list(STD),
    }


def audio_preprocessing_spec() -> dict:
    return {
        "channels": "mono (mean over channels)",
        "min_samples": AUDIO_MIN_SAMPLES,
        "range": "[-1, 1]",
        "sample_rate": "native",
    }


def spec_hash(spec: dict) -> str:
    canon = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# --------------------------------------------------------------------------
# frame sampling


def select_indices(n: int, budget: int = FRAME_BUDGET) -> list[int]:
    """Indices of the frames that fill the fixed sampling grid.

    n >= budget: slot k reads frame floor(k*n/budget).  n < budget: every
    frame, in order; the caller pads the remaining slots.
    """
    if n < 0:
        raise JobError(f"negative frame count {n}")
    if n < budget:
        return list(range(n))
    return [(k * n) // budget for k in range(budget)]


def second_indices(n: int, fps: float) -> list[int]:
    """Frame indices for 1-per-second sampling: floor(k*fps) while < n."""
    if fps <= 0:
        fps = FALLBACK_FPS
    out = []
    k = 0
    while int(k * fps) < n:
        out.append(int(k * fps))
        k += 1
    return out


# --------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class VideoInfo:
    frames: int
    fps: float


def probe(path) -> VideoInfo:
    """Count decodable frames and read the declared frame rate."""
    path = Path(path)
    if not path.exists():
        raise JobError(f"{path}: no such file")
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise JobError(f"{path}: OpenCV cannot open this container")
        fps = cap.get(cv2.CAP_PROP_FPS)
        if not np.isfinite(fps) or fps <= 0:
            fps = FALLBACK_FPS
        declared = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        n = 0
        while cap.grab():
            n += 1
    finally:
        cap.release()
    if n == 0:
        raise JobError(f"{path}: no decodable frames "
                       f"(container declares {declared}, fps {fps:g})")
    return VideoInfo(frames=n, fps=float(fps))


def decode_frames(path, indices, transform=None) -> list[np.ndarray]:
    """Sequentially decode and return the frames at the given indices.

    Frames come back as RGB uint8 (H, W, 3) in index order, or transformed
    if a per-frame callable is given (applied during the pass, so large
    clips never sit fully decoded in memory).
    """
    wanted = sorted(set(indices))
    if wanted and wanted[0] < 0:
        raise JobError(f"{path}: negative frame index {wanted[0]}")
    cap = cv2.VideoCapture(str(Path(path)))
    try:
        if not cap.isOpened():
            raise JobError(f"{path}: OpenCV cannot open this container")
        got = {}
        pos = 0
        for want in wanted:
            while pos <= want:
                ok, frame = cap.read()
                if not ok:
                    raise JobError(f"{path}: decode stopped at frame {pos}, "
                                   f"frame {want} was requested")
                pos += 1
            rgb = np.ascontiguousarray(frame[:, :, ::-1])
            got[want] = rgb if transform is None else transform(rgb)
    finally:
        cap.release()
    return [got[i] for i in wanted]


# --------------------------------------------------------------------------
# image preprocessing


def preprocess_frame(frame: np.ndarray) -> np.ndarray:
    """One RGB uint8 frame -> normalized float32 (3, 224, 224)."""
    h, w = frame.shape[:2]
    scale = RESIZE_SHORT / min(h, w)
    new_w, new_h = int(round(w * scale)), int(round(h * scale))
    resized = cv2.resize(frame, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    top = (new_h - CROP) // 2
    left = (new_w - CROP) // 2
    patch = resized[top:top + CROP, left:left + CROP]
    x = patch.astype(np.float32) / 255.0
    x -= np.asarray(MEAN, dtype=np.float32)
    x /= np.asarray(STD, dtype=np.float32)
    return x.transpose(2, 0, 1)


def preprocess(frames) -> np.ndarray:
    """Stack of frames -> (N, 3, 224, 224) float32 batch."""
    return np.stack([preprocess_frame(f) for f in frames])


# --------------------------------------------------------------------------
# audio


def audio_path_for(video_path) -> Path:
    return Path(video_path).with_suffix(".wav")


def load_waveform(path) -> np.ndarray:
    """Sibling WAV -> mono float32 samples in [-1, 1] at the native rate."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise JobError(f"{path}: not a readable WAV file: {exc}") from None
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    else:
        raise JobError(f"{path}: unsupported sample width {8 * width} bits")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples.astype(np.float32)
