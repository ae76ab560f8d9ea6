import numpy as np
import pytest

from vidextract.backbones import REGISTRY, build_backbones

from cliputil import write_clip, write_wav

ALL_KINDS = tuple(REGISTRY)


@pytest.fixture(scope="session")
def clips(tmp_path_factory):
    """Three clips: voiced (15 frames + sine WAV), quiet (10 frames, no
    WAV), muted (8 frames + all-zero WAV)."""
    root = tmp_path_factory.mktemp("clips")
    write_clip(root / "clip.mp4", 15)
    t = np.arange(9600, dtype=np.float32) / 8000.0
    write_wav(root / "clip.wav", 0.3 * np.sin(2.0 * np.pi * 440.0 * t))
    write_clip(root / "quiet.mp4", 10)
    write_clip(root / "muted.mp4", 8)
    write_wav(root / "muted.wav", np.zeros(8000, dtype=np.float32))
    return {
        "dir": root,
        "clip": root / "clip.mp4",
        "quiet": root / "quiet.mp4",
        "muted": root / "muted.mp4",
    }


@pytest.fixture(scope="session")
def backbones():
    """All five backbones, seeded random-init; built once, they are heavy."""
    return build_backbones(ALL_KINDS, allow_random_init=True)
