"""Backbone registry and the offline weights policy.

One backbone per stream kind.  Weight files are looked up on disk only,
either in an explicit directory or in the torch hub cache
(~/.cache/torch/hub/checkpoints); nothing is ever downloaded.  When the
file is missing the build fails with the download URL in the message,
unless the caller opts into a seeded random initialization.  That fallback
keeps the pipeline runnable (and byte-reproducible, since every model is
constructed under a seed derived from its id) but the features carry no
meaning, so the choice is recorded in the sidecar next to each output.

The audio backbone is a small strided Conv1d stack standing in for a
published audio network whose weights are not packaged for this toolchain;
it is always seeded, never downloaded.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn
from torchvision import models
from torchvision.models.feature_extraction import create_feature_extractor

from .errors import SetupError
from .video import (AUDIO_MIN_SAMPLES, audio_preprocessing_spec,
                    image_preprocessing_spec, spec_hash)

BATCH = 8  # frames per forward pass through the 2-D backbones

CLIP_MIN_FRAMES = 5  # the 3-D net's temporal kernels reject shorter clips

# ReLU positions in the VGG-16 feature stack, one per conv layer; their
# channel counts sum to 4224.
_VGG_RELU_LAYERS = (1, 3, 6, 8, 11, 13, 15, 18, 20, 22, 25, 27, 29)


@dataclass(frozen=True)
class BackboneSpec:
    label: str          # stream kind this backbone produces
    model_id: str
    layer_name: str     # where in the net the features are read
    dim: int
    weights_url: str | None  # None: no published weights, always seeded


REGISTRY = {
    "object2d": BackboneSpec(
        "object2d", "torchvision/resnext101_32x8d", "avgpool", 2048,
        models.ResNeXt101_32X8D_Weights.DEFAULT.url),
    "scene": BackboneSpec(
        "scene", "torchvision/resnet50", "avgpool", 2048,
        models.ResNet50_Weights.DEFAULT.url),
    "action3d": BackboneSpec(
        "action3d", "torchvision/s3d",
        "features, spatial mean, floor-rule resample to the 40-slot grid", 1024,
        models.video.S3D_Weights.DEFAULT.url),
    "audio": BackboneSpec(
        "audio", "vidextract/soundstack-v1", "conv6, temporal mean", 1024,
        None),
    "intermediate2d": BackboneSpec(
        "intermediate2d", "torchvision/vgg16",
        "per-conv ReLU channel max (13 layers), concatenated", 4224,
        models.VGG16_Weights.DEFAULT.url),
}


@dataclass
class Backbone:
    spec: BackboneSpec
    weights: str        # "pretrained:<file>" or "random-init"
    seed: int | None    # set only for random-init
    _run: Callable[[np.ndarray], np.ndarray]

    def features(self, x: np.ndarray) -> np.ndarray:
        return self._run(x)

    def sidecar(self) -> dict:
        pre = (audio_preprocessing_spec() if self.spec.label == "audio"
               else image_preprocessing_spec())
        return {
            "model_id": self.spec.model_id,
            "layer_name": self.spec.layer_name,
            "preprocessing_hash": spec_hash(pre),
            "weights": self.weights,
            "seed": self.seed,
        }


# --------------------------------------------------------------------------
# weights lookup


def stable_seed(model_id: str) -> int:
    digest = hashlib.sha256(model_id.encode()).digest()
    return int.from_bytes(digest[:4], "little")


def find_weights(spec: BackboneSpec, weights_dir=None) -> Path | None:
    """Locate the cached weights file, or None.

    An explicit weights_dir replaces the default torch hub cache entirely,
    so runs with the flag never depend on what happens to be cached.
    """
    if spec.weights_url is None:
        return None
    name = spec.weights_url.rsplit("/", 1)[1]
    if weights_dir is not None:
        candidate = Path(weights_dir) / name
    else:
        candidate = Path(torch.hub.get_dir()) / "checkpoints" / name
    return candidate if candidate.exists() else None


# --------------------------------------------------------------------------
# model construction


def _sound_stack() -> nn.Module:
    widths = (1, 16, 32, 64, 128, 512, 1024)
    layers = []
    for cin, cout in zip(widths, widths[1:]):
        layers.append(nn.Conv1d(cin, cout, kernel_size=8, stride=4, padding=2))
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


def _factory(label: str) -> nn.Module:
    if label == "object2d":
        return models.resnext101_32x8d(weights=None)
    if label == "scene":
        return models.resnet50(weights=None)
    if label == "action3d":
        return models.video.s3d(weights=None)
    if label == "audio":
        return _sound_stack()
    if label == "intermediate2d":
        return models.vgg16(weights=None)
    raise ValueError(f"no backbone registered for {label!r}")


def channel_max(activation: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W) activation map -> (N, C) spatial maxima."""
    return activation.amax(dim=(2, 3))


def _chunked(x: torch.Tensor, forward) -> torch.Tensor:
    outs = [forward(x[i:i + BATCH]) for i in range(0, x.shape[0], BATCH)]
    return torch.cat(outs, dim=0)


def _make_runner(label: str, model: nn.Module) -> Callable[[np.ndarray], np.ndarray]:
    if label in ("object2d", "scene"):
        fe = create_feature_extractor(model, {"avgpool": "pooled"})

        def run(frames: np.ndarray) -> np.ndarray:
            x = torch.from_numpy(np.ascontiguousarray(frames))
            with torch.no_grad():
                pooled = _chunked(x, lambda b: fe(b)["pooled"].flatten(1))
            return pooled.numpy()

    elif label == "intermediate2d":
        nodes = {f"features.{i}": f"relu{i}" for i in _VGG_RELU_LAYERS}
        fe = create_feature_extractor(model, nodes)

        def run(frames: np.ndarray) -> np.ndarray:
            x = torch.from_numpy(np.ascontiguousarray(frames))

            def mac(batch):
                acts = fe(batch)
                return torch.cat([channel_max(acts[f"relu{i}"])
                                  for i in _VGG_RELU_LAYERS], dim=1)

            with torch.no_grad():
                out = _chunked(x, mac)
            return out.numpy()

    elif label == "action3d":

        def run(frames: np.ndarray) -> np.ndarray:
            if frames.shape[0] < CLIP_MIN_FRAMES:
                tail = np.repeat(frames[-1:], CLIP_MIN_FRAMES - frames.shape[0], axis=0)
                frames = np.concatenate([frames, tail], axis=0)
            vol = torch.from_numpy(np.ascontiguousarray(frames))
            vol = vol.permute(1, 0, 2, 3).unsqueeze(0)  # (1, 3, T, 224, 224)
            with torch.no_grad():
                act = model.features(vol)       # (1, 1024, T', h, w)
                act = act.mean(dim=(3, 4))[0]   # (1024, T')
            return act.transpose(0, 1).numpy()

    elif label == "audio":

        def run(samples: np.ndarray) -> np.ndarray:
            if samples.shape[0] < AUDIO_MIN_SAMPLES:
                pad = np.zeros(AUDIO_MIN_SAMPLES - samples.shape[0], dtype=np.float32)
                samples = np.concatenate([samples, pad])
            x = torch.from_numpy(samples).reshape(1, 1, -1)
            with torch.no_grad():
                act = model(x)          # (1, 1024, L')
                out = act.mean(dim=2)   # (1, 1024)
            return out.numpy()

    else:
        raise ValueError(f"no backbone registered for {label!r}")

    return run


def build_backbone(label: str, *, allow_random_init: bool = False,
                   weights_dir=None) -> Backbone:
    """Construct the backbone for one stream kind, weights resolved offline.

    Raises SetupError when pretrained weights are required but absent; the
    message carries the URL and both accepted drop locations.
    """
    if label not in REGISTRY:
        raise ValueError(f"no backbone registered for {label!r}")
    spec = REGISTRY[label]
    src = find_weights(spec, weights_dir)
    if src is None and spec.weights_url is not None and not allow_random_init:
        name = spec.weights_url.rsplit("/", 1)[1]
        cache = Path(torch.hub.get_dir()) / "checkpoints"
        raise SetupError(
            f"{label}: weights file {name} not found; download\n"
            f"  {spec.weights_url}\n"
            f"into {cache}/ (or a directory passed via --weights-dir), or rerun "
            f"with --allow-random-init to accept a seeded untrained network "
            f"(features will carry no meaning)")

    # Constructing under a model-id seed makes the random-init path, and
    # therefore every downstream byte, reproducible across runs.
    torch.manual_seed(stable_seed(spec.model_id))
    model = _factory(label)
    if src is not None:
        model.load_state_dict(torch.load(src, map_location="cpu"))
        weights, seed = f"pretrained:{src.name}", None
    else:
        weights, seed = "random-init", stable_seed(spec.model_id)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return Backbone(spec=spec, weights=weights, seed=seed,
                    _run=_make_runner(label, model))


def build_backbones(labels, *, allow_random_init: bool = False,
                    weights_dir=None) -> dict[str, Backbone]:
    out = {}
    for label in labels:
        if label not in out:
            out[label] = build_backbone(label, allow_random_init=allow_random_init,
                                        weights_dir=weights_dir)
    return out
