"""Shared fixtures: tiny model configs and synthetic clips."""

import numpy as np
import pytest

from vidcap import rng
from vidcap.s2vt import ModelConfig, init_params


@pytest.fixture
def tiny_cfg():
    # small enough for finite differences; dropout off so eval == train
    return ModelConfig(fused_dim=6, hidden=8, vocab_size=12, dropout=0.0)


def make_model(cfg, seed=0, dtype=np.float64):
    return init_params(cfg, rng.stream(seed, "init"), dtype=dtype)


def make_clip(cfg, steps, valid_steps, seed=0, dtype=np.float64):
    gen = rng.stream(seed, "clip")
    values = gen.normal(size=(steps, cfg.fused_dim)).astype(dtype)
    values[valid_steps:] = 0.0
    return values
