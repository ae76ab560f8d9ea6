"""Backbone registry, weights policy, and runner output shapes."""

import numpy as np
import pytest
import torch

from vidcap.featio import CANONICAL_DIMS, StreamKind

from vidextract import backbones as bb
from vidextract.errors import SetupError


class TestRegistry:
    def test_dims_match_the_canonical_profile(self):
        for kind, dim in CANONICAL_DIMS.items():
            assert bb.REGISTRY[kind.label].dim == dim

    def test_every_label_is_a_known_stream_kind(self):
        for label in bb.REGISTRY:
            assert StreamKind.from_label(label).label == label

    def test_intermediate_dim_is_the_vgg_channel_sum(self):
        assert len(bb._VGG_RELU_LAYERS) == 13
        assert bb.REGISTRY["intermediate2d"].dim == 4224

    def test_stable_seeds_differ_across_models(self):
        seeds = {bb.stable_seed(s.model_id) for s in bb.REGISTRY.values()}
        assert len(seeds) == len(bb.REGISTRY)


class TestWeightsPolicy:
    def test_missing_weights_is_a_setup_error(self, tmp_path):
        with pytest.raises(SetupError) as err:
            bb.build_backbone("scene", weights_dir=tmp_path)
        message = str(err.value)
        assert "resnet50" in message
        assert "https://" in message
        assert "--allow-random-init" in message

    def test_audio_needs_no_weights_file(self):
        backbone = bb.build_backbone("audio")
        assert backbone.weights == "random-init"
        assert backbone.seed == bb.stable_seed("vidextract/soundstack-v1")

    def test_find_weights_honors_explicit_dir(self, tmp_path):
        spec = bb.REGISTRY["scene"]
        name = spec.weights_url.rsplit("/", 1)[1]
        assert bb.find_weights(spec, tmp_path) is None
        (tmp_path / name).write_bytes(b"")
        assert bb.find_weights(spec, tmp_path) == tmp_path / name

    def test_cached_state_dict_is_loaded(self, tmp_path):
        # fabricate a weights file with the right name and schema, then
        # check the build takes the pretrained path
        spec = bb.REGISTRY["action3d"]
        name = spec.weights_url.rsplit("/", 1)[1]
        torch.manual_seed(99)
        donor = bb._factory("action3d")
        torch.save(donor.state_dict(), tmp_path / name)
        built = bb.build_backbone("action3d", weights_dir=tmp_path)
        assert built.weights == f"pretrained:{name}"
        assert built.seed is None

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="no backbone"):
            bb.build_backbone("flow", allow_random_init=True)


class TestDeterminism:
    def test_rebuilt_scene_features_are_identical(self):
        x = np.zeros((1, 3, 224, 224), dtype=np.float32)
        a = bb.build_backbone("scene", allow_random_init=True).features(x)
        b = bb.build_backbone("scene", allow_random_init=True).features(x)
        assert a.tobytes() == b.tobytes()

    def test_rebuilt_audio_features_are_identical(self):
        wave = np.sin(np.arange(9000, dtype=np.float32) / 20.0)
        a = bb.build_backbone("audio").features(wave)
        b = bb.build_backbone("audio").features(wave)
        assert a.tobytes() == b.tobytes()


class TestRunners:
    def test_object2d_shape(self, backbones):
        out = backbones["object2d"].features(
            np.zeros((2, 3, 224, 224), dtype=np.float32))
        assert out.shape == (2, 2048)
        assert out.dtype == np.float32

    def test_scene_shape(self, backbones):
        out = backbones["scene"].features(
            np.zeros((1, 3, 224, 224), dtype=np.float32))
        assert out.shape == (1, 2048)

    def test_intermediate_shape(self, backbones):
        out = backbones["intermediate2d"].features(
            np.ones((1, 3, 224, 224), dtype=np.float32))
        assert out.shape == (1, 4224)

    def test_action3d_tiles_short_clips(self, backbones):
        two = np.zeros((2, 3, 224, 224), dtype=np.float32)
        out = backbones["action3d"].features(two)
        assert out.shape == (1, 1024)

    def test_action3d_temporal_rows(self, backbones):
        fifteen = np.zeros((15, 3, 224, 224), dtype=np.float32)
        out = backbones["action3d"].features(fifteen)
        assert out.shape == (2, 1024)

    def test_audio_pads_short_waveforms(self, backbones):
        out = backbones["audio"].features(np.zeros(100, dtype=np.float32))
        assert out.shape == (1, 1024)

    def test_channel_max_of_constant_map(self):
        act = torch.full((2, 3, 5, 7), 2.5)
        out = bb.channel_max(act)
        assert out.shape == (2, 3)
        assert torch.all(out == 2.5)
