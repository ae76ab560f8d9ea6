"""Training mechanics: splitting, batching, Adam, and loop determinism."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from vidcap import numkit as nk, rng, train
from vidcap.errors import ContractError, DataError, NumericError
from vidcap.featio import Manifest, ManifestEntry, load_manifest, synth_features
from vidcap.s2vt import ModelConfig, ModelParams, init_params, load_checkpoint, \
    sequence_loss
from vidcap.textkit import PAD_ID, build_vocab, encode


def plain_entries(n):
    return [ManifestEntry(video_id=f"v{i:05d}", captions=["a thing happens"])
            for i in range(n)]


class TestSplit:
    def test_counts_for_ten_thousand(self):
        out = train.split_dataset(plain_entries(10_000), (0.65, 0.30, 0.05), seed=0)
        tally = {"train": 0, "test": 0, "val": 0}
        for e in out:
            tally[e.split] += 1
        assert tally == {"train": 6500, "test": 3000, "val": 500}

    def test_val_takes_floor_remainder(self):
        out = train.split_dataset(plain_entries(7), (0.65, 0.30, 0.05), seed=1)
        tally = [e.split for e in out]
        # floor(4.55)=4 train, floor(2.1)=2 test, 1 left for val
        assert (tally.count("train"), tally.count("test"), tally.count("val")) \
            == (4, 2, 1)

    def test_same_seed_same_assignment(self):
        a = train.split_dataset(plain_entries(50), (0.65, 0.30, 0.05), seed=9)
        b = train.split_dataset(plain_entries(50), (0.65, 0.30, 0.05), seed=9)
        assert [e.split for e in a] == [e.split for e in b]

    def test_different_seed_differs(self):
        a = train.split_dataset(plain_entries(200), (0.65, 0.30, 0.05), seed=1)
        b = train.split_dataset(plain_entries(200), (0.65, 0.30, 0.05), seed=2)
        assert [e.split for e in a] != [e.split for e in b]

    def test_all_train_ratio(self):
        out = train.split_dataset(plain_entries(10), (1.0, 0.0, 0.0), seed=0)
        assert all(e.split == "train" for e in out)

    def test_preassigned_passes_through(self):
        entries = plain_entries(4)
        for e, s in zip(entries, ("train", "test", "val", "train")):
            e.split = s
        out = train.split_dataset(entries, (0.65, 0.30, 0.05), seed=0)
        assert out is entries

    def test_mixed_assignment_rejected(self):
        entries = plain_entries(4)
        entries[1].split = "train"
        with pytest.raises(ContractError, match="pre-assigned"):
            train.split_dataset(entries, (0.65, 0.30, 0.05), seed=0)


class TestBatches:
    def vocab(self):
        return build_vocab(["a red dog runs", "a cat sits", "birds fly south"],
                           min_count=1)

    def entries(self):
        return [
            ManifestEntry("v0", ["a red dog runs", "a cat sits"]),
            ManifestEntry("v1", ["birds fly south", "a red dog runs",
                                 "a cat sits"]),
        ]

    def test_per_caption_expansion_and_chunking(self):
        batches = train.make_batches(self.entries(), self.vocab(),
                                     batch_size=2, seed=0, epoch=0)
        sizes = [len(b) for b in batches]
        assert sum(sizes) == 5
        assert sizes == [2, 2, 1]

    def test_targets_padded_to_batch_max(self):
        batches = train.make_batches(self.entries(), self.vocab(),
                                     batch_size=3, seed=0, epoch=0)
        for batch in batches:
            widths = {len(ex.target) for ex in batch}
            assert len(widths) == 1
            for ex in batch:
                body = [t for t in ex.target if t != PAD_ID]
                assert ex.target[:len(body)] == body  # PAD only as suffix

    def test_shuffle_is_permutation_of_examples(self):
        vocab = self.vocab()
        batches = train.make_batches(self.entries(), vocab,
                                     batch_size=5, seed=3, epoch=4)
        got = sorted(tuple(t for t in ex.target if t != PAD_ID)
                     for b in batches for ex in b)
        want = sorted(tuple(encode(c, vocab))
                      for e in self.entries() for c in e.captions)
        assert got == want

    def test_epochs_reshuffle_deterministically(self):
        vocab = self.vocab()
        args = (self.entries(), vocab)
        e0 = train.make_batches(*args, batch_size=5, seed=3, epoch=0)
        e0_again = train.make_batches(*args, batch_size=5, seed=3, epoch=0)
        e1 = train.make_batches(*args, batch_size=5, seed=3, epoch=1)
        flat = lambda bs: [ex.target for b in bs for ex in b]
        assert flat(e0) == flat(e0_again)
        assert flat(e0) != flat(e1)


class TestAdam:
    def one_param(self, value):
        # hidden=1, vocab=5 gives out_b the convenient shape (1, 5)
        cfg = ModelConfig(fused_dim=1, hidden=1, vocab_size=5, dropout=0.0)
        tensors = {name: nk.Tensor(np.zeros(shape), requires_grad=True)
                   for name, shape in train.param_shapes(cfg).items()}
        tensors["out_b"] = nk.Tensor(np.full((1, 5), float(value)),
                                     requires_grad=True)
        return ModelParams(**tensors)

    def test_first_step_is_signed_learning_rate(self):
        params = self.one_param(0.0)
        grads = {name: np.zeros_like(t.data) for name, t in params.items()}
        grads["out_b"] = np.array([[2.5, -0.3, 0.0, 1e-6, -4.0]])
        state = train.AdamState()
        before = params.out_b.data.copy()
        train.adam_step(params, grads, state, lr=0.01)
        moved = params.out_b.data - before
        want = -0.01 * np.sign(grads["out_b"])
        # eps only matters where the gradient is ~0
        mask = np.abs(grads["out_b"]) > 1e-4
        assert np.allclose(moved[mask], want[mask], atol=1e-6)
        assert state.t == 1

    def test_quadratic_descent_converges(self):
        params = self.one_param(10.0)
        state = train.AdamState()
        for _ in range(2000):
            grads = {name: np.zeros_like(t.data) for name, t in params.items()}
            grads["out_b"][0, 0] = 2 * (params.out_b.data[0, 0] - 3.0)
            train.adam_step(params, grads, state, lr=0.05)
        assert abs(params.out_b.data[0, 0] - 3.0) < 1e-2

    def test_zero_gradient_leaves_param_still(self):
        params = self.one_param(1.5)
        grads = {name: np.zeros_like(t.data) for name, t in params.items()}
        state = train.AdamState()
        train.adam_step(params, grads, state, lr=0.1)
        assert params.out_b.data[0, 0] == pytest.approx(1.5)

    def test_non_finite_gradient_aborts_naming_param(self):
        params = self.one_param(1.0)
        grads = {name: np.zeros_like(t.data) for name, t in params.items()}
        grads["lstm1_wx"] = grads["lstm1_wx"] + np.nan
        before = {name: t.data.copy() for name, t in params.items()}
        with pytest.raises(NumericError, match="lstm1_wx"):
            train.adam_step(params, grads, train.AdamState(), lr=0.1)
        for name, t in params.items():
            assert np.array_equal(t.data, before[name], equal_nan=True)


class TestExamplePass:
    def test_grads_sum_over_jobs_and_losses_match_single(self):
        cfg = ModelConfig(fused_dim=3, hidden=4, vocab_size=7, dropout=0.0)
        params = init_params(cfg, rng.stream(0, "init"))
        gen = rng.stream(0, "clips")
        jobs = []
        for i in range(3):
            values = gen.normal(0, 1, size=(4, 3)).astype(np.float32)
            target = [1, 4 + (i % 3), 5, 2]
            jobs.append((values, 4, target, rng.stream_key(0, "dropout", 0, i)))
        arrays = {name: t.data for name, t in params.items()}
        grads_all, losses_all = train._example_pass(cfg.to_dict(), arrays, jobs)

        singles = [train._example_pass(cfg.to_dict(), arrays, [job])
                   for job in jobs]
        for i, (_, losses) in enumerate(singles):
            assert losses_all[i] == pytest.approx(losses[0], abs=1e-9)
        for name in grads_all:
            summed = sum(g[name] for g, _ in singles)
            assert np.allclose(grads_all[name], summed, atol=1e-6)

    def test_losses_equal_direct_sequence_loss(self):
        cfg = ModelConfig(fused_dim=2, hidden=3, vocab_size=6, dropout=0.0)
        params = init_params(cfg, rng.stream(1, "init"))
        values = rng.stream(1, "clip").normal(0, 1, size=(3, 2)).astype(np.float32)
        target = [1, 4, 2]
        arrays = {name: t.data for name, t in params.items()}
        _, losses = train._example_pass(
            cfg.to_dict(), arrays, [(values, 3, target, rng.stream_key(1, "d"))])
        direct = sequence_loss(cfg, params, values, 3, target)
        assert losses[0] == pytest.approx(float(direct.data[0, 0]), abs=1e-9)


@pytest.fixture()
def toy_manifest(tmp_path):
    spec = {"clips": 6, "concepts": ["alpha", "beta"],
            "kinds": ["object2d"], "dims": {"object2d": 8}, "frames": 5}
    return load_manifest(synth_features(spec, tmp_path / "feats", seed=11))


def toy_config(**overrides):
    base = dict(learning_rate=1e-3, batch_size=4, epochs=2, seed=5, hidden=8,
                dropout=0.2, attention_layer=2, min_count=1,
                features=("object2d",))
    base.update(overrides)
    return train.TrainConfig(**base)


class TestTrainLoop:
    def test_writes_artifacts_and_log_schema(self, toy_manifest, tmp_path):
        out = train.train_loop(toy_config(), toy_manifest, tmp_path / "run")
        assert out["checkpoint"].exists()
        assert out["vocab"].exists()
        records = [json.loads(line)
                   for line in out["log"].read_text().splitlines()]
        assert [r["epoch"] for r in records] == [0, 1]
        for r in records:
            assert set(r) >= {"epoch", "mean_loss", "examples", "wall_ms"}
            assert r["examples"] == 6

    def test_first_epoch_loss_near_uniform(self, toy_manifest, tmp_path):
        cfg = toy_config(learning_rate=1e-5, epochs=1, dropout=0.0)
        out = train.train_loop(cfg, toy_manifest, tmp_path / "run")
        # vocab: the/object/moves/alpha/beta plus 4 reserved ids
        uniform = math.log(9)
        assert abs(out["epoch_losses"][0] - uniform) / uniform < 0.10

    def test_same_seed_reruns_bit_identical(self, toy_manifest, tmp_path):
        cfg = toy_config()
        a = train.train_loop(cfg, toy_manifest, tmp_path / "a")
        b = train.train_loop(cfg, toy_manifest, tmp_path / "b")
        assert a["epoch_losses"] == b["epoch_losses"]
        assert (tmp_path / "a" / "checkpoint.s2vt").read_bytes() == \
            (tmp_path / "b" / "checkpoint.s2vt").read_bytes()
        assert (tmp_path / "a" / "vocab.json").read_bytes() == \
            (tmp_path / "b" / "vocab.json").read_bytes()

    def test_resume_replays_uninterrupted_run(self, toy_manifest, tmp_path):
        full = train.train_loop(toy_config(epochs=4), toy_manifest,
                                tmp_path / "full")
        train.train_loop(toy_config(epochs=2), toy_manifest, tmp_path / "part")
        resumed = train.train_loop(
            toy_config(epochs=4), toy_manifest, tmp_path / "part",
            resume_from=tmp_path / "part" / "checkpoint.s2vt")
        assert resumed["epoch_losses"] == full["epoch_losses"][2:]
        assert (tmp_path / "part" / "checkpoint.s2vt").read_bytes() == \
            (tmp_path / "full" / "checkpoint.s2vt").read_bytes()
        log = [json.loads(line) for line
               in (tmp_path / "part" / "train_log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [0, 1, 2, 3]
        assert [r["mean_loss"] for r in log] == \
            [r["mean_loss"] for r in full_log(tmp_path / "full")]

    def test_resume_with_wrong_vocab_rejected(self, toy_manifest, tmp_path):
        train.train_loop(toy_config(epochs=1), toy_manifest, tmp_path / "run")
        # same size as the real vocabulary so only the hash differs
        other = build_vocab(["zebra yak xylophone walrus vulture"], min_count=1)
        with pytest.raises(DataError, match="vocab"):
            train.train_loop(toy_config(epochs=2), toy_manifest,
                             tmp_path / "run",
                             resume_from=tmp_path / "run" / "checkpoint.s2vt",
                             vocab=other)

    def test_resume_with_wrong_shape_rejected(self, toy_manifest, tmp_path):
        train.train_loop(toy_config(epochs=1), toy_manifest, tmp_path / "run")
        with pytest.raises(ContractError, match="config"):
            train.train_loop(toy_config(epochs=2, hidden=16), toy_manifest,
                             tmp_path / "run",
                             resume_from=tmp_path / "run" / "checkpoint.s2vt")

    def test_empty_train_split_rejected(self, toy_manifest, tmp_path):
        entries = [replace(e, split="test") for e in toy_manifest.entries]
        manifest = Manifest(entries, toy_manifest.root, toy_manifest.dims)
        with pytest.raises(DataError, match="train"):
            train.train_loop(toy_config(), manifest, tmp_path / "run")

    def test_eval_every_adds_val_metrics(self, tmp_path):
        spec = {"clips": 8, "concepts": ["alpha", "beta"],
                "kinds": ["object2d"], "dims": {"object2d": 8}, "frames": 5}
        loaded = load_manifest(synth_features(spec, tmp_path / "feats", seed=3))
        entries = [replace(e, split=None) for e in loaded.entries]
        manifest = Manifest(entries, loaded.root, loaded.dims)
        out = train.train_loop(toy_config(epochs=2, eval_every=2,
                                          split_ratios=(0.5, 0.25, 0.25)),
                               manifest, tmp_path / "run")
        records = [json.loads(line)
                   for line in out["log"].read_text().splitlines()]
        assert "val" not in records[0]
        assert "bleu1" in records[1]["val"]
        assert "cider_d" in records[1]["val"]

    def test_workers_pool_runs(self, toy_manifest, tmp_path):
        cfg = toy_config(epochs=1, workers=2)
        out = train.train_loop(cfg, toy_manifest, tmp_path / "run")
        assert all(math.isfinite(x) for x in out["epoch_losses"])
        ckpt = load_checkpoint(out["checkpoint"])
        assert ckpt.meta["epoch"] == 1


def full_log(run_dir):
    return [json.loads(line)
            for line in (run_dir / "train_log.jsonl").read_text().splitlines()]
