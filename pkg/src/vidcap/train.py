"""Dataset splitting, batching, Adam, and the training loop.

Training expands every (clip, caption) pair into one example, reshuffles
each epoch from (seed, epoch), and optimizes the teacher-forced likelihood.
All stochastic choices derive from keyed streams, so a run is a pure
function of (config, manifest, seed) and resuming from a checkpoint at an
epoch boundary replays the exact uninterrupted trajectory.

With workers > 1 per-example gradients are computed in a process pool and
summed; the merge is still ordered, but cross-process float behaviour is not
guaranteed bit-identical, so reproducibility claims hold for workers=1.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numkit as nk
from . import rng
from .errors import ContractError, DataError, NumericError
from .featio import Manifest, ManifestEntry, StreamKind, fused_dim
from .s2vt import (ModelConfig, ModelParams, init_params, load_checkpoint,
                   param_shapes, save_checkpoint, sequence_loss)
from .textkit import PAD_ID, Vocabulary, build_vocab, encode

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    hidden: int = 512
    dropout: float = 0.2
    attention_layer: int = 2
    min_count: int = 1
    split_ratios: tuple[float, float, float] = (0.65, 0.30, 0.05)
    features: tuple[str, ...] = ("object2d",)
    eval_every: int = 0  # epochs between val evaluations; 0 = final only
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ContractError("TrainConfig: learning_rate/batch_size/epochs out of range")
        if self.hidden <= 0 or self.min_count < 1 or self.workers < 1:
            raise ContractError("TrainConfig: hidden/min_count/workers out of range")
        ratios = tuple(float(r) for r in self.split_ratios)
        if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ContractError(f"TrainConfig: split_ratios must be 3 non-negatives summing to 1, got {ratios}")
        self.split_ratios = ratios
        self.features = tuple(self.features)

    @classmethod
    def from_dict(cls, record: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(record) - known
        if unknown:
            raise ContractError(f"TrainConfig: unknown keys {sorted(unknown)}")
        return cls(**record)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "seed": self.seed, "hidden": self.hidden,
            "dropout": self.dropout, "attention_layer": self.attention_layer,
            "min_count": self.min_count, "split_ratios": list(self.split_ratios),
            "features": list(self.features), "eval_every": self.eval_every,
            "workers": self.workers,
        }

    def selection(self) -> tuple[StreamKind, ...]:
        return tuple(StreamKind.from_label(name) for name in self.features)


# --------------------------------------------------------------------------
# splitting


def split_dataset(entries: list[ManifestEntry],
                  ratios: tuple[float, float, float],
                  seed: int) -> list[ManifestEntry]:
    """Assign train/test/val; train and test get the floored counts, val the
    remainder.  Fully pre-assigned manifests pass through verbatim; a mix of
    assigned and unassigned entries is an error."""
    assigned = [e for e in entries if e.split is not None]
    if len(assigned) == len(entries):
        return entries
    if assigned:
        raise ContractError(
            f"split_dataset: {len(assigned)} of {len(entries)} entries pre-assigned; "
            "assign all or none")
    n = len(entries)
    n_train = math.floor(ratios[0] * n)
    n_test = math.floor(ratios[1] * n)
    order = rng.stream(seed, "split").permutation(n)
    out = [replace(e) for e in entries]
    for rank, idx in enumerate(order):
        if rank < n_train:
            out[idx].split = "train"
        elif rank < n_train + n_test:
            out[idx].split = "test"
        else:
            out[idx].split = "val"
    return out


# --------------------------------------------------------------------------
# batching


@dataclass
class Example:
    entry: ManifestEntry
    target: list[int]


def make_batches(entries: list[ManifestEntry], vocab: Vocabulary,
                 batch_size: int, seed: int, epoch: int) -> list[list[Example]]:
    """Per-caption examples, reshuffled from (seed, epoch), chunked, and each
    batch's targets right-padded with PAD to the batch maximum."""
    examples = [Example(entry, encode(caption, vocab))
                for entry in entries for caption in entry.captions]
    order = rng.stream(seed, "shuffle", epoch).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    batches = []
    for lo in range(0, len(shuffled), batch_size):
        batch = shuffled[lo:lo + batch_size]
        width = max(len(ex.target) for ex in batch)
        batches.append([Example(ex.entry, ex.target + [PAD_ID] * (width - len(ex.target)))
                        for ex in batch])
    return batches


class ClipCache:
    """Fused clips by video id; one selection per cache."""

    def __init__(self, manifest: Manifest, selection: tuple[StreamKind, ...]):
        self.manifest = manifest
        self.selection = selection
        self._held: dict[str, object] = {}

    def get(self, entry: ManifestEntry):
        clip = self._held.get(entry.video_id)
        if clip is None:
            clip = self.manifest.load_fused(entry, self.selection)
            self._held[entry.video_id] = clip
        return clip


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.  Non-finite gradients abort
    before any parameter moves."""
    for name, _ in params.items():
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in parameter '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, tensor in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --------------------------------------------------------------------------
# per-example gradients (top level so a process pool can run them)


def _example_pass(cfg_dict: dict, param_arrays: dict, jobs: list) -> tuple[dict, list]:
    """Losses and summed grads for [(values, valid_steps, target, gen_key)]."""
    cfg = ModelConfig(**cfg_dict)
    tensors = {name: nk.Tensor(param_arrays[name], requires_grad=True)
               for name in param_arrays}
    params = ModelParams(**tensors)
    losses = []
    for values, valid_steps, target, gen_key in jobs:
        gen = np.random.Generator(np.random.Philox(key=gen_key))
        loss = sequence_loss(cfg, params, values, valid_steps, target,
                             training=True, gen=gen)
        nk.backward(loss)
        losses.append(float(loss.data[0, 0]))
    return {name: t.grad for name, t in params.items()}, losses


# --------------------------------------------------------------------------
# loop


def train_loop(cfg: TrainConfig, manifest: Manifest, out_dir,
               *, resume_from=None, vocab: Vocabulary | None = None,
               log_cb=None) -> dict:
    """Train on the manifest's train split; returns a summary dict.

    Writes vocab.json, train_log.jsonl, and checkpoint.s2vt under out_dir.
    The checkpoint carries the Adam moments, so training continued from it
    matches the uninterrupted run batch for batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    selection = cfg.selection()

    entries = split_dataset(manifest.entries, cfg.split_ratios, cfg.seed)
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "val"]
    if not train_entries:
        raise DataError("train_loop: empty train split")

    if vocab is None:
        vocab = build_vocab([c for e in train_entries for c in e.captions],
                            min_count=cfg.min_count)
    vocab_path = out_dir / "vocab.json"
    vocab.save(vocab_path)

    model_cfg = ModelConfig(
        fused_dim=fused_dim(selection, manifest.dims),
        hidden=cfg.hidden, vocab_size=len(vocab), dropout=cfg.dropout,
        attention_layer=cfg.attention_layer)

    adam = AdamState()
    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.cfg != model_cfg:
            raise ContractError(
                f"train_loop: checkpoint config {ckpt.cfg} != run config {model_cfg}")
        if ckpt.meta.get("vocab_sha256") != vocab.sha256():
            raise DataError("train_loop: checkpoint was trained with a different vocabulary")
        params = ckpt.params
        adam.t = int(ckpt.meta.get("adam", {}).get("t", 0))
        for name in param_shapes(model_cfg):
            adam.m[name] = ckpt.extras[f"adam_m.{name}"]
            adam.v[name] = ckpt.extras[f"adam_v.{name}"]
        start_epoch = int(ckpt.meta.get("epoch", 0))
    else:
        params = init_params(model_cfg, rng.stream(cfg.seed, "init"))

    cache = ClipCache(manifest, selection)
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "checkpoint.s2vt"
    if start_epoch == 0 and log_path.exists():
        log_path.unlink()

    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    epoch_losses: list[float] = []
    try:
        for epoch in range(start_epoch, cfg.epochs):
            started = time.perf_counter()
            batches = make_batches(train_entries, vocab, cfg.batch_size,
                                   cfg.seed, epoch)
            loss_sum = 0.0
            example_count = 0
            ordinal = 0
            for batch in batches:
                jobs = []
                for ex in batch:
                    clip = cache.get(ex.entry)
                    jobs.append((clip.values, clip.valid_steps, ex.target,
                                 rng.stream_key(cfg.seed, "dropout", epoch, ordinal)))
                    ordinal += 1
                grads, losses = _run_jobs(model_cfg, params, jobs, pool, cfg.workers)
                inv = 1.0 / len(batch)
                adam_step(params, {n: g * inv for n, g in grads.items()},
                          adam, cfg.learning_rate)
                loss_sum += sum(losses)
                example_count += len(batch)

            mean_loss = loss_sum / example_count
            epoch_losses.append(mean_loss)
            record = {"epoch": epoch, "mean_loss": mean_loss,
                      "examples": example_count,
                      "wall_ms": round(1000 * (time.perf_counter() - started), 3)}

            due_eval = cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0
            if due_eval and val_entries:
                record["val"] = _evaluate_split(model_cfg, params, vocab, cache,
                                                val_entries)
            if due_eval:
                _save(ckpt_path, model_cfg, params, vocab, cfg, adam, epoch + 1)

            with open(log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if log_cb is not None:
                log_cb(record)
    finally:
        if pool is not None:
            pool.shutdown()

    _save(ckpt_path, model_cfg, params, vocab, cfg, adam, cfg.epochs)
    return {"checkpoint": ckpt_path, "vocab": vocab_path, "log": log_path,
            "epoch_losses": epoch_losses, "model_config": model_cfg}


def _run_jobs(model_cfg, params, jobs, pool, workers):
    cfg_dict = model_cfg.to_dict()
    arrays = {name: t.data for name, t in params.items()}
    if pool is None:
        return _example_pass(cfg_dict, arrays, jobs)
    chunks = [jobs[i::workers] for i in range(workers)]
    futures = [pool.submit(_example_pass, cfg_dict, arrays, chunk)
               for chunk in chunks if chunk]
    grads: dict[str, np.ndarray] | None = None
    losses_parts = []
    for future in futures:
        part_grads, part_losses = future.result()
        losses_parts.append(part_losses)
        if grads is None:
            grads = part_grads
        else:
            for name in grads:
                grads[name] += part_grads[name]
    return grads, [loss for part in losses_parts for loss in part]


def _evaluate_split(model_cfg, params, vocab, cache, entries) -> dict:
    from .infer import greedy_decode
    from .metrics import evaluate

    hyps = {}
    for entry in entries:
        clip = cache.get(entry)
        hyps[entry.video_id] = greedy_decode(
            model_cfg, params, vocab, clip.values, clip.valid_steps).caption
    refs = {entry.video_id: entry.captions for entry in entries}
    report = evaluate(hyps, refs)
    return report.to_dict()


def _save(path, model_cfg, params, vocab, cfg, adam, epoch) -> None:
    extras = {}
    for name in param_shapes(model_cfg):
        extras[f"adam_m.{name}"] = adam.m.get(
            name, np.zeros(param_shapes(model_cfg)[name], dtype=np.float32))
        extras[f"adam_v.{name}"] = adam.v.get(
            name, np.zeros(param_shapes(model_cfg)[name], dtype=np.float32))
    meta = {
        "vocab_sha256": vocab.sha256(),
        "seed": cfg.seed,
        "step": adam.t,
        "epoch": epoch,
        "adam": {"beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                 "t": adam.t},
        "features": list(cfg.features),
    }
    save_checkpoint(path, model_cfg, params, meta=meta, extras=extras)
