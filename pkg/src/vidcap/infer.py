"""Caption generation from a trained model: greedy and beam decoding.

Both decoders renormalize each step's distribution over emittable tokens
(PAD and BOS are masked out before the log-softmax), score in float64, and
run with gradients and dropout off.  A sequence's score is its total
log-probability including the terminal EOS, divided by (content length + 1)
raised to the length exponent alpha; greedy reports the raw total, which is
the same quantity at alpha = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import ContractError, DataError
from .featio import Manifest, StreamKind
from .s2vt import Checkpoint, DecoderState, EncodedStates, ModelConfig, \
    ModelParams, decode_step, encode
from .textkit import BOS_ID, EOS_ID, MAX_CONTENT_WORDS, PAD_ID, Vocabulary, decode

DEFAULT_BEAM_WIDTH = 5
DEFAULT_LENGTH_ALPHA = 0.7


@dataclass(frozen=True)
class DecodeResult:
    caption: str
    score: float
    token_ids: tuple[int, ...]


def _step_logprobs(cfg: ModelConfig, params: ModelParams, prev_id: int,
                   state: DecoderState, enc: EncodedStates
                   ) -> tuple[np.ndarray, DecoderState]:
    dist, new_state = decode_step(cfg, params, prev_id, state, enc)
    logits = dist.logits.data[0].astype(np.float64).copy()
    logits[PAD_ID] = -np.inf
    logits[BOS_ID] = -np.inf
    shifted = logits - logits.max()
    logprobs = shifted - np.log(np.exp(shifted).sum())
    return logprobs, new_state


def greedy_decode(cfg: ModelConfig, params: ModelParams, vocab: Vocabulary,
                  values: np.ndarray, valid_steps: int,
                  max_len: int = MAX_CONTENT_WORDS) -> DecodeResult:
    """Argmax decoding; ties resolve to the lowest token id."""
    with nk.no_grad():
        enc = encode(cfg, params, values, valid_steps)
        state = enc.carry
        prev = BOS_ID
        ids: list[int] = []
        total = 0.0
        for _ in range(max_len):
            logprobs, state = _step_logprobs(cfg, params, prev, state, enc)
            token = int(np.argmax(logprobs))
            total += logprobs[token]
            if token == EOS_ID:
                return DecodeResult(decode(ids, vocab), total, tuple(ids))
            ids.append(token)
            prev = token
        # length cap reached: close the sequence with a forced EOS
        logprobs, state = _step_logprobs(cfg, params, prev, state, enc)
        return DecodeResult(decode(ids, vocab), total + logprobs[EOS_ID], tuple(ids))


@dataclass
class _Hyp:
    ids: tuple[int, ...]
    logp: float
    state: DecoderState


def beam_decode(cfg: ModelConfig, params: ModelParams, vocab: Vocabulary,
                values: np.ndarray, valid_steps: int, *,
                width: int = DEFAULT_BEAM_WIDTH,
                alpha: float = DEFAULT_LENGTH_ALPHA,
                max_len: int = MAX_CONTENT_WORDS) -> list[DecodeResult]:
    """Beam search returning up to `width` finished sequences, best first.

    Every partial hypothesis contributes its EOS-terminated form to the
    finished pool, and survivors at the length cap are closed the same way,
    so nothing the search visits is ever lost to pruning.  With a width of
    at least (vocab - 3) ** max_len the search is exhaustive.
    """
    if width < 1:
        raise ContractError(f"beam_decode: width must be >= 1, got {width}")
    if alpha < 0:
        raise ContractError(f"beam_decode: alpha must be >= 0, got {alpha}")
    if not 1 <= max_len <= MAX_CONTENT_WORDS:
        raise ContractError(f"beam_decode: max_len {max_len} outside "
                            f"1..{MAX_CONTENT_WORDS}")
    with nk.no_grad():
        enc = encode(cfg, params, values, valid_steps)
        live = [_Hyp((), 0.0, enc.carry)]
        finished: list[tuple[tuple[int, ...], float]] = []
        for _ in range(max_len):
            candidates: list[_Hyp] = []
            for hyp in live:
                prev = hyp.ids[-1] if hyp.ids else BOS_ID
                logprobs, state = _step_logprobs(cfg, params, prev, hyp.state, enc)
                finished.append((hyp.ids, hyp.logp + logprobs[EOS_ID]))
                for token in range(3, cfg.vocab_size):
                    candidates.append(_Hyp(hyp.ids + (token,),
                                           hyp.logp + logprobs[token], state))
            candidates.sort(key=lambda h: -h.logp)
            live = candidates[:width]
        for hyp in live:
            prev = hyp.ids[-1] if hyp.ids else BOS_ID
            logprobs, _ = _step_logprobs(cfg, params, prev, hyp.state, enc)
            finished.append((hyp.ids, hyp.logp + logprobs[EOS_ID]))

    def normalized(item):
        ids, logp = item
        return logp / (len(ids) + 1) ** alpha

    ranked = sorted(finished, key=normalized, reverse=True)[:width]
    return [DecodeResult(decode(list(ids), vocab), normalized((ids, logp)), ids)
            for ids, logp in ranked]


def caption_manifest(ckpt: Checkpoint, vocab: Vocabulary, manifest: Manifest,
                     split: str, *, decoder: str = "greedy",
                     width: int = DEFAULT_BEAM_WIDTH,
                     alpha: float = DEFAULT_LENGTH_ALPHA) -> list[dict]:
    """Caption every clip in a manifest split with a trained checkpoint.

    The feature selection comes from the checkpoint metadata, so the clips
    are fused exactly as they were during training.  Returns one record per
    video: {video_id, caption, score, decoder}.
    """
    if decoder not in ("greedy", "beam"):
        raise ContractError(f"caption_manifest: unknown decoder {decoder!r}")
    if vocab.sha256() != ckpt.meta.get("vocab_sha256"):
        raise DataError("caption_manifest: vocabulary does not match the one "
                        "the checkpoint was trained with")
    labels = ckpt.meta.get("features")
    if not labels:
        raise DataError("caption_manifest: checkpoint metadata lacks the "
                        "feature selection")
    selection = tuple(StreamKind.from_label(name) for name in labels)
    entries = manifest.by_split(split) if split != "all" else manifest.entries
    if not entries:
        raise DataError(f"caption_manifest: no entries in split {split!r}")

    records = []
    for entry in sorted(entries, key=lambda e: e.video_id):
        clip = manifest.load_fused(entry, selection)
        if decoder == "greedy":
            result = greedy_decode(ckpt.cfg, ckpt.params, vocab,
                                   clip.values, clip.valid_steps)
        else:
            result = beam_decode(ckpt.cfg, ckpt.params, vocab,
                                 clip.values, clip.valid_steps,
                                 width=width, alpha=alpha)[0]
        records.append({"video_id": entry.video_id, "caption": result.caption,
                        "score": result.score, "decoder": decoder})
    return records
