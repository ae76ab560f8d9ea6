"""Two-layer LSTM encoder-decoder over fused clip features.

Channel protocol.  Encoding, one step per clip row: the bottom LSTM eats the
projected frame features and the top LSTM eats [h1 | zero word slot].
Decoding: the bottom LSTM eats a zero frame slot and the top LSTM eats
[h1 | embedding of the previous word].  The decoder state is carried over
from the last valid encode step.  At each decode step the top hidden state
attends over the stored top-layer encoder states (scaled dot product,
restricted to the valid prefix) and the output head scores [h2 | context].

Forward functions take `training` and a generator; dropout applies to LSTM
outputs only, never to the recurrent path, and only while training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import numkit as nk
from .errors import ContractError, FormatError
from .featio import FusedClip
from .textkit import BOS_ID, EOS_ID, PAD_ID

# gate columns inside each (.., 4H) LSTM matrix: input, forget, output, cell
GATES = ("i", "f", "o", "g")

PARAM_ORDER = (
    "in_proj_w", "in_proj_b", "embed",
    "lstm1_wx", "lstm1_wh", "lstm1_b",
    "lstm2_wx", "lstm2_wh", "lstm2_b",
    "out_w", "out_b",
)


@dataclass(frozen=True)
class ModelConfig:
    fused_dim: int
    hidden: int
    vocab_size: int
    dropout: float = 0.2
    attention_layer: int = 2  # which LSTM's states the decoder attends over

    def __post_init__(self):
        if self.fused_dim <= 0 or self.hidden <= 0 or self.vocab_size <= 4:
            raise ContractError(f"ModelConfig: bad dims {self}")
        if self.attention_layer not in (1, 2):
            raise ContractError("ModelConfig: attention_layer must be 1 or 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"ModelConfig: bad dropout {self.dropout}")

    def to_dict(self) -> dict:
        return {"fused_dim": self.fused_dim, "hidden": self.hidden,
                "vocab_size": self.vocab_size, "dropout": self.dropout,
                "attention_layer": self.attention_layer}


@dataclass
class ModelParams:
    """Named parameter tensors; iteration order is PARAM_ORDER."""

    in_proj_w: nk.Tensor
    in_proj_b: nk.Tensor
    embed: nk.Tensor
    lstm1_wx: nk.Tensor
    lstm1_wh: nk.Tensor
    lstm1_b: nk.Tensor
    lstm2_wx: nk.Tensor
    lstm2_wh: nk.Tensor
    lstm2_b: nk.Tensor
    out_w: nk.Tensor
    out_b: nk.Tensor

    def items(self):
        for name in PARAM_ORDER:
            yield name, getattr(self, name)

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.items()}

    @property
    def dtype(self):
        return self.in_proj_w.data.dtype

    def count(self) -> int:
        return sum(t.data.size for _, t in self.items())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    H, D, V = cfg.hidden, cfg.fused_dim, cfg.vocab_size
    return {
        "in_proj_w": (D, H), "in_proj_b": (1, H),
        "embed": (V, H),
        "lstm1_wx": (H, 4 * H), "lstm1_wh": (H, 4 * H), "lstm1_b": (1, 4 * H),
        "lstm2_wx": (2 * H, 4 * H), "lstm2_wh": (H, 4 * H), "lstm2_b": (1, 4 * H),
        "out_w": (2 * H, V), "out_b": (1, V),
    }


def init_params(cfg: ModelConfig, gen: np.random.Generator,
                dtype=np.float32) -> ModelParams:
    """Weights uniform within +-1/sqrt(fan_in); biases zero except the
    forget gates, which start at +1.0 to keep early memory open."""
    H = cfg.hidden
    tensors = {}
    for name, (rows, cols) in param_shapes(cfg).items():
        if name.endswith("_b"):
            data = np.zeros((rows, cols), dtype=dtype)
            if name in ("lstm1_b", "lstm2_b"):
                data[:, H:2 * H] = 1.0
        else:
            bound = 1.0 / np.sqrt(rows)
            data = gen.uniform(-bound, bound, size=(rows, cols)).astype(dtype)
        tensors[name] = nk.Tensor(data, requires_grad=True)
    return ModelParams(**tensors)


class DecoderState(NamedTuple):
    h1: nk.Tensor
    c1: nk.Tensor
    h2: nk.Tensor
    c2: nk.Tensor


@dataclass
class EncodedStates:
    """Attention memory (one row per encode step) plus the recurrent carry."""

    states: nk.Tensor  # (S, H), states of the configured attention layer
    carry: DecoderState
    valid_steps: int


@dataclass
class StepDistribution:
    logits: nk.Tensor  # (1, V)
    probs: nk.Tensor   # (1, V), rows sum to one


def _lstm_step(x, h_prev, c_prev, wx, wh, b, H):
    """One LSTM cell update; x (1, in), returns (h, c) each (1, H)."""
    z = nk.add(nk.add(nk.matmul(x, wx), nk.matmul(h_prev, wh)), b)
    i = nk.sigmoid(nk.slice_cols(z, 0, H))
    f = nk.sigmoid(nk.slice_cols(z, H, 2 * H))
    o = nk.sigmoid(nk.slice_cols(z, 2 * H, 3 * H))
    g = nk.tanh(nk.slice_cols(z, 3 * H, 4 * H))
    c = nk.add(nk.mul(f, c_prev), nk.mul(i, g))
    h = nk.mul(o, nk.tanh(c))
    return h, c


def encode(cfg: ModelConfig, params: ModelParams, values: np.ndarray,
           valid_steps: int, *, training: bool = False,
           gen: np.random.Generator | None = None) -> EncodedStates:
    """Run the encoder over a (S, fused_dim) clip matrix.

    S is 40 for fused clips but any positive length works.  valid_steps rows
    hold real data; later rows are padding whose states never reach the
    decoder (carry is taken at the last valid step, attention is masked).
    """
    S, D = values.shape
    if D != cfg.fused_dim:
        raise ContractError(f"encode: clip dim {D} != configured fused_dim {cfg.fused_dim}")
    if not 0 <= valid_steps <= S:
        raise ContractError(f"encode: valid_steps {valid_steps} outside [0, {S}]")
    H = cfg.hidden
    dtype = params.dtype

    clip = nk.Tensor(np.ascontiguousarray(values, dtype=dtype))
    projected = nk.add(nk.matmul(clip, params.in_proj_w), params.in_proj_b)

    zero_h = nk.zeros(1, H, dtype)
    h1, c1, h2, c2 = zero_h, zero_h, zero_h, zero_h
    carry = DecoderState(h1, c1, h2, c2)
    kept = []
    for t in range(S):
        x_t = nk.slice_rows(projected, t, t + 1)
        h1, c1 = _lstm_step(x_t, h1, c1, params.lstm1_wx, params.lstm1_wh,
                            params.lstm1_b, H)
        h1_out = nk.dropout(h1, cfg.dropout, gen, training)
        word_slot = nk.zeros(1, H, dtype)
        h2, c2 = _lstm_step(nk.concat_cols(h1_out, word_slot), h2, c2,
                            params.lstm2_wx, params.lstm2_wh, params.lstm2_b, H)
        h2_out = nk.dropout(h2, cfg.dropout, gen, training)
        kept.append(h1_out if cfg.attention_layer == 1 else h2_out)
        if t == valid_steps - 1:
            carry = DecoderState(h1, c1, h2, c2)
    return EncodedStates(states=nk.concat_rows(kept), carry=carry,
                         valid_steps=valid_steps)


def encode_clip(cfg: ModelConfig, params: ModelParams, clip: FusedClip,
                **kwargs) -> EncodedStates:
    return encode(cfg, params, clip.values, clip.valid_steps, **kwargs)


def decode_step(cfg: ModelConfig, params: ModelParams, prev_id: int,
                state: DecoderState, enc: EncodedStates, *,
                training: bool = False,
                gen: np.random.Generator | None = None
                ) -> tuple[StepDistribution, DecoderState]:
    """One generation step conditioned on the previous word id."""
    if not 0 <= prev_id < cfg.vocab_size:
        raise ContractError(f"decode_step: word id {prev_id} outside vocab of "
                            f"size {cfg.vocab_size}")
    H = cfg.hidden
    dtype = params.dtype

    h1, c1 = _lstm_step(nk.zeros(1, H, dtype), state.h1, state.c1,
                        params.lstm1_wx, params.lstm1_wh, params.lstm1_b, H)
    h1_out = nk.dropout(h1, cfg.dropout, gen, training)
    word = nk.slice_rows(params.embed, prev_id, prev_id + 1)
    h2, c2 = _lstm_step(nk.concat_cols(h1_out, word), state.h2, state.c2,
                        params.lstm2_wx, params.lstm2_wh, params.lstm2_b, H)
    h2_out = nk.dropout(h2, cfg.dropout, gen, training)

    # scaled dot-product attention over the valid prefix of encoder states;
    # an all-padding clip degenerates to attending the (zero) first state
    span = max(1, min(enc.valid_steps, enc.states.shape[0]))
    memory = nk.slice_rows(enc.states, 0, span)
    scores = nk.scale(nk.matmul(memory, nk.transpose(h2_out)), 1.0 / np.sqrt(H))
    weights = nk.softmax_rows(nk.transpose(scores))
    context = nk.matmul(weights, memory)

    logits = nk.add(nk.matmul(nk.concat_cols(h2_out, context), params.out_w),
                    params.out_b)
    dist = StepDistribution(logits=logits, probs=nk.softmax_rows(logits))
    return dist, DecoderState(h1, c1, h2, c2)


def _target_span(target: list[int], vocab_size: int) -> int:
    """Validate a coded caption and return its EOS position."""
    if not target or target[0] != BOS_ID:
        raise ContractError("sequence_loss: target must start with BOS")
    if any(not 0 <= t < vocab_size for t in target):
        raise ContractError("sequence_loss: target id outside vocabulary")
    if EOS_ID not in target:
        raise ContractError("sequence_loss: target has no EOS")
    eos = target.index(EOS_ID)
    if any(t != PAD_ID for t in target[eos + 1:]):
        raise ContractError("sequence_loss: non-PAD tokens after EOS")
    return eos


def sequence_loss(cfg: ModelConfig, params: ModelParams, values: np.ndarray,
                  valid_steps: int, target: list[int], *,
                  training: bool = True,
                  gen: np.random.Generator | None = None) -> nk.Tensor:
    """Teacher-forced mean negative log-likelihood, a (1, 1) tensor.

    Averages -log p over the positions from the first content token through
    EOS inclusive; PAD positions contribute nothing.
    """
    eos = _target_span(target, cfg.vocab_size)
    enc = encode(cfg, params, values, valid_steps, training=training, gen=gen)
    state = enc.carry
    total = None
    for pos in range(1, eos + 1):
        dist, state = decode_step(cfg, params, target[pos - 1], state, enc,
                                  training=training, gen=gen)
        log_probs = nk.log_softmax_rows(dist.logits)
        term = nk.slice_cols(log_probs, target[pos], target[pos] + 1)
        total = term if total is None else nk.add(total, term)
    return nk.scale(total, -1.0 / eos)


# --------------------------------------------------------------------------
# checkpoint container: magic, u32 header length, JSON header, float32 blobs

CKPT_MAGIC = b"S2C1"
CKPT_FORMAT = "s2vt-checkpoint-v1"


@dataclass
class Checkpoint:
    cfg: ModelConfig
    params: ModelParams
    meta: dict
    extras: dict[str, np.ndarray]


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams, *,
                    meta: dict | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    """Parameters (and optional extra blobs, e.g. optimizer moments) to disk.

    Blobs are raw little-endian float32 in header-listed order, so a
    save/load cycle is bit-exact for float32 parameters.
    """
    extras = extras or {}
    header = {
        "format": CKPT_FORMAT,
        "config": cfg.to_dict(),
        "params": [[name, *t.shape] for name, t in params.items()],
        "extras": [[name, *extras[name].shape] for name in sorted(extras)],
    }
    header.update(meta or {})
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blobs = [np.ascontiguousarray(t.data, dtype="<f4").tobytes()
             for _, t in params.items()]
    blobs += [np.ascontiguousarray(extras[name], dtype="<f4").tobytes()
              for name in sorted(extras)]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file", offset=0)
    header_len = struct.unpack("<I", raw[4:8])[0]
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header: {exc}") from None
    if header.get("format") != CKPT_FORMAT:
        raise FormatError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    cfg = ModelConfig(**header["config"])

    offset = 8 + header_len
    listed = [(name, rows, cols) for name, rows, cols in header["params"]]
    if [name for name, _, _ in listed] != list(PARAM_ORDER):
        raise FormatError(f"{path}: checkpoint parameter list does not match model")

    def take(rows, cols):
        nonlocal offset
        n = rows * cols
        end = offset + n * 4
        if end > len(raw):
            raise FormatError(f"{path}: truncated parameter blobs", offset=len(raw))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        offset = end
        return arr.reshape(rows, cols).copy()

    tensors = {name: nk.Tensor(take(rows, cols), requires_grad=True)
               for name, rows, cols in listed}
    extras = {name: take(rows, cols) for name, rows, cols in header["extras"]}
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes", offset=offset)

    meta = {k: v for k, v in header.items()
            if k not in ("format", "config", "params", "extras")}
    return Checkpoint(cfg=cfg, params=ModelParams(**tensors), meta=meta,
                      extras=extras)
