"""Caption normalization, vocabulary handling, and integer token coding.

Token ids 0..3 are reserved: PAD, BOS, EOS, UNK.  Content words start at 4,
ordered by descending corpus frequency with ties broken alphabetically, so a
vocabulary is a pure function of its corpus and min_count.  Captions keep at
most 28 content words; with BOS/EOS a coded sequence never exceeds 30 ids.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from collections import Counter
from pathlib import Path

from .errors import ContractError, RangeError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
MAX_CONTENT_WORDS = 28


def normalize_tokenize(sentence: str) -> list[str]:
    """Lowercase, drop all Unicode punctuation, split on whitespace."""
    lowered = sentence.lower()
    cleaned = "".join(c for c in lowered
                      if not unicodedata.category(c).startswith("P"))
    return cleaned.split()


class Vocabulary:
    """Immutable token table with the four reserved ids up front."""

    def __init__(self, tokens: list[str], min_count: int = 1):
        self.min_count = min_count
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("Vocabulary: duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps({"min_count": self.min_count,
                           "tokens": self.id_to_token[len(RESERVED):]})

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        record = json.loads(Path(path).read_text())
        return cls(record["tokens"], min_count=record.get("min_count", 1))


def build_vocab(captions: list[str], min_count: int = 1) -> Vocabulary:
    """Vocabulary over normalized caption tokens appearing >= min_count times."""
    if not captions:
        raise ContractError("build_vocab: empty caption corpus")
    counts = Counter()
    for caption in captions:
        counts.update(normalize_tokenize(caption))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_count=min_count)


def encode(sentence: str, vocab: Vocabulary) -> list[int]:
    """[BOS] + ids of the first 28 content words (OOV -> UNK) + [EOS]."""
    words = normalize_tokenize(sentence)[:MAX_CONTENT_WORDS]
    return [BOS_ID] + [vocab.id_for(w) for w in words] + [EOS_ID]


def decode(ids: list[int], vocab: Vocabulary) -> str:
    """Ids back to a sentence; reserved ids vanish except UNK -> "<unk>"."""
    words = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise RangeError(f"decode: id {i} outside vocabulary of size {len(vocab)}")
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)
