"""Character-level vocabulary, packing and detokenization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xdlm.errors import DomainError

MASK_TEXT = "[MASK]"


@dataclass(frozen=True)
class CharVocab:
    chars: str
    stoi: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.chars:
            raise DomainError("vocabulary needs at least one character")
        if len(set(self.chars)) != len(self.chars):
            raise DomainError("vocabulary characters must be unique")
        object.__setattr__(self, "stoi", {c: i for i, c in enumerate(self.chars)})

    @property
    def mask_id(self) -> int:
        return len(self.chars)

    @property
    def N(self) -> int:
        return len(self.chars) + 1

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.fromiter((self.stoi[c] for c in text), dtype=np.int64, count=len(text))
        except KeyError as exc:
            raise DomainError(f"character {exc.args[0]!r} not in vocabulary") from None

    def to_json(self) -> dict:
        return {"chars": self.chars, "mask_id": self.mask_id}

    @classmethod
    def from_json(cls, obj: dict) -> "CharVocab":
        vocab = cls(obj["chars"])
        if int(obj["mask_id"]) != vocab.mask_id:
            raise DomainError("mask_id must equal the number of characters")
        return vocab

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CharVocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(text: str) -> CharVocab:
    """Sorted unique characters get ids 0..C-1; the mask gets id C."""
    if not text:
        raise DomainError("cannot build a vocabulary from empty text")
    return CharVocab("".join(sorted(set(text))))


def tokenize(text: str, vocab: CharVocab) -> np.ndarray:
    return vocab.encode(text)


def pack(text, vocab: CharVocab, seq_len: int) -> list[np.ndarray]:
    """Contiguous non-overlapping windows; the trailing partial window is dropped."""
    if seq_len < 1:
        raise DomainError(f"seq_len must be >= 1, got {seq_len}")
    ids = vocab.encode(text) if isinstance(text, str) else np.asarray(text, dtype=np.int64)
    n = len(ids) // seq_len
    return [ids[i * seq_len:(i + 1) * seq_len].copy() for i in range(n)]


def detokenize(ids, vocab: CharVocab) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == vocab.mask_id:
            out.append(MASK_TEXT)
        elif 0 <= i < vocab.mask_id:
            out.append(vocab.chars[i])
        else:
            raise DomainError(f"unknown token id {i}")
    return "".join(out)


def load_text(path) -> str:
    # newline="" keeps \r and \r\n as-is so the round trip is byte-exact
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()
