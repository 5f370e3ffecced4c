"""Word-level tokenizer with reserved special tokens."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .corpus import SPK_OTHER, SPK_SELF
from .instructions import INSTRUCTIONS

PAD = "<pad>"
UNK = "<unk>"
SPECIALS = (PAD, UNK, SPK_SELF, SPK_OTHER)

_TOKEN = re.compile(r"<[A-Za-z]+>|[\w'\-]+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return [t if t.startswith("<") and t.endswith(">") else t.lower() for t in _TOKEN.findall(text)]


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> Vocab:
        """Specials, then instruction words, then corpus words in first-seen order."""
        seen = dict.fromkeys(SPECIALS)
        for text in (*INSTRUCTIONS, ":", "."):
            seen.update(dict.fromkeys(tokenize(text)))
        for text in texts:
            seen.update(dict.fromkeys(tokenize(text)))
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def encode(self, text: str, max_len: int | None = None) -> list[int]:
        """Token ids; unknown words map to <unk>, over-long inputs keep their tail."""
        ids = [self.index.get(t, self.unk_id) for t in tokenize(text)]
        if not ids:
            raise ValueError("empty text")
        if max_len is not None and len(ids) > max_len:
            ids = ids[-max_len:]
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]
