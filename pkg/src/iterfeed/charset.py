"""Discrete character space shared by the recognizer and the feedback network."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, EOS, UNK = 0, 1, 2
N_SPECIAL = 3


class UnknownCharacterError(ValueError):
    def __init__(self, char: str, word: str):
        super().__init__(f"character {char!r} in {word!r} is not in the charset")
        self.char = char
        self.word = word


@dataclass(frozen=True)
class Charset:
    """Ordered symbols plus the PAD/EOS/UNK specials.

    Index layout: PAD=0, EOS=1, UNK=2, symbols from 3 upward in the given order.
    """

    symbols: str = string.ascii_lowercase
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("charset symbols must be unique")
        if not self.symbols:
            raise ValueError("charset needs at least one symbol")
        object.__setattr__(
            self, "_index", {c: i + N_SPECIAL for i, c in enumerate(self.symbols)}
        )

    @classmethod
    def default(cls, digits: bool = False) -> "Charset":
        return cls(string.ascii_lowercase + (string.digits if digits else ""))

    @property
    def size(self) -> int:
        return len(self.symbols) + N_SPECIAL

    def __len__(self) -> int:
        return self.size

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def validate(self, word: str) -> None:
        for c in word:
            if c not in self._index:
                raise UnknownCharacterError(c, word)

    def encode(self, word: str, strict: bool = True) -> list[int]:
        """Map a word to token ids (no EOS appended).

        With ``strict=False`` unknown characters become UNK instead of raising.
        """
        if strict:
            self.validate(word)
        return [self._index.get(c, UNK) for c in word]

    def decode(self, tokens: Iterable[int]) -> str:
        """Token ids back to text, stopping at the first EOS or PAD."""
        out = []
        for t in tokens:
            t = int(t)
            if t in (EOS, PAD):
                break
            out.append(self.symbols[t - N_SPECIAL] if t >= N_SPECIAL else "?")
        return "".join(out)

    def is_symbol(self, token: int) -> bool:
        return N_SPECIAL <= token < self.size

    def encode_batch(self, words: Sequence[str], strict: bool = True) -> list[list[int]]:
        return [self.encode(w, strict=strict) for w in words]
