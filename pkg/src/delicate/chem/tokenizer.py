"""SMILES tokenisation and the frozen token vocabulary."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
N_SPECIAL = len(SPECIAL_TOKENS)

DEFAULT_MAX_LEN = 128


class SmilesSyntaxError(ValueError):
    """Malformed SMILES; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class SequenceLengthError(ValueError):
    pass


def split_tokens(smiles: str) -> list[str]:
    """Split a SMILES string into tokens.

    Bracket expressions, ``Cl``/``Br`` and ``%nn`` ring closures are single
    tokens; every other character is its own token.
    """
    if not smiles:
        raise SmilesSyntaxError("empty SMILES")
    if not smiles.isascii():
        raise SmilesSyntaxError("SMILES must be ASCII")
    tokens = []
    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            j = smiles.find("]", i + 1)
            if j < 0:
                raise SmilesSyntaxError("unterminated bracket atom", i)
            tokens.append(smiles[i : j + 1])
            i = j + 1
        elif smiles.startswith(("Cl", "Br"), i):
            tokens.append(smiles[i : i + 2])
            i += 2
        elif ch == "%":
            digits = smiles[i + 1 : i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesSyntaxError("'%' must be followed by two digits", i)
            tokens.append(smiles[i : i + 3])
            i += 3
        else:
            tokens.append(ch)
            i += 1
    return tokens


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:N_SPECIAL] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the five special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise IndexError(f"token id {idx} out of range for vocabulary of {len(self.tokens)}")
        return self.tokens[idx]

    @property
    def content_ids(self) -> range:
        return range(N_SPECIAL, len(self.tokens))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str]) -> Vocab:
    """Specials first, then tokens in order of first appearance."""
    seen: dict[str, None] = {}
    empty = True
    for smi in corpus:
        empty = False
        for tok in split_tokens(smi):
            seen.setdefault(tok)
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocab(SPECIAL_TOKENS + tuple(t for t in seen if t not in SPECIAL_TOKENS))


def tokenize(smiles: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    ids = [CLS_ID] + [vocab.lookup(t) for t in split_tokens(smiles)] + [SEP_ID]
    if len(ids) > max_len:
        raise SequenceLengthError(f"{len(ids)} tokens exceed the maximum length {max_len}: {smiles!r}")
    return ids


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    return "".join(
        tok for tok in (vocab.token_of(int(i)) for i in ids) if tok not in SPECIAL_TOKENS
    )
