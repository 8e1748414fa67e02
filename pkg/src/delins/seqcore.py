"""Tokens, vocabularies, sequences, and corpora.

Conventions used everywhere in this package:

* A sequence always carries the begin marker (bos) at index 0 and nowhere
  else.  The marker is never deleted by the forward process and never
  inserted by the reverse process; a bare ``[bos]`` sequence represents the
  fully noised (empty) state.
* ``len(seq)`` counts all tokens including bos.  Operations that need the
  content length use ``seq.content_len`` (= len - 1) and say so.
* Token ids are dense integers assigned in first-seen order; bos is always
  id 0 so that a vocab file can simply list symbols one per line with the
  line number as the id.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ShapeMismatch, UnknownSymbol

Token = int  # index into a Vocab

BOS_SYMBOL = "<bos>"


@dataclass(frozen=True)
class Vocab:
    """Ordered symbol table. ``symbols[0]`` is the begin marker."""

    symbols: tuple[str, ...]
    bos_id: int = 0

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigError("vocab symbols must be unique")
        if not (0 <= self.bos_id < len(self.symbols)):
            raise ConfigError("bos_id out of range")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def id_of(self, symbol: str) -> Token:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownSymbol(symbol) from None

    @staticmethod
    def build(symbols: list[str]) -> "Vocab":
        """Vocab with bos first, then the given symbols in first-seen order."""
        ordered = [BOS_SYMBOL]
        seen = {BOS_SYMBOL}
        for s in symbols:
            if s == BOS_SYMBOL:
                raise ConfigError(f"{BOS_SYMBOL!r} is reserved")
            if s not in seen:
                seen.add(s)
                ordered.append(s)
        return Vocab(tuple(ordered))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(s + "\n")

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            symbols = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if not symbols or symbols[0] != BOS_SYMBOL:
            raise ConfigError(f"vocab file must list {BOS_SYMBOL} first")
        return Vocab(tuple(symbols))


@dataclass(frozen=True)
class Sequence:
    """Immutable token-id sequence with the begin marker at index 0."""

    ids: tuple[Token, ...]
    bos_id: Token = 0

    def __post_init__(self):
        if not self.ids or self.ids[0] != self.bos_id:
            raise ConfigError("sequence must start with the begin marker")
        if self.bos_id in self.ids[1:]:
            raise ConfigError("begin marker may appear only at index 0")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    @property
    def content_len(self) -> int:
        """Length excluding the begin marker."""
        return len(self.ids) - 1

    @property
    def content(self) -> tuple[Token, ...]:
        return self.ids[1:]

    def insert_after(self, i: int, v: Token) -> "Sequence":
        """New sequence with token v inserted after position i (0 = bos gap)."""
        if not (0 <= i < len(self.ids)):
            raise ShapeMismatch(f"gap index {i} out of range for length {len(self.ids)}")
        return Sequence(self.ids[: i + 1] + (v,) + self.ids[i + 1 :], self.bos_id)

    @staticmethod
    def from_content(content, bos_id: Token = 0) -> "Sequence":
        return Sequence((bos_id, *content), bos_id)


@dataclass
class Corpus:
    sequences: list[Sequence]
    vocab: Vocab
    max_len: int | None = None

    def __len__(self) -> int:
        return len(self.sequences)

    def lengths(self) -> list[int]:
        return [len(s) for s in self.sequences]


def _split(text: str, mode: str) -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "whitespace":
        return text.split()
    raise ConfigError(f"unknown tokenizer mode {mode!r}")


def tokenize(text: str, vocab: Vocab, mode: str = "char") -> Sequence:
    """Text -> Sequence with bos prepended. Raises UnknownSymbol on OOV."""
    ids = [vocab.bos_id]
    for sym in _split(text, mode):
        ids.append(vocab.id_of(sym))
    return Sequence(tuple(ids), vocab.bos_id)


def detokenize(seq: Sequence, vocab: Vocab, mode: str = "char") -> str:
    """Inverse of tokenize for the same mode; bos omitted."""
    joiner = "" if mode == "char" else " "
    return joiner.join(vocab.symbols[t] for t in seq.content)


def scan_vocab(path, mode: str = "char") -> Vocab:
    """Build a vocab from a corpus file, ids in first-seen order after bos."""
    symbols: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            for sym in _split(line.rstrip("\n"), mode):
                if sym not in seen:
                    seen.add(sym)
                    symbols.append(sym)
    return Vocab.build(symbols)


def load_corpus(path, vocab: Vocab, mode: str = "char", max_len: int | None = None) -> Corpus:
    """One sequence per non-empty line; lines truncated to max_len tokens (incl. bos)."""
    seqs: list[Sequence] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            text = line.rstrip("\n")
            if not text:
                continue
            seq = tokenize(text, vocab, mode)
            if max_len is not None and len(seq) > max_len:
                seq = Sequence(seq.ids[:max_len], vocab.bos_id)
            seqs.append(seq)
    return Corpus(seqs, vocab, max_len)
