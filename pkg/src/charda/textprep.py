"""Tokenisation, vocabularies and index encoding of segments."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, SegmentRejected

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Kept inside a word when flanked by non-punctuation characters ("uh-huh", "don't").
INTRA_WORD = frozenset("-'’")


@dataclass(frozen=True)
class PreprocessingFlags:
    keep_capitalization: bool = False
    keep_punctuation: bool = False
    use_lemmatized_text: bool = False


def is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def is_punctuation_token(token: str) -> bool:
    return bool(token) and all(is_punctuation(c) for c in token)


def _normalise(text: str, flags: PreprocessingFlags) -> str:
    text = " ".join(text.split())
    if not flags.keep_capitalization:
        text = text.lower()
    return text


def char_tokenize(text: str, flags: PreprocessingFlags = PreprocessingFlags()) -> list[str]:
    """One token per character, whitespace runs collapsed to a single space.

    Punctuation is removed after whitespace is collapsed, so dropping it never
    merges the spaces that surrounded it.
    """
    tokens = list(_normalise(text, flags))
    if not flags.keep_punctuation:
        tokens = [c for c in tokens if not is_punctuation(c)]
    if not tokens:
        raise SegmentRejected(f"no characters left after preprocessing: {text!r}")
    return tokens


def _split_word(chunk: str) -> list[str]:
    tokens: list[str] = []
    current: list[str] = []
    for i, ch in enumerate(chunk):
        if is_punctuation(ch):
            inside = (
                ch in INTRA_WORD
                and current
                and i + 1 < len(chunk)
                and not is_punctuation(chunk[i + 1])
            )
            if inside:
                current.append(ch)
                continue
            if current:
                tokens.append("".join(current))
                current = []
            tokens.append(ch)
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    return tokens


def word_tokenize(text: str, flags: PreprocessingFlags = PreprocessingFlags()) -> list[str]:
    """Whitespace split with punctuation detached into single-character tokens.

    Hyphens and apostrophes between word characters stay inside the word
    regardless of ``keep_punctuation``.
    """
    tokens = [t for chunk in _normalise(text, flags).split(" ") for t in _split_word(chunk)]
    if not flags.keep_punctuation:
        tokens = [t for t in tokens if not is_punctuation_token(t)]
    if not tokens:
        raise SegmentRejected(f"no words left after preprocessing: {text!r}")
    return tokens


TOKENIZERS = {"character": char_tokenize, "word": word_tokenize}


def segment_text(segment, flags: PreprocessingFlags) -> str:
    if flags.use_lemmatized_text:
        if segment.lemmatized_text is None:
            raise ConfigurationError(
                f"lemmatized text requested but segment {segment.dialog_id}:{segment.position} has none"
            )
        return segment.lemmatized_text
    return segment.text


def tokenize(segment, kind: str, flags: PreprocessingFlags) -> list[str]:
    return TOKENIZERS[kind](segment_text(segment, flags), flags)


class Vocabulary:
    """Bijection between tokens and contiguous indices, PAD=0 and UNK=1."""

    def __init__(self, kind: str, tokens: Sequence[str] = ()):
        if kind not in TOKENIZERS:
            raise ConfigurationError(f"unknown vocabulary kind {kind!r}")
        self.kind = kind
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {}
        for tok in tokens:
            if tok in (PAD_TOKEN, UNK_TOKEN) or tok in self.stoi:
                continue
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.kind == other.kind and self.itos == other.itos

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def lookup(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in indices]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tokens": self.itos[2:]}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(data["kind"], data["tokens"])


DEFAULT_MIN_COUNT = {"character": 1, "word": 2}


def build_vocabulary(
    segments: Sequence,
    kind: str,
    flags: PreprocessingFlags = PreprocessingFlags(),
    min_count: int | None = None,
) -> Vocabulary:
    """Vocabulary of every token seen at least ``min_count`` times.

    Indices after the reserved pair follow descending frequency, ties broken
    lexicographically, so the result does not depend on segment order.
    """
    if not segments:
        raise ConfigurationError("cannot build a vocabulary from an empty training set")
    if min_count is None:
        min_count = DEFAULT_MIN_COUNT[kind]
    counts: Counter[str] = Counter()
    for seg in segments:
        try:
            counts.update(tokenize(seg, kind, flags))
        except SegmentRejected:
            continue
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kind, kept)


@dataclass(frozen=True)
class Encoded:
    indices: np.ndarray
    valid_length: int


@dataclass(frozen=True)
class EncodedSegment:
    chars: Encoded | None
    words: Encoded | None
    label_index: int
    dialog_id: str
    position: int
    speaker: str


def _pad(ids: list[int], pad_to: int) -> Encoded:
    ids = ids[:pad_to]
    out = np.full(pad_to, PAD, dtype=np.int64)
    out[: len(ids)] = ids
    out.flags.writeable = False
    return Encoded(out, len(ids))


def encode(
    segment,
    char_vocab: Vocabulary | None,
    word_vocab: Vocabulary | None,
    flags: PreprocessingFlags,
    pad_to_char: int = 0,
    pad_to_word: int = 0,
    label_index: int = -1,
) -> EncodedSegment:
    """Map a segment to right-padded index arrays.

    Sequences longer than the pad length are truncated. A missing vocabulary
    leaves the corresponding field ``None``. Raises :class:`SegmentRejected`
    when preprocessing leaves no tokens.
    """
    chars = words = None
    if char_vocab is not None:
        if pad_to_char < 1:
            raise ConfigurationError("pad_to_char must be positive")
        chars = _pad(char_vocab.lookup(tokenize(segment, "character", flags)), pad_to_char)
    if word_vocab is not None:
        if pad_to_word < 1:
            raise ConfigurationError("pad_to_word must be positive")
        words = _pad(word_vocab.lookup(tokenize(segment, "word", flags)), pad_to_word)
    return EncodedSegment(chars, words, label_index, segment.dialog_id, segment.position, segment.speaker)


def decode(encoded: Encoded, vocab: Vocabulary) -> list[str]:
    return vocab.decode(encoded.indices[: encoded.valid_length])
