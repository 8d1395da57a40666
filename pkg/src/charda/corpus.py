"""Canonical corpus files, split manifests, pre-trained vectors and context features.

Corpus file: UTF-8, tab separated, one header row naming the columns
``dialog_id position speaker label text`` with an optional trailing
``lemmatized_text``. Fields never contain tabs or newlines; there is no
quoting.

Split manifest: UTF-8 sections ``[train]``/``[validation]``/``[test]`` or
``[fold1]`` .. ``[foldk]``, one dialog id per line. Blank lines and lines
starting with ``#`` are ignored.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, CorpusFormatError
from .nn import STREAM_EMBEDDINGS, embedding_uniform, make_rng
from .textprep import PAD, Vocabulary

logger = logging.getLogger(__name__)

COLUMNS = ("dialog_id", "position", "speaker", "label", "text")
LEMMA_COLUMN = "lemmatized_text"


@dataclass(frozen=True)
class Segment:
    dialog_id: str
    position: int
    speaker: str
    label: str
    text: str
    lemmatized_text: str | None = None


class LabelSet:
    """Sorted distinct labels with their indices."""

    def __init__(self, labels: Iterable[str]):
        self.labels: list[str] = sorted(set(labels))
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"LabelSet({self.labels!r})"

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ConfigurationError(f"label {label!r} is not in the label set") from None


def read_corpus(path: str | Path) -> tuple[list[Segment], LabelSet]:
    """Parse a corpus file.

    Segments come back sorted by dialog id and position. Segments whose text
    is empty are dropped with a warning after position contiguity has been
    validated on the full file.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusFormatError(f"{path}: empty file, header row required")
    header = [h.rstrip("\r") for h in lines[0].split("\t")]
    if tuple(header[:5]) != COLUMNS or header[5:] not in ([], [LEMMA_COLUMN]):
        raise CorpusFormatError(f"{path}:1: bad header {header!r}")
    has_lemma = len(header) == 6

    raw: list[Segment] = []
    seen: set[tuple[str, int]] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != len(header):
            raise CorpusFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        dialog_id, position, speaker, label, text = fields[:5]
        if not dialog_id or not label:
            raise CorpusFormatError(f"{path}:{lineno}: empty dialog id or label")
        try:
            pos = int(position)
        except ValueError:
            raise CorpusFormatError(f"{path}:{lineno}: position {position!r} is not an integer") from None
        if pos < 0:
            raise CorpusFormatError(f"{path}:{lineno}: negative position {pos}")
        if (dialog_id, pos) in seen:
            raise CorpusFormatError(f"{path}:{lineno}: duplicate segment {dialog_id}:{pos}")
        seen.add((dialog_id, pos))
        lemma = fields[5] if has_lemma else None
        raw.append(Segment(dialog_id, pos, speaker, label, text, lemma))

    by_dialog: dict[str, list[int]] = defaultdict(list)
    for seg in raw:
        by_dialog[seg.dialog_id].append(seg.position)
    for dialog_id, positions in by_dialog.items():
        if sorted(positions) != list(range(len(positions))):
            raise CorpusFormatError(
                f"{path}: positions of dialog {dialog_id} are not contiguous from 0"
            )

    segments = []
    for seg in sorted(raw, key=lambda s: (s.dialog_id, s.position)):
        if not seg.text.strip():
            logger.warning("dropping segment %s:%d with empty text", seg.dialog_id, seg.position)
            continue
        segments.append(seg)
    return segments, LabelSet(s.label for s in segments)


def write_corpus(path: str | Path, segments: Sequence[Segment]) -> None:
    with_lemma = any(s.lemmatized_text is not None for s in segments)
    header = list(COLUMNS) + ([LEMMA_COLUMN] if with_lemma else [])
    rows = ["\t".join(header)]
    for s in segments:
        fields = [s.dialog_id, str(s.position), s.speaker, s.label, s.text]
        if with_lemma:
            fields.append(s.lemmatized_text or "")
        for value in fields:
            if "\t" in value or "\n" in value:
                raise CorpusFormatError(f"field {value!r} contains a tab or newline")
        rows.append("\t".join(fields))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def group_dialogs(segments: Iterable[Segment]) -> dict[str, list[Segment]]:
    dialogs: dict[str, list[Segment]] = defaultdict(list)
    for s in segments:
        dialogs[s.dialog_id].append(s)
    return {k: sorted(v, key=lambda s: s.position) for k, v in sorted(dialogs.items())}


# -- splits -------------------------------------------------------------------

FIXED_SECTIONS = ("train", "validation", "test")


@dataclass
class SplitManifest:
    mode: str  # "fixed_splits" or "k_fold"
    fixed: dict[str, list[str]] = field(default_factory=dict)
    folds: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("fixed_splits", "k_fold"):
            raise ConfigurationError(f"unknown split mode {self.mode!r}")
        if self.mode == "k_fold" and len(self.folds) < 2:
            raise ConfigurationError("k-fold manifests need at least two folds")
        lists = list(self.fixed.values()) if self.mode == "fixed_splits" else self.folds
        seen: set[str] = set()
        for ids in lists:
            for d in ids:
                if d in seen:
                    raise ConfigurationError(f"dialog {d} appears in more than one split")
                seen.add(d)

    @property
    def k(self) -> int:
        return len(self.folds)


def read_manifest(path: str | Path) -> SplitManifest:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise CorpusFormatError(f"{path}:{lineno}: repeated section [{current}]")
            sections[current] = []
        elif current is None:
            raise CorpusFormatError(f"{path}:{lineno}: dialog id outside a section")
        else:
            sections[current].append(line)

    names = set(sections)
    if names and names <= set(FIXED_SECTIONS) and "train" in names:
        return SplitManifest("fixed_splits", fixed={n: sections.get(n, []) for n in FIXED_SECTIONS})
    k = len(names)
    if k >= 2 and names == {f"fold{i}" for i in range(1, k + 1)}:
        return SplitManifest("k_fold", folds=[sections[f"fold{i}"] for i in range(1, k + 1)])
    raise CorpusFormatError(f"{path}: unrecognised sections {sorted(names)}")


def write_manifest(path: str | Path, manifest: SplitManifest) -> None:
    if manifest.mode == "fixed_splits":
        parts = [(n, manifest.fixed.get(n, [])) for n in FIXED_SECTIONS]
    else:
        parts = [(f"fold{i}", ids) for i, ids in enumerate(manifest.folds, start=1)]
    text = "".join(f"[{name}]\n" + "".join(f"{d}\n" for d in ids) for name, ids in parts)
    Path(path).write_text(text, encoding="utf-8")


@dataclass
class Split:
    """Train/validation/test segment lists for one training run."""

    train: list[Segment]
    validation: list[Segment]
    test: list[Segment]
    name: str = "fixed"


def validation_carve(dialog_ids: Sequence[str], fraction: float = 0.1) -> tuple[list[str], list[str]]:
    """Split training dialogs into (train, validation): the last ``fraction`` by sorted id validates."""
    ids = sorted(dialog_ids)
    if len(ids) < 2:
        raise ConfigurationError("need at least two training dialogs to carve a validation set")
    n_val = max(1, math.ceil(fraction * len(ids)))
    return ids[:-n_val], ids[-n_val:]


def resolve_splits(segments: Sequence[Segment], manifest: SplitManifest) -> list[Split]:
    """Whole-dialog splits described by ``manifest``.

    Fixed manifests give a single split. k-fold manifests give one split per
    fold with that fold as test set; the other folds train, minus a
    validation carve used for early stopping.
    """
    dialogs = group_dialogs(segments)
    listed = (
        [d for ids in manifest.fixed.values() for d in ids]
        if manifest.mode == "fixed_splits"
        else [d for ids in manifest.folds for d in ids]
    )
    unknown = sorted(set(listed) - set(dialogs))
    if unknown:
        raise ConfigurationError(f"manifest references unknown dialog ids: {unknown[:5]}")

    def collect(ids: Iterable[str]) -> list[Segment]:
        return [s for d in sorted(ids) for s in dialogs[d]]

    if manifest.mode == "fixed_splits":
        f = manifest.fixed
        return [Split(collect(f.get("train", [])), collect(f.get("validation", [])), collect(f.get("test", [])))]
    splits = []
    for i, test_ids in enumerate(manifest.folds):
        rest = [d for j, ids in enumerate(manifest.folds) if j != i for d in ids]
        train_ids, val_ids = validation_carve(rest)
        splits.append(Split(collect(train_ids), collect(val_ids), collect(test_ids), name=f"fold{i + 1}"))
    return splits


# -- pre-trained vectors --------------------------------------------------------


@dataclass
class EmbeddingCoverage:
    found: int
    missing: int

    @property
    def missing_fraction(self) -> float:
        total = self.found + self.missing
        return self.missing / total if total else 0.0


def load_embeddings(
    path: str | Path,
    vocabulary: Vocabulary,
    dim: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, EmbeddingCoverage]:
    """Embedding table for ``vocabulary`` from a word2vec-style text file.

    Tokens absent from the file (UNK included) get rows from
    uniform(-0.05, 0.05) drawn with ``seed``; the PAD row is zero. A first
    line of exactly two integers is treated as a count/dimension header.
    Coverage counts exclude PAD and UNK.
    """
    vectors: dict[str, np.ndarray] = {}
    file_dim = None
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(values)
                if file_dim == 0:
                    raise CorpusFormatError(f"{path}:{lineno}: vector has no components")
            elif len(values) != file_dim:
                raise CorpusFormatError(
                    f"{path}:{lineno}: vector dimension {len(values)} differs from {file_dim}"
                )
            if token in vocabulary and token not in vectors:
                try:
                    vectors[token] = np.array([float(v) for v in values])
                except ValueError:
                    raise CorpusFormatError(f"{path}:{lineno}: non-numeric vector component") from None
    if file_dim is None:
        raise CorpusFormatError(f"{path}: no vectors found")
    if dim is not None and dim != file_dim:
        raise ConfigurationError(f"embedding file has dimension {file_dim}, configuration asks for {dim}")

    rng = make_rng(seed, STREAM_EMBEDDINGS)
    table = embedding_uniform(rng, (len(vocabulary), file_dim))
    table[PAD] = 0.0
    found = 0
    for token, idx in vocabulary.stoi.items():
        if token in vectors:
            table[idx] = vectors[token]
            found += 1
    coverage = EmbeddingCoverage(found, len(vocabulary) - 2 - found)
    logger.info("embeddings: %d/%d vocabulary tokens found", found, found + coverage.missing)
    return table, coverage


# -- context ------------------------------------------------------------------


def context_dim(n_prev: int, n_labels: int) -> int:
    return n_prev * n_labels + 1


def context_vector(
    history: Sequence[int],
    speakers: Sequence[str],
    n_labels: int,
    n_prev: int,
) -> np.ndarray:
    """Context of the segment following ``history``.

    ``history`` holds label indices of the earlier segments of the dialog in
    order, ``speakers`` the speakers of those segments plus the current one.
    """
    out = np.zeros(context_dim(n_prev, n_labels))
    p = len(speakers) - 1
    for j in range(n_prev):
        k = p - 1 - j
        if k < 0:
            break
        out[j * n_labels + history[k]] = 1.0
    if p > 0 and speakers[p] != speakers[p - 1]:
        out[-1] = 1.0
    return out


def extract_context(
    dialog: Sequence[Segment],
    label_set: LabelSet,
    n_prev: int = 3,
    predictions: Sequence[int] | None = None,
) -> np.ndarray:
    """Context features ``[len(dialog), n_prev * C + 1]`` for one dialog.

    Label blocks come from gold labels, or from ``predictions`` (label
    indices aligned with ``dialog``) when given. The speaker-change flag is
    always computed from the speaker column.
    """
    n = len(dialog)
    if predictions is None:
        history = [label_set.index(s.label) for s in dialog]
    else:
        if len(predictions) < n - 1:
            raise ConfigurationError("predicted context needs a prediction for every earlier segment")
        history = list(predictions)
    speakers = [s.speaker for s in dialog]
    C = len(label_set)
    if n == 0:
        return np.zeros((0, context_dim(n_prev, C)))
    return np.stack([context_vector(history[:p], speakers[: p + 1], C, n_prev) for p in range(n)])
