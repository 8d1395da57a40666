"""The published experiment grid as named experiment specifications."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import read_corpus
from .harness import ExperimentResult, ExperimentSpec, run_experiment
from .model import BranchConfig, ModelConfig, char_branch, word_branch
from .textprep import PreprocessingFlags

logger = logging.getLogger(__name__)

LOWER = PreprocessingFlags()
CAP = PreprocessingFlags(keep_capitalization=True)
PUNCT = PreprocessingFlags(keep_punctuation=True)
CAP_PUNCT = PreprocessingFlags(keep_capitalization=True, keep_punctuation=True)
LEMMA = PreprocessingFlags(use_lemmatized_text=True)

WINDOW_SWEEP = ((1,), (2,), (3,), (4,), (5,), (7,), (10,), (3, 5, 7))


@dataclass(frozen=True)
class GridRow:
    name: str
    table: int
    kinds: tuple[str, ...]
    flags: PreprocessingFlags
    char_windows: tuple[int, ...] = (3, 5, 7)
    word_mode: str = "pretrained_fixed"
    use_context: bool = False


def _window_name(ws: tuple[int, ...]) -> str:
    return f"Window {ws[0]}" if len(ws) == 1 else f"Windows ({', '.join(map(str, ws))})"


GRID_ROWS: tuple[GridRow, ...] = (
    GridRow("Random", 1, ("word",), LOWER, word_mode="random_trainable"),
    GridRow("Pre-trained", 1, ("word",), LOWER),
    GridRow("Pre-trained + Context", 1, ("word",), LOWER, use_context=True),
    *(GridRow(_window_name(ws), 2, ("character",), LOWER, char_windows=ws) for ws in WINDOW_SWEEP),
    GridRow("Capitalized", 3, ("character",), CAP),
    GridRow("Punctuated", 3, ("character",), PUNCT),
    GridRow("Capitalized + Punctuated", 3, ("character",), CAP_PUNCT),
    GridRow("Lemmatized", 3, ("character",), LEMMA),
    # preprocessing of the combined model is not pinned down, so both variants run
    GridRow("Char + Word [punctuated]", 4, ("character", "word"), PUNCT),
    GridRow("Char + Word + Context [punctuated]", 4, ("character", "word"), PUNCT, use_context=True),
    GridRow("Char + Word [capitalized + punctuated]", 4, ("character", "word"), CAP_PUNCT),
    GridRow("Char + Word + Context [capitalized + punctuated]", 4, ("character", "word"), CAP_PUNCT, use_context=True),
)

# Published mean accuracies: Switchboard (validation, test) and DIHANA (cross-validation).
PUBLISHED_TARGETS = {
    "swbd": {
        "Random": (0.7617, 0.7223),
        "Pre-trained": (0.7681, 0.7311),
        "Pre-trained + Context": (0.8129, 0.7835),
        "Window 1": (0.6542, 0.6081),
        "Window 2": (0.7221, 0.6752),
        "Window 3": (0.7432, 0.7000),
        "Window 4": (0.7456, 0.7064),
        "Window 5": (0.7509, 0.7091),
        "Window 7": (0.7535, 0.7086),
        "Window 10": (0.7510, 0.7097),
        "Windows (3, 5, 7)": (0.7608, 0.7208),
        "Capitalized": (0.7604, 0.7194),
        "Punctuated": (0.7685, 0.7317),
        "Capitalized + Punctuated": (0.7673, 0.7314),
        "Lemmatized": (0.7521, 0.7140),
        "Char + Word": (0.7800, 0.7401),
        "Char + Word + Context": (0.8200, 0.7901),
    },
    "dihana": {
        "Random": 0.9196,
        "Pre-trained": 0.9198,
        "Pre-trained + Context": 0.9826,
        "Window 1": 0.8571,
        "Window 2": 0.9154,
        "Window 3": 0.9217,
        "Window 4": 0.9222,
        "Window 5": 0.9228,
        "Window 7": 0.9224,
        "Window 10": 0.9216,
        "Windows (3, 5, 7)": 0.9244,
        "Capitalized": 0.9425,
        "Punctuated": 0.9371,
        "Capitalized + Punctuated": 0.9548,
        "Lemmatized": 0.9239,
        "Char + Word": 0.9568,
        "Char + Word + Context": 0.9910,
    },
}


def published_target(corpus: str, row_name: str):
    """Published value for a grid row (preprocessing variants of one row share its target)."""
    return PUBLISHED_TARGETS[corpus].get(row_name.split(" [")[0])


@dataclass
class GridResult:
    results: list[ExperimentResult] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)


def _template(base: ModelConfig, kind: str) -> BranchConfig:
    found = base.branch(kind)
    return found if found is not None else (char_branch() if kind == "character" else word_branch())


def grid_specs(
    corpus: str,
    manifest: str,
    embeddings: str | None = None,
    seeds: Sequence[int] = tuple(range(10)),
    base: ModelConfig = ModelConfig(),
    rows: Sequence[str] | None = None,
) -> tuple[list[ExperimentSpec], list[str]]:
    """Specs for the selected grid rows plus notices for rows that cannot run.

    ``base`` supplies hyperparameters and per-kind branch templates (filter
    counts, embedding sizes); window sizes and embedding modes come from the
    row. Without an embedding file the rows that depend on pre-trained
    vectors fall back to trainable random word embeddings in the combined
    model and are skipped in the word-only baselines.
    """
    wanted = list(rows) if rows is not None else [r.name for r in GRID_ROWS]
    by_name = {r.name: r for r in GRID_ROWS}
    unknown = [n for n in wanted if n not in by_name]
    if unknown:
        raise ValueError(f"unknown grid rows: {unknown}")
    segments, _ = read_corpus(corpus)
    has_lemma = all(s.lemmatized_text is not None for s in segments)

    specs, notices = [], []
    for name in wanted:
        row = by_name[name]
        if row.flags.use_lemmatized_text and not has_lemma:
            notices.append(f"{name}: skipped, corpus has no lemmatized_text column")
            continue
        word_mode = row.word_mode
        if word_mode != "random_trainable" and embeddings is None:
            if row.kinds == ("word",):
                notices.append(f"{name}: skipped, no pre-trained embedding file given")
                continue
            notices.append(f"{name}: no embedding file, word branch uses random trainable embeddings")
            word_mode = "random_trainable"
        branches = []
        for kind in row.kinds:
            t = _template(base, kind)
            if kind == "character":
                branches.append(dataclasses.replace(t, window_sizes=row.char_windows))
            else:
                branches.append(dataclasses.replace(t, window_sizes=(1, 2, 3), embedding_mode=word_mode))
        config = base.replace(branches=tuple(branches), use_context=row.use_context)
        specs.append(
            ExperimentSpec(
                name=name,
                config=config,
                flags=row.flags,
                corpus=corpus,
                manifest=manifest,
                seeds=tuple(seeds),
                embeddings=embeddings if word_mode != "random_trainable" else None,
            )
        )
    for n in notices:
        logger.warning(n)
    return specs, notices


def published_grid(
    corpus: str,
    manifest: str,
    embeddings: str | None = None,
    seeds: Sequence[int] = tuple(range(10)),
    base: ModelConfig = ModelConfig(),
    rows: Sequence[str] | None = None,
    jobs: int = 1,
) -> GridResult:
    specs, notices = grid_specs(corpus, manifest, embeddings, seeds, base, rows)
    return GridResult([run_experiment(s, jobs=jobs) for s in specs], notices)
