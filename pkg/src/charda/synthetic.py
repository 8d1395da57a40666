"""Generated corpora with known structure, for tests and smoke runs."""

from __future__ import annotations

import numpy as np

from .corpus import Segment, SplitManifest

LETTERS = "defghijklmnopqrstuvwxyz"


def _word(rng: np.random.Generator, alphabet: str, lo: int = 2, hi: int = 6) -> str:
    return "".join(rng.choice(list(alphabet), size=int(rng.integers(lo, hi + 1))))


def random_corpus(
    n_dialogs: int,
    seed: int = 0,
    labels: tuple[str, ...] = ("qy", "sd", "sv", "b"),
    max_len: int = 8,
    with_lemma: bool = False,
) -> list[Segment]:
    """Dialogs of random words, speakers and labels."""
    rng = np.random.default_rng(seed)
    out = []
    for d in range(n_dialogs):
        for p in range(int(rng.integers(1, max_len + 1))):
            text = " ".join(_word(rng, LETTERS + "AB") for _ in range(int(rng.integers(1, 5))))
            if rng.random() < 0.3:
                text += rng.choice(["?", ".", "!", " ,"])
            out.append(
                Segment(
                    f"d{d:04d}",
                    p,
                    str(rng.choice(["A", "B"])),
                    str(rng.choice(labels)),
                    text,
                    text.lower() if with_lemma else None,
                )
            )
    return out


def separable_corpus(n_segments: int = 50, n_labels: int = 5, seed: int = 0) -> list[Segment]:
    """Each label owns a marker word that appears only in its segments."""
    rng = np.random.default_rng(seed)
    markers = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"][:n_labels]
    out = []
    for i in range(n_segments):
        y = i % n_labels
        words = [_word(rng, "xyz", 1, 3) for _ in range(int(rng.integers(0, 3)))]
        words.insert(int(rng.integers(0, len(words) + 1)), markers[y])
        out.append(Segment(f"s{i:03d}", 0, "A", f"L{y}", " ".join(words)))
    return out


def suffix_order_corpus(n_segments: int, seed: int = 0) -> list[Segment]:
    """Two classes whose texts end in "abc" or "cba" after a random prefix.

    Both classes share the same character multiset distribution, so only
    character order separates them.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_segments):
        y = int(rng.integers(0, 2))
        prefix = _word(rng, "defgh", 3, 8)
        out.append(Segment(f"s{i:04d}", 0, "A", "fwd" if y == 0 else "rev", prefix + ("abc" if y == 0 else "cba")))
    return out


def label_chain_corpus(n_dialogs: int, dialog_len: int = 10, n_labels: int = 4, seed: int = 0) -> list[Segment]:
    """Each label is the successor of the previous one; text is noise."""
    rng = np.random.default_rng(seed)
    out = []
    for d in range(n_dialogs):
        y = int(rng.integers(0, n_labels))
        for p in range(dialog_len):
            if p > 0:
                y = (y + 1) % n_labels
            speaker = "A" if p % 2 == 0 else "B"
            out.append(Segment(f"d{d:04d}", p, speaker, f"L{y}", _word(rng, "mnop", 2, 6)))
    return out


def fixed_manifest(segments: list[Segment], validation: float = 0.1, test: float = 0.1) -> SplitManifest:
    """Deterministic train/validation/test split over sorted dialog ids."""
    ids = sorted({s.dialog_id for s in segments})
    n_val = max(1, int(round(validation * len(ids))))
    n_test = max(1, int(round(test * len(ids))))
    train = ids[: len(ids) - n_val - n_test]
    return SplitManifest(
        "fixed_splits",
        fixed={"train": train, "validation": ids[len(train) : len(train) + n_val], "test": ids[len(ids) - n_test :]},
    )


def kfold_manifest(segments: list[Segment], k: int = 5) -> SplitManifest:
    ids = sorted({s.dialog_id for s in segments})
    return SplitManifest("k_fold", folds=[ids[i::k] for i in range(k)])
