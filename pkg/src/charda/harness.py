"""Training with early stopping, evaluation and multi-seed experiments."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LabelSet, Segment, Split, context_vector, load_embeddings, read_corpus, read_manifest, resolve_splits
from .errors import ConfigurationError, NonFiniteError, SegmentRejected
from .model import Model, ModelConfig, build
from .nn import STREAM_SHUFFLE, make_optimizer, make_rng
from .textprep import EncodedSegment, PreprocessingFlags, Vocabulary, build_vocabulary, encode, tokenize

logger = logging.getLogger(__name__)

CONTEXT_SOURCES = ("gold", "predicted")


class EarlyStopping:
    """Patience counter: only a strictly better score resets it."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigurationError("patience must be >= 1")
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, score: float) -> bool:
        """Record one epoch's score; return True when it is a new best."""
        self.epoch += 1
        if score > self.best:
            self.best = score
            self.best_epoch = self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    validation_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    aborted: str | None = None


@dataclass
class EvalResult:
    accuracy: float
    correct: int
    total: int
    confusion: np.ndarray
    predictions: list[int]


# -- data preparation ---------------------------------------------------------


def usable_segments(segments: Sequence[Segment], config: ModelConfig, flags: PreprocessingFlags) -> list[Segment]:
    """Drop segments that some configured branch would see as empty."""
    kinds = [b.kind for b in config.branches]
    kept = []
    for s in segments:
        try:
            for kind in kinds:
                tokenize(s, kind, flags)
        except SegmentRejected:
            logger.warning("segment %s:%d is empty after preprocessing; skipped", s.dialog_id, s.position)
            continue
        kept.append(s)
    return kept


@dataclass
class Prepared:
    vocabularies: dict[str, Vocabulary]
    pad_to: dict[str, int]
    embeddings: np.ndarray | None


def prepare(
    train_segments: Sequence[Segment],
    config: ModelConfig,
    flags: PreprocessingFlags,
    embeddings_path: str | Path | None = None,
) -> Prepared:
    """Vocabularies and pad lengths from the training split only."""
    vocabs, pad_to = {}, {}
    for b in config.branches:
        vocabs[b.kind] = build_vocabulary(train_segments, b.kind, flags)
        longest = max(len(tokenize(s, b.kind, flags)) for s in train_segments)
        pad_to[b.kind] = max(longest, max(b.window_sizes))
    table = None
    word = config.branch("word")
    if word is not None and word.pretrained:
        if embeddings_path is None:
            raise ConfigurationError("pre-trained word embeddings configured but no embedding file given")
        table, coverage = load_embeddings(embeddings_path, vocabs["word"], word.embedding_dim, config.seed)
        logger.info("embedding coverage: %.1f%% missing", 100 * coverage.missing_fraction)
    return Prepared(vocabs, pad_to, table)


def encode_all(
    segments: Sequence[Segment],
    prepared: Prepared,
    flags: PreprocessingFlags,
    label_set: LabelSet,
) -> list[EncodedSegment]:
    return [
        encode(
            s,
            prepared.vocabularies.get("character"),
            prepared.vocabularies.get("word"),
            flags,
            prepared.pad_to.get("character", 0),
            prepared.pad_to.get("word", 0),
            label_index=label_set.index(s.label),
        )
        for s in segments
    ]


def _dialog_groups(encoded: Sequence[EncodedSegment]) -> list[list[int]]:
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(encoded):
        groups.setdefault(e.dialog_id, []).append(i)
    return [sorted(ix, key=lambda i: encoded[i].position) for ix in groups.values()]


def gold_contexts(encoded: Sequence[EncodedSegment], n_labels: int, n_prev: int) -> np.ndarray:
    """Context features from gold labels for segments in dialog order."""
    out = np.zeros((len(encoded), n_prev * n_labels + 1))
    for group in _dialog_groups(encoded):
        labels = [encoded[i].label_index for i in group]
        speakers = [encoded[i].speaker for i in group]
        for p, i in enumerate(group):
            out[i] = context_vector(labels[:p], speakers[: p + 1], n_labels, n_prev)
    return out


# -- evaluation ---------------------------------------------------------------


def _predict_in_chunks(model: Model, items, contexts, chunk: int) -> np.ndarray:
    preds = []
    for start in range(0, len(items), chunk):
        ctx = None if contexts is None else contexts[start : start + chunk]
        preds.append(model.predict_batch(model.collate(items[start : start + chunk], ctx)))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def predict_all(
    model: Model,
    encoded: Sequence[EncodedSegment],
    context_source: str = "gold",
    chunk: int = 256,
) -> list[int]:
    """Predicted label index per segment.

    In predicted-context mode each dialog is processed in position order and
    the context of every segment is built from the model's own predictions
    for the earlier segments; gold labels are not read.
    """
    if context_source not in CONTEXT_SOURCES:
        raise ConfigurationError(f"unknown context source {context_source!r}")
    C, n_prev = len(model.label_set), model.config.n_prev
    if not model.config.use_context:
        return _predict_in_chunks(model, list(encoded), None, chunk).tolist()
    if context_source == "gold":
        ctx = gold_contexts(encoded, C, n_prev)
        return _predict_in_chunks(model, list(encoded), ctx, chunk).tolist()

    groups = _dialog_groups(encoded)
    preds = [-1] * len(encoded)
    for step in range(max((len(g) for g in groups), default=0)):
        active = [g for g in groups if len(g) > step]
        items = [encoded[g[step]] for g in active]
        ctx = np.stack(
            [
                context_vector(
                    [preds[i] for i in g[:step]],
                    [encoded[i].speaker for i in g[: step + 1]],
                    C,
                    n_prev,
                )
                for g in active
            ]
        )
        for g, p in zip(active, _predict_in_chunks(model, items, ctx, chunk)):
            preds[g[step]] = int(p)
    return preds


def evaluate(model: Model, encoded: Sequence[EncodedSegment], context_source: str = "gold") -> EvalResult:
    """Per-segment accuracy and confusion matrix (rows gold, columns predicted)."""
    preds = predict_all(model, encoded, context_source)
    C = len(model.label_set)
    confusion = np.zeros((C, C), dtype=np.int64)
    for e, p in zip(encoded, preds):
        confusion[e.label_index, p] += 1
    correct = int(np.trace(confusion))
    total = len(encoded)
    return EvalResult(correct / total if total else float("nan"), correct, total, confusion, preds)


# -- training -----------------------------------------------------------------


def fit(
    model: Model,
    train_encoded: Sequence[EncodedSegment],
    validation_encoded: Sequence[EncodedSegment],
) -> TrainRecord:
    """Mini-batch training with early stopping on validation accuracy.

    The parameters of the best epoch are restored before returning. A
    non-finite loss or gradient ends training and is noted in the record.
    """
    if not train_encoded or not validation_encoded:
        raise ConfigurationError("training and validation sets must be non-empty")
    cfg = model.config
    tc = cfg.training
    C = len(model.label_set)
    train_ctx = gold_contexts(train_encoded, C, cfg.n_prev) if cfg.use_context else None
    gold = np.array([e.label_index for e in train_encoded])
    rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    opt = make_optimizer(
        tc.optimizer,
        model.parameters,
        learning_rate=tc.learning_rate,
        beta1=tc.beta1,
        beta2=tc.beta2,
        epsilon=tc.epsilon,
    )
    record = TrainRecord()
    model.zero_grad()

    def run_epoch(epoch: int) -> float:
        order = rng.permutation(len(train_encoded))
        total = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            ctx = None if train_ctx is None else train_ctx[idx]
            batch = model.collate([train_encoded[i] for i in idx], ctx)
            total += model.loss_and_backward(batch, gold[idx], train=True) * len(idx)
            opt.step()
        record.train_loss.append(total / len(order))
        acc = evaluate(model, validation_encoded, "gold").accuracy
        record.validation_accuracy.append(acc)
        logger.debug("epoch %d loss %.4f val %.4f", epoch, record.train_loss[-1], acc)
        return acc

    try:
        best, record.best_epoch, record.stop_epoch = run_with_early_stopping(
            run_epoch, model.snapshot, tc.patience, tc.max_epochs
        )
    except _Aborted as exc:
        cause = exc.__cause__
        record.aborted = f"epoch {exc.epoch}: {cause}"
        logger.error("run aborted: %s", record.aborted)
        model.zero_grad()
        best, record.best_epoch, record.stop_epoch = exc.best, exc.best_epoch, exc.epoch - 1
    model.restore(best)
    return record


class _Aborted(Exception):
    def __init__(self, epoch: int, best, best_epoch: int):
        super().__init__(epoch)
        self.epoch, self.best, self.best_epoch = epoch, best, best_epoch


def run_with_early_stopping(run_epoch, snapshot, patience: int, max_epochs: int):
    """Drive epochs until patience runs out; return (best_state, best_epoch, stop_epoch).

    ``run_epoch(epoch)`` trains one epoch and returns the validation score.
    ``snapshot()`` captures the state worth restoring. The state before the
    first epoch is returned when no epoch completes.
    """
    stopper = EarlyStopping(patience)
    best = snapshot()
    for epoch in range(1, max_epochs + 1):
        try:
            score = run_epoch(epoch)
        except NonFiniteError as exc:
            raise _Aborted(epoch, best, stopper.best_epoch) from exc
        if stopper.update(score):
            best = snapshot()
        if stopper.should_stop:
            break
    return best, stopper.best_epoch, stopper.epoch


def train(
    config: ModelConfig,
    flags: PreprocessingFlags,
    label_set: LabelSet,
    train_segments: Sequence[Segment],
    validation_segments: Sequence[Segment],
    embeddings_path: str | Path | None = None,
) -> tuple[Model, TrainRecord]:
    """Build a fresh model from the training split and fit it."""
    train_segments = usable_segments(train_segments, config, flags)
    validation_segments = usable_segments(validation_segments, config, flags)
    if not train_segments or not validation_segments:
        raise ConfigurationError("training and validation splits must be non-empty")
    prepared = prepare(train_segments, config, flags, embeddings_path)
    model = build(config, label_set, prepared.vocabularies, flags, prepared.embeddings)
    model.pad_to = prepared.pad_to
    record = fit(
        model,
        encode_all(train_segments, prepared, flags, label_set),
        encode_all(validation_segments, prepared, flags, label_set),
    )
    return model, record


def encode_for(model: Model, segments: Sequence[Segment]) -> list[EncodedSegment]:
    """Encode evaluation segments with a trained model's vocabularies."""
    segments = usable_segments(segments, model.config, model.flags)
    pad_to = model.pad_to
    prepared = Prepared(
        model.vocabularies,
        {
            b.kind: pad_to.get(b.kind) or max(
                [len(tokenize(s, b.kind, model.flags)) for s in segments] + [max(b.window_sizes)]
            )
            for b in model.config.branches
        },
        None,
    )
    return encode_all(segments, prepared, model.flags, model.label_set)


# -- experiments --------------------------------------------------------------


@dataclass
class ExperimentSpec:
    name: str
    config: ModelConfig
    flags: PreprocessingFlags
    corpus: str
    manifest: str
    seeds: tuple[int, ...] = tuple(range(10))
    context_source: str = "gold"
    embeddings: str | None = None

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigurationError(f"experiment {self.name}: empty seed list")
        if self.context_source not in CONTEXT_SOURCES:
            raise ConfigurationError(f"unknown context source {self.context_source!r}")


@dataclass
class RunStatistics:
    accuracies: list[float]
    seeds: list[int]

    @property
    def n_runs(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")


@dataclass
class RunArtifact:
    seed: int
    accuracy: dict[str, float]
    best_epochs: list[int]
    stop_epochs: list[int]
    excluded: str | None = None


@dataclass
class ExperimentResult:
    name: str
    statistics: dict[str, RunStatistics]
    runs: list[RunArtifact]


def _run_seed(spec: ExperimentSpec, seed: int, segments, label_set: LabelSet, splits: list[Split]) -> RunArtifact:
    config = spec.config.replace(seed=seed)
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    best_epochs, stop_epochs = [], []
    fixed = len(splits) == 1 and splits[0].name == "fixed"
    for split in splits:
        model, record = train(config, spec.flags, label_set, split.train, split.validation, spec.embeddings)
        best_epochs.append(record.best_epoch)
        stop_epochs.append(record.stop_epoch)
        if record.aborted:
            return RunArtifact(seed, {}, best_epochs, stop_epochs, excluded=f"{split.name}: {record.aborted}")
        targets = {"validation": split.validation, "test": split.test} if fixed else {"cv": split.test}
        for name, segs in targets.items():
            res = evaluate(model, encode_for(model, segs), spec.context_source)
            correct[name] = correct.get(name, 0) + res.correct
            total[name] = total.get(name, 0) + res.total
    return RunArtifact(seed, {k: correct[k] / total[k] for k in correct}, best_epochs, stop_epochs)


def _run_seed_job(args):
    return _run_seed(*args)


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Train and evaluate once per seed; aggregate accuracy per evaluated split.

    Fixed splits report ``validation`` and ``test``; k-fold manifests report
    ``cv``, the micro-averaged accuracy over all folds' test sets. Runs whose
    training aborted are excluded from the statistics and flagged.
    """
    segments, label_set = read_corpus(spec.corpus)
    if spec.flags.use_lemmatized_text and any(s.lemmatized_text is None for s in segments):
        raise ConfigurationError(f"{spec.corpus}: lemmatized text requested but the corpus has no lemma column")
    splits = resolve_splits(segments, read_manifest(spec.manifest))
    args = [(spec, seed, segments, label_set, splits) for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed_job, args))
    else:
        runs = [_run_seed(*a) for a in args]

    split_names = ["validation", "test"] if splits[0].name == "fixed" else ["cv"]
    stats = {}
    for name in split_names:
        ok = [r for r in runs if r.excluded is None]
        stats[name] = RunStatistics([r.accuracy[name] for r in ok], [r.seed for r in ok])
    for r in runs:
        if r.excluded:
            logger.warning("experiment %s seed %d excluded: %s", spec.name, r.seed, r.excluded)
    return ExperimentResult(spec.name, stats, runs)


def run_artifacts(results: Sequence[ExperimentResult]) -> dict:
    """JSON-ready per-run detail from which every reported mean/std can be recomputed."""
    return {
        "experiments": [
            {
                "name": r.name,
                "runs": [dataclasses.asdict(a) for a in r.runs],
                "statistics": {
                    k: {"accuracies": s.accuracies, "seeds": s.seeds, "mean": s.mean, "std": s.std}
                    for k, s in r.statistics.items()
                },
            }
            for r in results
        ]
    }


# -- gradient verification ------------------------------------------------------

TOY_TEXTS = ("Yes, I know.", "uh-huh", "Do you go to Madrid?")


def toy_gradient_check(
    config: ModelConfig,
    flags: PreprocessingFlags = PreprocessingFlags(keep_punctuation=True),
    max_elements: int | None = None,
):
    """Central-difference check of a freshly built model on a 3-segment dialog.

    Pre-trained modes get a random stand-in table. Returns the
    :class:`~charda.nn.GradCheckReport`.
    """
    from .nn import embedding_uniform, gradient_check

    segments = [Segment("toy", i, "AB"[i % 2], f"L{i}", t) for i, t in enumerate(TOY_TEXTS)]
    label_set = LabelSet(s.label for s in segments)
    config = config.replace(dropout=0.0)
    prepared = prepare(segments, config.replace(branches=tuple(
        dataclasses.replace(b, embedding_mode="random_trainable") for b in config.branches
    )), flags)
    table = None
    word = config.branch("word")
    if word is not None and word.pretrained:
        table = embedding_uniform(make_rng(config.seed, 9), (len(prepared.vocabularies["word"]), word.embedding_dim))
    model = build(config, label_set, prepared.vocabularies, flags, table)
    encoded = encode_all(segments, prepared, flags, label_set)
    ctx = gold_contexts(encoded, len(label_set), config.n_prev) if config.use_context else None
    batch = model.collate(encoded, ctx)
    gold = [e.label_index for e in encoded]
    return gradient_check(
        lambda: model.loss_and_backward(batch, gold),
        model.parameters,
        max_elements=max_elements,
        rng=make_rng(config.seed, 8),
        pattern=model.activation_pattern,
    )
