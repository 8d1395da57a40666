"""Character-, word- and dual-branch CNN segment classifiers.

Each branch embeds its tokens, runs one same-padded temporal convolution
per window size and max-pools every convolution over the valid positions.
The pooled vectors of all branches are concatenated, the optional context
vector is appended, and the result passes a ReLU reduction layer and a
softmax output layer.

Checkpoint layout (all integers little-endian)::

    bytes 0..7    magic b"CHDACKP1"
    bytes 8..15   uint64 header length H
    next H bytes  UTF-8 JSON header: config, flags, labels, vocabularies and a
                  tensor directory [{name, shape, trainable}] in storage order
    remainder     float64 little-endian tensor data, row-major, concatenated
                  in directory order
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LabelSet, context_dim
from .errors import ConfigurationError, NonFiniteError
from .nn import (
    STREAM_DROPOUT,
    STREAM_INIT,
    Dense,
    Embedding,
    MaxOverTime,
    Parameter,
    SoftmaxCrossEntropy,
    TemporalConv,
    embedding_uniform,
    glorot_uniform,
    make_rng,
)
from .textprep import PAD, EncodedSegment, PreprocessingFlags, Vocabulary

EMBEDDING_MODES = ("random_trainable", "pretrained_fixed", "pretrained_trainable")
BRANCH_KINDS = ("character", "word")
DEFAULT_EMBEDDING_DIM = {"character": 30, "word": 200}


@dataclass(frozen=True)
class BranchConfig:
    kind: str
    window_sizes: tuple[int, ...]
    filters_per_window: int = 100
    embedding_dim: int | None = None
    embedding_mode: str = "random_trainable"

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise ConfigurationError(f"unknown branch kind {self.kind!r}")
        object.__setattr__(self, "window_sizes", tuple(int(w) for w in self.window_sizes))
        if self.embedding_dim is None:
            object.__setattr__(self, "embedding_dim", DEFAULT_EMBEDDING_DIM[self.kind])
        ws = self.window_sizes
        if not ws or any(w < 1 for w in ws) or any(a >= b for a, b in zip(ws, ws[1:])):
            raise ConfigurationError(f"window sizes must be positive and strictly increasing, got {ws}")
        if self.filters_per_window < 1 or self.embedding_dim < 1:
            raise ConfigurationError("filter count and embedding dim must be positive")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ConfigurationError(f"unknown embedding mode {self.embedding_mode!r}")
        if self.pretrained and self.kind != "word":
            raise ConfigurationError("pre-trained embeddings are only supported for the word branch")

    @property
    def pretrained(self) -> bool:
        return self.embedding_mode != "random_trainable"

    @property
    def output_dim(self) -> int:
        return len(self.window_sizes) * self.filters_per_window


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch size and max epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


def char_branch(window_sizes=(3, 5, 7), **kw) -> BranchConfig:
    return BranchConfig("character", tuple(window_sizes), **kw)


def word_branch(window_sizes=(1, 2, 3), **kw) -> BranchConfig:
    return BranchConfig("word", tuple(window_sizes), **kw)


@dataclass(frozen=True)
class ModelConfig:
    branches: tuple[BranchConfig, ...] = (char_branch(),)
    use_context: bool = False
    n_prev: int = 3
    reduction_dim: int = 100
    label_count: int | None = None
    seed: int = 0
    dropout: float = 0.0
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        kinds = [b.kind for b in self.branches]
        if len(kinds) not in (1, 2) or len(set(kinds)) != len(kinds):
            raise ConfigurationError(
                f"need one branch or exactly one character and one word branch, got {kinds}"
            )
        if self.n_prev < 0 or self.reduction_dim < 1:
            raise ConfigurationError("n_prev must be >= 0 and reduction_dim >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")

    def branch(self, kind: str) -> BranchConfig | None:
        return next((b for b in self.branches if b.kind == kind), None)

    @property
    def max_window(self) -> int:
        return max(max(b.window_sizes) for b in self.branches)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        branches = tuple(
            BranchConfig(**{**b, "window_sizes": tuple(b["window_sizes"])}) for b in data.pop("branches")
        )
        training = TrainingConfig(**data.pop("training", {}))
        return cls(branches=branches, training=training, **data)


def representation_dim(config: ModelConfig, label_count: int) -> int:
    """Input width of the reduction layer."""
    dim = sum(b.output_dim for b in config.branches)
    if config.use_context:
        dim += context_dim(config.n_prev, label_count)
    return dim


@dataclass
class Batch:
    tokens: dict[str, tuple[np.ndarray, np.ndarray]]  # kind -> (indices [B, L], lengths [B])
    context: np.ndarray | None
    size: int


class _Branch:
    def __init__(self, cfg: BranchConfig, table: Parameter):
        self.cfg = cfg
        self.embedding = Embedding(table, padding_index=PAD)
        self.convs: list[TemporalConv] = []
        self.pools: list[MaxOverTime] = []
        self._mask = None

    def forward(self, indices: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        x = self.embedding.forward(indices)
        mask = (np.arange(indices.shape[1])[None, :] < lengths[:, None])[:, :, None]
        self._mask = mask
        x = x * mask
        pooled = [pool.forward(conv.forward(x), lengths) for conv, pool in zip(self.convs, self.pools)]
        return np.concatenate(pooled, axis=1)

    def backward(self, grad: np.ndarray) -> None:
        F = self.cfg.filters_per_window
        dx = 0.0
        for i, (conv, pool) in enumerate(zip(self.convs, self.pools)):
            dx = dx + conv.backward(pool.backward(grad[:, i * F : (i + 1) * F]))
        self.embedding.backward(dx * self._mask)


class Model:
    """A built classifier with its vocabularies, label set and parameters."""

    def __init__(
        self,
        config: ModelConfig,
        label_set: LabelSet,
        vocabularies: dict[str, Vocabulary],
        flags: PreprocessingFlags = PreprocessingFlags(),
        embeddings: np.ndarray | None = None,
        _init: bool = True,
    ):
        C = len(label_set)
        if C < 1:
            raise ConfigurationError("label set is empty")
        if config.label_count not in (None, C):
            raise ConfigurationError(f"config label_count {config.label_count} != label set size {C}")
        self.config = config.replace(label_count=C)
        self.label_set = label_set
        self.flags = flags
        self.vocabularies = {}
        self.params: dict[str, Parameter] = {}
        rng = make_rng(config.seed, STREAM_INIT)
        self._dropout_rng = make_rng(config.seed, STREAM_DROPOUT)

        wants_table = any(b.pretrained for b in config.branches)
        if wants_table != (embeddings is not None) and _init:
            raise ConfigurationError(
                "an embedding table must be supplied exactly when a pre-trained mode is configured"
            )

        self.branches: list[_Branch] = []
        for b in config.branches:
            vocab = vocabularies.get(b.kind)
            if vocab is None or vocab.kind != b.kind:
                raise ConfigurationError(f"missing {b.kind} vocabulary for the {b.kind} branch")
            self.vocabularies[b.kind] = vocab
            prefix = "char" if b.kind == "character" else "word"
            shape = (len(vocab), b.embedding_dim)
            if b.pretrained and _init:
                if embeddings.shape != shape:
                    raise ConfigurationError(
                        f"layer {prefix}.embedding: table shape {embeddings.shape} != expected {shape}"
                    )
                table = np.array(embeddings, dtype=np.float64)
            else:
                table = embedding_uniform(rng, shape)
            table[PAD] = 0.0
            trainable = b.embedding_mode != "pretrained_fixed"
            branch = _Branch(b, self._add(f"{prefix}.embedding", table, trainable))
            for w in b.window_sizes:
                d, F = b.embedding_dim, b.filters_per_window
                weights = self._add(f"{prefix}.conv{w}.weights", glorot_uniform(rng, (w, d, F), w * d, w * F))
                bias = self._add(f"{prefix}.conv{w}.bias", np.zeros(F))
                branch.convs.append(TemporalConv(weights, bias))
                branch.pools.append(MaxOverTime())
            self.branches.append(branch)

        n_in = representation_dim(self.config, C)
        R = config.reduction_dim
        self.reduction = Dense(
            self._add("reduction.weights", glorot_uniform(rng, (n_in, R), n_in, R)),
            self._add("reduction.bias", np.zeros(R)),
            "relu",
        )
        self.output = Dense(
            self._add("output.weights", glorot_uniform(rng, (R, C), R, C)),
            self._add("output.bias", np.zeros(C)),
            "none",
        )
        self._loss = SoftmaxCrossEntropy()
        self._drop_mask = None
        # encoding length per branch kind, fixed from the training split
        self.pad_to: dict[str, int] = {}

    def _add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        p = Parameter(value, trainable=trainable, name=name)
        self.params[name] = p
        return p

    @property
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    @property
    def context_dim(self) -> int:
        return context_dim(self.config.n_prev, len(self.label_set))

    # -- batching ---------------------------------------------------------

    def collate(self, encoded: Sequence[EncodedSegment], contexts=None) -> Batch:
        """Stack segments, padding each branch to the batch maximum (at least its widest window)."""
        if not encoded:
            raise ConfigurationError("empty batch")
        tokens = {}
        for b in self.config.branches:
            field_name = "chars" if b.kind == "character" else "words"
            seqs = [getattr(e, field_name) for e in encoded]
            if any(s is None for s in seqs):
                raise ConfigurationError(f"segment lacks {b.kind} encoding required by the model")
            lengths = np.array([s.valid_length for s in seqs], dtype=np.int64)
            L = max(int(lengths.max()), max(b.window_sizes))
            idx = np.full((len(seqs), L), PAD, dtype=np.int64)
            for i, s in enumerate(seqs):
                idx[i, : s.valid_length] = s.indices[: s.valid_length]
            tokens[b.kind] = (idx, lengths)
        ctx = None
        if self.config.use_context:
            if contexts is None:
                raise ConfigurationError("model uses context but no context features were given")
            ctx = np.asarray(contexts, dtype=np.float64).reshape(len(encoded), -1)
            if ctx.shape[1] != self.context_dim:
                raise ConfigurationError(f"context width {ctx.shape[1]} != expected {self.context_dim}")
        return Batch(tokens, ctx, len(encoded))

    # -- passes -----------------------------------------------------------

    def _logits(self, batch: Batch, train: bool = False) -> np.ndarray:
        parts = [br.forward(*batch.tokens[br.cfg.kind]) for br in self.branches]
        if self.config.use_context:
            parts.append(batch.context)
        rep = np.concatenate(parts, axis=1)
        self._drop_mask = None
        if train and self.config.dropout > 0:
            keep = 1.0 - self.config.dropout
            self._drop_mask = (self._dropout_rng.random(rep.shape) < keep) / keep
            rep = rep * self._drop_mask
        return self.output.forward(self.reduction.forward(rep))

    def _backward(self, dlogits: np.ndarray) -> None:
        drep = self.reduction.backward(self.output.backward(dlogits))
        if self._drop_mask is not None:
            drep = drep * self._drop_mask
        offset = 0
        for br in self.branches:
            width = br.cfg.output_dim
            br.backward(drep[:, offset : offset + width])
            offset += width

    def activation_pattern(self) -> bytes:
        """Pooling argmax positions and active reduction units of the last forward pass."""
        parts = [pool._argmax.tobytes() for br in self.branches for pool in br.pools]
        parts.append((self.reduction._out > 0).tobytes())
        return b"".join(parts)

    def forward_batch(self, batch: Batch) -> np.ndarray:
        """Class probabilities ``[B, C]``."""
        z = self._logits(batch)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def forward(self, encoded: EncodedSegment, context=None) -> np.ndarray:
        ctx = None if context is None else np.asarray(context)[None]
        return self.forward_batch(self.collate([encoded], ctx))[0]

    def predict_batch(self, batch: Batch) -> np.ndarray:
        return self.forward_batch(batch).argmax(axis=1)

    def predict(self, encoded: EncodedSegment, context=None) -> int:
        return int(np.argmax(self.forward(encoded, context)))

    def loss_and_backward(self, batch: Batch, gold, train: bool = False) -> float:
        """Mean cross-entropy over the batch; gradients accumulate on trainable parameters."""
        gold = np.asarray(gold, dtype=np.int64)
        if len(gold) != batch.size or batch.size == 0:
            raise ConfigurationError("need one gold label per batch row")
        logits = self._logits(batch, train=train)
        loss, _ = self._loss.forward(logits, gold)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite loss {loss}")
        self._backward(self._loss.backward())
        return loss

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for k, v in snapshot.items():
            self.params[k].value[...] = v

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = {
            "config": self.config.to_dict(),
            "flags": dataclasses.asdict(self.flags),
            "labels": self.label_set.labels,
            "pad_to": self.pad_to,
            "vocabularies": {k: v.to_dict() for k, v in sorted(self.vocabularies.items())},
            "tensors": [
                {"name": k, "shape": list(p.shape), "trainable": p.trainable} for k, p in self.params.items()
            ],
        }
        blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        with Path(path).open("wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for p in self.params.values():
                f.write(p.value.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16 : 16 + n].decode("utf-8"))
        model = cls(
            ModelConfig.from_dict(header["config"]),
            LabelSet(header["labels"]),
            {k: Vocabulary.from_dict(v) for k, v in header["vocabularies"].items()},
            PreprocessingFlags(**header["flags"]),
            _init=False,
        )
        model.pad_to = {k: int(v) for k, v in header.get("pad_to", {}).items()}
        offset = 16 + n
        for entry in header["tensors"]:
            p = model.params.get(entry["name"])
            if p is None or list(p.shape) != entry["shape"]:
                raise ConfigurationError(f"{path}: tensor {entry['name']} does not match the configuration")
            count = int(np.prod(entry["shape"]))
            p.value[...] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(p.shape)
            p.trainable = entry["trainable"]
            offset += 8 * count
        if offset != len(data):
            raise ConfigurationError(f"{path}: trailing bytes after tensor data")
        return model


MAGIC = b"CHDACKP1"


def build(
    config: ModelConfig,
    label_set: LabelSet,
    vocabularies: dict[str, Vocabulary],
    flags: PreprocessingFlags = PreprocessingFlags(),
    embeddings: np.ndarray | None = None,
) -> Model:
    return Model(config, label_set, vocabularies, flags, embeddings)
