"""Dialog act classification with character- and word-level CNNs."""

from .corpus import LabelSet, Segment, SplitManifest, extract_context, load_embeddings, read_corpus, read_manifest, resolve_splits
from .errors import CharDAError, ConfigurationError, CorpusFormatError, NonFiniteError, SegmentRejected
from .harness import EarlyStopping, ExperimentSpec, RunStatistics, evaluate, run_experiment, train
from .model import BranchConfig, Model, ModelConfig, TrainingConfig, build, char_branch, word_branch
from .textprep import PreprocessingFlags, Vocabulary, build_vocabulary, char_tokenize, encode, word_tokenize

__version__ = "0.1.0"

__all__ = [
    "BranchConfig",
    "build",
    "build_vocabulary",
    "char_branch",
    "char_tokenize",
    "CharDAError",
    "ConfigurationError",
    "CorpusFormatError",
    "EarlyStopping",
    "encode",
    "evaluate",
    "ExperimentSpec",
    "extract_context",
    "LabelSet",
    "load_embeddings",
    "Model",
    "ModelConfig",
    "NonFiniteError",
    "PreprocessingFlags",
    "read_corpus",
    "read_manifest",
    "resolve_splits",
    "run_experiment",
    "RunStatistics",
    "Segment",
    "SegmentRejected",
    "SplitManifest",
    "train",
    "TrainingConfig",
    "Vocabulary",
    "word_branch",
    "word_tokenize",
]
