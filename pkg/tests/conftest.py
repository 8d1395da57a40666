import pytest

from charda.corpus import LabelSet
from charda.harness import encode_all, gold_contexts, prepare
from charda.model import ModelConfig, TrainingConfig, build, char_branch, word_branch
from charda.synthetic import random_corpus
from charda.textprep import PreprocessingFlags

FLAGS = PreprocessingFlags(keep_punctuation=True)


def small_config(**kw):
    base = dict(
        branches=(
            char_branch((3, 5, 7), filters_per_window=6, embedding_dim=5),
            word_branch((1, 2, 3), filters_per_window=5, embedding_dim=4),
        ),
        use_context=True,
        reduction_dim=8,
        training=TrainingConfig(batch_size=8, max_epochs=5, patience=2),
    )
    base.update(kw)
    return ModelConfig(**base)


def make_model(config=None, n_dialogs=6, seed=0):
    """Model plus encoded corpus and gold contexts for it."""
    config = config or small_config()
    corpus = random_corpus(n_dialogs, seed=seed)
    labels = LabelSet(s.label for s in corpus)
    prepared = prepare(corpus, config, FLAGS)
    model = build(config, labels, prepared.vocabularies, FLAGS)
    model.pad_to = prepared.pad_to
    encoded = encode_all(corpus, prepared, FLAGS, labels)
    ctx = gold_contexts(encoded, len(labels), config.n_prev)
    return model, encoded, ctx


@pytest.fixture
def small_model():
    return make_model()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
