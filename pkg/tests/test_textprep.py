import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from charda.corpus import Segment
from charda.errors import ConfigurationError, SegmentRejected
from charda.synthetic import random_corpus
from charda.textprep import (
    PAD,
    UNK,
    PreprocessingFlags,
    build_vocabulary,
    char_tokenize,
    decode,
    encode,
    is_punctuation_token,
    tokenize,
    word_tokenize,
)

LOWER_PUNCT = PreprocessingFlags(keep_punctuation=True)
BARE = PreprocessingFlags()
RAW = PreprocessingFlags(keep_capitalization=True, keep_punctuation=True)


def seg(text, lemma=None, label="x"):
    return Segment("d", 0, "A", label, text, lemma)


def test_char_tokenize_examples():
    assert char_tokenize("Yes.", LOWER_PUNCT) == ["y", "e", "s", "."]
    assert char_tokenize("Yes.", BARE) == ["y", "e", "s"]
    assert char_tokenize("¿A Madrid?", RAW) == ["¿", "A", " ", "M", "a", "d", "r", "i", "d", "?"]


def test_char_whitespace_collapsed():
    assert char_tokenize("  a \t\n b ", BARE) == ["a", " ", "b"]


def test_char_rejects_empty():
    with pytest.raises(SegmentRejected):
        char_tokenize("?!", BARE)


def test_word_tokenize_examples():
    assert word_tokenize("i know .", LOWER_PUNCT) == ["i", "know", "."]
    assert word_tokenize("I know.", BARE) == ["i", "know"]
    assert word_tokenize("uh-huh", BARE) == ["uh-huh"]
    assert word_tokenize("uh-huh", LOWER_PUNCT) == ["uh-huh"]


def test_word_punctuation_detached():
    assert word_tokenize("Don't, -well- ok?!", RAW) == ["Don't", ",", "-", "well", "-", "ok", "?", "!"]
    assert word_tokenize("¿Qué?", RAW) == ["¿", "Qué", "?"]


def test_lemmatized_column_swap():
    s = seg("I was going", lemma="I be go")
    assert tokenize(s, "word", PreprocessingFlags(use_lemmatized_text=True)) == ["i", "be", "go"]
    with pytest.raises(ConfigurationError):
        tokenize(seg("x"), "word", PreprocessingFlags(use_lemmatized_text=True))


text_strategy = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30
)


@settings(max_examples=300, deadline=None)
@given(text=text_strategy, cap=st.booleans())
@pytest.mark.parametrize("tokenizer", [char_tokenize, word_tokenize])
def test_punctuation_flag_monotonicity(tokenizer, text, cap):
    try:
        with_p = tokenizer(text, PreprocessingFlags(keep_capitalization=cap, keep_punctuation=True))
    except SegmentRejected:
        return
    expected = Counter(t for t in with_p if not is_punctuation_token(t))
    try:
        without = tokenizer(text, PreprocessingFlags(keep_capitalization=cap, keep_punctuation=False))
    except SegmentRejected:
        assert not expected
        return
    assert Counter(without) == expected


@settings(max_examples=300, deadline=None)
@given(text=text_strategy, punct=st.booleans())
@pytest.mark.parametrize("tokenizer", [char_tokenize, word_tokenize])
def test_casing_idempotence(tokenizer, text, punct):
    flags = PreprocessingFlags(keep_punctuation=punct)
    try:
        original = tokenizer(text, flags)
    except SegmentRejected:
        with pytest.raises(SegmentRejected):
            tokenizer(text.lower(), flags)
        return
    assert tokenizer(text.lower(), flags) == original


def test_vocabulary_enumeration_and_cutoff():
    segs = [seg("aa"), seg("ab")]
    v = build_vocabulary(segs, "character", BARE, min_count=1)
    assert v.itos == ["<pad>", "<unk>", "a", "b"]
    v2 = build_vocabulary(segs, "character", BARE, min_count=2)
    assert v2.itos == ["<pad>", "<unk>", "a"]
    assert v2.index("b") == UNK


def test_vocabulary_ties_broken_lexicographically():
    v = build_vocabulary([seg("c b a b c")], "word", BARE, min_count=1)
    assert v.itos[2:] == ["b", "c", "a"]


def test_vocabulary_default_min_counts():
    segs = [seg("the cat"), seg("the dog")]
    assert build_vocabulary(segs, "word", BARE).itos[2:] == ["the"]
    assert "c" in build_vocabulary(segs, "character", BARE)


def test_vocabulary_independent_of_order():
    corpus = random_corpus(40, seed=5)
    ref = build_vocabulary(corpus, "word", RAW)
    rng = random.Random(1)
    for _ in range(10):
        shuffled = corpus[:]
        rng.shuffle(shuffled)
        assert build_vocabulary(shuffled, "word", RAW) == ref
        assert build_vocabulary(shuffled, "character", RAW).itos == build_vocabulary(corpus, "character", RAW).itos


def test_vocabulary_needs_training_data():
    with pytest.raises(ConfigurationError):
        build_vocabulary([], "character")


def test_encode_padding_and_unk():
    v = build_vocabulary([seg("aa"), seg("ab")], "character", BARE, min_count=2)
    e = encode(seg("aa"), v, None, BARE, pad_to_char=4)
    a = v.index("a")
    assert e.chars.indices.tolist() == [a, a, PAD, PAD] and e.chars.valid_length == 2
    e2 = encode(seg("az"), v, None, BARE, pad_to_char=4)
    assert e2.chars.indices.tolist() == [a, UNK, PAD, PAD]
    assert e2.words is None


def test_encode_truncates():
    v = build_vocabulary([seg("abcdef")], "character", BARE)
    e = encode(seg("abcdef"), v, None, BARE, pad_to_char=3)
    assert e.chars.valid_length == 3
    assert decode(e.chars, v) == ["a", "b", "c"]


def test_encode_rejects_empty():
    v = build_vocabulary([seg("ab")], "character", BARE)
    with pytest.raises(SegmentRejected):
        encode(seg("..."), v, None, BARE, pad_to_char=4)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), cap=st.booleans(), punct=st.booleans())
def test_encode_round_trip_and_purity(seed, cap, punct):
    flags = PreprocessingFlags(keep_capitalization=cap, keep_punctuation=punct)
    corpus = random_corpus(6, seed=seed)
    cv = build_vocabulary(corpus, "character", flags)
    wv = build_vocabulary(corpus, "word", flags, min_count=1)
    for s in corpus:
        e = encode(s, cv, wv, flags, pad_to_char=80, pad_to_word=20)
        assert decode(e.chars, cv) == char_tokenize(s.text, flags)
        assert decode(e.words, wv) == word_tokenize(s.text, flags)
        for part in (e.chars, e.words):
            assert 1 <= part.valid_length <= len(part.indices)
            assert (part.indices[part.valid_length :] == PAD).all()
        again = encode(s, cv, wv, flags, pad_to_char=80, pad_to_word=20)
        assert again.chars.indices.tobytes() == e.chars.indices.tobytes()
        assert again.words.indices.tobytes() == e.words.indices.tobytes()
