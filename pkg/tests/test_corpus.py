import numpy as np
import pytest

from trams import corpus
from trams.errors import UsageError
from trams.numerics import Rng


def test_char_tokenize_first_occurrence_ids():
    vocab, ids = corpus.tokenize_corpus("abab", kind="char")
    assert vocab.size == 2
    assert vocab.id_to_token == ["a", "b"]
    np.testing.assert_array_equal(ids, [0, 1, 0, 1])


def test_char_round_trip():
    text = "the cat\nsat twice, the cat sat."
    vocab, ids = corpus.tokenize_corpus(text, kind="char")
    assert corpus.detokenize(vocab, ids) == text


def test_word_tokenize_frequency_and_tie_break():
    vocab, ids = corpus.tokenize_corpus("a b c a", kind="word", max_vocab=3)
    assert vocab.size == 3
    # a kept on frequency, b beats c on first occurrence, c falls to unk
    assert vocab.id_to_token[0] == "a"
    assert vocab.id_to_token[1] == "b"
    assert vocab.id_to_token[vocab.unk_id] == corpus.UNK_TOKEN
    np.testing.assert_array_equal(ids, [0, 1, vocab.unk_id, 0])


def test_word_detokenize():
    vocab, ids = corpus.tokenize_corpus("x y x", kind="word")
    assert corpus.detokenize(vocab, ids) == "x y x"


def test_tokenize_deterministic():
    text = "some repeated words some repeated"
    a = corpus.tokenize_corpus(text, kind="word", max_vocab=4)
    b = corpus.tokenize_corpus(text, kind="word", max_vocab=4)
    assert a[0].id_to_token == b[0].id_to_token
    np.testing.assert_array_equal(a[1], b[1])


def test_tokenize_rejects_empty_and_bad_kind():
    with pytest.raises(UsageError):
        corpus.tokenize_corpus("", kind="char")
    with pytest.raises(UsageError):
        corpus.tokenize_corpus("   ", kind="word")
    with pytest.raises(UsageError):
        corpus.tokenize_corpus("abc", kind="byte")


def test_encode_with_existing_vocab():
    vocab, _ = corpus.tokenize_corpus("abc", kind="char")
    np.testing.assert_array_equal(corpus.encode(vocab, "cab"), [2, 0, 1])
    with pytest.raises(UsageError):
        corpus.encode(vocab, "abz")
    wvocab, _ = corpus.tokenize_corpus("a b", kind="word")
    got = corpus.encode(wvocab, "a z b")
    assert got[1] == wvocab.unk_id


def test_synthetic_text_deterministic():
    a = corpus.synthetic_text(Rng(5), 2000)
    b = corpus.synthetic_text(Rng(5), 2000)
    assert a == b
    assert len(a) == 2000
    assert corpus.synthetic_text(Rng(6), 2000) != a


def test_synthetic_text_is_char_learnable_material():
    text = corpus.synthetic_text(Rng(7), 5000)
    vocab, ids = corpus.tokenize_corpus(text, kind="char")
    assert 10 <= vocab.size <= 40
    assert " " in vocab.token_to_id


def test_read_text(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("hello corpus", encoding="utf-8")
    assert corpus.read_text(str(p)) == "hello corpus"
    empty = tmp_path / "e.txt"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(UsageError):
        corpus.read_text(str(empty))
