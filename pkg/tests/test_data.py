import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dglstm.data import (
    BOS_ID, EOS_ID, UNK_ID, Corpus, Vocabulary, build_vocab, decode, encode, load_corpus, make_batches,
    make_corpus, make_minibatches, read_lines, tokenize,
)


def test_vocab_frequency_order():
    v = build_vocab(["a a b"], "word")
    assert v.tokens[3:] == ["a", "b"]
    assert v.tokens[:3] == ["<unk>", "<s>", "</s>"]


def test_vocab_min_count():
    v = build_vocab(["a a b"], "word", min_count=2)
    assert v.tokens[3:] == ["a"]
    assert encode(v, "b a", "word") == [BOS_ID, UNK_ID, 3, EOS_ID]


def test_vocab_tie_break_is_lexicographic():
    assert build_vocab(["b a"], "word").tokens[3:] == ["a", "b"]


def test_vocab_max_size_counts_reserved():
    v = build_vocab(["c c c b b a"], "word", max_size=5)
    assert v.tokens == ["<unk>", "<s>", "</s>", "c", "b"]


def test_vocab_errors():
    with pytest.raises(ValueError):
        build_vocab([], "word")
    with pytest.raises(ValueError):
        build_vocab(["a"], "word", min_count=0)


def test_reserved_literals_map_to_reserved_ids():
    v = build_vocab(["the <unk> cat"], "word")
    assert "<unk>" not in v.tokens[3:]
    assert encode(v, "the <unk>", "word")[2] == UNK_ID


def test_encode_empty_line():
    assert encode(build_vocab(["x"], "char"), "", "char") == [1, 2]


def test_encode_known_tokens_in_order():
    v = build_vocab(["hello world hello"], "word")
    assert encode(v, "world hello", "word") == [1, v.index["world"], v.index["hello"], 2]


def test_word_split_is_ascii_whitespace_only():
    assert tokenize("a b  c\td", "word") == ["a b", "c", "d"]
    assert tokenize("añ b", "char") == ["a", "ñ", " ", "b"]


@given(st.lists(st.text(alphabet="abcdé xyz", max_size=30), min_size=1, max_size=8))
def test_char_round_trip(lines):
    v = build_vocab(lines, "char")
    for line in lines:
        ids = encode(v, line, "char")
        assert decode(v, ids, "char") == line
        assert max(ids) < len(v)


@given(st.lists(st.lists(st.sampled_from(["ab", "c", "dd", "e"]), max_size=6), min_size=1, max_size=6))
def test_word_round_trip(word_lists):
    lines = [" ".join(ws) for ws in word_lists]
    v = build_vocab(lines, "word")
    for line in lines:
        assert decode(v, encode(v, line, "word"), "word") == line


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["ab c", " \t!"], "char")
    path = tmp_path / "v.txt"
    v.save(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[:3] == ["<unk>", "<s>", "</s>"]
    assert Vocabulary.load(path) == v


def test_corpus_file_reading(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes("ab\n\nba\n".encode())
    assert read_lines(path) == ["ab", "", "ba"]
    v = build_vocab(read_lines(path), "char")
    corpus = load_corpus(path, v, "char")
    assert corpus.sequences[1] == (1, 2)
    assert corpus.n_predictions == 3 + 1 + 3


def test_batches_shift_by_one():
    corpus = Corpus(((1, 5, 7, 2),), "word", 8)
    chunks = make_batches(corpus, 10)
    assert [(c.inputs, c.targets, c.carry) for c in chunks] == [([1, 5, 7], [5, 7, 2], False)]


def test_batches_chunking_carries_state():
    corpus = Corpus(((1, 5, 7, 2),), "word", 8)
    chunks = make_batches(corpus, 2)
    assert [(c.inputs, c.targets, c.carry) for c in chunks] == [([1, 5], [5, 7], False), ([7], [2], True)]


def test_batch_shuffle_is_seeded():
    corpus = Corpus(tuple((1, k, 2) for k in range(3, 30)), "word", 30)
    a = make_batches(corpus, 5, seed=3)
    b = make_batches(corpus, 5, seed=3)
    c = make_batches(corpus, 5, seed=3, epoch=1)
    assert a == b
    assert a != c


@settings(max_examples=50)
@given(st.lists(st.lists(st.integers(3, 9), max_size=12), min_size=1, max_size=10),
       st.integers(1, 6), st.integers(1, 4), st.integers(0, 100))
def test_no_target_dropped_or_duplicated(bodies, bptt, batch_size, seed):
    corpus = Corpus(tuple((1, *b, 2) for b in bodies), "word", 10)
    chunks = make_batches(corpus, bptt, seed)
    assert sum(len(c.targets) for c in chunks) == corpus.n_predictions
    mbs = make_minibatches(corpus, bptt, batch_size, seed)
    assert sum(int(b.mask.sum()) for b in mbs) == corpus.n_predictions
    got = sorted(int(t) for b in mbs for t in b.targets[b.mask > 0])
    want = sorted(t for s in corpus.sequences for t in s[1:])
    assert got == want


def test_minibatch_padding_layout():
    corpus = Corpus(((1, 3, 4, 2), (1, 2)), "word", 5)
    (batch,) = make_minibatches(corpus, 10, 2)
    assert batch.inputs.tolist() == [[1, 1], [3, 0], [4, 0]]
    assert batch.targets.tolist() == [[3, 2], [4, 0], [2, 0]]
    assert batch.mask.tolist() == [[1, 1], [1, 0], [1, 0]]


def test_corpus_rejects_bad_sequences():
    with pytest.raises(ValueError):
        Corpus(((1,),), "word", 5)
    with pytest.raises(ValueError):
        Corpus(((1, 9, 2),), "word", 5)


def test_fixture_files(fixture_dir):
    sizes = {s: (fixture_dir / f"tiny.{s}.txt").stat().st_size for s in ("train", "valid", "test")}
    assert 90_000 <= sum(sizes.values()) <= 120_000
    lines = read_lines(fixture_dir / "tiny.train.txt")
    assert all(lines)
