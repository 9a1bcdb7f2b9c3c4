import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ust.data import (HASH_DIM, Corpus, featurize, featurize_many, few_shot_split,
                      generate_synthetic_corpus, load_corpus, withheld_label_accuracy,
                      write_corpus)
from ust.exceptions import CorpusError, SplitError
from ust.nn import MlpModel

# murmurhash3_32(token, seed=0) of each n-gram, folded into 2**15 buckets
GOOD, MOVIE, GOOD_MOVIE, MOVIE_GOOD = 65, 9706, 7502, 3338


def test_golden_feature_vector():
    x = featurize("good movie")
    assert x.shape == (1, HASH_DIM)
    np.testing.assert_array_equal(x.indices, sorted([GOOD, MOVIE, GOOD_MOVIE]))
    dense = x.toarray()[0]
    r = 1 / np.sqrt(3)
    np.testing.assert_allclose(dense[[GOOD, MOVIE, GOOD_MOVIE]], [r, -r, -r])


def test_word_order_changes_only_bigrams():
    a, b = featurize("good movie").toarray()[0], featurize("movie good").toarray()[0]
    np.testing.assert_array_equal(a[[GOOD, MOVIE]], b[[GOOD, MOVIE]])
    assert a[GOOD_MOVIE] != 0 and b[GOOD_MOVIE] == 0
    assert b[MOVIE_GOOD] != 0 and a[MOVIE_GOOD] == 0


def test_features_are_case_and_punctuation_insensitive():
    a = featurize("Good, GOOD movie!").toarray()
    b = featurize("good good movie").toarray()
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_empty_text_is_zero_row():
    assert featurize("").nnz == 0
    assert featurize_many(["a b", ""]).shape == (2, HASH_DIM)


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_tsv_first_appearance_indexing(tmp_path):
    write(tmp_path / "train.tsv", ["neg\tawful", "pos\tlovely", "neg\tbad", "pos\tfine"])
    write(tmp_path / "test.tsv", ["pos\tnice", "neg\tpoor"])
    c = load_corpus(tmp_path)
    assert c.class_names == ["neg", "pos"]
    np.testing.assert_array_equal(c.labels, [0, 1, 0, 1, 1, 0])
    np.testing.assert_array_equal(c.is_test, [False] * 4 + [True] * 2)


def test_malformed_rows_are_counted(tmp_path, caplog):
    p = write(tmp_path / "d.tsv", ["a\tone", "no tab here", "\tmissing label", "b\t ", "b\ttwo"])
    c = load_corpus(p)
    assert len(c) == 2
    assert c.n_malformed == 3
    assert "malformed" in caplog.text


def test_csv_corpus(tmp_path):
    p = write(tmp_path / "train.csv", ["label,text", 'x,"hello, world"', "y,bye"])
    c = load_corpus(tmp_path)
    assert c.texts[0] == "hello, world"
    assert c.class_names == ["x", "y"]
    bad = write(tmp_path / "bad.csv", ["a,b", "1,2"])
    with pytest.raises(CorpusError):
        load_corpus(bad)
    assert p.exists()


def test_corpus_errors(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "nope.tsv")
    with pytest.raises(CorpusError):
        load_corpus(write(tmp_path / "one.tsv", ["a\tx", "a\ty"]))
    with pytest.raises(CorpusError):
        load_corpus(write(tmp_path / "empty.tsv", ["", "  "]))
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_write_then_load_round_trip(tmp_path):
    c = generate_synthetic_corpus(n_train=60, n_test=20, seed=1)
    write_corpus(c, tmp_path)
    back = load_corpus(tmp_path)
    assert back.texts == c.texts
    assert [back.class_names[i] for i in back.labels] == [c.class_names[i] for i in c.labels]
    np.testing.assert_array_equal(back.is_test, c.is_test)


def test_synthetic_corpus_shape_and_determinism():
    c = generate_synthetic_corpus(seed=0)
    assert c.n_classes == 2
    assert len(c) >= 2000
    assert c.train_indices.size == 2000 and c.test_indices.size == 1000
    assert np.bincount(c.labels).tolist() == [1500, 1500]
    assert generate_synthetic_corpus(n_train=50, n_test=10, seed=3).texts == \
        generate_synthetic_corpus(n_train=50, n_test=10, seed=3).texts


def test_synthetic_corpus_validation():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(n_classes=1)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(overlap=1.0)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_synthetic_corpus(n_train=300, n_test=100, n_classes=3, seed=2)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_split_partitions_training_data(small_corpus, K, seed):
    s = few_shot_split(small_corpus, K, seed)
    parts = [s.train.ids, s.valid.ids, s.unlabeled.ids]
    joined = np.concatenate(parts)
    assert len(np.unique(joined)) == len(joined)
    np.testing.assert_array_equal(np.sort(joined), small_corpus.train_indices)
    assert np.bincount(s.train.y, minlength=3).tolist() == [K] * 3
    assert np.bincount(s.valid.y, minlength=3).tolist() == [K] * 3
    np.testing.assert_array_equal(s.test.ids, small_corpus.test_indices)


def test_split_is_seeded(small_corpus):
    a, b = few_shot_split(small_corpus, 5, 9), few_shot_split(small_corpus, 5, 9)
    assert a.manifest() == b.manifest()
    assert few_shot_split(small_corpus, 5, 10).manifest() != a.manifest()


def test_split_hides_unlabeled_labels(small_corpus):
    s = few_shot_split(small_corpus, 5, 0)
    assert not hasattr(s.unlabeled, "y")
    ids = s.unlabeled.ids[:10]
    assert withheld_label_accuracy(s, ids, small_corpus.labels[ids]) == 1.0


def test_split_too_small_names_class():
    c = Corpus(["a"] * 5 + ["b"] * 2, [0] * 5 + [1] * 2, ["big", "tiny"], [False] * 7)
    with pytest.raises(SplitError, match="tiny"):
        few_shot_split(c, 2)


def test_test_set_counts_accesses(small_corpus):
    s = few_shot_split(small_corpus, 5, 0)
    m = MlpModel.init([HASH_DIM, 4, 3], rng=0)
    assert s.test.access_count == 0
    metrics = s.test.evaluate(m)
    assert set(metrics) == {"accuracy", "macro_f1"}
    assert s.test.access_count == 1
