"""Corpora, hashed bag-of-words features and few-shot splits."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from sklearn.feature_extraction.text import HashingVectorizer
from sklearn.metrics import f1_score

from .exceptions import CorpusError, SplitError

logger = logging.getLogger(__name__)

HASH_DIM = 2 ** 15
DEFAULT_K = 30

# murmurhash3 of lowercased unigrams and bigrams, signed, l2-normalized counts
_VECTORIZER = HashingVectorizer(n_features=HASH_DIM, ngram_range=(1, 2), alternate_sign=True,
                                norm="l2", lowercase=True, token_pattern=r"(?u)\b\w+\b",
                                dtype=np.float64)


def featurize(text: str) -> sp.csr_matrix:
    """Hashed feature vector of one text as a ``1 x HASH_DIM`` CSR row."""
    return featurize_many([text])


def featurize_many(texts) -> sp.csr_matrix:
    X = _VECTORIZER.transform(list(texts)).tocsr()
    X.sort_indices()
    return X


@dataclass
class Corpus:
    texts: list
    labels: np.ndarray
    class_names: list
    is_test: np.ndarray
    n_malformed: int = 0
    _features: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.is_test = np.asarray(self.is_test, dtype=bool)
        if not (len(self.texts) == len(self.labels) == len(self.is_test)):
            raise CorpusError("texts, labels and test flags must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise CorpusError("labels must index into class_names")

    def __len__(self):
        return len(self.texts)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.is_test)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_test)

    @property
    def features(self) -> sp.csr_matrix:
        if self._features is None:
            self._features = featurize_many(self.texts)
        return self._features


def _read_rows(path: Path, fmt: str):
    """Yield ``(label, text)`` pairs; ``None`` for malformed rows."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    with fh:
        if fmt == "tsv":
            for line in fh:
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                label, sep, text = line.partition("\t")
                yield (label.strip(), text) if sep and text.strip() and label.strip() else None
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"label", "text"} <= set(reader.fieldnames):
                raise CorpusError(f"{path}: CSV needs a 'label,text' header")
            for row in reader:
                label, text = row.get("label"), row.get("text")
                yield (label.strip(), text) if label and label.strip() and text and text.strip() else None
        else:
            raise CorpusError(f"unknown corpus format {fmt!r}")


def _guess_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "tsv"


def load_corpus(path, fmt: Optional[str] = None, test_path=None) -> Corpus:
    """Read a labeled corpus.

    ``path`` is either a file of training examples (``test_path`` then names
    the held-out file) or a directory holding ``train.tsv``/``test.tsv``
    (or ``.csv``). TSV rows are ``label<TAB>text``; CSV files need a
    ``label,text`` header. Class indices follow first appearance of each
    label string. Rows without a label or text are skipped and counted.
    """
    path = Path(path)
    if path.is_dir():
        found = {}
        for part in ("train", "test"):
            for ext in ("tsv", "csv"):
                if (path / f"{part}.{ext}").exists():
                    found[part] = path / f"{part}.{ext}"
                    break
        if "train" not in found:
            raise CorpusError(f"{path} has no train.tsv or train.csv")
        path, test_path = found["train"], found.get("test", test_path)

    index, texts, labels, is_test, malformed = {}, [], [], [], 0
    sources = [(path, False)] + ([(Path(test_path), True)] if test_path else [])
    for src, test_flag in sources:
        for row in _read_rows(src, fmt or _guess_format(src)):
            if row is None:
                malformed += 1
                continue
            label, text = row
            labels.append(index.setdefault(label, len(index)))
            texts.append(text)
            is_test.append(test_flag)
    if malformed:
        logger.warning("skipped %d malformed rows while loading %s", malformed, path)
    if not texts:
        raise CorpusError(f"no examples found in {path}")
    if len(index) < 2:
        raise CorpusError(f"{path} contains a single class {list(index)}; need at least two")
    return Corpus(texts, np.array(labels), list(index), np.array(is_test), malformed)


def write_corpus(corpus: Corpus, out_dir) -> None:
    """Write ``train.tsv`` and ``test.tsv`` in the loader's TSV format."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, mask in (("train", ~corpus.is_test), ("test", corpus.is_test)):
        with open(out_dir / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for i in np.flatnonzero(mask):
                text = " ".join(corpus.texts[i].split())
                fh.write(f"{corpus.class_names[corpus.labels[i]]}\t{text}\n")


@dataclass
class LabeledSet:
    ids: np.ndarray
    X: sp.csr_matrix
    y: np.ndarray

    def __len__(self):
        return len(self.ids)


@dataclass
class UnlabeledPool:
    """Unlabeled examples: ids and features only."""

    ids: np.ndarray
    X: sp.csr_matrix

    def __len__(self):
        return len(self.ids)


class TestSet:
    """Held-out examples that can only be read through :meth:`evaluate`.

    Every evaluation increments ``access_count`` so harnesses can check the
    test data was used once, after model selection.
    """

    __test__ = False  # keep pytest from collecting this class

    def __init__(self, ids, X, y):
        self.ids = np.asarray(ids)
        self._X = X
        self._y = np.asarray(y, dtype=np.intp)
        self.access_count = 0

    def __len__(self):
        return len(self.ids)

    def evaluate(self, model) -> dict:
        from .nn import predict_proba

        self.access_count += 1
        pred = predict_proba(model, self._X).argmax(axis=1)
        return {"accuracy": float(np.mean(pred == self._y)),
                "macro_f1": float(f1_score(self._y, pred, average="macro", zero_division=0))}


@dataclass
class FewShotSplit:
    train: LabeledSet
    valid: LabeledSet
    unlabeled: UnlabeledPool
    test: TestSet
    class_names: list
    seed: int
    _withheld: dict = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> int:
        return self.train.X.shape[1]

    def manifest(self) -> dict:
        """Example ids per partition, enough to rebuild the split exactly."""
        return {"seed": self.seed, "train": self.train.ids.tolist(),
                "valid": self.valid.ids.tolist(), "unlabeled": self.unlabeled.ids.tolist(),
                "test": self.test.ids.tolist()}


def withheld_label_accuracy(split: FewShotSplit, ids, labels) -> float:
    """Fraction of pseudo-labels that match the hidden true labels.

    Diagnostics only; nothing on the training path calls this.
    """
    ids = list(ids)
    if not ids:
        return float("nan")
    truth = np.array([split._withheld[int(i)] for i in ids])
    return float(np.mean(truth == np.asarray(labels)))


def few_shot_split(corpus: Corpus, K: int = DEFAULT_K, seed: int = 0) -> FewShotSplit:
    """Sample ``K`` training and ``K`` validation examples per class.

    Each class's training examples are shuffled with ``seed``; the first
    ``K`` become labeled data, the next ``K`` validation data and the rest
    the unlabeled pool. The corpus test partition is passed through.
    """
    if K < 1:
        raise SplitError("K must be positive")
    rng = np.random.default_rng(seed)
    train_idx = corpus.train_indices
    lab, val, unl = [], [], []
    for c, name in enumerate(corpus.class_names):
        members = train_idx[corpus.labels[train_idx] == c]
        if len(members) < 2 * K:
            raise SplitError(f"class {name!r} has {len(members)} training examples; "
                             f"K={K} needs at least {2 * K}")
        perm = rng.permutation(members)
        lab.append(perm[:K])
        val.append(perm[K:2 * K])
        unl.append(perm[2 * K:])
    lab, val = np.concatenate(lab), np.concatenate(val)
    unl = np.sort(np.concatenate(unl))
    X, y = corpus.features, corpus.labels
    test_idx = corpus.test_indices
    return FewShotSplit(
        train=LabeledSet(lab, X[lab], y[lab]),
        valid=LabeledSet(val, X[val], y[val]),
        unlabeled=UnlabeledPool(unl, X[unl]),
        test=TestSet(test_idx, X[test_idx], y[test_idx]),
        class_names=list(corpus.class_names),
        seed=seed,
        _withheld={int(i): int(y[i]) for i in unl},
    )


_ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v",
           "w", "z", "br", "ch", "cl", "dr", "gl", "pl", "sh", "st", "th", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"]
_CODAS = ["", "", "n", "r", "s", "t", "l", "m", "nd", "st"]


def _make_words(n: int, rng, taken: set) -> list:
    words = []
    while len(words) < n:
        syllables = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables)) + _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf(n: int, exponent: float) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1) ** exponent
    return p / p.sum()


def generate_synthetic_corpus(n_train: int = 2000, n_test: int = 1000, n_classes: int = 2,
                              class_vocab: int = 300, neutral_vocab: int = 3000,
                              signal: float = 0.3, overlap: float = 0.2,
                              mean_length: int = 30, seed: int = 0) -> Corpus:
    """Documents drawn from class-conditional vocabulary mixtures.

    Each token is, with probability ``signal``, a class-indicative word and
    otherwise a neutral word. An indicative word comes from the document's
    own class vocabulary, except that with probability ``overlap`` it comes
    from another class's vocabulary instead. All vocabularies are Zipfian,
    so a few dozen labeled documents only cover the frequent indicative
    words; the long tail is learnable only from unlabeled data.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if not 0 <= overlap < 1 or not 0 < signal <= 1:
        raise ValueError("signal must lie in (0, 1] and overlap in [0, 1)")
    rng = np.random.default_rng(seed)
    taken = set()
    neutral = _make_words(neutral_vocab, rng, taken)
    vocabs = [_make_words(class_vocab, rng, taken) for _ in range(n_classes)]
    p_neutral = _zipf(neutral_vocab, 1.0)
    p_class = _zipf(class_vocab, 0.8)

    n = n_train + n_test
    labels = rng.permutation(np.arange(n) % n_classes)
    texts = []
    for c in labels:
        length = max(3, mean_length // 3 + rng.poisson(mean_length - mean_length // 3))
        indicative = rng.random(length) < signal
        src = np.full(length, c)
        swap = indicative & (rng.random(length) < overlap)
        src[swap] = (c + 1 + rng.integers(n_classes - 1, size=swap.sum())) % n_classes
        cls_words = rng.choice(class_vocab, size=length, p=p_class)
        neu_words = rng.choice(neutral_vocab, size=length, p=p_neutral)
        texts.append(" ".join(vocabs[s][j] if ind else neutral[k]
                              for ind, s, j, k in zip(indicative, src, cls_words, neu_words)))
    names = ["pos", "neg"] if n_classes == 2 else [f"class{c}" for c in range(n_classes)]
    is_test = np.zeros(n, dtype=bool)
    is_test[n_train:] = True
    return Corpus(texts, labels, names, is_test)
