import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ust.data import featurize_many
from ust.nn import MlpModel
from ust.uncertainty import (bald_score, estimate, estimate_pool, example_rng, pool_passes,
                             predictive_mean, predictive_variance, run_passes, summarize,
                             vote_hard_label)

FIXTURE = Path(__file__).parent / "fixtures" / "pass_matrix_30x4.json"


def brute_bald(pm):
    """Entropy of the mean minus mean entropy, one term at a time."""
    T, C = len(pm), len(pm[0])
    mean = [sum(pm[t][c] for t in range(T)) / T for c in range(C)]
    first = 0.0
    for c in range(C):
        if mean[c] > 0:
            first -= mean[c] * math.log(mean[c])
    second = 0.0
    for t in range(T):
        for c in range(C):
            if pm[t][c] > 0:
                second += pm[t][c] * math.log(pm[t][c])
    return first + second / T


def brute_variance(pm):
    T, C = len(pm), len(pm[0])
    out = []
    for c in range(C):
        mu = sum(pm[t][c] for t in range(T)) / T
        out.append(sum((pm[t][c] - mu) ** 2 for t in range(T)) / T)
    return out


def random_pass_matrix(rng, T, C):
    logits = rng.normal(scale=rng.uniform(0.1, 4.0), size=(T, C))
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


@st.composite
def pass_matrices(draw):
    T = draw(st.integers(1, 10))
    C = draw(st.integers(2, 6))
    raw = draw(arrays(np.float64, (T, C), elements=st.floats(0.0, 1.0)))
    raw = raw + 1e-3 * draw(st.booleans())
    raw[raw.sum(axis=1) == 0] = 1.0
    return raw / raw.sum(axis=1, keepdims=True)


# --- hand fixtures ---------------------------------------------------------

def test_mean_examples():
    np.testing.assert_allclose(predictive_mean([[0.2, 0.8], [0.6, 0.4]]), [0.4, 0.6])
    np.testing.assert_allclose(predictive_mean([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    np.testing.assert_array_equal(predictive_mean([[0.3, 0.7]]), [0.3, 0.7])


def test_variance_examples():
    np.testing.assert_allclose(predictive_variance([[0.2, 0.8], [0.8, 0.2]]), [0.09, 0.09])
    np.testing.assert_allclose(predictive_variance([[1.0, 0.0], [0.0, 1.0]]), [0.25, 0.25])
    assert np.all(predictive_variance([[0.1, 0.2, 0.7]] * 7) == 0.0)


def test_bald_examples():
    assert bald_score([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(math.log(2), abs=1e-15)
    assert bald_score([[0.5, 0.5]] * 4) == 0.0
    assert bald_score([[1 / 3, 1 / 3, 1 / 3]] * 3) == 0.0
    assert bald_score([[0.13, 0.29, 0.58]] * 9) == 0.0


def test_vote_examples():
    assert vote_hard_label([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]]) == (0, pytest.approx(2 / 3))
    assert vote_hard_label([[0.3, 0.7]]) == (1, 1.0)
    pm = [[0.1, 0.8, 0.1], [0.1, 0.7, 0.2], [0.1, 0.2, 0.7], [0.0, 0.3, 0.7]]
    assert vote_hard_label(pm) == (1, 0.5)


def test_per_pass_tie_goes_to_lowest_class():
    assert vote_hard_label([[0.5, 0.5]])[0] == 0
    assert vote_hard_label([[0.2, 0.4, 0.4]])[0] == 1


def test_stored_30x4_fixture():
    data = json.loads(FIXTURE.read_text())
    est = summarize(np.array(data["pass_matrix"]))
    want = data["expected"]
    np.testing.assert_allclose(est.mean, want["mean"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(est.variance, want["variance"], rtol=0, atol=1e-12)
    assert est.bald == pytest.approx(want["bald"], abs=1e-12)
    assert est.bald_norm == pytest.approx(want["bald"] / math.log(4), abs=1e-12)
    assert est.hard_label == want["hard_label"]
    assert est.vote_margin == pytest.approx(want["vote_margin"])


def test_rejects_invalid_matrices():
    with pytest.raises(ValueError):
        bald_score([0.5, 0.5])
    with pytest.raises(ValueError):
        bald_score([[0.5, 0.6]])
    with pytest.raises(ValueError):
        predictive_mean([[-0.1, 1.1]])
    with pytest.raises(ValueError):
        vote_hard_label(np.zeros((0, 3)))


# --- oracle equivalence ----------------------------------------------------

def test_bald_and_variance_match_brute_force_oracle():
    rng = np.random.default_rng(7)
    for _ in range(300):
        pm = random_pass_matrix(rng, int(rng.integers(1, 11)), int(rng.integers(2, 7)))
        want = min(max(brute_bald(pm.tolist()), 0.0), math.log(pm.shape[1]))
        assert abs(bald_score(pm) - want) <= 1e-12
        np.testing.assert_allclose(predictive_variance(pm), brute_variance(pm.tolist()),
                                   rtol=0, atol=1e-12)


def test_stacked_input_matches_one_at_a_time():
    rng = np.random.default_rng(3)
    stack = np.stack([random_pass_matrix(rng, 6, 3) for _ in range(20)])
    np.testing.assert_array_equal(bald_score(stack), [bald_score(pm) for pm in stack])
    labels, margins = vote_hard_label(stack)
    assert [(int(a), float(b)) for a, b in zip(labels, margins)] == \
        [vote_hard_label(pm) for pm in stack]
    np.testing.assert_array_equal(predictive_variance(stack),
                                  [predictive_variance(pm) for pm in stack])


# --- properties ------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(pass_matrices())
def test_bald_bounds(pm):
    mean = pm.mean(axis=0)
    h_mean = -sum(p * math.log(p) for p in mean if p > 0)
    b = bald_score(pm)
    assert 0.0 <= b <= math.log(pm.shape[1])
    assert b <= h_mean + 1e-12


@settings(max_examples=200, deadline=None)
@given(pass_matrices())
def test_variance_zero_iff_constant_column(pm):
    var = predictive_variance(pm)
    assert np.all(var >= 0)
    constant = np.ptp(pm, axis=0) == 0
    assert np.all(var[constant] == 0)
    assert np.all(var[~constant] > 0)


@settings(max_examples=100, deadline=None)
@given(pass_matrices())
def test_duplicating_passes_changes_nothing(pm):
    a, b = summarize(pm), summarize(np.concatenate([pm, pm]))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-15)
    np.testing.assert_allclose(a.variance, b.variance, atol=1e-15)
    assert a.bald == pytest.approx(b.bald, abs=1e-12)
    assert a.hard_label == b.hard_label
    assert a.vote_margin == b.vote_margin


# --- passes through a model -------------------------------------------------

TEXTS = ["a great and moving film", "dull plot and weak acting", "fine", "not good at all"]


@pytest.fixture
def model():
    X = featurize_many(TEXTS)
    return MlpModel.init([X.shape[1], 16, 3], rng=np.random.default_rng(0)), X


def test_no_dropout_gives_zero_uncertainty(model):
    m, X = model
    m = m.with_dropout((0.0, 0.0))
    est = estimate(m, X[0], T=12, rng=1)
    assert est.bald == 0.0
    assert np.all(est.variance == 0.0)
    assert est.vote_margin == 1.0


def test_dropout_passes_disagree(model):
    m, X = model
    pm = run_passes(m, X[0], T=30, rng=2)
    assert pm.shape == (30, 3)
    assert bald_score(pm) > 0
    np.testing.assert_allclose(pm.sum(axis=1), 1.0)


def test_passes_are_seeded(model):
    m, X = model
    np.testing.assert_array_equal(run_passes(m, X[1], 5, rng=4), run_passes(m, X[1], 5, rng=4))
    assert not np.array_equal(run_passes(m, X[1], 5, rng=4), run_passes(m, X[1], 5, rng=5))


def test_pool_matches_single_example_passes(model):
    m, X = model
    ids = np.array([17, 3, 99, 42])
    pool = pool_passes(m, X, ids, T=8, seed=11)
    for i, ex in enumerate(ids):
        single = run_passes(m, X[i], 8, example_rng(11, ex))
        np.testing.assert_allclose(pool[i], single, rtol=0, atol=1e-12)


def test_pool_rows_do_not_depend_on_order(model):
    m, X = model
    ids = np.array([5, 6, 7, 8])
    order = np.array([2, 0, 3, 1])
    a = estimate_pool(m, X, ids, T=10, seed=3)
    b = estimate_pool(m, X[order], ids[order], T=10, seed=3)
    np.testing.assert_allclose(a.bald[order], b.bald, atol=1e-12)
    np.testing.assert_array_equal(a.hard_label[order], b.hard_label)


def test_pool_estimate_columns(model, tmp_path):
    m, X = model
    est = estimate_pool(m, X, np.arange(4), T=10, seed=0)
    assert len(est) == 4
    np.testing.assert_allclose(est.bald_norm, est.bald / math.log(3))
    assert est.label_variance.shape == (4,)
    assert est[2].label_variance == est.label_variance[2]
    path = tmp_path / "dump.tsv"
    est.write_dump(path)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["id", "label", "margin", "bald", "max_variance"]
    assert len(lines) == 5
