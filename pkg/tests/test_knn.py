import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fedshap import knn
from fedshap.data import NumericDataset, snap
from fedshap.errors import DataError
from fedshap.knn import KnnModel, knn_vote, partial_sq_dist


def brute_knn_proba(rows, labels, k, x):
    """Oracle: full sort by (squared distance, index), plain Python loops."""
    d = []
    for i, r in enumerate(rows):
        d.append((sum((float(a) - float(b)) ** 2 for a, b in zip(r, x)), i))
    d.sort()
    return sum(int(labels[i]) for _, i in d[:k]) / k


def test_single_row_model():
    m = KnnModel(np.array([[0.3, 0.4]]), np.array([1]), 1)
    assert m.predict_proba([0.9, 0.1]) == 1.0
    assert m.predict_label([0.9, 0.1]) == 1


def test_k_validation():
    rows = np.zeros((3, 2))
    with pytest.raises(ValueError):
        KnnModel(rows, np.zeros(3), 0)
    with pytest.raises(ValueError):
        KnnModel(rows, np.zeros(3), 4)
    with pytest.raises(DataError):
        KnnModel(np.zeros((0, 2)), np.zeros(0), 1)


def test_vote_arithmetic():
    # five nearest to the origin: labels 1,1,1,0,0; far rows labelled 1 never count
    rows = np.array([[0.0], [0.1], [0.2], [0.3], [0.4], [0.9], [1.0]])
    labels = np.array([1, 1, 1, 0, 0, 1, 1])
    m = KnnModel(rows, labels, 5)
    assert m.predict_proba([0.0]) == 0.6
    assert m.predict_label([0.0]) == 1


def test_threshold_and_tie_rule():
    rows = np.array([[0.0], [0.1], [0.2], [0.3], [1.0]])
    assert KnnModel(rows, np.array([0, 0, 1, 1, 1]), 5).predict_proba([0.0]) == 0.6
    m4 = KnnModel(rows, np.array([1, 1, 0, 0, 0]), 4)
    assert m4.predict_proba([0.0]) == 0.5
    assert m4.predict_label([0.0]) == 1  # 0.5 goes to the positive class
    m_low = KnnModel(rows, np.array([1, 1, 0, 0, 0]), 5)
    assert m_low.predict_proba([0.0]) == 0.4 and m_low.predict_label([0.0]) == 0


def test_distance_ties_break_by_index():
    # four rows at identical distance; k=2 must pick indices 0 and 1
    rows = np.array([[0.5], [0.5], [0.5], [0.5]])
    m = KnnModel(rows, np.array([1, 0, 1, 1]), 2)
    assert m.kneighbors([0.0]).tolist() == [0, 1]
    assert m.predict_proba([0.0]) == 0.5
    assert m.predict_proba_scan([0.0]) == 0.5


def test_dimension_mismatch():
    m = KnnModel(np.zeros((2, 3)), np.zeros(2), 1)
    with pytest.raises(ValueError):
        m.predict_proba([0.0, 0.0])


def test_partial_sq_dist_examples():
    rows = np.array([[0.0, 0.5, 1.0], [1.0, 1.0, 1.0]])
    x = np.array([0.5, 0.5, 0.5])
    full = partial_sq_dist([0, 1, 2], x, rows)
    assert full.tolist() == [0.5, 0.75]
    a = partial_sq_dist([0], x[[0]], rows)
    b = partial_sq_dist([1, 2], x[[1, 2]], rows)
    assert (a + b).tolist() == full.tolist()
    assert partial_sq_dist([], [], rows).tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        partial_sq_dist([0, 1], [0.1], rows)


@given(
    hnp.arrays(np.float64, (30, 6), elements=st.floats(0, 1)),
    hnp.arrays(np.float64, 6, elements=st.floats(0, 1)),
    st.lists(st.booleans(), min_size=6, max_size=6),
)
def test_partial_distances_add_up_exactly_on_grid(rows, x, side):
    rows, x = snap(rows), snap(x)
    cols_a = [j for j in range(6) if side[j]]
    cols_b = [j for j in range(6) if not side[j]]
    full = partial_sq_dist(range(6), x, rows)
    split = partial_sq_dist(cols_a, x[cols_a], rows) + partial_sq_dist(cols_b, x[cols_b], rows)
    assert np.array_equal(full, split)


@given(
    hnp.arrays(np.float64, (40, 3), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
    st.lists(st.integers(0, 1), min_size=40, max_size=40),
    hnp.arrays(np.float64, 3, elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
    st.integers(1, 7),
)
@settings(max_examples=200)
def test_tree_scan_and_oracle_agree_with_heavy_ties(rows, labels, x, k):
    m = KnnModel(rows, np.array(labels), k, leaf_size=4)
    expect = brute_knn_proba(rows, labels, k, x)
    assert m.predict_proba(x) == expect
    assert m.predict_proba_scan(x) == expect
    assert m.kneighbors(x).tolist() == m.kneighbors_scan(x).tolist()
    assert m.predict_proba_batch(x[None, :])[0] == expect


def test_probability_takes_k_plus_one_values():
    rng = np.random.default_rng(0)
    m = KnnModel(rng.random((200, 4)), rng.integers(0, 2, 200), 5)
    probs = {m.predict_proba(q) for q in rng.random((100, 4))}
    assert probs <= {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}


def test_knn_vote_batch_matches_rowwise():
    rng = np.random.default_rng(1)
    sq = rng.integers(0, 4, (20, 50)).astype(float)  # many ties
    labels = rng.integers(0, 2, 50)
    batch = knn_vote(sq, labels, 5)
    for i in range(20):
        order = np.lexsort((np.arange(50), sq[i]))[:5]
        assert batch[i] == labels[order].sum() / 5


def test_adult_index_equals_scan(adult_split, adult_model):
    _, test = adult_split
    rng = np.random.default_rng(42)
    for i in rng.choice(len(test), 100, replace=False):
        q = test.rows[i]
        assert adult_model.predict_proba(q) == adult_model.predict_proba_scan(q)


def test_masked_batch_matches_single(adult_split, adult_model):
    train, test = adult_split
    from fedshap.data import compute_reference
    from fedshap.shapley import all_masks

    ref = compute_reference(train).values
    x = test.rows[5]
    masks = all_masks(12)[::37]
    fast = adult_model.predict_proba_masked(x, ref, masks)
    slow = [adult_model.predict_proba(np.where(m, x, ref)) for m in masks]
    assert fast.tolist() == slow


def test_accuracy_edge_cases():
    rows = np.array([[0.2, 0.7]])
    ds = NumericDataset(rows, [1], _schema2())
    assert knn.accuracy(knn.fit(ds, 1), ds) == 1.0
    rows = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
    ds = NumericDataset(rows, [0, 0, 0], _schema2())
    assert knn.accuracy(knn.fit(ds, 3), ds) == 1.0
    with pytest.raises(DataError):
        knn.accuracy(knn.fit(ds, 1), ds.take([]))


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = KnnModel(rng.random((50, 3)), rng.integers(0, 2, 50), 5)
    m.save(tmp_path / "m.npz")
    m2 = KnnModel.load(tmp_path / "m.npz")
    assert m2.k == 5 and m2.leaf_size == 30
    for q in rng.random((20, 3)):
        assert m.predict_proba(q) == m2.predict_proba(q)


def _schema2():
    from fedshap.data import CONTINUOUS, Feature, FeatureSchema

    return FeatureSchema((Feature("a", CONTINUOUS), Feature("b", CONTINUOUS)), "y", "1")
