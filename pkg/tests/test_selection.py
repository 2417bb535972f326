import logging

import numpy as np
import pytest

from engagedetector.selection import (MrmrRanking, discretize, discretize_matrix, mrmr_rank,
                                      mutual_information, rank_dataset)

# y depends on two independent bits; f1 duplicates f0
A = np.array([0, 0, 1, 1, 0, 0, 1, 1])
B = np.array([0, 1, 0, 1, 0, 1, 0, 1])
Y = 2 * A + B
MATRIX = np.column_stack([A, A, B])


def test_discretize_three_states():
    states, (lo, hi) = discretize([0.0, 1.0, 2.0, 3.0, 4.0])
    assert list(states) == [0, 1, 1, 1, 2]
    assert lo == pytest.approx(2.0 - np.sqrt(2.0))
    assert hi == pytest.approx(2.0 + np.sqrt(2.0))


def test_discretize_constant_column_is_one_state():
    states, edges = discretize([3.0, 3.0, 3.0])
    assert list(states) == [1, 1, 1]
    assert edges == (3.0, 3.0)
    with pytest.raises(ValueError):
        discretize([1.0])


def test_discretize_matrix_names_columns():
    disc = discretize_matrix(np.array([[0.0, 5.0], [1.0, 5.0], [2.0, 5.0]]))
    assert disc.feature_ids == ("f0", "f1")
    assert disc.values[:, 1].tolist() == [1, 1, 1]


def test_mutual_information_in_bits():
    assert mutual_information(A, A) == pytest.approx(1.0)
    assert mutual_information(A, B) == pytest.approx(0.0)
    assert mutual_information(A, Y) == pytest.approx(1.0)
    assert mutual_information(Y, Y) == pytest.approx(2.0)
    assert mutual_information(B, Y) == pytest.approx(mutual_information(Y, B))
    with pytest.raises(ValueError):
        mutual_information(A, B[:3])


def test_mid_prefers_complementary_feature_over_duplicate():
    ranking = mrmr_rank(MATRIX, Y, 3, "mid", ("a", "a_copy", "b"))
    assert ranking.feature_ids == ("a", "b", "a_copy")
    assert ranking.scores == pytest.approx((1.0, 1.0, 0.5))


def test_miq_substitutes_epsilon_and_warns_once(caplog):
    with caplog.at_level(logging.WARNING):
        ranking = mrmr_rank(MATRIX, Y, 3, "miq")
    assert ranking.feature_ids == ("f0", "f2", "f1")
    assert ranking.scores[2] == pytest.approx(2.0)
    assert caplog.text.count("zero mean redundancy") == 1


def test_mrmr_rank_validates_arguments():
    with pytest.raises(ValueError):
        mrmr_rank(MATRIX, Y, 0)
    with pytest.raises(ValueError):
        mrmr_rank(MATRIX, Y, 4)
    with pytest.raises(ValueError):
        mrmr_rank(MATRIX, Y, 2, "maxrel")


def test_rank_dataset_puts_label_proxy_first():
    rng = np.random.default_rng(3)
    y = np.repeat([0, 1, 2], 10)
    X = np.column_stack([rng.normal(size=30), y - 1.0 + rng.normal(scale=0.01, size=30)])
    ranking = rank_dataset(X, y, feature_ids=("noise", "proxy"))
    assert ranking.feature_ids[0] == "proxy"
    assert len(ranking) == 2
    assert ranking.top(1) == ("proxy",)


def independent_causes(n=2000, seed=8):
    """Three independent noisy bits summed into a 4-class label, one duplicate and four noise columns."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n, 3))
    y = bits.sum(axis=1)
    causes = bits + rng.normal(scale=0.3, size=(n, 3))
    noise = rng.normal(size=(n, 4))
    X = np.column_stack([causes, causes[:, 0], noise])
    ids = ("c0", "c1", "c2", "c0_twin", "n0", "n1", "n2", "n3")
    return X, y, ids


def test_mid_keeps_a_duplicate_away_from_its_twin():
    X, y, ids = independent_causes()
    ranking = rank_dataset(X, y, feature_ids=ids)
    order = list(ranking.feature_ids)
    assert set(order[:3]) == {"c0", "c1", "c2"}
    assert "c0_twin" not in order[:4]
    assert order.index("c0_twin") != order.index("c0") + 1


def test_ranking_ignores_sample_order():
    X, y, ids = independent_causes()
    perm = np.random.default_rng(1).permutation(len(y))
    for scheme in ("mid", "miq"):
        shuffled = rank_dataset(X[perm], y[perm], scheme=scheme, feature_ids=ids)
        reference = rank_dataset(X, y, scheme=scheme, feature_ids=ids)
        assert shuffled.feature_ids == reference.feature_ids
        assert shuffled.scores == pytest.approx(reference.scores)


def test_ranking_follows_permuted_columns():
    X, y, ids = independent_causes()
    keep = [0, 1, 2, 4, 5, 6, 7]
    X, ids = X[:, keep], tuple(ids[j] for j in keep)
    cols = [5, 2, 6, 0, 3, 1, 4]
    shuffled = rank_dataset(X[:, cols], y, feature_ids=tuple(ids[j] for j in cols))
    assert shuffled.feature_ids == rank_dataset(X, y, feature_ids=ids).feature_ids


def test_ranking_file(tmp_path):
    ranking = MrmrRanking(("a", "b"), (1.0, 0.25), "mid")
    path = str(tmp_path / "ranking.tsv")
    ranking.write(path, "# engagedetector 1.0.0 seed=7 config=abc")
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[1] == "rank\tfeature_id\tscore"
    assert lines[2] == "1\ta\t1"
    assert MrmrRanking.read(path) == ranking
