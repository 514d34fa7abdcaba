import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hotspot.errors import InvalidArgument
from hotspot.evaluation import (auc, export_heatmap, f1_metrics, hit_ratio_at_k, read_matrix, top_k,
                                write_matrix)


def test_perfect_predictions():
    y = np.array([[1, 0, 1], [0, 1, 0]])
    r = f1_metrics(y.astype(float), y)
    assert r.micro_f1 == 1.0 and r.macro_f1 == 1.0


def test_hand_computed_confusion():
    # type A: TP=1 FP=1 FN=0; type B: TP=1 FP=0 FN=1
    pred = np.array([[0.9, 0.8, 0.1], [0.9, 0.2, 0.1]])
    lab = np.array([[1, 0, 0], [1, 1, 0]])
    r = f1_metrics(pred, lab, type_names=("A", "B"))
    assert r.per_type["A"] == {"f1": pytest.approx(2 / 3), "tp": 1, "fp": 1, "fn": 0}
    assert r.per_type["B"] == {"f1": pytest.approx(2 / 3), "tp": 1, "fp": 0, "fn": 1}
    assert r.micro_f1 == pytest.approx(2 / 3) and r.macro_f1 == pytest.approx(2 / 3)


def test_all_negative_predictions_score_zero():
    r = f1_metrics(np.zeros((1, 4)), np.array([[1, 0, 1, 0]]))
    assert r.micro_f1 == 0.0 and r.macro_f1 == 0.0


def test_zero_division_convention():
    r = f1_metrics(np.array([[0.1, 0.2], [0.9, 0.1]]), np.array([[0, 0], [1, 0]]))
    assert r.per_type["0"]["f1"] == 0.0 and r.per_type["1"]["f1"] == 1.0
    assert r.macro_f1 == 0.5


def test_f1_argument_checks():
    with pytest.raises(InvalidArgument):
        f1_metrics(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(InvalidArgument):
        f1_metrics(np.zeros((2, 2)), np.zeros((2, 2)), threshold=1.0)


def _brute_counts(pred, lab, thr):
    tp = fp = fn = 0
    for p, y in zip(pred.ravel(), lab.ravel()):
        hit = p >= thr
        tp += hit and y == 1
        fp += hit and y == 0
        fn += (not hit) and y == 1
    return tp, fp, fn


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_f1_matches_bruteforce_counter(seed, thr):
    rng = np.random.default_rng(seed)
    pred = rng.random((3, 8, 8))
    lab = (rng.random((3, 8, 8)) < 0.3).astype(int)
    r = f1_metrics(pred, lab, thr)
    pooled = [0, 0, 0]
    f1s = []
    for c in range(3):
        tp, fp, fn = _brute_counts(pred[c], lab[c], thr)
        assert (r.per_type[str(c)]["tp"], r.per_type[str(c)]["fp"], r.per_type[str(c)]["fn"]) == (tp, fp, fn)
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
        pooled = [pooled[0] + tp, pooled[1] + fp, pooled[2] + fn]
    tp, fp, fn = pooled
    assert r.micro_f1 == pytest.approx(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
    assert r.macro_f1 == pytest.approx(np.mean(f1s))
    assert 0 <= r.micro_f1 <= 1 and 0 <= r.macro_f1 <= 1


def test_type_ids_group_rows():
    pred = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.7]])
    lab = np.array([[1, 0], [0, 1], [0, 1]])
    r = f1_metrics(pred, lab, type_ids=[0, 1, 0], type_names=("a", "b"))
    assert r.per_type["a"]["tp"] == 2 and r.per_type["a"]["fp"] == 1
    assert r.per_type["b"]["f1"] == 1.0


def test_hit_ratio_identical_and_disjoint():
    m = np.arange(16.0).reshape(4, 4)
    assert hit_ratio_at_k(m, m, 5) == 1.0
    assert hit_ratio_at_k(m, -m, 5) == 0.0


def test_hit_ratio_half_overlap():
    pred = np.zeros(40)
    true = np.zeros(40)
    pred[:10] = np.arange(10, 0, -1) + 100      # top-10 predicted: cells 0..9
    true[5:15] = np.arange(10, 0, -1) + 100      # top-10 true: cells 5..14
    assert hit_ratio_at_k(pred.reshape(5, 8), true.reshape(5, 8), 10) == 0.5


def test_hit_ratio_ties_to_lower_index_and_checks():
    assert top_k(np.array([1.0, 3.0, 3.0, 3.0]), 2).tolist() == [1, 2]
    with pytest.raises(InvalidArgument):
        hit_ratio_at_k(np.ones(4), np.ones(4), 0)
    with pytest.raises(InvalidArgument):
        hit_ratio_at_k(np.ones(4), np.ones(4), 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_hit_ratio_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    p = rng.random(20)
    t = rng.integers(0, 5, 20).astype(float) + rng.random(20) * 1e-3  # distinct values: tie-break free
    perm = rng.permutation(20)
    assert hit_ratio_at_k(p, t, k) == hit_ratio_at_k(p[perm], t[perm], k)


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert auc([1, 2, 3], [0, 1, 1]) == 1.0
    assert auc([0.5, 0.5], [0, 1]) == 0.5
    assert math.isnan(auc([0.2, 0.3], [1, 1]))


def test_matrix_csv_format_and_round_trip(tmp_path):
    path = write_matrix([[0.1, 0.2], [0.3, 1 / 3]], tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and all(len(x.split(",")) == 2 for x in lines)
    np.testing.assert_allclose(read_matrix(path), [[0.1, 0.2], [0.3, 1 / 3]], atol=1e-9)
    with pytest.raises(InvalidArgument):
        write_matrix([[np.nan]], tmp_path / "bad.csv")


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_matrix_round_trip_property(tmp_path_factory, m):
    path = write_matrix(m, tmp_path_factory.mktemp("m") / "m.csv")
    np.testing.assert_allclose(read_matrix(path), m, atol=1e-9, rtol=0)


def test_constant_matrix_gives_uniform_image(tmp_path):
    import matplotlib.image as mpimg

    paths = export_heatmap(np.full((3, 5), 0.4), tmp_path / "h.csv")
    img = mpimg.imread(paths[1])
    assert img.shape[:2] == (3 * 16, 5 * 16)  # 16-pixel blocks per cell
    assert np.ptp(img[..., :3]) == 0
