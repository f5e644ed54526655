import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srdl.metrics import (MetricAccumulator, UndefinedAP, average_precision, binarize, counting_metrics, evaluate,
                          read_prediction_dump, write_prediction_dump)

from oracles import naive_ap, naive_evaluate

KEYS = ("mAP", "OP", "OR", "OF1", "CP", "CR", "CF1")


def test_ap_perfect_and_single_positive():
    assert average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    for r in range(1, 6):
        labels = [0] * 5
        labels[r - 1] = 1
        assert average_precision([0.9, 0.8, 0.7, 0.6, 0.5], labels) == pytest.approx(1 / r, abs=1e-15)


def test_ap_ties_by_index():
    # equal scores: the earlier item ranks first
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_ap_undefined_without_positives():
    with pytest.raises(UndefinedAP):
        average_precision([0.3, 0.2], [0, 0])


def test_ap_random_matches_rank_scan(rng):
    s = rng.random(20)
    y = (rng.random(20) < 0.4).astype(int)
    y[3] = 1
    assert abs(average_precision(s, y) - naive_ap(list(s), list(y))) < 1e-12


def test_counting_worked_example():
    # 3 images x 2 classes giving N^c = (1, 2), N^p = (2, 2), N^g = (1, 3)
    pred = np.array([[1, 1], [1, 1], [0, 0]])
    labels = np.array([[1, 1], [0, 1], [0, 1]])
    m = counting_metrics(pred, labels)
    assert m["OP"] == pytest.approx(3 / 4)
    assert m["OR"] == pytest.approx(3 / 4)
    assert m["CP"] == pytest.approx(3 / 4)
    assert m["CR"] == pytest.approx(5 / 6)
    assert m["OF1"] == pytest.approx(3 / 4)
    assert m["CF1"] == pytest.approx(2 * (3 / 4) * (5 / 6) / (3 / 4 + 5 / 6))


def test_counting_perfect_and_empty():
    y = np.array([[1, 0], [0, 1], [1, 1]])
    m = counting_metrics(y, y)
    assert all(m[k] == 1.0 for k in ("OP", "OR", "OF1", "CP", "CR", "CF1"))
    warnings = []
    z = counting_metrics(np.zeros_like(y), y, warnings)
    assert z["OR"] == 0 and z["OF1"] == 0 and z["OP"] == 0
    assert any("OP" in w for w in warnings)


def test_binarize_rules():
    s = np.array([[0.9, 0.2, 0.6, 0.5, 0.1]])
    assert binarize(s).tolist() == [[True, False, True, True, False]]
    assert binarize(s, "top3").tolist() == [[True, False, True, True, False]]
    with pytest.raises(ValueError):
        binarize(s, "median")


def test_single_image_single_class():
    r = evaluate([[0.9]], [[1]])
    assert all(getattr(r, k) == 1.0 for k in KEYS)


def test_zero_positive_class_excluded_with_warning():
    r = evaluate([[0.9, 0.1], [0.2, 0.3]], [[1, 0], [0, 0]])
    assert r.per_class_ap[1] is None
    assert r.mAP == 1.0
    assert any("excluded from mAP" in w for w in r.warnings)


def test_empty_set_reports_warnings_only():
    r = evaluate(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    assert r.mAP == 0.0 and r.warnings


def test_duplicated_rows_keep_counting_metrics():
    rng = np.random.default_rng(3)
    s = rng.random((12, 4))
    y = (rng.random((12, 4)) < 0.5).astype(int)
    y[0] = 1
    a, b = evaluate(s, y), evaluate(np.vstack([s, s]), np.vstack([y, y]))
    for k in ("OP", "OR", "OF1", "CP", "CR", "CF1"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-12)
    assert b.mAP == pytest.approx(naive_evaluate(np.vstack([s, s]).tolist(), np.vstack([y, y]).tolist())["mAP"])


def test_duplication_changes_ap_under_index_tie_rule():
    # a negative ranked first: AP 1/2, duplicated AP (1/3 + 2/4) / 2
    assert evaluate([[0.9], [0.8]], [[0], [1]]).mAP == 0.5
    assert evaluate([[0.9], [0.8], [0.9], [0.8]], [[0], [1], [0], [1]]).mAP == pytest.approx(5 / 12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ap_invariant_under_monotone_transform(seed):
    r = np.random.default_rng(seed)
    s = r.random(15)
    y = (r.random(15) < 0.5).astype(int)
    y[0] = 1
    assert average_precision(s, y) == average_precision(np.exp(3 * s) - 2, y)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_image_permutation_invariance_of_counts(seed):
    r = np.random.default_rng(seed)
    s, y = r.random((10, 3)), (r.random((10, 3)) < 0.5).astype(int)
    perm = r.permutation(10)
    a, b = counting_metrics(binarize(s), y), counting_metrics(binarize(s[perm]), y[perm])
    for k in ("OP", "OR", "OF1", "CP", "CR", "CF1"):
        assert a[k] == pytest.approx(b[k], abs=1e-12)


def test_bounds_and_f1_identity(rng):
    for _ in range(50):
        s = rng.random((20, 5))
        y = (rng.random((20, 5)) < 0.4).astype(int)
        r = evaluate(s, y)
        for k in KEYS:
            assert 0.0 <= getattr(r, k) <= 1.0
        if r.OP + r.OR > 0:
            assert abs(r.OF1 - 2 * r.OP * r.OR / (r.OP + r.OR)) < 1e-9


def test_accumulator_merge(rng):
    s = rng.random((30, 4))
    y = (rng.random((30, 4)) < 0.5).astype(int)
    a, b, c = MetricAccumulator(4), MetricAccumulator(4), MetricAccumulator(4)
    a.update(s[:10], y[:10])
    b.update(s[10:25], y[10:25])
    c.update(s[25:], y[25:])
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert left.report().headline() == right.report().headline() == evaluate(s, y).headline()
    swapped = b.merge(a).merge(c).report()
    for k in ("OP", "OR", "OF1", "CP", "CR", "CF1"):
        assert getattr(swapped, k) == pytest.approx(getattr(evaluate(s, y), k), abs=1e-12)


def test_prediction_dump_roundtrip(tmp_path, rng):
    s = rng.random((5, 3))
    y = (rng.random((5, 3)) < 0.5).astype(int)
    write_prediction_dump(tmp_path / "p.tsv", ["a", "b c", "d"], [f"im{i}" for i in range(5)], s, y)
    names, ids, s2, y2 = read_prediction_dump(tmp_path / "p.tsv")
    assert names == ["a", "b c", "d"] and ids[2] == "im2"
    assert np.array_equal(s, s2) and np.array_equal(y, y2)


def test_report_files(tmp_path):
    r = evaluate([[0.9, 0.1], [0.2, 0.8]], [[1, 0], [0, 1]], report_top3=True)
    r.save(tmp_path / "m")
    kv = dict(line.split("=", 1) for line in (tmp_path / "m.kv").read_text().splitlines())
    assert float(kv["mAP"]) == 1.0
    assert (tmp_path / "m.json").read_text().startswith("{")


def test_report_values_are_plain_floats():
    r = evaluate([[0.9, 0.6], [0.7, 0.8], [0.2, 0.3]], [[1, 1], [0, 1], [0, 1]])
    assert all(type(v) is float for v in r.headline().values())
    assert "np." not in r.to_keyvalue()
