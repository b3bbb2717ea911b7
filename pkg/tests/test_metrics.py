import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busmorph.errors import LengthMismatch, UnknownClass
from busmorph.metrics import (
    DEFAULT_CLASSES,
    MetricReport,
    confuse,
    confusion_image,
    f1_score,
    one_vs_rest,
    report,
)

labels3 = st.sampled_from(DEFAULT_CLASSES)
pairs = st.lists(st.tuples(labels3, labels3), min_size=1, max_size=60)


def _count_oracle(actual, predicted, positive):
    tp = sum(1 for a, p in zip(actual, predicted) if a == positive and p == positive)
    fp = sum(1 for a, p in zip(actual, predicted) if a != positive and p == positive)
    fn = sum(1 for a, p in zip(actual, predicted) if a == positive and p != positive)
    tn = len(actual) - tp - fp - fn
    return tp, tn, fp, fn


def test_table_scalars_give_f1():
    assert f1_score(0.9187, 0.8802) == pytest.approx(0.8990, abs=5e-5)
    assert abs(f1_score(0.9187, 0.8802) - 0.8973) > 1e-3
    assert f1_score(0, 0) == 0


def test_all_correct_is_diagonal():
    y = ["normal", "benign", "malignant", "benign"]
    cm = confuse(y, y)
    assert cm.counts.tolist() == [[1, 0, 0], [0, 2, 0], [0, 0, 1]]
    r = report(cm)
    assert r.accuracy == 1
    assert all(m.f1 == 1 and m.fp == m.fn == 0 for m in r.per_class.values())


def test_single_off_diagonal():
    cm = confuse(["benign"], ["malignant"])
    assert cm.counts[1, 2] == 1 and cm.total == 1


def test_two_class_hand_count():
    actual = ["a"] * 6 + ["b"] * 5
    predicted = ["a"] * 5 + ["b"] + ["a"] * 2 + ["b"] * 3
    cm = confuse(actual, predicted, ("a", "b"))
    assert cm.counts.tolist() == [[5, 1], [2, 3]]
    assert one_vs_rest(cm, "a") == (5, 3, 2, 1)
    # two classes: both one-vs-rest views give the overall accuracy
    for c in ("a", "b"):
        tp, tn, fp, fn = one_vs_rest(cm, c)
        assert (tp + tn) / cm.total == report(cm).accuracy


def test_absent_class_flagged_undefined():
    r = report(confuse(["normal", "benign"], ["normal", "benign"]))
    m = r.per_class["malignant"]
    assert m.precision == m.recall == m.f1 == 0
    assert set(m.undefined) == {"precision", "recall"}
    assert "*" in r.to_text()


def test_errors():
    with pytest.raises(LengthMismatch):
        confuse(["benign"], [])
    with pytest.raises(LengthMismatch):
        confuse([], [])
    with pytest.raises(UnknownClass):
        confuse(["cyst"], ["benign"])
    with pytest.raises(UnknownClass):
        one_vs_rest(confuse(["benign"], ["benign"]), "cyst")


def test_thousand_random_pairs_match_counting_oracle():
    rng = np.random.default_rng(2024)
    actual = [DEFAULT_CLASSES[i] for i in rng.integers(0, 3, 1000)]
    predicted = [DEFAULT_CLASSES[i] for i in rng.integers(0, 3, 1000)]
    cm = confuse(actual, predicted)
    r = report(cm)
    assert cm.counts.sum(axis=1).tolist() == [actual.count(c) for c in DEFAULT_CLASSES]
    for c in DEFAULT_CLASSES:
        tp, tn, fp, fn = _count_oracle(actual, predicted, c)
        m = r.per_class[c]
        assert (m.tp, m.tn, m.fp, m.fn) == (tp, tn, fp, fn)
        assert m.precision == tp / (tp + fp)
        assert m.recall == tp / (tp + fn)
        assert m.specificity == tn / (tn + fp)
        p, q = tp / (tp + fp), tp / (tp + fn)
        assert m.f1 == pytest.approx(2 * p * q / (p + q), abs=1e-15)


@settings(max_examples=80)
@given(pairs)
def test_report_invariants(ps):
    actual, predicted = zip(*ps)
    cm = confuse(actual, predicted)
    r = report(cm)
    assert cm.total == len(ps)
    for c in DEFAULT_CLASSES:
        m = r.per_class[c]
        assert m.tp + m.tn + m.fp + m.fn == len(ps)
        assert abs(m.recall - m.sensitivity) <= 1e-12
        for v in (m.precision, m.recall, m.specificity, m.f1):
            assert 0 <= v <= 1
    assert r.accuracy == pytest.approx(sum(a == p for a, p in ps) / len(ps))


@settings(max_examples=50)
@given(pairs, st.permutations(list(DEFAULT_CLASSES)))
def test_class_order_permutation(ps, order):
    actual, predicted = zip(*ps)
    a = report(confuse(actual, predicted))
    b = report(confuse(actual, predicted, order))
    for c in DEFAULT_CLASSES:
        assert a.per_class[c] == b.per_class[c]
    for name in ("macro_precision", "macro_recall", "macro_specificity", "macro_f1", "accuracy"):
        assert abs(getattr(a, name) - getattr(b, name)) <= 1e-12


def test_json_round_trip():
    r = report(confuse(["normal", "benign", "benign"], ["normal", "malignant", "benign"]))
    assert MetricReport.from_json(r.to_json()) == r


def test_confusion_image_shape():
    cm = confuse(["normal", "benign"], ["normal", "normal"])
    img = confusion_image(cm, cell=10)
    assert img.shape == (31, 31)
    assert img.dtype == np.uint8
    assert img[5, 5] < img[5 + 10, 5 + 10]
