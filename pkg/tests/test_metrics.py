import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgt import metrics, vocab
from hgt.data import LabeledSequence
from hgt.metrics import (accuracy_at_threshold, average_precision, before_first, conditional_ap,
                         label_correlation)


def brute_ap(scores, labels):
    """Sort (stable), walk the ranking, average precision at each positive."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp, precisions = 0, []
    for rank, i in enumerate(order, 1):
        if labels[i]:
            tp += 1
            precisions.append(tp / rank)
    return math.fsum(precisions) / len(precisions)


def exact_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp, total = 0, Fraction(0)
    for rank, i in enumerate(order, 1):
        if labels[i]:
            tp += 1
            total += Fraction(tp, rank)
    return total / tp


def test_worked_example():
    ap = average_precision([0.9, 0.8, 0.7], [0, 1, 1])
    assert exact_ap([0.9, 0.8, 0.7], [0, 1, 1]) == Fraction(7, 12)
    assert ap == pytest.approx(7 / 12, abs=1e-15)


def test_worked_example_by_exhaustive_ranking():
    # every ordering consistent with the scores (there is one) gives 7/12
    scores, labels = [0.9, 0.8, 0.7], [0, 1, 1]
    values = set()
    for perm in itertools.permutations(range(3)):
        if all(scores[perm[k]] >= scores[perm[k + 1]] for k in range(2)):
            ranked = [labels[i] for i in perm]
            hits = [k + 1 for k, y in enumerate(ranked) if y]
            values.add(sum(Fraction(j + 1, r) for j, r in enumerate(hits)) / len(hits))
    assert values == {Fraction(7, 12)}


def test_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_no_positives_is_nan():
    assert math.isnan(average_precision([0.3, 0.2], [0, 0]))


def test_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_matches_brute_force_on_random_instances():
    gen = np.random.default_rng(123)
    for _ in range(300):
        n = int(gen.integers(1, 51))
        scores = np.round(gen.random(n), int(gen.integers(1, 4)))  # rounding forces ties
        labels = (gen.random(n) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[gen.integers(n)] = 1
        assert average_precision(scores, labels) == brute_ap(scores.tolist(), labels.tolist())


def test_random_scores_ap_near_positive_rate():
    gen = np.random.default_rng(5)
    labels = (gen.random(50000) < 0.1).astype(int)
    ap = average_precision(gen.random(50000), labels)
    assert ap == pytest.approx(labels.mean(), abs=0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=1, max_size=40))
def test_ap_invariant_to_increasing_transform(pairs):
    scores = np.array([s for s, _ in pairs], dtype=float)
    labels = np.array([y for _, y in pairs], dtype=int)
    if labels.sum() == 0:
        return
    a = average_precision(scores, labels)
    assert average_precision(3.0 * scores + 7.0, labels) == a
    assert average_precision(np.exp(scores / 25.0), labels) == a
    assert 0.0 < a <= 1.0


def test_accuracy_rules():
    assert accuracy_at_threshold([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    labels = np.array([1, 0, 0, 1, 1])
    assert accuracy_at_threshold(np.full(5, 0.5), labels) == labels.mean()
    gen = np.random.default_rng(9)
    p, y = gen.random(200), gen.integers(0, 2, 200)
    loop = sum(1 for pi, yi in zip(p, y) if (pi >= 0.5) == bool(yi)) / 200
    assert accuracy_at_threshold(p, y) == loop


def test_conditional_ap():
    gen = np.random.default_rng(2)
    s, y = gen.random(30), gen.integers(0, 2, 30)
    y[0] = 1
    assert conditional_ap(s, y, np.ones(30, bool)) == average_precision(s, y)
    assert math.isnan(conditional_ap(s, y, y == 0))
    assert math.isnan(conditional_ap(s, y, np.zeros(30, bool)))
    mask = np.arange(30) % 3 != 0
    assert conditional_ap(s, y, mask) == brute_ap(s[mask].tolist(), y[mask].tolist())


def test_conditional_known_ranking():
    # positives inside the mask outrank its negatives; the masked-out negative
    # at the top would otherwise cost precision
    scores = np.array([0.99, 0.9, 0.8, 0.3, 0.2])
    labels = np.array([0, 1, 1, 0, 0])
    mask = np.array([False, True, True, True, True])
    assert conditional_ap(scores, labels, mask) == 1.0
    assert average_precision(scores, labels) == pytest.approx(7 / 12)


def test_before_first():
    np.testing.assert_array_equal(before_first([0, 0, 1, 0, 1]), [1, 1, 0, 0, 0])
    np.testing.assert_array_equal(before_first([0, 0]), [1, 1])


def _seq(i, e, v):
    labels = np.stack([e, v], axis=1)
    return LabeledSequence(f"s{i}", labels, ("e", "v"))


def test_correlation_identity_and_fields():
    gen = np.random.default_rng(4)
    data = [_seq(i, gen.integers(0, 2, 50), gen.integers(0, 2, 50)) for i in range(6)]
    r = label_correlation("e", "v", data, n_perm=50)
    lhs = r.p_ev - r.p_e * r.p_v
    rhs = r.p_v * (r.p_e_given_v - r.p_e)
    assert abs(lhs - rhs) <= 1e-12
    assert r.covariance == pytest.approx(lhs, abs=1e-15)
    assert r.sign == int(np.sign(lhs))
    assert r.n_frames == 300
    e = np.concatenate([s.column("e") for s in data])
    assert r.p_e == e.mean()


def test_correlation_positive_when_coupled():
    gen = np.random.default_rng(5)
    data = []
    for i in range(10):
        v = (np.arange(80) // 10) % 2
        e = np.where(gen.random(80) < 0.8, v, gen.integers(0, 2, 80))
        data.append(_seq(i, np.roll(e, i), np.roll(v, i)))
    r = label_correlation("e", "v", data, n_perm=100)
    assert r.sign == 1 and r.significant


def test_correlation_independent_within_band():
    gen = np.random.default_rng(6)
    data = [_seq(i, gen.integers(0, 2, 100), gen.integers(0, 2, 100)) for i in range(20)]
    r = label_correlation("e", "v", data, n_perm=200)
    assert not r.significant


def test_correlation_undefined_conditional():
    data = [_seq(0, np.ones(5, int), np.zeros(5, int)), _seq(1, np.zeros(5, int), np.zeros(5, int))]
    r = label_correlation("e", "v", data, n_perm=10)
    assert r.p_v == 0 and r.p_e_given_v is None


def test_evaluate_report_and_table(tmp_path):
    gen = np.random.default_rng(7)
    names = list(vocab.TRIPLET_NAMES)
    probs = gen.random((400, 2, 100))
    truth = (gen.random((400, 2, 100)) < 0.05).astype(np.uint8)
    truth[:, :, 7] = 0  # a class with no positives
    reports = metrics.evaluate(probs, truth, names)
    r0 = reports[0]
    assert names[7] in r0.undefined and names[7] not in r0.per_class_ap
    recomputed = math.fsum(r0.per_class_ap.values()) / len(r0.per_class_ap)
    assert abs(r0.mean_ap - recomputed) <= 1e-12
    assert all(0 <= v <= 1 for v in r0.per_class_ap.values())
    metrics.write_table(reports.values(), tmp_path / "t.csv")
    rows = metrics.read_table(tmp_path / "t.csv")
    from_table = [float(r["ap"]) for r in rows if r["horizon"] == "0" and r["ap"] != ""]
    assert abs(math.fsum(from_table) / len(from_table) - r0.mean_ap) <= 1e-12
    r0.save_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["mean_ap"] == r0.mean_ap


def test_evaluate_conditional_keys():
    gen = np.random.default_rng(8)
    probs = gen.random((50, 1, 2))
    truth = gen.integers(0, 2, (50, 1, 2))
    mask = np.zeros((50, 1), bool)
    reports = metrics.evaluate(probs, truth, ["x", "y"], conditions={"none": mask}, events=["y"])
    assert reports[0].conditional == {"y|none": None}


def test_baselines():
    truth = np.array([[1, 0], [0, 1], [1, 0], [0, 0]])
    # constant scores: AP after a seeded shuffle equals shuffled_ap directly
    assert metrics.marginal_baseline_map([0.5, 0.25], truth, seed=3) == pytest.approx(
        (metrics.shuffled_ap(np.full(4, 0.5), truth[:, 0], 3) + metrics.shuffled_ap(np.full(4, 0.25), truth[:, 1], 3)) / 2)
    assert metrics.persistence_baseline_map(truth, truth) == 1.0
