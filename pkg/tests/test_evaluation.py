import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fssl.errors import ContractError, DegenerateLabels, ReportError
from fssl.evaluation import (EvalReport, PartitionMetrics, absolute_table_csv, evaluate_scores, format_delta,
                             partition_metrics, pr_auc, pr_curve, precision_at_recall, read_scores_csv,
                             relative_report, relative_table_csv, relative_table_json, roc_auc, scores_csv,
                             table_metrics)


def brute_force_curve(scores, labels):
    """Every distinct score as a threshold, predicted positive iff score >= threshold."""
    n_pos = sum(labels)
    points = []
    for tau in sorted(set(scores), reverse=True):
        tp = sum(1 for s, z in zip(scores, labels) if s >= tau and z == 1)
        pred = sum(1 for s in scores if s >= tau)
        points.append((tau, tp / pred, tp / n_pos))
    return points


def brute_force_ap(scores, labels):
    points = brute_force_curve(scores, labels)
    prev = 0.0
    terms = []
    for _, p, r in points:
        terms.append((r - prev) * p)
        prev = r
    return math.fsum(terms)


def exact_ap(scores, labels):
    n_pos = sum(labels)
    prev, total = Fraction(0), Fraction(0)
    for tau in sorted(set(scores), reverse=True):
        tp = sum(1 for s, z in zip(scores, labels) if s >= tau and z == 1)
        pred = sum(1 for s in scores if s >= tau)
        r = Fraction(tp, n_pos)
        total += (r - prev) * Fraction(tp, pred)
        prev = r
    return total


FOUR = ([0.9, 0.8, 0.7, 0.6], [1, 1, 0, 1])


def test_four_example_curve():
    c = pr_curve(*FOUR)
    want = [(1 / 3, 1.0), (2 / 3, 1.0), (2 / 3, 2 / 3), (1.0, 0.75)]
    assert [(r, p) for _, p, r in c.points()] == pytest.approx(want)
    assert pr_auc(c) == pytest.approx(0.91667, abs=1e-5)
    assert abs(pr_auc(c) - 11 / 12) < 1e-9
    assert precision_at_recall(c, 1.0) == 0.75
    assert precision_at_recall(c, 0.9) == 0.75
    assert precision_at_recall(c, 0.5) == 1.0


@pytest.mark.parametrize("seed", range(40))
def test_pr_auc_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 1001)) if seed % 4 else int(rng.integers(2, 30))
    # coarse scores force plenty of ties
    scores = (rng.integers(0, 1 + int(rng.integers(1, 50)), n) / 7.0).tolist()
    labels = rng.integers(0, 2, n).tolist()
    labels[0], labels[-1] = 0, 1
    got = pr_auc(pr_curve(scores, labels))
    assert got == brute_force_ap(scores, labels)
    assert abs(got - float(exact_ap(scores, labels))) < 1e-12
    c = pr_curve(scores, labels)
    assert [(t, p, r) for t, p, r in c.points()] == brute_force_curve(scores, labels)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 1)), min_size=2, max_size=60))
def test_pr_auc_property(pairs):
    scores = [s / 4.0 for s, _ in pairs]
    labels = [z for _, z in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(DegenerateLabels):
            pr_curve(scores, labels)
        return
    c = pr_curve(scores, labels)
    ap = pr_auc(c)
    assert ap == brute_force_ap(scores, labels)
    assert 0.0 < ap <= 1.0
    assert np.all(np.diff(c.recall) >= 0)
    assert c.recall[-1] == 1.0


def test_ties_enter_together():
    c = pr_curve([0.5] * 6, [1, 0, 0, 1, 0, 0])
    assert len(c.thresholds) == 1
    assert c.recall[0] == 1.0 and c.precision[0] == pytest.approx(1 / 3)


def test_perfect_separation():
    c = pr_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert pr_auc(c) == 1.0
    assert all(precision_at_recall(c, r) == 1.0 for r in (0.1, 0.5, 0.9, 1.0))
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_random_scores_give_prevalence():
    rng = np.random.default_rng(0)
    labels = np.r_[np.ones(500, int), np.zeros(500, int)]
    ap = pr_auc(pr_curve(rng.random(1000), labels))
    assert abs(ap - 0.5) < 0.05


def test_roc_auc_ties_count_half():
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5
    assert roc_auc([0.1, 0.9, 0.5], [1, 0, 0]) == 0.0


def test_input_validation():
    with pytest.raises(ContractError):
        pr_curve([0.1, 0.2], [1, 2])
    with pytest.raises(ContractError):
        pr_curve([0.1, 0.2], [1])
    with pytest.raises(ContractError):
        precision_at_recall(pr_curve(*FOUR), 0.0)
    with pytest.raises(DegenerateLabels):
        pr_curve([0.1, 0.2], [1, 1])


def test_pairs_and_arrays_agree():
    a = pr_curve(*FOUR)
    b = pr_curve(list(zip(*FOUR)))
    assert a.points() == b.points()


def report(name, ap, p80):
    m = PartitionMetrics(ap, 0.5, {0.7: p80, 0.8: p80, 0.9: p80}, 10, 4)
    return EvalReport(name, {"I": m, "U": m, "T": m})


def test_relative_report_hand_cases():
    base, other = report("ssl_wo_client", 0.5, 0.5), report("fssl", 0.6, 0.4)
    rows = relative_report(base, [base, other])
    assert all(v is None for v in rows[0]["cells"].values())
    assert all(v == 0.0 for v in rows[1]["cells"].values())
    assert rows[2]["cells"][("U", "pr_auc")] == pytest.approx(20.0)
    assert rows[2]["cells"][("U", "p@r0.8")] == pytest.approx(-20.0)
    assert format_delta(20.0) == "20.00↑" and format_delta(-3.456) == "3.46↓" and format_delta(0.0) == "0.00"
    csv_text = relative_table_csv(rows, header_lines=["x=1"])
    assert csv_text.splitlines()[0] == "# x=1"
    assert "FSSL" in csv_text
    payload = json.loads(relative_table_json(rows))
    assert len(payload["columns"]) == 12 and len(payload["rows"]) == 3


def test_relative_report_errors():
    zero = report("ssl_wo_client", 0.0, 0.5)
    with pytest.raises(ReportError):
        relative_report(zero, [report("fssl", 0.5, 0.5)])
    partial = EvalReport("fssl", {"I": report("x", 0.5, 0.5).partitions["I"]})
    with pytest.raises(ReportError):
        relative_report(report("ssl_wo_client", 0.5, 0.5), [partial])


def test_table_metrics_follow_recalls():
    assert table_metrics() == ("pr_auc", "p@r0.7", "p@r0.8", "p@r0.9")
    assert table_metrics((0.8, 0.95)) == ("pr_auc", "p@r0.8")
    assert table_metrics((0.5,)) == ("pr_auc", "p@r0.5")


def test_scores_csv_round_trip(tmp_path):
    rows = [("I", "DSN1", 10, 0.1 + 0.2, 1), ("T", "DSN2", 11, 1e-17, 0)]
    path = tmp_path / "s.csv"
    path.write_text(scores_csv(rows, header_lines=["seed=1"]))
    assert read_scores_csv(path) == rows


def test_evaluate_scores_skips_degenerate_partitions():
    rows = [("I", "a", 0, 0.9, 1), ("I", "a", 1, 0.1, 0), ("U", "b", 0, 0.5, 1)]
    rep = evaluate_scores("fssl", rows, recalls=(0.5,))
    assert set(rep.partitions) == {"I"}
    text = absolute_table_csv([rep], recalls=(0.5,))
    assert text.splitlines()[0] == "system,partition,n_clips,positives,pr_auc,roc_auc,p@r0.5"


def test_partition_metrics_fields():
    m = partition_metrics(*FOUR)
    assert m.n_clips == 4 and m.positives == 3
    assert m.precision_at[0.9] == 0.75
    assert m.as_dict()["p@r0.6"] == 1.0
