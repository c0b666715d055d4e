"""Precision-recall analysis and Table-1 style relative reporting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateLabels, ReportError

RECALL_LEVELS = (0.6, 0.7, 0.8, 0.9)
PARTITIONS = ("I", "U", "T")
SYSTEMS = ("ssl_wo_client", "fssl", "ssl_w_client")
SYSTEM_TITLES = {
    "ssl_wo_client": "SSL w/o D_client",
    "fssl": "FSSL",
    "ssl_w_client": "SSL w/ D_client",
}
_RECALL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PrCurve:
    """Operating points ordered by strictly decreasing threshold."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    positives: int
    negatives: int

    def points(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))


def _split_scores(scores, labels=None):
    if labels is None:
        pairs = list(scores)
        s = np.array([p for p, _ in pairs], dtype=np.float64)
        z = np.array([y for _, y in pairs], dtype=np.int64)
    else:
        s = np.asarray(scores, dtype=np.float64)
        z = np.asarray(labels, dtype=np.int64)
    if s.shape != z.shape or s.ndim != 1:
        raise ContractError("scores and labels must be equal-length 1-D sequences")
    if np.any((z != 0) & (z != 1)):
        raise ContractError("labels must be 0/1")
    return s, z


def pr_curve(scores, labels=None) -> PrCurve:
    """One operating point per distinct score; ties enter together.

    Accepts either a sequence of (score, label) pairs or two parallel arrays.
    """
    s, z = _split_scores(scores, labels)
    n_pos = int(z.sum())
    n_neg = int(z.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"need both classes, got {n_pos} positives and {n_neg} negatives")
    order = np.lexsort((z, -s))  # secondary key only fixes memory order; groups make it irrelevant
    s, z = s[order], z[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(z)[last_of_group]
    predicted = (np.nonzero(last_of_group)[0] + 1)
    precision = tp / predicted
    recall = tp / n_pos
    return PrCurve(s[last_of_group], precision, recall, n_pos, n_neg)


def pr_auc(curve: PrCurve) -> float:
    """Average precision: sum of (R_i - R_{i-1}) * P_i over increasing recall."""
    r_prev = np.r_[0.0, curve.recall[:-1]]
    # fsum is correctly rounded, so the value does not depend on summation order
    return math.fsum(((curve.recall - r_prev) * curve.precision).tolist())


def precision_at_recall(curve: PrCurve, r: float) -> float:
    """Best precision among operating points reaching recall >= r."""
    if not 0.0 < r <= 1.0:
        raise ContractError(f"recall level must lie in (0, 1], got {r}")
    ok = curve.recall >= r - _RECALL_TOL
    return float(curve.precision[ok].max())


def roc_auc(scores, labels=None) -> float:
    """Probability a random positive outscores a random negative (ties count half)."""
    s, z = _split_scores(scores, labels)
    n_pos, n_neg = int(z.sum()), int(z.size - z.sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[z == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class PartitionMetrics:
    pr_auc: float
    roc_auc: float
    precision_at: Dict[float, float]
    n_clips: int
    positives: int

    def as_dict(self):
        out = {"pr_auc": self.pr_auc, "roc_auc": self.roc_auc, "n_clips": self.n_clips,
               "positives": self.positives}
        for r, p in self.precision_at.items():
            out[f"p@r{r:g}"] = p
        return out


def partition_metrics(scores, labels, recalls=RECALL_LEVELS) -> PartitionMetrics:
    curve = pr_curve(scores, labels)
    return PartitionMetrics(
        pr_auc(curve),
        roc_auc(scores, labels),
        {r: precision_at_recall(curve, r) for r in recalls},
        len(labels),
        curve.positives,
    )


@dataclass
class EvalReport:
    system: str
    partitions: Dict[str, PartitionMetrics] = field(default_factory=dict)
    score_file: Optional[str] = None

    def metric(self, partition, name):
        m = self.partitions[partition]
        if name == "pr_auc":
            return m.pr_auc
        if name == "roc_auc":
            return m.roc_auc
        if name.startswith("p@r"):
            return m.precision_at[float(name[3:])]
        raise KeyError(name)

    def as_dict(self):
        return {"system": self.system, "score_file": self.score_file,
                "partitions": {k: v.as_dict() for k, v in self.partitions.items()}}


def evaluate_scores(system: str, rows, recalls=RECALL_LEVELS) -> EvalReport:
    """rows: iterable of (partition, dsn, timestamp, score, label)."""
    by_part: Dict[str, list] = {}
    for part, _, _, score, label in rows:
        by_part.setdefault(part, []).append((score, label))
    report = EvalReport(system)
    for part in PARTITIONS:
        pairs = by_part.get(part)
        if not pairs:
            continue
        s = [p for p, _ in pairs]
        z = [y for _, y in pairs]
        try:
            report.partitions[part] = partition_metrics(s, z, recalls)
        except DegenerateLabels:
            continue
    return report


TABLE_METRICS = ("pr_auc", "p@r0.7", "p@r0.8", "p@r0.9")


def table_metrics(recalls=RECALL_LEVELS):
    """Relative-table columns available for the given recall levels.

    The standard columns are kept when their recall level was evaluated;
    with none of them available every evaluated level is used instead.
    """
    levels = {f"p@r{r:g}" for r in recalls}
    chosen = tuple(m for m in TABLE_METRICS[1:] if m in levels)
    if not chosen:
        chosen = tuple(f"p@r{r:g}" for r in recalls)
    return ("pr_auc",) + chosen


def relative_report(baseline: EvalReport, others: Sequence[EvalReport],
                    metrics=TABLE_METRICS, partitions=PARTITIONS):
    """Relative change 100 * (x - base) / base for every (partition, metric) cell.

    Returns rows ``{"system": ..., "cells": {(partition, metric): delta}}``;
    the baseline row carries ``None`` cells (it is the 100% reference).
    """
    rows = [{"system": baseline.system, "cells": {(p, m): None for p in partitions for m in metrics}}]
    for other in others:
        cells = {}
        for p in partitions:
            if p not in baseline.partitions or p not in other.partitions:
                raise ReportError(f"partition {p} missing for {other.system} or baseline")
            for m in metrics:
                base = baseline.metric(p, m)
                if base == 0:
                    raise ReportError(f"baseline {m} on {p} is zero; relative change undefined")
                cells[(p, m)] = 100.0 * (other.metric(p, m) - base) / base
        rows.append({"system": other.system, "cells": cells})
    return rows


def format_delta(v):
    if v is None:
        return "-"
    arrow = "↑" if v > 0 else ("↓" if v < 0 else "")
    return f"{abs(v):.2f}{arrow}" if arrow else "0.00"


def relative_table_csv(rows, metrics=TABLE_METRICS, partitions=PARTITIONS, header_lines=()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + [f"{p}:{m}" for p in partitions for m in metrics])
    for row in rows:
        w.writerow([SYSTEM_TITLES.get(row["system"], row["system"])]
                   + [format_delta(row["cells"][(p, m)]) for p in partitions for m in metrics])
    return buf.getvalue()


def relative_table_json(rows, metrics=TABLE_METRICS, partitions=PARTITIONS, meta=None):
    payload = {
        "meta": meta or {},
        "columns": [{"partition": p, "metric": m} for p in partitions for m in metrics],
        "rows": [
            {"system": r["system"],
             "relative_pct": [None if r["cells"][(p, m)] is None else round(r["cells"][(p, m)], 10)
                              for p in partitions for m in metrics]}
            for r in rows
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def absolute_table_csv(reports: Iterable[EvalReport], header_lines=(), recalls=RECALL_LEVELS):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = ["pr_auc", "roc_auc"] + [f"p@r{r:g}" for r in recalls]
    w.writerow(["system", "partition", "n_clips", "positives"] + cols)
    for rep in reports:
        for p in PARTITIONS:
            if p not in rep.partitions:
                continue
            m = rep.partitions[p]
            w.writerow([rep.system, p, m.n_clips, m.positives] + [f"{rep.metric(p, c):.10f}" for c in cols])
    return buf.getvalue()


SCORE_HEADER = ("partition", "dsn", "timestamp", "score", "label")


def scores_csv(rows, header_lines=()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for part, dsn, ts, score, label in rows:
        w.writerow([part, dsn, ts, repr(float(score)), int(label)])
    return buf.getvalue()


def read_scores_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for rec in reader:
        rows.append((rec["partition"], rec["dsn"], int(rec["timestamp"]), float(rec["score"]), int(rec["label"])))
    return rows
