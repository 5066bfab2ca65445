"""Prediction post-processing and the mean column-wise ROC AUC metric.

Thresholding follows the median-bias rule: one scalar cut equal to the median
of all predicted probabilities minus a configurable bias (default 0.025), with
an optional per-column variant. AUC is the Mann-Whitney statistic (ties count
one half), computed per label column and averaged over columns where both
classes occur.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, ParseError
from .ingest import LABEL_NAMES, NUM_LABELS

log = logging.getLogger(__name__)

SCOPE_GLOBAL = "global"
SCOPE_PER_COLUMN = "per_column"


@dataclass
class ThresholdRule:
    bias: float = 0.025
    scope: str = SCOPE_GLOBAL

    def __post_init__(self):
        if not 0.0 <= self.bias < 1.0:
            raise ConfigError(f"bias must lie in [0, 1), got {self.bias}")
        if self.scope not in (SCOPE_GLOBAL, SCOPE_PER_COLUMN):
            raise ConfigError(f"unknown threshold scope {self.scope!r}")


@dataclass
class MetricsReport:
    per_column_auc: list[Optional[float]]
    mean_auc: Optional[float]
    columns_skipped: list[str]
    positive_rate_per_column: list[float]

    def to_dict(self) -> dict:
        return {
            "per_column_auc": self.per_column_auc,
            "mean_auc": self.mean_auc,
            "columns_skipped": self.columns_skipped,
            "positive_rate_per_column": self.positive_rate_per_column,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def compute_threshold(pred, rule: ThresholdRule = ThresholdRule()):
    """Median of predicted values minus the rule's bias.

    Global scope gives one scalar over the flattened matrix (even counts take
    the mean of the two middle values); per-column scope gives one threshold
    per column. The result is stabilized to 12 decimal places so that decimal
    arithmetic like median 0.3 - bias 0.025 comes out as exactly 0.275.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size == 0:
        raise InputError("cannot compute a threshold from an empty matrix")
    if rule.scope == SCOPE_GLOBAL:
        return round(float(np.median(pred)) - rule.bias, 12)
    return np.round(np.median(pred, axis=0) - rule.bias, 12)


def binarize(pred, threshold) -> np.ndarray:
    """1 where value >= threshold else 0 (ties count as positive)."""
    return (np.asarray(pred) >= threshold).astype(np.int8)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    boundaries = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    group_ends = np.r_[boundaries[1:], n]  # exclusive
    group_mean = (boundaries + 1 + group_ends) / 2.0
    ranks_sorted = np.repeat(group_mean, group_ends - boundaries)
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = ranks_sorted
    return ranks


def column_roc_auc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC of one score column against binary labels.

    Equals the fraction of (positive, negative) pairs ranked correctly, with
    ties worth one half. Returns None when either class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} and {labels.shape}"
        )
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mean_columnwise_auc(pred, labels) -> MetricsReport:
    """Per-column AUC, averaged over the columns where it is defined.

    Single-class columns are reported in columns_skipped and excluded from
    the mean rather than imputed. Label positive rates are included for the
    skew diagnostic.
    """
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise InputError(f"shape mismatch: pred {pred.shape} vs labels {labels.shape}")
    if pred.ndim != 2 or pred.shape[1] != NUM_LABELS:
        raise InputError(f"expected an N x {NUM_LABELS} matrix, got {pred.shape}")
    per_column: list[Optional[float]] = []
    skipped: list[str] = []
    for col in range(NUM_LABELS):
        auc = column_roc_auc(pred[:, col], labels[:, col])
        per_column.append(auc)
        if auc is None:
            skipped.append(LABEL_NAMES[col])
    defined = [a for a in per_column if a is not None]
    mean_auc = float(np.mean(defined)) if defined else None
    if skipped:
        log.warning("AUC undefined for single-class columns: %s", ", ".join(skipped))
    return MetricsReport(
        per_column_auc=per_column,
        mean_auc=mean_auc,
        columns_skipped=skipped,
        positive_rate_per_column=[float(r) for r in labels.mean(axis=0)],
    )


# CSV / JSON wire formats.

CSV_HEADER = ["tweet_id", *LABEL_NAMES]


def write_predictions_csv(path, tweet_ids, matrix) -> None:
    """N x 10 probabilities as CSV, six decimal places, rows in input order."""
    matrix = np.asarray(matrix)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for tid, row in zip(tweet_ids, matrix):
            writer.writerow([tid, *(f"{v:.6f}" for v in row)])


def write_submission_csv(path, tweet_ids, binary_matrix) -> None:
    binary_matrix = np.asarray(binary_matrix)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for tid, row in zip(tweet_ids, binary_matrix):
            writer.writerow([tid, *(str(int(v)) for v in row)])


def read_predictions_csv(path):
    """Read a predictions CSV back into (tweet_ids, N x 10 float matrix)."""
    tweet_ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty predictions file") from None
        if header != CSV_HEADER:
            raise ParseError(f"unexpected header {header!r}")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 1 + NUM_LABELS:
                raise ParseError(f"row {rownum}: expected {1 + NUM_LABELS} fields, "
                                 f"got {len(row)}")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"row {rownum}: non-numeric value") from exc
            tweet_ids.append(row[0])
            rows.append(values)
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, NUM_LABELS))
    return tweet_ids, matrix
