"""Model-comparison metrics for count predictions.

Deviance follows the count-regression convention 0*log(0) = 0 and is
reported both as a sum and as a per-observation mean (the mean is the
comparable headline across datasets of different size).  Lifts and the Gini
index are rank statistics of the prediction scores: scores are sorted
ascending with ties broken by original row order, so results are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import MetricError

DOUBLE_LIFT_EDGES = (0.3, 0.5, 0.8, 0.95, 1.05, 1.25, 1.6, 2.0)


@dataclass(frozen=True)
class MetricReport:
    """Flat bundle of the comparison metrics for one model's predictions."""

    n: int
    deviance_sum: float
    deviance_mean: float
    one_way_lift: float | None
    two_way_lift: float | None
    gini: float | None
    count_diff: dict = field(default_factory=dict)

    def to_lines(self) -> list[str]:
        def fmt(v):
            return "NA" if v is None else repr(float(v))

        lines = [
            f"n = {self.n}",
            f"deviance_sum = {fmt(self.deviance_sum)}",
            f"deviance_mean = {fmt(self.deviance_mean)}",
            f"one_way_lift = {fmt(self.one_way_lift)}",
            f"two_way_lift = {fmt(self.two_way_lift)}",
            f"gini = {fmt(self.gini)}",
        ]
        for k in sorted(self.count_diff):
            lines.append(f"count_diff_{k} = {fmt(self.count_diff[k])}")
        return lines


def poisson_deviance(y, yhat) -> tuple[float, float]:
    """Poisson deviance: sum of 2*[y*log(y/yhat) - (y - yhat)] and its mean."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise MetricError("responses and predictions must align")
    if np.any(y < 0):
        raise MetricError("responses must be non-negative")
    if np.any(yhat <= 0):
        raise MetricError("predicted means must be strictly positive")
    terms = 2.0 * (xlogy(y, y) - xlogy(y, yhat) - (y - yhat))
    total = float(np.sum(terms))
    return total, total / y.size


def count_diff_table(y, pmf_rows) -> dict[int, float]:
    """Observed-minus-expected counts of each value k.

    ``pmf_rows`` holds per-observation pmf values for k = 0..k_max; the
    expected count of k is the column sum.
    """
    y = np.asarray(y, dtype=float)
    pmf_rows = np.atleast_2d(np.asarray(pmf_rows, dtype=float))
    if pmf_rows.shape[0] != y.size:
        raise MetricError("pmf rows must align with responses")
    expected = pmf_rows.sum(axis=0)
    out = {}
    for k in range(pmf_rows.shape[1]):
        out[k] = float(np.sum(y == k) - expected[k])
    return out


def _decile_slices(n: int) -> list[slice]:
    # ten bins over score-sorted rows; the remainder goes to the top bins
    base, rem = divmod(n, 10)
    sizes = [base] * (10 - rem) + [base + 1] * rem
    slices = []
    lo = 0
    for size in sizes:
        slices.append(slice(lo, lo + size))
        lo += size
    return slices


def _sorted_by_score(y, scores):
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if y.shape != scores.shape:
        raise MetricError("responses and scores must align")
    order = np.argsort(scores, kind="stable")
    return y[order], scores[order]


def lifts(y, scores) -> tuple[float | None, float | None]:
    """One-way and two-way decile lifts of the responses ranked by score.

    One-way: top-decile mean response over the population mean.  Two-way:
    top-decile mean over bottom-decile mean, None when the bottom decile's
    mean response is zero (undefined rather than infinite).
    """
    y_sorted, _ = _sorted_by_score(y, scores)
    n = y_sorted.size
    if n < 10:
        raise MetricError("lifts need at least 10 observations")
    overall = float(np.mean(y_sorted))
    if overall <= 0:
        raise MetricError("lifts need a positive mean response")
    bins = _decile_slices(n)
    top = float(np.mean(y_sorted[bins[-1]]))
    bottom = float(np.mean(y_sorted[bins[0]]))
    one_way = top / overall
    two_way = top / bottom if bottom > 0 else None
    return one_way, two_way


def gini_index(y, scores) -> float | None:
    """Score-ordered Gini: one minus twice the Lorenz area of the responses.

    Observations are ranked by ascending score; the Lorenz curve tracks the
    cumulative response share.  Returns None when the responses sum to zero.
    """
    y_sorted, _ = _sorted_by_score(y, scores)
    n = y_sorted.size
    total = float(np.sum(y_sorted))
    if total <= 0:
        return None
    lorenz = np.concatenate([[0.0], np.cumsum(y_sorted) / total])
    u = np.linspace(0.0, 1.0, n + 1)
    area = float(np.trapezoid(lorenz, u))
    return 1.0 - 2.0 * area


def lift_plot_data(y, scores) -> list[tuple[int, float, float]]:
    """Per-decile rows of (decile, mean prediction, mean response)."""
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if y.shape != scores.shape:
        raise MetricError("responses and scores must align")
    if y.size < 10:
        raise MetricError("lift plot needs at least 10 observations")
    order = np.argsort(scores, kind="stable")
    y_sorted = y[order]
    s_sorted = scores[order]
    rows = []
    for i, sl in enumerate(_decile_slices(y.size), start=1):
        rows.append((i, float(np.mean(s_sorted[sl])), float(np.mean(y_sorted[sl]))))
    return rows


@dataclass(frozen=True)
class DoubleLiftRow:
    bucket_low: float
    bucket_high: float
    n: int
    actual_over_b: float
    a_over_b: float


@dataclass(frozen=True)
class DoubleLiftResult:
    rows: tuple[DoubleLiftRow, ...]
    empty_buckets: tuple[tuple[float, float], ...]


def double_lift_data(y, scores_a, scores_b, edges=DOUBLE_LIFT_EDGES) -> DoubleLiftResult:
    """Bucketed comparison of two prediction vectors against the responses.

    Observations are grouped by the per-row ratio a/b into half-open
    buckets (low, high]; each bucket reports total response over total b
    and total a over total b.  Empty buckets are omitted from the rows and
    flagged separately.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if not (y.shape == a.shape == b.shape):
        raise MetricError("responses and both score vectors must align")
    if np.any(b <= 0):
        raise MetricError("reference predictions must be strictly positive")
    ratio = a / b
    bounds = [-np.inf, *edges, np.inf]
    rows = []
    empty = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mask = (ratio > lo) & (ratio <= hi)
        if not np.any(mask):
            empty.append((lo, hi))
            continue
        b_sum = float(np.sum(b[mask]))
        rows.append(
            DoubleLiftRow(
                bucket_low=lo,
                bucket_high=hi,
                n=int(np.sum(mask)),
                actual_over_b=float(np.sum(y[mask])) / b_sum,
                a_over_b=float(np.sum(a[mask])) / b_sum,
            )
        )
    return DoubleLiftResult(rows=tuple(rows), empty_buckets=tuple(empty))


def metric_report(y, yhat, pmf_rows=None) -> MetricReport:
    """Bundle deviance, lifts, Gini, and the count-difference table."""
    dev_sum, dev_mean = poisson_deviance(y, yhat)
    one_way, two_way = lifts(y, yhat)
    gini = gini_index(y, yhat)
    diffs = count_diff_table(y, pmf_rows) if pmf_rows is not None else {}
    return MetricReport(
        n=int(np.asarray(y).size),
        deviance_sum=dev_sum,
        deviance_mean=dev_mean,
        one_way_lift=one_way,
        two_way_lift=two_way,
        gini=gini,
        count_diff=diffs,
    )
