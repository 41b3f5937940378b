"""Agreement and classification statistics: ICC(2,1), AUC with bootstrap CI, paired t-test."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from srrd.errors import InvalidArgumentError


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    degenerate: bool = False


def icc(x, y) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single measurement."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("icc expects two equal-length 1D rating vectors")
    n = len(x)
    if n < 3:
        raise InvalidArgumentError("icc needs at least 3 paired ratings")
    ratings = np.stack([x, y], axis=1)
    k = 2
    grand = ratings.mean()
    if np.allclose(ratings, grand):
        warnings.warn("icc degenerate: zero total variance")
        return 0.0
    row_means = ratings.mean(axis=1)
    col_means = ratings.mean(axis=0)
    ss_total = ((ratings - grand) ** 2).sum()
    ss_rows = k * ((row_means - grand) ** 2).sum()
    ss_cols = n * ((col_means - grand) ** 2).sum()
    ss_err = ss_total - ss_rows - ss_cols
    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = max(ss_err / ((n - 1) * (k - 1)), 0.0)
    denom = ms_rows + (k - 1) * ms_err + (k / n) * (ms_cols - ms_err)
    if denom == 0:
        warnings.warn("icc degenerate: zero denominator")
        return 0.0
    return float((ms_rows - ms_err) / denom)


def auc_mann_whitney(scores, labels) -> float:
    """Rank-based AUC with midranks for ties; labels are {0, 1}."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgumentError("AUC needs both classes present")
    ranks = sps.rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_with_ci(scores, labels, n_boot: int = 2000, seed: int = 0,
                alpha: float = 0.05) -> tuple[float, float, float]:
    """AUC plus percentile-bootstrap CI over subjects."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    point = auc_mann_whitney(scores, labels)
    rng = np.random.default_rng(seed)
    n = len(scores)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        ls = labels[idx]
        if ls.min() == ls.max():
            continue
        boots.append(auc_mann_whitney(scores[idx], ls))
    boots = np.asarray(boots)
    lo, hi = np.percentile(boots, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return point, float(lo), float(hi)


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test; zero-variance differences are flagged with p = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise InvalidArgumentError("paired t-test expects equal-length vectors of length >= 2")
    diff = a - b
    if np.allclose(diff, diff[0]):
        if diff[0] == 0:
            warnings.warn("paired t-test degenerate: identical samples; p = 1 by convention")
            return TTestResult(t=0.0, p=1.0, degenerate=True)
        warnings.warn("paired t-test degenerate: constant nonzero difference; p = 0 by convention")
        return TTestResult(t=np.inf if diff[0] > 0 else -np.inf, p=0.0, degenerate=True)
    t, p = sps.ttest_rel(a, b)
    return TTestResult(t=float(t), p=float(p))
