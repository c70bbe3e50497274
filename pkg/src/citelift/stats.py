"""Rank-correlation and paired-test helpers for validating judge scores
against an external reference (e.g. human ratings)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy import stats as _scipy_stats


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    ci_low: float
    ci_high: float
    p_value: float

    def to_dict(self) -> dict[str, float]:
        return {
            "rho": self.rho,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
        }


def _check_lengths(xs: Sequence[float], ys: Sequence[float]) -> int:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 3:
        raise ValueError(f"need at least 3 pairs, got {n}")
    return n


def correlation_stats(xs: Sequence[float], ys: Sequence[float]) -> SpearmanResult:
    """Spearman rho (average ranks for ties) with a Fisher-z 95% CI."""
    n = _check_lengths(xs, ys)
    rho, p = _scipy_stats.spearmanr(xs, ys)
    rho = float(rho)
    p = float(p)
    if n > 3 and abs(rho) < 1.0:
        z = math.atanh(rho)
        se = 1.0 / math.sqrt(n - 3)
        lo, hi = math.tanh(z - 1.959963984540054 * se), math.tanh(z + 1.959963984540054 * se)
    else:
        lo = hi = rho
    return SpearmanResult(rho=rho, ci_low=lo, ci_high=hi, p_value=p)


def paired_t(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t test; returns (t statistic, p value)."""
    _check_lengths(xs, ys)
    result = _scipy_stats.ttest_rel(xs, ys)
    return float(result.statistic), float(result.pvalue)
