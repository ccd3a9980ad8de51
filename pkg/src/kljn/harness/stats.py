"""Interval estimates attached to every reported probability."""

from __future__ import annotations

from statsmodels.stats.proportion import proportion_confint

from .._validation import check_count


def wilson_interval(k, n, confidence=0.95):
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    n = check_count(n, "n", minimum=1)
    k = check_count(k, "k", minimum=0)
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    lo, hi = proportion_confint(k, n, alpha=1 - confidence, method="wilson")
    # Clamp round-off so the interval always brackets k/n inside [0, 1].
    return max(0.0, min(float(lo), k / n)), min(1.0, max(float(hi), k / n))
