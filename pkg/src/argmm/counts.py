"""Parameter counts of the mixture models (kept free of heavy imports for the CLI)."""

from __future__ import annotations

from collections.abc import Sequence


def parameter_count_ar_gmm(orders: Sequence[int]) -> int:
    """``sum_k 2 w_k + K + (K - 1)``: complex AR coefficients, one variance each, free weights."""
    K = len(orders)
    return sum(2 * int(o) for o in orders) + K + (K - 1)


def parameter_count_full_gmm(K: int, M: int) -> int:
    """``K M^2 + (K - 1)`` for zero-mean full-covariance complex GMMs."""
    return K * M * M + (K - 1)
