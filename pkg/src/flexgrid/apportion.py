"""Largest-remainder (Hamilton) apportionment."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Split ``total`` integer units proportionally to ``weights``.

    Floors of the quotas are handed out first; the leftover units go to the
    largest fractional parts, ties to the lower index.  Quotas are exact
    rationals of the float weights, so equal remainders really tie.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    w = [float(x) for x in weights]
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ValueError("weights must be finite and non-negative")
    if total == 0:
        return [0] * len(w)
    fw = [Fraction(x) for x in w]
    s = sum(fw)
    if s <= 0:
        raise ValueError("weights sum to zero")
    quotas = [x * total / s for x in fw]
    seats = [math.floor(q) for q in quotas]
    left = total - sum(seats)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - seats[i]), i))
    for i in order[:left]:
        seats[i] += 1
    return seats
