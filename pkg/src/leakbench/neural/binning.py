"""Five-way quality classes derived from MOS."""

from __future__ import annotations

import math
from enum import IntEnum


class QualityClass(IntEnum):
    VeryPoor = 0
    Poor = 1
    Mediocre = 2
    Good = 3
    VeryGood = 4


# inclusive upper bound of each class; lower bounds are exclusive except 1.0
UPPER_BOUNDS = (1.8, 2.6, 3.4, 4.2, 5.0)


def bin_mos(mos: float) -> QualityClass:
    if not (math.isfinite(mos) and 1.0 <= mos <= 5.0):
        raise ValueError(f"MOS out of range: {mos!r}")
    for cls, upper in zip(QualityClass, UPPER_BOUNDS):
        if mos <= upper:
            return cls
    raise AssertionError("unreachable")
