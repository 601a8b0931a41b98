"""Number formatting shared by the CSV writers.

Floats print as the shortest decimal that round-trips (repr), so full double
precision survives a write/read cycle without padding every value to 17
digits.  An exact zero prints as a bare 0.
"""

from __future__ import annotations


def fmt_float(x: float) -> str:
    x = float(x)
    if x == 0.0:
        return "0"
    return repr(x)
