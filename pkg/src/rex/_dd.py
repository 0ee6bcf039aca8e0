"""Double-double arithmetic on numpy arrays.

A value is an unevaluated sum ``hi + lo`` of two float64 arrays with
``|lo| <= ulp(hi) / 2``, giving roughly 106 significant bits.  Only the few
operations needed by the reversible steps are provided: scaling by a float,
division by a float and addition.  The error-free transformations are the
classical Knuth two-sum and Dekker product.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]
DD = tuple[Array, Array]

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a: Array, b: Array) -> DD:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a: Array, b: Array) -> DD:
    s = a + b
    return s, b - (s - a)


def _split(a: Array | float) -> tuple[Array, Array]:
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a: Array | float, b: Array) -> DD:
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def make(hi: Array, lo: Array | None = None) -> DD:
    hi = np.asarray(hi, dtype=np.float64)
    if lo is None:
        return hi.copy(), np.zeros_like(hi)
    return _quick_two_sum(hi, np.asarray(lo, dtype=np.float64))


def scale(c: float, x: DD) -> DD:
    p, e = _two_prod(c, x[0])
    return _quick_two_sum(p, e + c * x[1])


def add(x: DD, y: DD) -> DD:
    s, e = _two_sum(x[0], y[0])
    t, f = _two_sum(x[1], y[1])
    e = e + t
    s, e = _quick_two_sum(s, e)
    return _quick_two_sum(s, e + f)


def divide(x: DD, c: float) -> DD:
    q1 = x[0] / c
    p, e = _two_prod(q1, np.full_like(q1, c))
    r_hi, r_lo = _two_sum(x[0], -p)
    r_lo = r_lo - e + x[1]
    q2 = (r_hi + r_lo) / c
    return _quick_two_sum(q1, q2)


def axpy(c: float, x: DD, y: DD) -> DD:
    """``c * x + y``."""
    return add(scale(c, x), y)
