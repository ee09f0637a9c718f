"""Double-double arithmetic built from error-free transformations.

A double-double stores a value as an unevaluated, non-overlapping sum
hi + lo of two machine doubles (|lo| <= ulp(hi)/2), giving roughly 31
decimal digits.  It keeps the exponent range of a double; extended range is
handled by the callers through explicit power-of-two scale factors, which
combine with double-doubles exactly (``ldexp``).

The building blocks are the classical error-free transformations: two_sum
(Knuth), the Dekker split and two_prod.  ``math.fma`` is not available on
this interpreter, so two_prod uses the split form; it is exact provided
|a|, |b| < 2^996, which every caller in this package guarantees by
normalising operands near unity first.
"""

from __future__ import annotations

import math
from fractions import Fraction

_SPLITTER = 134217729.0  # 2^27 + 1


def two_sum(a: float, b: float) -> tuple[float, float]:
    """Return (s, e) with s = fl(a+b) and s + e = a + b exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def quick_two_sum(a: float, b: float) -> tuple[float, float]:
    """two_sum under the precondition |a| >= |b| (or a == 0)."""
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a: float) -> tuple[float, float]:
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a: float, b: float) -> tuple[float, float]:
    """Return (p, e) with p = fl(a*b) and p + e = a * b exactly."""
    p = a * b
    ahi, alo = _split(a)
    bhi, blo = _split(b)
    e = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return p, e


class DoubleDouble:
    """Immutable hi + lo pair with ~106-bit arithmetic."""

    __slots__ = ("hi", "lo")

    def __init__(self, hi: float, lo: float = 0.0):
        hi = float(hi)
        lo = float(lo)
        s, e = quick_two_sum(hi, lo) if abs(hi) >= abs(lo) else two_sum(hi, lo)
        object.__setattr__(self, "hi", s)
        object.__setattr__(self, "lo", e)

    def __setattr__(self, name, value):
        raise AttributeError("DoubleDouble is immutable")

    @classmethod
    def _raw(cls, hi: float, lo: float) -> "DoubleDouble":
        # internal: (hi, lo) already a normalized non-overlapping pair
        self = object.__new__(cls)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "lo", lo)
        return self

    # construction -----------------------------------------------------------
    @classmethod
    def from_int(cls, n: int) -> "DoubleDouble":
        """Exact for |n| < 2^106; larger integers are rounded."""
        hi = float(n)
        lo = float(n - int(hi))
        return cls(hi, lo)

    @classmethod
    def from_fraction(cls, q: Fraction) -> "DoubleDouble":
        hi = float(q)
        lo = float(q - Fraction(hi))
        return cls(hi, lo)

    ZERO: "DoubleDouble"
    ONE: "DoubleDouble"

    # conversions ------------------------------------------------------------
    def to_float(self) -> float:
        return self.hi + self.lo

    def to_fraction(self) -> Fraction:
        """Exact rational value of the pair."""
        return Fraction(self.hi) + Fraction(self.lo)

    def ldexp(self, k: int) -> "DoubleDouble":
        """Multiply by 2^k; exact unless the result over/underflows."""
        return DoubleDouble(math.ldexp(self.hi, k), math.ldexp(self.lo, k))

    def log(self) -> float:
        """Natural log, accurate to double precision; -inf at zero."""
        if self.hi == 0.0:
            return -math.inf
        if self.hi < 0.0:
            raise ValueError("log of a negative double-double")
        return math.log(self.hi) + math.log1p(self.lo / self.hi)

    # arithmetic ---------------------------------------------------------------
    @staticmethod
    def _coerce(other) -> "DoubleDouble":
        if isinstance(other, DoubleDouble):
            return other
        if isinstance(other, (int, float)):
            return DoubleDouble(float(other))
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        s, e = two_sum(self.hi, o.hi)
        t, f = two_sum(self.lo, o.lo)
        e += t
        s, e = quick_two_sum(s, e)
        e += f
        s, e = quick_two_sum(s, e)
        return DoubleDouble._raw(s, e)

    __radd__ = __add__

    def __neg__(self):
        return DoubleDouble._raw(-self.hi, -self.lo)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.__add__(-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return o.__add__(-self)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        p, e = two_prod(self.hi, o.hi)
        e += self.hi * o.lo + self.lo * o.hi
        p, e = quick_two_sum(p, e)
        return DoubleDouble._raw(p, e)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if o.hi == 0.0:
            raise ZeroDivisionError("double-double division by zero")
        q1 = self.hi / o.hi
        r = self - o * DoubleDouble(q1)
        q2 = r.hi / o.hi
        r = r - o * DoubleDouble(q2)
        q3 = r.hi / o.hi
        s, e = quick_two_sum(q1, q2)
        e += q3
        s, e = quick_two_sum(s, e)
        return DoubleDouble._raw(s, e)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return o.__truediv__(self)

    def sqrt(self) -> "DoubleDouble":
        """Square root by one Karp-Markstein refinement of the double value."""
        if self.hi == 0.0 and self.lo == 0.0:
            return DoubleDouble(0.0)
        if self.hi < 0.0:
            raise ValueError("sqrt of a negative double-double")
        x = 1.0 / math.sqrt(self.hi)
        y = self.hi * x
        resid = self - DoubleDouble(y) * DoubleDouble(y)
        corr = resid.hi * (x * 0.5)
        s, e = quick_two_sum(y, corr)
        return DoubleDouble._raw(s, e)

    def abs(self) -> "DoubleDouble":
        return -self if self.hi < 0.0 else self

    __abs__ = abs

    # comparisons ---------------------------------------------------------------
    def _cmp(self, other) -> int:
        o = self._coerce(other)
        if o is NotImplemented:
            raise TypeError(f"cannot compare DoubleDouble with {type(other).__name__}")
        d = self - o
        if d.hi > 0.0 or (d.hi == 0.0 and d.lo > 0.0):
            return 1
        if d.hi < 0.0 or (d.hi == 0.0 and d.lo < 0.0):
            return -1
        return 0

    def __eq__(self, other):
        try:
            return self._cmp(other) == 0
        except TypeError:
            return NotImplemented

    def __lt__(self, other):
        return self._cmp(other) < 0

    def __le__(self, other):
        return self._cmp(other) <= 0

    def __gt__(self, other):
        return self._cmp(other) > 0

    def __ge__(self, other):
        return self._cmp(other) >= 0

    def __hash__(self):
        return hash((self.hi, self.lo))

    def __repr__(self):
        return f"DoubleDouble({self.hi!r}, {self.lo!r})"


DoubleDouble.ZERO = DoubleDouble(0.0)
DoubleDouble.ONE = DoubleDouble(1.0)
