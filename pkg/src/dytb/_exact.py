"""Exact rational arithmetic helpers shared across the package.

gmpy2.mpq is used for rational values when available (it is much faster
than fractions.Fraction); everything produced here is a numbers.Rational
and mixes freely with Fraction.  High-precision floats are mpmath.mpf
values produced under an explicit working precision, never under global
state mutated by us.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd
from numbers import Rational
from typing import Optional

import mpmath

try:
    from gmpy2 import mpq as _mpq
    from gmpy2 import iroot as _iroot
    from gmpy2 import mpz as _mpz

    HAVE_GMPY2 = True
except ImportError:  # pragma: no cover - gmpy2 is normally installed
    _mpq = None
    HAVE_GMPY2 = False

DEFAULT_PRECISION = 128


def rat(a, b=None) -> Rational:
    """Build a rational; gmpy2-backed when available."""
    if b is None:
        if isinstance(a, str):
            return _mpq(a) if HAVE_GMPY2 else Fraction(a)
        if HAVE_GMPY2:
            if isinstance(a, float):
                return _mpq(Fraction(a))
            if isinstance(a, (int, Fraction)):
                try:
                    return _mpq(a)
                except SystemError:
                    pass
            return _mpq(int(a.numerator), int(a.denominator))
        return Fraction(a)
    if HAVE_GMPY2:
        return _mpq(a, b)
    return Fraction(a, b)


ZERO = rat(0)
ONE = rat(1)


def as_fraction(x: Rational) -> Fraction:
    return Fraction(x.numerator, x.denominator)


def rat_str(x: Rational) -> str:
    """Canonical string form: "num" or "num/den" in lowest terms."""
    f = Fraction(x.numerator, x.denominator)
    if f.denominator == 1:
        return str(f.numerator)
    return f"{f.numerator}/{f.denominator}"


def rat_from_str(s: str) -> Rational:
    return rat(Fraction(s))


def _int_nth_root(n: int, k: int) -> Optional[int]:
    """Exact k-th root of the nonnegative integer n, or None."""
    if n < 0:
        return None
    if n in (0, 1) or k == 1:
        return n
    if HAVE_GMPY2:
        root, exact = _iroot(_mpz(n), k)
        return int(root) if exact else None
    lo, hi = 0, 1 << ((n.bit_length() + k - 1) // k + 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**k < n:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo**k == n else None


def rat_pow(x: Rational, e: Rational) -> Optional[Rational]:
    """Exact x**e for x >= 0 and rational e, or None when irrational."""
    if x < 0:
        raise ValueError("rat_pow requires a nonnegative base")
    a, b = e.numerator, e.denominator
    if x == 0:
        if e <= 0:
            raise ZeroDivisionError("0 ** nonpositive exponent")
        return ZERO
    num, den = x.numerator, x.denominator
    if a < 0:
        num, den, a = den, num, -a
    if b == 1:
        return rat(num**a, den**a)
    g = gcd(a, b)
    a, b = a // g, b // g
    rn = _int_nth_root(num, b)
    if rn is None:
        return None
    rd = _int_nth_root(den, b)
    if rd is None:
        return None
    return rat(rn**a, rd**a)


def rat_sqrt(x: Rational) -> Optional[Rational]:
    return rat_pow(x, Fraction(1, 2))


def mpf_from_rat(x: Rational, prec: int = DEFAULT_PRECISION) -> mpmath.mpf:
    with mpmath.workprec(prec):
        return mpmath.mpf(int(x.numerator)) / mpmath.mpf(int(x.denominator))


def rat_from_mpf(x) -> Rational:
    """Exact rational value of a binary float (mpf or float).

    Reads the mantissa/exponent pair directly; constructing a fresh mpf
    would re-round to the ambient precision.
    """
    if isinstance(x, float):
        return rat(Fraction(x))
    raw = getattr(x, "_mpf_", None)
    if raw is None:
        raw = mpmath.mpf(x)._mpf_
    sign, man, exp, _ = raw
    if man == 0:
        return ZERO
    value = rat(int(man)) * (rat(2) ** exp if exp >= 0 else rat(1, 2 ** -exp))
    return -value if sign else value


def mpf_pow_rat(x: Rational, e: Rational, prec: int = DEFAULT_PRECISION) -> mpmath.mpf:
    """High-precision x**e for x >= 0."""
    if x < 0:
        raise ValueError("negative base")
    if x == 0:
        return mpmath.mpf(0)
    with mpmath.workprec(prec + 16):
        base = mpf_from_rat(x, prec + 16)
        expo = mpf_from_rat(e, prec + 16)
        return mpmath.power(base, expo)


def rat_pow_lower(x: Rational, e: Rational, prec: int = DEFAULT_PRECISION) -> Rational:
    """A rational lower bound of x**e (exact when the power is rational).

    Conservative rounding: the returned value never exceeds x**e, which is
    the safe direction for stopping thresholds and for the epsilon formula.
    """
    exact = rat_pow(x, e)
    if exact is not None:
        return exact
    approx = mpf_pow_rat(x, e, prec)
    with mpmath.workprec(prec + 16):
        lowered = approx * (1 - mpmath.mpf(2) ** (-(prec - 8)))
    return rat_from_mpf(lowered)


class PowProduct:
    """Exact product  coeff * prod(base_i ** exp_i)  with rational pieces.

    Supports multiplication and certified comparison.  Comparisons clear
    the exponent denominators and reduce to an exact rational comparison,
    so they are never subject to rounding.  Bases must be positive.
    """

    __slots__ = ("coeff", "factors")

    def __init__(self, coeff: Rational = ONE, factors=()):
        self.coeff = rat(coeff)
        self.factors = []
        for base, exp in factors:
            self._push(base, exp)

    def _push(self, base: Rational, exp) -> None:
        exp = Fraction(exp)
        if exp == 0 or base == 1:
            return
        if base <= 0:
            raise ValueError("PowProduct bases must be positive")
        if exp.denominator == 1:
            self.coeff *= rat(base) ** exp.numerator
            return
        self.factors.append((rat(base), exp))

    def times(self, other: "PowProduct") -> "PowProduct":
        out = PowProduct(self.coeff * other.coeff)
        for b, e in self.factors:
            out._push(b, e)
        for b, e in other.factors:
            out._push(b, e)
        return out

    def scaled(self, c: Rational) -> "PowProduct":
        out = PowProduct(self.coeff * rat(c))
        for b, e in self.factors:
            out._push(b, e)
        return out

    def is_zero(self) -> bool:
        return self.coeff == 0

    def compare(self, other: "PowProduct") -> int:
        """-1, 0, or 1 comparing self with other; exact."""
        if self.coeff < 0 or other.coeff < 0:
            raise ValueError("comparisons are for nonnegative products only")
        if self.coeff == 0 or other.coeff == 0:
            lhs = self.coeff != 0
            rhs = other.coeff != 0
            return (lhs > rhs) - (lhs < rhs)
        denom = 1
        for _, e in self.factors:
            denom = denom * e.denominator // gcd(denom, e.denominator)
        for _, e in other.factors:
            denom = denom * e.denominator // gcd(denom, e.denominator)
        lhs = as_fraction(self.coeff) ** denom
        for b, e in self.factors:
            lhs *= as_fraction(b) ** int(e * denom)
        rhs = as_fraction(other.coeff) ** denom
        for b, e in other.factors:
            rhs *= as_fraction(b) ** int(e * denom)
        return (lhs > rhs) - (lhs < rhs)

    def __le__(self, other):
        return self.compare(other) <= 0

    def __lt__(self, other):
        return self.compare(other) < 0

    def __ge__(self, other):
        return self.compare(other) >= 0

    def __gt__(self, other):
        return self.compare(other) > 0

    def to_mpf(self, prec: int = DEFAULT_PRECISION) -> mpmath.mpf:
        with mpmath.workprec(prec + 16):
            out = mpf_from_rat(self.coeff, prec + 16)
            for b, e in self.factors:
                out *= mpf_pow_rat(b, e, prec + 16)
            return out

    def __repr__(self):  # pragma: no cover - debugging aid
        parts = [rat_str(self.coeff)]
        parts += [f"({rat_str(b)})^{e}" for b, e in self.factors]
        return " * ".join(parts)


def pow_product(coeff: Rational = ONE, *factors) -> PowProduct:
    return PowProduct(coeff, factors)
