"""Saturating fixed-point arithmetic.

Values live on the grid F_p = {c * k * 2**-p : c in {-1,+1}, 0 <= k <= 2**(2p)-1},
i.e. one sign bit, p bits before the binary point and p after.  Every operation
rounds its exact rational result to the nearest grid point (ties away from
zero) and clamps to [-B_p, B_p] where B_p = 2**p - 2**-p.  Iterated addition
folds left to right, rounding after each step, so it is not associative.

Internally a value is one exact integer ``scaled`` with value = scaled / 2**p.
No machine floating point is used anywhere, including in :func:`exp`, which
refines exact rational Taylor bounds until the correctly rounded result is
determined.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

_DECIMAL_RE = re.compile(r"[+-]?\d+(\.\d+)?$")


class PrecisionMismatch(ValueError):
    """Raised when operands of a binary operation carry different precisions."""


class FixedPointParseError(ValueError):
    """Raised for malformed or off-grid decimal input."""


class FixedPointDivisionError(ZeroDivisionError):
    """Division by exact zero.  Never a saturated value; always a hard error."""


def max_scaled(p: int) -> int:
    """Largest magnitude of the scaled integer: B_p * 2**p = 2**(2p) - 1."""
    return (1 << (2 * p)) - 1


def ulp(p: int) -> Fraction:
    return Fraction(1, 1 << p)


@dataclass(frozen=True, slots=True)
class Fp:
    """One fixed-point number: value = scaled * 2**-p.

    ``scaled`` is a plain signed integer, so negative zero cannot exist and
    equality is value equality.  Instances are immutable.
    """

    scaled: int
    p: int

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"precision must be >= 1, got {self.p}")
        if abs(self.scaled) > max_scaled(self.p):
            raise ValueError(
                f"scaled magnitude {self.scaled} out of range for p={self.p}"
            )

    @property
    def sign(self) -> int:
        return -1 if self.scaled < 0 else 1

    @property
    def k(self) -> int:
        return abs(self.scaled)

    def value(self) -> Fraction:
        return Fraction(self.scaled, 1 << self.p)

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"Fp({render(self)}, p={self.p})"

    # Comparisons are only defined at equal precision; cross-precision
    # comparison is almost always a bug in calling code.
    def _cmp_scaled(self, other: "Fp") -> int:
        if not isinstance(other, Fp):
            raise TypeError(f"cannot compare Fp with {type(other).__name__}")
        if other.p != self.p:
            raise PrecisionMismatch(f"p={self.p} vs p={other.p}")
        return other.scaled

    def __lt__(self, other: "Fp") -> bool:
        return self.scaled < self._cmp_scaled(other)

    def __le__(self, other: "Fp") -> bool:
        return self.scaled <= self._cmp_scaled(other)

    def __gt__(self, other: "Fp") -> bool:
        return self.scaled > self._cmp_scaled(other)

    def __ge__(self, other: "Fp") -> bool:
        return self.scaled >= self._cmp_scaled(other)

    def __add__(self, other: "Fp") -> "Fp":
        return add(self, other)

    def __sub__(self, other: "Fp") -> "Fp":
        return sub(self, other)

    def __neg__(self) -> "Fp":
        return neg(self)

    def __mul__(self, other: "Fp") -> "Fp":
        return mul(self, other)

    def __truediv__(self, other: "Fp") -> "Fp":
        return div(self, other)


def from_scaled(scaled: int, p: int) -> Fp:
    return Fp(scaled, p)


def from_int(n: int, p: int) -> Fp:
    """Embed a small integer exactly (clamping if out of range)."""
    return Fp(_clamp(n << p, max_scaled(p)), p)


def zero(p: int) -> Fp:
    return Fp(0, p)


def one(p: int) -> Fp:
    return from_int(1, p)


def bmax(p: int) -> Fp:
    """B_p = 2**p - 2**-p, the saturation bound."""
    return Fp(max_scaled(p), p)


# ---------------------------------------------------------------------------
# Scaled-integer core.  All public operations delegate here; the VM uses these
# directly on raw ints for speed.  Semantics are identical by construction.
# ---------------------------------------------------------------------------


def _clamp(k: int, kmax: int) -> int:
    if k > kmax:
        return kmax
    if k < -kmax:
        return -kmax
    return k


def _round_quot_half_away(num: int, den: int) -> int:
    """Round num/den (den > 0) to the nearest integer, ties away from zero."""
    if num >= 0:
        q, r = divmod(num, den)
        return q + (1 if 2 * r >= den else 0)
    q, r = divmod(-num, den)
    return -(q + (1 if 2 * r >= den else 0))


def round_scaled(x: Fraction | int, p: int) -> int:
    """Scaled integer of [x]_p: nearest grid point, ties away, then clamp."""
    if isinstance(x, int):
        return _clamp(x << p, max_scaled(p))
    y = x * (1 << p)
    return _clamp(_round_quot_half_away(y.numerator, y.denominator), max_scaled(p))


def sadd(a: int, b: int, kmax: int) -> int:
    # grids align, so in-range sums are exact
    return _clamp(a + b, kmax)


def smul(a: int, b: int, p: int, kmax: int) -> int:
    # exact product has denominator 2**(2p); rescale by 2**p and round
    return _clamp(_round_quot_half_away(a * b, 1 << p), kmax)


def sdiv(a: int, b: int, p: int, kmax: int) -> int:
    if b == 0:
        raise FixedPointDivisionError("division by zero")
    num = a << p
    if b < 0:
        num, b = -num, -b
    return _clamp(_round_quot_half_away(num, b), kmax)


def sdot(xs: Sequence[int], ys: Sequence[int], p: int, kmax: int) -> int:
    acc = 0
    for a, b in zip(xs, ys):
        acc = _clamp(acc + _round_quot_half_away(a * b, 1 << p), kmax)
    return acc


_EXP_CACHE: dict[tuple[int, int], int] = {}

# Rational upper bound on ln 2, used only for cheap saturation cutoffs.
_LN2_HI = Fraction(693148, 1000000)


def _exp_pos_bounds(y: Fraction, terms: int) -> tuple[Fraction, Fraction]:
    """Exact bounds lo <= e**y <= hi for y >= 0 via the Taylor series."""
    s = Fraction(1)
    term = Fraction(1)
    for i in range(1, terms + 1):
        term = term * y / i
        s += term
    nxt = term * y / (terms + 1)
    ratio = y / (terms + 2)
    if ratio >= 1:
        raise ValueError("too few terms for remainder bound")
    rem = nxt / (1 - ratio)
    return s, s + rem


def sexp(a: int, p: int) -> int:
    """Scaled integer of [e**x]_p for x = a * 2**-p, correctly rounded.

    Correct rounding is decidable: e**x is irrational for nonzero rational x,
    so it can never land exactly on a rounding midpoint; x = 0 is exact.
    """
    key = (p, a)
    hit = _EXP_CACHE.get(key)
    if hit is not None:
        return hit
    kmax = max_scaled(p)
    if a == 0:
        result = 1 << p
    else:
        x = Fraction(a, 1 << p)
        if x >= 2 * p * _LN2_HI:
            # e**x > 2**(2p) > B_p
            result = kmax
        elif x <= -(p + 1) * _LN2_HI:
            # e**x < 2**-(p+1) = ulp/2, rounds to zero
            result = 0
        else:
            y = abs(x)
            terms = int(3 * y) + 8
            while True:
                lo, hi = _exp_pos_bounds(y, terms)
                if x < 0:
                    lo, hi = 1 / hi, 1 / lo
                k_lo = round_scaled(lo, p)
                k_hi = round_scaled(hi, p)
                if k_lo == k_hi:
                    result = k_lo
                    break
                terms *= 2
    _EXP_CACHE[key] = result
    return result


# ---------------------------------------------------------------------------
# Public operations on Fp values.
# ---------------------------------------------------------------------------


def _check_pair(a: Fp, b: Fp) -> None:
    if a.p != b.p:
        raise PrecisionMismatch(f"p={a.p} vs p={b.p}")


def round_to(p: int, x: Fraction | int) -> Fp:
    """[x]_p: clamp to [-B_p, B_p] and round to the nearest grid point."""
    return Fp(round_scaled(x, p), p)


def add(a: Fp, b: Fp) -> Fp:
    _check_pair(a, b)
    return Fp(sadd(a.scaled, b.scaled, max_scaled(a.p)), a.p)


def sub(a: Fp, b: Fp) -> Fp:
    _check_pair(a, b)
    return Fp(sadd(a.scaled, -b.scaled, max_scaled(a.p)), a.p)


def neg(a: Fp) -> Fp:
    return Fp(-a.scaled, a.p)


def mul(a: Fp, b: Fp) -> Fp:
    _check_pair(a, b)
    return Fp(smul(a.scaled, b.scaled, a.p, max_scaled(a.p)), a.p)


def div(a: Fp, b: Fp) -> Fp:
    _check_pair(a, b)
    return Fp(sdiv(a.scaled, b.scaled, a.p, max_scaled(a.p)), a.p)


def relu(a: Fp) -> Fp:
    return a if a.scaled > 0 else Fp(0, a.p)


def exp(a: Fp) -> Fp:
    return Fp(sexp(a.scaled, a.p), a.p)


def iterated_sum(xs: Iterable[Fp], p: int | None = None) -> Fp:
    """Left-to-right saturating sum; the empty sum is 0 (requires p then)."""
    acc = None
    kmax = 0
    for x in xs:
        if acc is None:
            if p is not None and x.p != p:
                raise PrecisionMismatch(f"p={p} vs p={x.p}")
            acc, kmax = x.scaled, max_scaled(x.p)
            p = x.p
        else:
            if x.p != p:
                raise PrecisionMismatch(f"p={p} vs p={x.p}")
            acc = sadd(acc, x.scaled, kmax)
    if acc is None:
        if p is None:
            raise ValueError("empty sum needs an explicit precision")
        return Fp(0, p)
    return Fp(acc, p)


def dot(xs: Sequence[Fp], ys: Sequence[Fp]) -> Fp:
    """Termwise rounded products accumulated left to right."""
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if not xs:
        raise ValueError("dot of empty sequences has no precision")
    p = xs[0].p
    for v in xs:
        if v.p != p:
            raise PrecisionMismatch(f"p={p} vs p={v.p}")
    for v in ys:
        if v.p != p:
            raise PrecisionMismatch(f"p={p} vs p={v.p}")
    return Fp(sdot([v.scaled for v in xs], [v.scaled for v in ys], p, max_scaled(p)), p)


# ---------------------------------------------------------------------------
# Exact decimal text form.  k / 2**p always has a finite decimal expansion.
# ---------------------------------------------------------------------------


def render(a: Fp) -> str:
    k = abs(a.scaled)
    intpart, frac = divmod(k, 1 << a.p)
    out = str(intpart)
    if frac:
        digits = str(frac * 5**a.p).rjust(a.p, "0").rstrip("0")
        out = f"{out}.{digits}"
    return f"-{out}" if a.scaled < 0 else out


def parse(text: str, p: int, allow_round: bool = False) -> Fp:
    """Parse an exact decimal.  Off-grid values are an error unless rounding
    was explicitly requested."""
    s = text.strip()
    if not _DECIMAL_RE.match(s):
        raise FixedPointParseError(f"not a decimal literal: {text!r}")
    x = Fraction(s)
    scaled = x * (1 << p)
    if scaled.denominator != 1 or abs(scaled.numerator) > max_scaled(p):
        if not allow_round:
            raise FixedPointParseError(
                f"{text!r} is not representable at p={p} (use rounding to accept)"
            )
        return round_to(p, x)
    return Fp(scaled.numerator, p)
