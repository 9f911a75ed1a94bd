"""Real-number backends for the tracker: native floats or 64-bit fixed point.

All tracker math is written against a small backend protocol (``FloatBackend``
/ ``FixedBackend``) so the same code runs in double precision or in
deterministic Q-format fixed point.  Two Q formats are supported: Q40.23
(default) and Q47.16.  Fixed-point values are immutable and every operation
detects overflow instead of wrapping.

Rounding rules, fixed so runs are bit-reproducible:

* float -> fixed conversion rounds to nearest, ties away from zero;
* add/sub are exact on the raw representation;
* mul/div go through a double-width intermediate and truncate toward zero;
* ``round_to_int`` rounds to nearest, ties away from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import isqrt
from typing import ClassVar, Union


class MathOverflowError(OverflowError):
    """A fixed-point result fell outside the representable range."""


class MathDomainError(ValueError):
    """An operation was called outside its mathematical domain."""


@dataclass(frozen=True)
class QFormat:
    """Bit layout of a 64-bit signed fixed-point word (sign bit excluded)."""

    integer_bits: int
    fraction_bits: int

    def __post_init__(self):
        if 1 + self.integer_bits + self.fraction_bits != 64:
            raise ValueError(
                f"Q{self.integer_bits}.{self.fraction_bits}: sign + integer "
                "+ fraction bits must total 64"
            )

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.fraction_bits

    def __str__(self) -> str:
        return f"Q{self.integer_bits}.{self.fraction_bits}"


Q40_23 = QFormat(integer_bits=40, fraction_bits=23)
Q47_16 = QFormat(integer_bits=47, fraction_bits=16)


# ---------------------------------------------------------------------------
# Integer helpers (arbitrary-precision Python ints stand in for the
# double-width intermediates).

def _trunc_shift(n: int, shift: int) -> int:
    """n >> shift, truncating toward zero rather than toward -inf."""
    if n >= 0:
        return n >> shift
    return -((-n) >> shift)


def _trunc_div(a: int, b: int) -> int:
    """a / b truncated toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _round_half_away(n: int, shift: int) -> int:
    """n >> shift rounded to nearest, ties away from zero."""
    half = 1 << (shift - 1)
    if n >= 0:
        return (n + half) >> shift
    return -((-n + half) >> shift)


def _round_div(a: int, b: int) -> int:
    """a / b rounded to nearest, ties away from zero (b > 0)."""
    if a >= 0:
        return (2 * a + b) // (2 * b)
    return -((2 * (-a) + b) // (2 * b))


# ---------------------------------------------------------------------------
# Trigonometric kernels.
#
# Polynomials are evaluated in a 30-fraction-bit integer format regardless of
# the target Q format, then rounded once at the end.  Evaluating directly in
# Q47.16 would accumulate ~5 ulp of truncation error through the Horner chain
# and miss the 2^-16 accuracy contract; the guard bits make the final rounding
# the dominant error.

_G = 30
_ONE_G = 1 << _G
_PI_G = int(round(math.pi * _ONE_G))
_HALF_PI_G = int(round(0.5 * math.pi * _ONE_G))
_QUARTER_PI_G = int(round(0.25 * math.pi * _ONE_G))
_TAN_PI_8_G = int(round(math.tan(0.125 * math.pi) * _ONE_G))

_C3 = int(round(_ONE_G / 3))
_C5 = int(round(_ONE_G / 5))
_C7 = int(round(_ONE_G / 7))
_C9 = int(round(_ONE_G / 9))
_C11 = int(round(_ONE_G / 11))
_C13 = int(round(_ONE_G / 13))
_C15 = int(round(_ONE_G / 15))


def _mul_g(a: int, b: int) -> int:
    return _trunc_shift(a * b, _G)


def _sin_poly(x: int) -> int:
    # sin(x) = x(1 - u/6(1 - u/20(1 - u/42(1 - u/72)))), u = x^2, |x| <= pi/4
    u = _mul_g(x, x)
    w = _ONE_G - u // 72
    w = _ONE_G - _mul_g(u, w) // 42
    w = _ONE_G - _mul_g(u, w) // 20
    w = _ONE_G - _mul_g(u, w) // 6
    return _mul_g(x, w)


def _cos_poly(x: int) -> int:
    # cos(x) = 1 - u/2(1 - u/12(1 - u/30(1 - u/56))), u = x^2, |x| <= pi/4
    u = _mul_g(x, x)
    w = _ONE_G - u // 56
    w = _ONE_G - _mul_g(u, w) // 30
    w = _ONE_G - _mul_g(u, w) // 12
    return _ONE_G - _mul_g(u, w) // 2


def _reduce_quadrant(x: int) -> tuple[int, int]:
    """Return (r, q) with x = r + q * pi/2, |r| <= pi/4, q in 0..3."""
    k = _round_div(x, _HALF_PI_G)
    return x - k * _HALF_PI_G, k % 4


def _sin_core(x: int) -> int:
    r, q = _reduce_quadrant(x)
    if q == 0:
        return _sin_poly(r)
    if q == 1:
        return _cos_poly(r)
    if q == 2:
        return -_sin_poly(r)
    return -_cos_poly(r)


def _cos_core(x: int) -> int:
    r, q = _reduce_quadrant(x)
    if q == 0:
        return _cos_poly(r)
    if q == 1:
        return -_sin_poly(r)
    if q == 2:
        return -_cos_poly(r)
    return _sin_poly(r)


def _atan_poly(t: int) -> int:
    # atan(t) = t(1 - u(1/3 - u(1/5 - ... - u/15))), u = t^2, |t| <= tan(pi/8)
    u = _mul_g(t, t)
    w = _C15
    for c in (_C13, _C11, _C9, _C7, _C5, _C3):
        w = c - _mul_g(u, w)
    return _mul_g(t, _ONE_G - _mul_g(u, w))


def _atan_unit(t: int) -> int:
    """atan of t in [0, 1] (G-scaled)."""
    if t > _TAN_PI_8_G:
        # atan(t) = pi/4 + atan((t - 1) / (t + 1)), folds into [-tan(pi/8), 0]
        return _QUARTER_PI_G + _atan_poly(_trunc_div((t - _ONE_G) << _G, t + _ONE_G))
    return _atan_poly(t)


def _atan2_core(y: int, x: int) -> int:
    if x == 0 and y == 0:
        raise MathDomainError("atan2(0, 0) is undefined")
    if x == 0:
        return _HALF_PI_G if y > 0 else -_HALF_PI_G
    if y == 0:
        return 0 if x > 0 else _PI_G
    ax, ay = abs(x), abs(y)
    if ay <= ax:
        base = _atan_unit(_trunc_div(ay << _G, ax))
    else:
        base = _HALF_PI_G - _atan_unit(_trunc_div(ax << _G, ay))
    if x < 0:
        base = _PI_G - base
    return base if y > 0 else -base


def _sin_raw(raw: int, frac_bits: int) -> int:
    return _round_half_away(_sin_core(raw << (_G - frac_bits)), _G - frac_bits)


def _cos_raw(raw: int, frac_bits: int) -> int:
    return _round_half_away(_cos_core(raw << (_G - frac_bits)), _G - frac_bits)


def _atan2_raw(y_raw: int, x_raw: int, frac_bits: int) -> int:
    shift = _G - frac_bits
    return _round_half_away(_atan2_core(y_raw << shift, x_raw << shift), shift)


# ---------------------------------------------------------------------------
# Fixed-point scalar.

class FixedPoint:
    """Immutable 64-bit signed fixed-point number.

    Use the concrete per-format subclasses (see :func:`fixed_type`); values of
    different formats never mix in one expression.  Plain ints mix freely and
    are converted exactly; floats are rejected so precision cannot leak in
    silently.
    """

    __slots__ = ("raw",)

    FORMAT: ClassVar[QFormat]
    FRAC_BITS: ClassVar[int]
    _RAW_MIN: ClassVar[int]
    _RAW_MAX: ClassVar[int]

    def __init__(self, raw: int):
        if not self._RAW_MIN <= raw <= self._RAW_MAX:
            raise MathOverflowError(f"raw value {raw} outside {self.FORMAT} range")
        self.raw = raw

    # -- construction -------------------------------------------------------

    @classmethod
    def from_float(cls, value: float) -> "FixedPoint":
        if isinstance(value, int):
            return cls.from_int(value)
        if not math.isfinite(value):
            raise MathDomainError(f"cannot represent {value!r} in {cls.FORMAT}")
        scaled = value * (1 << cls.FRAC_BITS)  # exact: power-of-two scale
        if abs(scaled) >= 2.0 ** 52:
            raw = int(scaled)
        elif scaled >= 0.0:
            raw = math.floor(scaled + 0.5)
        else:
            raw = math.ceil(scaled - 0.5)
        return cls(raw)

    @classmethod
    def from_int(cls, value: int) -> "FixedPoint":
        return cls(value << cls.FRAC_BITS)

    # -- conversion ---------------------------------------------------------

    def to_float(self) -> float:
        return self.raw / (1 << self.FRAC_BITS)

    def round_to_int(self) -> int:
        """Nearest integer, ties away from zero."""
        return _round_half_away(self.raw, self.FRAC_BITS)

    def floor_to_int(self) -> int:
        return self.raw >> self.FRAC_BITS

    # -- arithmetic ---------------------------------------------------------

    def _operand_raw(self, other):
        """Raw value of a compatible operand, range-checked; None if unsupported."""
        if type(other) is type(self):
            return other.raw
        if isinstance(other, int):
            raw = other << self.FRAC_BITS
            if not self._RAW_MIN <= raw <= self._RAW_MAX:
                raise MathOverflowError(f"int operand {other} outside {self.FORMAT} range")
            return raw
        return None

    def __add__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        return type(self)(self.raw + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        return type(self)(self.raw - o)

    def __rsub__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        return type(self)(o - self.raw)

    def __mul__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        return type(self)(_trunc_shift(self.raw * o, self.FRAC_BITS))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        if o == 0:
            raise ZeroDivisionError("fixed-point division by zero")
        return type(self)(_trunc_div(self.raw << self.FRAC_BITS, o))

    def __rtruediv__(self, other):
        o = self._operand_raw(other)
        if o is None:
            return NotImplemented
        if self.raw == 0:
            raise ZeroDivisionError("fixed-point division by zero")
        return type(self)(_trunc_div(o << self.FRAC_BITS, self.raw))

    def __neg__(self):
        return type(self)(-self.raw)

    def __pos__(self):
        return self

    def __abs__(self):
        return type(self)(abs(self.raw))

    # -- comparisons --------------------------------------------------------

    def _cmp_raw(self, other):
        """Raw value for comparison; ints compare exactly, no range limit."""
        if type(other) is type(self):
            return other.raw
        if isinstance(other, int):
            return other << self.FRAC_BITS
        return None

    def __eq__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw == o

    def __ne__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw != o

    def __lt__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw < o

    def __le__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw <= o

    def __gt__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw > o

    def __ge__(self, other):
        o = self._cmp_raw(other)
        return NotImplemented if o is None else self.raw >= o

    def __hash__(self):
        if self.raw & ((1 << self.FRAC_BITS) - 1) == 0:
            return hash(self.raw >> self.FRAC_BITS)
        from fractions import Fraction

        return hash(Fraction(self.raw, 1 << self.FRAC_BITS))

    def __bool__(self):
        return self.raw != 0

    # -- elementary functions -----------------------------------------------

    def sqrt(self) -> "FixedPoint":
        """Square root, error within 2 ulp; exact for perfect squares."""
        if self.raw < 0:
            raise MathDomainError("sqrt of negative fixed-point value")
        return type(self)(isqrt(self.raw << self.FRAC_BITS))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_float()!r})"


def _make_fixed_class(fmt: QFormat) -> type[FixedPoint]:
    name = f"FixedQ{fmt.integer_bits}_{fmt.fraction_bits}"
    return type(
        name,
        (FixedPoint,),
        {
            "__slots__": (),
            "FORMAT": fmt,
            "FRAC_BITS": fmt.fraction_bits,
            "_RAW_MIN": -(1 << 63),
            "_RAW_MAX": (1 << 63) - 1,
        },
    )


FixedQ40_23 = _make_fixed_class(Q40_23)
FixedQ47_16 = _make_fixed_class(Q47_16)

_FIXED_TYPES = {Q40_23: FixedQ40_23, Q47_16: FixedQ47_16}


def fixed_type(fmt: QFormat) -> type[FixedPoint]:
    """Concrete FixedPoint subclass for one of the two supported formats."""
    try:
        return _FIXED_TYPES[fmt]
    except KeyError:
        raise ValueError(f"unsupported fixed-point format {fmt}") from None


Scalar = Union[float, FixedPoint]


# ---------------------------------------------------------------------------
# Backends.

class FloatBackend:
    """Native double-precision arithmetic."""

    name = "float"
    is_fixed = False
    resolution = 2.0 ** -52

    pi = math.pi
    two_pi = 2.0 * math.pi
    half_pi = 0.5 * math.pi
    quarter_pi = 0.25 * math.pi
    zero = 0.0
    one = 1.0

    @staticmethod
    def from_float(value: float) -> float:
        return float(value)

    @staticmethod
    def from_int(value: int) -> float:
        return float(value)

    @staticmethod
    def to_float(value: float) -> float:
        return value

    @staticmethod
    def sqrt(value: float) -> float:
        if value < 0.0:
            raise MathDomainError("sqrt of negative value")
        return math.sqrt(value)

    @staticmethod
    def sin(value: float) -> float:
        return math.sin(value)

    @staticmethod
    def cos(value: float) -> float:
        return math.cos(value)

    @staticmethod
    def atan2(y: float, x: float) -> float:
        if x == 0.0 and y == 0.0:
            raise MathDomainError("atan2(0, 0) is undefined")
        return math.atan2(y, x)

    @staticmethod
    def round_to_int(value: float) -> int:
        if abs(value) >= 2.0 ** 52:
            return int(value)
        if value >= 0.0:
            return math.floor(value + 0.5)
        return math.ceil(value - 0.5)

    @staticmethod
    def floor_to_int(value: float) -> int:
        return math.floor(value)

    def __repr__(self):
        return "FloatBackend()"


class FixedBackend:
    """Deterministic fixed-point arithmetic in a given Q format."""

    is_fixed = True

    def __init__(self, fmt: QFormat):
        self.format = fmt
        self.scalar_type = fixed_type(fmt)
        self.name = f"q{fmt.integer_bits}_{fmt.fraction_bits}"
        self.resolution = fmt.resolution
        cls = self.scalar_type
        self.pi = cls.from_float(math.pi)
        self.two_pi = cls.from_float(2.0 * math.pi)
        self.half_pi = cls.from_float(0.5 * math.pi)
        self.quarter_pi = cls.from_float(0.25 * math.pi)
        self.zero = cls(0)
        self.one = cls.from_int(1)

    def from_float(self, value: float) -> FixedPoint:
        return self.scalar_type.from_float(value)

    def from_int(self, value: int) -> FixedPoint:
        return self.scalar_type.from_int(value)

    @staticmethod
    def to_float(value: FixedPoint) -> float:
        return value.to_float()

    @staticmethod
    def sqrt(value: FixedPoint) -> FixedPoint:
        return value.sqrt()

    def sin(self, value: FixedPoint) -> FixedPoint:
        return self.scalar_type(_sin_raw(value.raw, value.FRAC_BITS))

    def cos(self, value: FixedPoint) -> FixedPoint:
        return self.scalar_type(_cos_raw(value.raw, value.FRAC_BITS))

    def atan2(self, y: FixedPoint, x: FixedPoint) -> FixedPoint:
        return self.scalar_type(_atan2_raw(y.raw, x.raw, y.FRAC_BITS))

    @staticmethod
    def round_to_int(value: FixedPoint) -> int:
        return value.round_to_int()

    @staticmethod
    def floor_to_int(value: FixedPoint) -> int:
        return value.floor_to_int()

    def __repr__(self):
        return f"FixedBackend({self.format})"


BACKEND_NAMES = ("float", "q40_23", "q47_16")


def get_backend(name: str):
    """Backend instance for a CLI/config name: float, q40_23 or q47_16."""
    if name == "float":
        return FloatBackend()
    if name == "q40_23":
        return FixedBackend(Q40_23)
    if name == "q47_16":
        return FixedBackend(Q47_16)
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKEND_NAMES}")
