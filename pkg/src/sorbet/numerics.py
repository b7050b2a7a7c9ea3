"""Fixed-point tensors, power-of-two exponents and shift arithmetic.

Every inference-path value is a :class:`FixedTensor`: an integer mantissa
array with one shared binary point.  Division by powers of two is an
arithmetic right shift (floor semantics).  The nearest power of two of a
positive value is computed exactly on integers, either through the
log path (:func:`nearest_pow2_exponent`) or through a leading-zero count
plus a 256-entry fractional table (:func:`pow2_lut`); both must agree
bit for bit on the table's range.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Literal, Sequence, Union

import numpy as np

from .errors import DomainError, FixedOverflowError, RangeError

DEFAULT_WIDTH = 32
DEFAULT_FRAC_BITS = 8

Mode = Literal["ceil", "round_nearest"]
MODES: tuple[str, ...] = ("ceil", "round_nearest")

LUT_MAX_MANTISSA = 1 << 24
LUT_INDEX_BITS = 8


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown rounding mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class Pow2Exponent:
    """The exact value ``2**k``; arithmetic on it is exponent arithmetic."""

    k: int

    def __post_init__(self):
        object.__setattr__(self, "k", int(self.k))

    def __int__(self) -> int:
        return self.k

    def __index__(self) -> int:
        return self.k

    def __add__(self, other: Union["Pow2Exponent", int]) -> "Pow2Exponent":
        return Pow2Exponent(self.k + int(other))

    def __sub__(self, other: Union["Pow2Exponent", int]) -> "Pow2Exponent":
        return Pow2Exponent(self.k - int(other))

    def __neg__(self) -> "Pow2Exponent":
        return Pow2Exponent(-self.k)

    @property
    def value(self) -> Fraction:
        return Fraction(2) ** self.k


@dataclass(frozen=True, eq=False)
class FixedTensor:
    """Integer mantissas with a shared binary point.

    The real value of element ``i`` is ``mantissas[i] * 2**-frac_bits``.
    Mantissas must fit a signed ``width``-bit word; construction fails
    rather than wrapping.
    """

    mantissas: np.ndarray
    frac_bits: int = DEFAULT_FRAC_BITS
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        m = np.asarray(self.mantissas)
        if m.dtype == object:
            # Python ints from exact paths; range-check before narrowing.
            lo = -(1 << (self.width - 1))
            hi = (1 << (self.width - 1)) - 1
            flat = [int(v) for v in m.ravel()]
            if flat and (min(flat) < lo or max(flat) > hi):
                raise FixedOverflowError(f"mantissa outside signed {self.width}-bit range")
            m = np.array(flat, dtype=np.int64).reshape(m.shape)
        elif not np.issubdtype(m.dtype, np.integer):
            if m.size and not np.all(np.equal(np.floor(m), m)):
                raise TypeError("mantissas must be integers")
            m = m.astype(np.int64)
        else:
            m = m.astype(np.int64, copy=True)
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be non-negative")
        if not 2 <= self.width <= 63:
            raise ValueError("width must be in [2, 63]")
        _check_width(m, self.width)
        m.setflags(write=False)
        object.__setattr__(self, "mantissas", m)
        object.__setattr__(self, "frac_bits", int(self.frac_bits))

    @classmethod
    def from_real(
        cls,
        values,
        frac_bits: int = DEFAULT_FRAC_BITS,
        width: int = DEFAULT_WIDTH,
        rounding: Literal["floor", "nearest"] = "nearest",
    ) -> "FixedTensor":
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite value cannot be converted to fixed point")
        scaled = np.ldexp(v, frac_bits)
        m = np.floor(scaled) if rounding == "floor" else np.floor(scaled + 0.5)
        limit = float(1 << (width - 1))
        if m.size and (m.min() < -limit or m.max() > limit - 1):
            raise FixedOverflowError(f"value outside signed {width}-bit range at frac_bits={frac_bits}")
        return cls(m.astype(np.int64), frac_bits, width)

    @classmethod
    def from_fractions(cls, values: Sequence, frac_bits: int = DEFAULT_FRAC_BITS,
                       width: int = DEFAULT_WIDTH) -> "FixedTensor":
        """Exact conversion; every value must lie on the ``2**-frac_bits`` grid."""
        arr = np.asarray(values, dtype=object)
        out = []
        for v in arr.ravel():
            scaled = Fraction(v) * (1 << frac_bits)
            if scaled.denominator != 1:
                raise DomainError(f"{v} is not on the 2^-{frac_bits} grid")
            out.append(int(scaled))
        return cls(np.array(out, dtype=object).reshape(arr.shape), frac_bits, width)

    @classmethod
    def zeros(cls, shape, frac_bits: int = DEFAULT_FRAC_BITS, width: int = DEFAULT_WIDTH):
        return cls(np.zeros(shape, dtype=np.int64), frac_bits, width)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mantissas.shape

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.frac_bits

    def to_real(self) -> np.ndarray:
        return np.ldexp(self.mantissas.astype(np.float64), -self.frac_bits)

    def to_fractions(self) -> np.ndarray:
        den = 1 << self.frac_bits
        flat = [Fraction(int(v), den) for v in self.mantissas.ravel()]
        return np.array(flat, dtype=object).reshape(self.shape)

    def with_mantissas(self, mantissas, frac_bits: int | None = None) -> "FixedTensor":
        return FixedTensor(mantissas, self.frac_bits if frac_bits is None else frac_bits, self.width)

    def regrid(self, frac_bits: int) -> "FixedTensor":
        """Move to another binary point; dropping bits floors."""
        d = frac_bits - self.frac_bits
        m = _shift_left(self.mantissas, d, self.width) if d >= 0 else self.mantissas >> (-d)
        return FixedTensor(m, frac_bits, self.width)

    def __getitem__(self, idx) -> "FixedTensor":
        return FixedTensor(self.mantissas[idx], self.frac_bits, self.width)

    def reshape(self, *shape) -> "FixedTensor":
        return FixedTensor(self.mantissas.reshape(*shape), self.frac_bits, self.width)

    def __len__(self) -> int:
        return len(self.mantissas)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FixedTensor):
            return NotImplemented
        return (self.frac_bits == other.frac_bits and self.shape == other.shape
                and bool(np.array_equal(self.mantissas, other.mantissas)))

    def __repr__(self) -> str:
        return f"FixedTensor(shape={self.shape}, frac_bits={self.frac_bits}, width={self.width})"


def _check_width(m: np.ndarray, width: int) -> None:
    if not m.size:
        return
    lo = -(1 << (width - 1))
    hi = (1 << (width - 1)) - 1
    if m.min() < lo or m.max() > hi:
        raise FixedOverflowError(f"mantissa outside signed {width}-bit range")


def _shift_left(m: np.ndarray, k: int, width: int) -> np.ndarray:
    if k == 0:
        return m.copy()
    if k >= width:
        if np.any(m):
            raise FixedOverflowError(f"left shift by {k} overflows {width}-bit mantissa")
        return m.copy()
    # Check headroom before shifting so int64 itself never wraps.
    bound = 1 << (width - 1 - k)
    if m.size and (m.max() >= bound or m.min() < -bound):
        raise FixedOverflowError(f"left shift by {k} overflows {width}-bit mantissa")
    return m << k


def shift_div(x: FixedTensor, k: Pow2Exponent | int) -> FixedTensor:
    """Divide by ``2**k`` with an arithmetic shift; negative ``k`` shifts left.

    Right shifts floor toward minus infinity; ``frac_bits`` is unchanged.
    """
    k = int(k)
    if k >= 0:
        m = x.mantissas >> min(k, 63)
    else:
        m = _shift_left(x.mantissas, -k, x.width)
    return FixedTensor(m, x.frac_bits, x.width)


# ---------------------------------------------------------------------------
# nearest power of two: exact log path
# ---------------------------------------------------------------------------

def _as_fraction(x) -> Fraction:
    if isinstance(x, FixedTensor):
        if x.mantissas.size != 1:
            raise ValueError("expected a scalar FixedTensor")
        return Fraction(int(x.mantissas.ravel()[0]), 1 << x.frac_bits)
    if isinstance(x, (float, np.floating)) and not np.isfinite(x):
        raise DomainError(f"non-finite input {x}")
    return Fraction(x)


def _ge_pow2(p: int, q: int, e: int) -> bool:
    """p/q >= 2**e for positive integers p, q."""
    return (p >= q << e) if e >= 0 else ((p << -e) >= q)


def _floor_log2(p: int, q: int) -> int:
    b = p.bit_length() - q.bit_length()
    if not _ge_pow2(p, q, b):
        b -= 1
    return b


def _exponent_of(p: int, q: int, mode: str) -> int:
    b = _floor_log2(p, q)
    if mode == "ceil":
        exact = (p == q << b) if b >= 0 else (p << -b == q)
        return b if exact else b + 1
    # round up iff p/q >= sqrt(2) * 2**b  <=>  p^2 >= q^2 * 2**(2b+1)
    return b + 1 if _ge_pow2(p * p, q * q, 2 * b + 1) else b


def nearest_pow2_exponent(x, mode: Mode = "ceil") -> Pow2Exponent:
    """Exponent of the power of two nearest to positive ``x``.

    ``ceil`` gives ceil(log2 x); ``round_nearest`` minimises |log2 x - k|,
    ties rounding up.  Exact for any rational input.
    """
    _check_mode(mode)
    f = _as_fraction(x)
    if f <= 0:
        raise DomainError(f"nearest power of two needs x > 0, got {x}")
    return Pow2Exponent(_exponent_of(f.numerator, f.denominator, mode))


# Smallest normalised 25-bit word at or above sqrt(2) * 2**24.
_SQRT2_Q24 = isqrt(1 << 49) + 1
# Per-bit-length thresholds ceil(sqrt(2) * 2**b) for the vectorised log path.
_SQRT2_THRESHOLDS = np.array([isqrt(1 << (2 * b + 1)) + 1 for b in range(62)], dtype=np.int64)


def pow2_exponent_array(m: np.ndarray, mode: Mode = "ceil") -> np.ndarray:
    """Vectorised exact log path for positive integer mantissas (< 2**61)."""
    _check_mode(mode)
    m = np.asarray(m, dtype=np.int64)
    if m.size and m.min() <= 0:
        raise DomainError("nearest power of two needs positive mantissas")
    if m.size and m.max() >= (1 << 61):
        raise RangeError("mantissa too large for the vectorised path")
    # frexp is exact for |m| < 2**53; correct the rare off-by-one above that.
    _, e = np.frexp(m.astype(np.float64))
    b = e.astype(np.int64) - 1
    b = np.where(np.left_shift(np.int64(1), b) > m, b - 1, b)
    b = np.where(np.left_shift(np.int64(1), b + 1) <= m, b + 1, b)
    if mode == "ceil":
        return np.where(np.left_shift(np.int64(1), b) == m, b, b + 1)
    return np.where(m >= _SQRT2_THRESHOLDS[b], b + 1, b)


# ---------------------------------------------------------------------------
# nearest power of two: leading-zero count + fractional table
# ---------------------------------------------------------------------------

_DOWN, _UP, _RESOLVE = 0, 1, 2


def _build_tables() -> dict[str, np.ndarray]:
    step = 1 << (24 - LUT_INDEX_BITS)
    base = 1 << 24
    tables = {}
    for mode in MODES:
        codes = np.empty(1 << LUT_INDEX_BITS, dtype=np.int8)
        for idx in range(1 << LUT_INDEX_BITS):
            lo = base + idx * step
            hi = lo + step - 1
            if mode == "ceil":
                # only the exact power of two stays down
                codes[idx] = _RESOLVE if idx == 0 else _UP
            else:
                codes[idx] = _DOWN if hi < _SQRT2_Q24 else (_UP if lo >= _SQRT2_Q24 else _RESOLVE)
        codes.setflags(write=False)
        tables[mode] = codes
    return tables


POW2_TABLES = _build_tables()


def _lut_int(m: np.ndarray, mode: str) -> np.ndarray:
    b = pow2_floor_log2_clz(m)
    norm = m << (24 - b)
    idx = (norm >> (24 - LUT_INDEX_BITS)) & ((1 << LUT_INDEX_BITS) - 1)
    code = POW2_TABLES[mode][idx]
    if mode == "ceil":
        resolved = norm > (1 << 24)
    else:
        resolved = norm >= _SQRT2_Q24
    up = np.where(code == _RESOLVE, resolved, code == _UP)
    return b + up.astype(np.int64)


def pow2_floor_log2_clz(m: np.ndarray) -> np.ndarray:
    """floor(log2 m) as a 63-bit word's (63 - leading zeros); m in [1, 2**24]."""
    m = np.asarray(m, dtype=np.int64)
    b = np.zeros(m.shape, dtype=np.int64)
    v = m.copy()
    for s in (16, 8, 4, 2, 1):
        hit = v >= (1 << s)
        b = np.where(hit, b + s, b)
        v = np.where(hit, v >> s, v)
    return b


def pow2_lut(x, mode: Mode = "ceil", frac_bits: int = 0) -> Pow2Exponent:
    """Table lookup for the nearest power-of-two exponent.

    ``x`` is a scalar :class:`FixedTensor` or an integer mantissa read at
    ``frac_bits``.  The mantissa must lie in ``[1, 2**24]``.
    """
    _check_mode(mode)
    if isinstance(x, FixedTensor):
        if x.mantissas.size != 1:
            raise ValueError("expected a scalar FixedTensor")
        m, frac_bits = int(x.mantissas.ravel()[0]), x.frac_bits
    else:
        if int(x) != x:
            raise RangeError("table input must be an integer mantissa")
        m = int(x)
    if not 1 <= m <= LUT_MAX_MANTISSA:
        raise RangeError(f"mantissa {m} outside table range [1, 2^24]")
    return Pow2Exponent(int(_lut_int(np.array([m], dtype=np.int64), mode)[0]) - frac_bits)


class _FallbackCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += n


LUT_FALLBACKS = _FallbackCounter()


def pow2_lut_array(m: np.ndarray, mode: Mode = "ceil") -> np.ndarray:
    """Vectorised table lookup on positive integer mantissas.

    Mantissas above the table range go through the exact log path and
    bump :data:`LUT_FALLBACKS`.
    """
    _check_mode(mode)
    m = np.asarray(m, dtype=np.int64)
    if m.size and m.min() <= 0:
        raise DomainError("nearest power of two needs positive mantissas")
    big = m > LUT_MAX_MANTISSA
    if not big.any():
        return _lut_int(m, mode)
    LUT_FALLBACKS.add(int(big.sum()))
    out = np.empty(m.shape, dtype=np.int64)
    out[~big] = _lut_int(m[~big], mode)
    out[big] = pow2_exponent_array(m[big], mode)
    return out
