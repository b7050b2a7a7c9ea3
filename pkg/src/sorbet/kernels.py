"""Shift-based softmax and normalization kernels, plus high-precision references.

The inference kernels (:func:`ptsoftmax`, :func:`bspn_group_scale`,
:func:`bspn_forward_infer`) work on :class:`FixedTensor` mantissas with
integer adds, subtractions, shifts and one table lookup per row or group.
The ``*_ref`` functions evaluate the functions being replaced in
multi-precision arithmetic and exist for comparison only.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Literal

import mpmath
import numpy as np

from .counters import record
from .errors import DegenerateInputError, DomainError, ShapeError, StateError
from .numerics import (
    DEFAULT_FRAC_BITS,
    FixedTensor,
    Mode,
    nearest_pow2_exponent,
    pow2_lut_array,
)

REF_DPS = 40
DEFAULT_CLAMP_MAX = 0.001
GENERIC_SCALE_FRAC_BITS = 16

Layout = Literal["heads", "channels_per_head"]


# ---------------------------------------------------------------------------
# references
# ---------------------------------------------------------------------------

def _finite_vector(z) -> list:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise DomainError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(z)):
        raise DomainError("NaN or Inf in input")
    return [mpmath.mpf(float(v)) for v in z]


def _base_softmax(z, base) -> np.ndarray:
    with mpmath.workdps(REF_DPS):
        zs = _finite_vector(z)
        top = max(zs)
        w = [mpmath.power(base, v - top) for v in zs]
        s = mpmath.fsum(w)
        return np.array([float(v / s) for v in w])


def softmax_ref(z) -> np.ndarray:
    """exp(z_i) / sum_j exp(z_j), max-subtracted."""
    return _base_softmax(z, mpmath.e)


def base2_softmax_ref(z) -> np.ndarray:
    """2**z_i / sum_j 2**z_j, max-subtracted."""
    return _base_softmax(z, 2)


def rmsln_ref(x) -> np.ndarray:
    with mpmath.workdps(REF_DPS):
        xs = _finite_vector(x)
        ms = mpmath.fsum(v * v for v in xs) / len(xs)
        if ms == 0:
            raise DegenerateInputError("RMS normalization of an all-zero vector")
        r = mpmath.sqrt(ms)
        return np.array([float(v / r) for v in xs])


def layernorm_ref(x, gamma=1.0, beta=0.0) -> np.ndarray:
    """Textbook layer norm without epsilon; zero variance is an error."""
    with mpmath.workdps(REF_DPS):
        xs = _finite_vector(x)
        n = len(xs)
        mean = mpmath.fsum(xs) / n
        var = mpmath.fsum((v - mean) ** 2 for v in xs) / n
        if var == 0:
            raise DegenerateInputError("layer norm of a constant vector")
        sd = mpmath.sqrt(var)
        normed = np.array([float((v - mean) / sd) for v in xs])
    return np.asarray(gamma, dtype=np.float64) * normed + np.asarray(beta, dtype=np.float64)


# ---------------------------------------------------------------------------
# PTsoftmax
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pow2Distribution:
    """Probabilities held exactly as powers of two: entry ``e`` means ``2**e``."""

    exponents: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.exponents, dtype=np.int64)
        if e.size and e.max() > 0:
            raise ValueError("probability exponents must be <= 0")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "exponents", e)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.exponents.shape

    def probabilities(self) -> np.ndarray:
        return np.ldexp(1.0, self.exponents)

    def to_fractions(self) -> np.ndarray:
        flat = [Fraction(1, 1 << int(-e)) for e in self.exponents.ravel()]
        return np.array(flat, dtype=object).reshape(self.shape)

    def to_fixed(self, frac_bits: int = DEFAULT_FRAC_BITS) -> FixedTensor:
        """``1 << (frac_bits + e)``; anything below the grid floors to zero."""
        s = self.exponents + frac_bits
        m = np.where(s >= 0, np.left_shift(np.int64(1), np.maximum(s, 0)), 0)
        return FixedTensor(m, frac_bits)


def _clamp_mantissa(clamp_max, frac_bits: int) -> int:
    # Ceil onto the grid so min() then ceil() matches the exact clamp.
    scaled = Fraction(clamp_max) * (1 << frac_bits)
    return -((-scaled.numerator) // scaled.denominator)


def _row_sums_exact(d: np.ndarray) -> np.ndarray:
    return np.array([sum(1 << int(v) for v in row) for row in d], dtype=object)


def ptsoftmax(
    S: FixedTensor,
    clamp_max: float | Fraction | None = DEFAULT_CLAMP_MAX,
    k_mode: Mode = "round_nearest",
) -> Pow2Distribution:
    """Power-of-two softmax along the last axis of ``S``.

    Per row: clamp each score to ``clamp_max`` (``None`` disables), take
    integer exponents ``e_i = ceil(S_i)``, sum ``2**e_i``, find the
    power-of-two exponent ``k`` of that sum and return ``e_i - k``.
    """
    m = S.mantissas
    if m.ndim == 0 or m.shape[-1] == 0:
        raise DomainError("PTsoftmax needs a non-empty row")
    f = S.frac_bits
    if clamp_max is not None:
        m = np.minimum(m, _clamp_mantissa(clamp_max, f))
    e = -((-m) >> f)
    n = m.shape[-1]
    rows = e.reshape(-1, n)
    emin = rows.min(axis=1, keepdims=True)
    d = rows - emin
    # sum of 2**d per row must stay inside int64; wide rows go exact.
    wide = d.max(axis=1) + int(n).bit_length() >= 62
    k = np.empty(rows.shape[0], dtype=np.int64)
    narrow = ~wide
    if narrow.any():
        sums = np.left_shift(np.int64(1), d[narrow]).sum(axis=1)
        k[narrow] = pow2_lut_array(sums, k_mode)
    for r in np.flatnonzero(wide):
        total = _row_sums_exact(d[r:r + 1])[0]
        k[r] = nearest_pow2_exponent(total, k_mode).k
    k = k + emin[:, 0]
    nrows = rows.shape[0]
    record(add=nrows * (n - 1), shift=nrows * n, lut=nrows, sub=nrows * n)
    return Pow2Distribution((rows - k[:, None]).reshape(e.shape))


# ---------------------------------------------------------------------------
# BSPN
# ---------------------------------------------------------------------------

@dataclass
class BspnState:
    """Running statistics and affine parameters of one BSPN site.

    ``group_layout="heads"`` splits the channels into ``num_heads`` groups
    of ``channels // num_heads``; ``"channels_per_head"`` makes
    ``channels // num_heads`` groups of ``num_heads`` channels.
    """

    psi: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    momentum_alpha: float = 0.9
    num_heads: int = 1
    channels: int = 0
    pow2_scale_mode: bool = True
    group_layout: Layout = "heads"

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64).copy()
        self.gamma = np.asarray(self.gamma, dtype=np.float64).copy()
        self.beta = np.asarray(self.beta, dtype=np.float64).copy()
        if not self.channels:
            self.channels = self.psi.size
        if self.num_heads <= 0 or self.channels % self.num_heads:
            raise StateError(f"{self.channels} channels not divisible by {self.num_heads} heads")
        for name in ("psi", "gamma", "beta"):
            if getattr(self, name).shape != (self.channels,):
                raise StateError(f"{name} must have shape ({self.channels},)")
        if not np.all(self.psi > 0):
            raise StateError("psi must be positive")
        if not 0.0 <= self.momentum_alpha <= 1.0:
            raise StateError("momentum_alpha must lie in [0, 1]")
        if self.group_layout not in ("heads", "channels_per_head"):
            raise StateError(f"unknown group layout {self.group_layout!r}")

    @classmethod
    def identity(cls, channels: int, num_heads: int = 1, **kw) -> "BspnState":
        ones = np.ones(channels)
        return cls(ones, ones, np.zeros(channels), num_heads=num_heads, channels=channels, **kw)

    @property
    def group_size(self) -> int:
        if self.group_layout == "heads":
            return self.channels // self.num_heads
        return self.num_heads

    def scale_exponents(self) -> np.ndarray:
        """Per-channel exponent of gamma/psi, rounded to the nearest power of two."""
        ratio = self.gamma / self.psi
        if np.any(ratio <= 0):
            raise StateError("power-of-two scaling needs gamma/psi > 0")
        return np.array([nearest_pow2_exponent(float(r), "round_nearest").k for r in ratio])

    def snapped(self) -> "BspnState":
        """Copy with gamma moved so gamma/psi is exactly a power of two."""
        k = self.scale_exponents()
        return replace(self, gamma=self.psi * np.ldexp(1.0, k))

    def copy(self) -> "BspnState":
        return replace(self)


def _grouped(m: np.ndarray, group_size: int) -> np.ndarray:
    if m.shape[-1] % group_size:
        raise ShapeError(f"last axis {m.shape[-1]} not divisible into groups of {group_size}")
    return m.reshape(m.shape[:-1] + (m.shape[-1] // group_size, group_size))


def _variable_shift_right(m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """m >> s with s possibly negative (then a left shift)."""
    right = m >> np.clip(s, 0, 63)
    left = m << np.clip(-s, 0, 63)
    return np.where(s >= 0, right, left)


def bspn_group_scale(
    X: FixedTensor,
    group_size: int,
    mode: Mode = "ceil",
    out_frac_bits: int = DEFAULT_FRAC_BITS,
) -> tuple[FixedTensor, np.ndarray]:
    """Divide each channel group by the power of two of its L1 norm.

    Returns the shifted tensor on the ``out_frac_bits`` grid and the real
    per-group exponents ``logScale`` (shape ``X.shape[:-1] + (groups,)``).
    An all-zero group gets ``logScale = 0``.
    """
    g = _grouped(X.mantissas, group_size)
    l1 = np.abs(g).sum(axis=-1)
    nonzero = l1 > 0
    lint = np.zeros(l1.shape, dtype=np.int64)
    if nonzero.any():
        lint[nonzero] = pow2_lut_array(l1[nonzero], mode)
    log_scale = np.where(nonzero, lint - X.frac_bits, 0)
    shift = np.where(nonzero, lint - out_frac_bits, X.frac_bits - out_frac_bits)
    out = _variable_shift_right(g, shift[..., None])
    groups = l1.size
    record(add=groups * (group_size - 1), shift=groups * group_size, lut=groups)
    return FixedTensor(out.reshape(X.shape), out_frac_bits, X.width), log_scale


def _batch_axes(X: FixedTensor, channels: int) -> tuple[int, ...]:
    if X.mantissas.ndim < 2 or X.shape[-1] != channels:
        raise ShapeError(f"expected [..., {channels}] input, got {X.shape}")
    return tuple(range(X.mantissas.ndim - 1))


def bspn_forward_train(X: FixedTensor, state: BspnState) -> tuple[FixedTensor, BspnState]:
    """Offline pass: normalise with the running psi, then update it.

    The batch statistic is the zero-mean-relaxed second moment of the
    group-scaled input over every leading axis.  The update is
    ``psi^2 <- alpha psi^2 + (1 - alpha) sigma_B^2``.  Channels whose batch
    moment and running value are both zero keep their previous psi.
    Returns a new state; the input state is not modified.
    """
    axes = _batch_axes(X, state.channels)
    if X.mantissas.size == 0 or X.shape[0] == 0:
        raise DomainError("empty batch")
    gs, _ = bspn_group_scale(X, state.group_size, "ceil", X.frac_bits)
    xs = gs.to_real()
    sigma2 = np.mean(xs * xs, axis=axes)
    y = state.gamma * xs / state.psi + state.beta
    a = state.momentum_alpha
    psi2 = a * state.psi ** 2 + (1.0 - a) * sigma2
    psi = np.where(psi2 > 0, np.sqrt(psi2), state.psi)
    return FixedTensor.from_real(y, X.frac_bits, X.width), replace(state, psi=psi)


def bspn_forward_infer(X: FixedTensor, state: BspnState) -> FixedTensor:
    """Frozen inference: group shift, gamma/psi scale, fixed-point beta add.

    In ``pow2_scale_mode`` the scale is a shift by the nearest power of two
    of gamma/psi, so the whole path is adds, shifts and one table lookup
    per group.  Otherwise gamma/psi is a 16-fractional-bit constant
    multiplier with round-to-nearest.
    """
    if not np.all(state.psi > 0):
        raise StateError("psi must be positive for inference")
    _batch_axes(X, state.channels)
    f = X.frac_bits
    gs, _ = bspn_group_scale(X, state.group_size, "ceil", f)
    m = gs.mantissas
    count = m.size
    if state.pow2_scale_mode:
        k = state.scale_exponents()
        scaled = _variable_shift_right(m, -k)
        record(shift=count)
    else:
        q = GENERIC_SCALE_FRAC_BITS
        s = np.array([int(round(float(r) * (1 << q))) for r in state.gamma / state.psi], dtype=np.int64)
        scaled = (m * s + (1 << (q - 1))) >> q
        record(mul=count, add=count, shift=count)
    beta_m = np.floor(np.ldexp(state.beta, f) + 0.5).astype(np.int64)
    record(add=count)
    return FixedTensor(scaled + beta_m, f, X.width)


def relu(x: FixedTensor) -> FixedTensor:
    return x.with_mantissas(np.maximum(x.mantissas, 0))
