"""Power-of-two elastic activation quantization and 1-bit weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .counters import record
from .errors import DegenerateInputError, DomainError, ShapeError
from .numerics import DEFAULT_FRAC_BITS, FixedTensor, nearest_pow2_exponent


def pow2_scale(alpha: float) -> int:
    """Exponent of the power of two nearest (in log2) to ``alpha``."""
    if not alpha > 0:
        raise DomainError(f"scale must be positive, got {alpha}")
    return nearest_pow2_exponent(alpha, "round_nearest").k


@dataclass(frozen=True)
class ElasticParams:
    """Scale ``alpha`` (used as ``2**k_alpha``), threshold ``beta``, bit width.

    ``bits=1`` is the binary elastic function; wider settings clip to
    ``[0, 2**bits - 1]`` and produce integer levels for rate coding.
    """

    alpha: float
    beta: float = 0.0
    bits: int = 4
    k_alpha: int = field(init=False)

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        object.__setattr__(self, "k_alpha", pow2_scale(self.alpha))

    @classmethod
    def from_exponent(cls, k: int, beta: float = 0.0, bits: int = 4) -> "ElasticParams":
        return cls(float(2.0 ** k), beta, bits)

    @property
    def max_level(self) -> int:
        return (1 << self.bits) - 1

    def beta_mantissa(self, frac_bits: int) -> int:
        """beta snapped to the activation grid (round half up)."""
        return int(np.floor(np.ldexp(self.beta, frac_bits) + 0.5))


def elastic_levels(x: FixedTensor, p: ElasticParams) -> np.ndarray:
    """Integer levels ``round(clip((x - beta) >> k, 0, 2**bits - 1))``.

    Rounding is half-up.  The division by alpha is a shift by
    ``k_alpha``, merged with the fixed-point binary point into one shift.
    """
    d = x.mantissas - p.beta_mantissa(x.frac_bits)
    s = x.frac_bits + p.k_alpha
    n = d.size
    if s > 0:
        q = (d + (1 << (s - 1))) >> s
        record(sub=n, add=n, shift=n)
    elif s == 0:
        q = d
        record(sub=n)
    else:
        # clip first so the left shift cannot overflow
        q = np.clip(d, -1, p.max_level + 1) << (-s)
        record(sub=n, shift=n)
    return np.clip(q, 0, p.max_level)


def elastic_binarize(x: FixedTensor, p: ElasticParams) -> FixedTensor:
    """Quantized activations ``level << k_alpha`` as a fixed-point tensor.

    The output grid keeps ``x.frac_bits`` unless ``2**k_alpha`` is finer.
    """
    q = elastic_levels(x, p)
    f = max(x.frac_bits, -p.k_alpha)
    record(shift=q.size)
    return FixedTensor(q << (p.k_alpha + f), f, x.width)


@dataclass
class BinaryLinear:
    """Weights ``signs * 2**scale_exponent`` with a fixed-point output bias."""

    signs: np.ndarray
    scale_exponent: int
    out_bias: FixedTensor | None = None

    def __post_init__(self):
        s = np.asarray(self.signs)
        if s.ndim != 2:
            raise ShapeError("binary weight matrix must be 2-D")
        if not np.all(np.isin(s, (-1, 1))):
            raise ValueError("signs must be -1 or +1")
        self.signs = s.astype(np.int8)
        self.scale_exponent = int(self.scale_exponent)
        if self.out_bias is None:
            self.out_bias = FixedTensor.zeros((s.shape[1],))
        if self.out_bias.shape != (s.shape[1],):
            raise ShapeError("bias length must match output features")

    @property
    def in_features(self) -> int:
        return self.signs.shape[0]

    @property
    def out_features(self) -> int:
        return self.signs.shape[1]

    def dense(self) -> np.ndarray:
        return np.ldexp(self.signs.astype(np.float64), self.scale_exponent)

    def with_scale(self, delta: int) -> "BinaryLinear":
        return BinaryLinear(self.signs, self.scale_exponent + delta, self.out_bias)


def _reconstruction_error(a: np.ndarray, k: int) -> float:
    return float(np.sum((a - np.ldexp(1.0, k)) ** 2))


def binarize_weights(W, bias=None, bias_frac_bits: int = DEFAULT_FRAC_BITS) -> BinaryLinear:
    """Sign weights with one power-of-two scale per tensor.

    Zeros map to +1.  The scale exponent is whichever neighbour of
    log2(mean |W|) gives the smaller squared reconstruction error.
    """
    W = np.asarray(W, dtype=np.float64)
    a = np.abs(W)
    mean = float(a.mean()) if a.size else 0.0
    if mean == 0.0:
        raise DegenerateInputError("cannot binarize an all-zero weight matrix")
    k_lo = nearest_pow2_exponent(mean, "ceil").k
    if np.ldexp(1.0, k_lo) != mean:
        k_lo -= 1
    candidates = (k_lo, k_lo + 1)
    k = min(candidates, key=lambda c: (_reconstruction_error(a, c), c))
    signs = np.where(W >= 0, 1, -1)
    out_bias = None
    if bias is not None:
        out_bias = FixedTensor.from_real(bias, bias_frac_bits)
    return BinaryLinear(signs, k, out_bias)
