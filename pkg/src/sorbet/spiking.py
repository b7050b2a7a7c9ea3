"""Integrate-and-fire neurons, rate coding and spike-driven accumulation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Literal

import numpy as np

from .counters import record
from .errors import EncodingCapacityError, ShapeError
from .numerics import DEFAULT_FRAC_BITS, FixedTensor
from .quantize import BinaryLinear

DEFAULT_TIMESTEPS = 16


@dataclass(frozen=True)
class NeuronState:
    """Membrane state of one IF neuron.

    ``tau_m`` is the membrane time constant in steps.  ``tau_m=None`` is the
    non-leaky integrator ``V <- V + I``, which preserves total charge.
    """

    v: Fraction = Fraction(0)
    theta: Fraction = Fraction(1)
    v_rest: Fraction = Fraction(0)
    tau_m: int | None = 1
    reset_mode: Literal["subtract", "zero"] = "subtract"

    def __post_init__(self):
        for name in ("v", "theta", "v_rest"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if self.theta <= self.v_rest:
            raise ValueError("threshold must exceed the resting potential")
        if self.tau_m is not None and self.tau_m <= 0:
            raise ValueError("tau_m must be positive")
        if self.reset_mode not in ("subtract", "zero"):
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")


def if_step(state: NeuronState, i_syn) -> tuple[NeuronState, int]:
    """One Euler step of ``tau_m dV/dt = I - V + V_rest`` followed by the threshold test."""
    i_syn = Fraction(i_syn)
    if state.tau_m is None:
        v = state.v + i_syn
    else:
        v = state.v + (i_syn - state.v + state.v_rest) / state.tau_m
    spike = 0
    if v >= state.theta:
        spike = 1
        v = v - state.theta if state.reset_mode == "subtract" else state.v_rest
    return replace(state, v=v), spike


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Binary spikes with time on axis 0: shape ``[T, *features]``."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim < 1:
            raise ShapeError("a spike train needs a time axis")
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("spike bits must be 0 or 1")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def T(self) -> int:
        return self.bits.shape[0]

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.bits.shape[1:]

    @property
    def spike_count(self) -> int:
        return int(self.bits.sum(dtype=np.int64))

    @property
    def rate(self) -> float:
        return self.spike_count / self.bits.size if self.bits.size else 0.0

    def raster(self) -> list[tuple[int, int]]:
        """(timestep, flat neuron index) of every spike, time-major."""
        t, idx = np.nonzero(self.bits.reshape(self.T, -1))
        return list(zip(t.tolist(), idx.tolist()))

    def to_json(self) -> str:
        return json.dumps({
            "T": self.T,
            "shape": list(self.feature_shape),
            "rate": self.rate,
            "spikes": [list(s) for s in self.raster()],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SpikeTrain":
        doc = json.loads(text)
        bits = np.zeros((doc["T"], int(np.prod(doc["shape"], dtype=np.int64))), dtype=np.uint8)
        for t, i in doc["spikes"]:
            bits[t, i] = 1
        return cls(bits.reshape([doc["T"], *doc["shape"]]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "neuron"])
        w.writerows(self.raster())
        return buf.getvalue()


def encode_rate(levels, T: int = DEFAULT_TIMESTEPS) -> SpikeTrain:
    """Level ``q`` fires on the first ``q`` of ``T`` steps."""
    q = np.asarray(levels)
    if q.size and (q.min() < 0 or q.max() > T):
        raise EncodingCapacityError(f"levels must lie in [0, {T}] for T={T}")
    t = np.arange(T).reshape((T,) + (1,) * q.ndim)
    return SpikeTrain(t < q[None, ...])


def encode_if(levels, T: int = DEFAULT_TIMESTEPS) -> SpikeTrain:
    """Non-leaky IF encoder: constant current ``q/T``, threshold 1, subtract reset.

    Same spike counts as :func:`encode_rate`; spikes are spread over the
    window instead of packed at its start.  Integer arithmetic in units of
    ``1/T``.
    """
    q = np.asarray(levels, dtype=np.int64)
    if q.size and (q.min() < 0 or q.max() > T):
        raise EncodingCapacityError(f"levels must lie in [0, {T}] for T={T}")
    v = np.zeros(q.shape, dtype=np.int64)
    bits = np.zeros((T,) + q.shape, dtype=np.uint8)
    for t in range(T):
        v = v + q
        fire = v >= T
        bits[t] = fire
        v = np.where(fire, v - T, v)
    return SpikeTrain(bits)


def decode_counts(train: SpikeTrain) -> np.ndarray:
    return train.bits.sum(axis=0, dtype=np.int64)


def spike_rate(train: SpikeTrain) -> float:
    return train.rate


def spike_accumulate(train: SpikeTrain, M: np.ndarray) -> np.ndarray:
    """``sum_t sum_i bits[t, ..., i] * M[i, :]`` as conditional accumulation.

    Every spike adds one row of ``M``: ``spikes * M.shape[1]`` additions.
    """
    M = np.asarray(M, dtype=np.int64)
    bits = train.bits
    if M.ndim != 2 or bits.shape[-1] != M.shape[0]:
        raise ShapeError(f"spike features {bits.shape[1:]} do not conform to {M.shape}")
    acc = np.zeros(bits.shape[1:-1] + (M.shape[1],), dtype=np.int64)
    for t in range(train.T):
        fired = bits[t].astype(bool)
        acc += np.where(fired[..., None], M, 0).sum(axis=-2)
    record(add=train.spike_count * M.shape[1])
    return acc


def spike_accumulate_batched(train: SpikeTrain, M: np.ndarray) -> np.ndarray:
    """Per-batch right operands: ``train [T, *B, r, i]`` against ``M [*B, i, p]``."""
    M = np.asarray(M, dtype=np.int64)
    bits = train.bits
    if bits.shape[1:-2] != M.shape[:-2] or bits.shape[-1] != M.shape[-2]:
        raise ShapeError(f"spike features {bits.shape[1:]} do not conform to {M.shape}")
    acc = np.zeros(bits.shape[1:-1] + (M.shape[-1],), dtype=np.int64)
    for t in range(train.T):
        fired = bits[t].astype(bool)
        acc += np.where(fired[..., None], M[..., None, :, :], 0).sum(axis=-2)
    record(add=train.spike_count * M.shape[-1])
    return acc


def shift_to_grid(acc: np.ndarray, exponent: int, frac_bits: int) -> FixedTensor:
    """Integer ``acc * 2**exponent`` placed on the ``frac_bits`` grid (floor)."""
    s = exponent + frac_bits
    record(shift=acc.size)
    return FixedTensor(acc << s if s >= 0 else acc >> (-s), frac_bits)


def spiking_matmul(
    train: SpikeTrain,
    W: BinaryLinear,
    input_exponent: int = 0,
    out_frac_bits: int = DEFAULT_FRAC_BITS,
) -> FixedTensor:
    """Spike-driven product with sign weights, then the power-of-two weight scale.

    The accumulator only adds or subtracts sign values; the scale
    ``2**(scale_exponent + input_exponent)`` is a shift onto the output grid.
    """
    acc = spike_accumulate(train, W.signs)
    return shift_to_grid(acc, W.scale_exponent + input_exponent, out_frac_bits)
