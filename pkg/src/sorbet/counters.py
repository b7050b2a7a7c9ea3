"""Scoped operation counters.

Kernels call :func:`record` with the number of primitive operations they
execute.  Counts land in whichever :class:`OpCounter` scopes are active in
the current context, so concurrent measurements (threads, asyncio tasks)
never share a counter.

The column set is fixed by the cost table that the counters must
reproduce: add, sub, mul, div, exp, square, sqrt, shift, lut.  Absolute
value, comparisons (clamp, clip, max) and selecting integer bits of a
fixed-point word are wiring, not counted operations.
"""
from __future__ import annotations

import contextvars
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from typing import Iterator

from .errors import UnsupportedError

OP_NAMES = ("add", "sub", "mul", "div", "exp", "square", "sqrt", "shift", "lut")
ARITHMETIC_HEAVY = ("mul", "div", "exp", "square", "sqrt")

_ACTIVE: contextvars.ContextVar[tuple["OpCounter", ...]] = contextvars.ContextVar(
    "sorbet_op_counters", default=()
)

# Counting is on unless the runtime disables it.
ENABLED = os.environ.get("SORBET_COUNTERS", "1") != "0"


@dataclass
class OpCounter:
    add: int = 0
    sub: int = 0
    mul: int = 0
    div: int = 0
    exp: int = 0
    square: int = 0
    sqrt: int = 0
    shift: int = 0
    lut: int = 0

    def bump(self, **ops: int) -> None:
        for name, n in ops.items():
            if n < 0:
                raise ValueError(f"negative op count for {name}: {n}")
            setattr(self, name, getattr(self, name) + int(n))

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)

    def as_dict(self) -> dict[str, int]:
        return asdict(self)

    def total(self) -> int:
        return sum(self.as_dict().values())

    def nonzero(self) -> dict[str, int]:
        return {k: v for k, v in self.as_dict().items() if v}

    def __add__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(**{k: v + getattr(other, k) for k, v in self.as_dict().items()})

    def scaled(self, factor: int) -> "OpCounter":
        return OpCounter(**{k: v * factor for k, v in self.as_dict().items()})


def record(**ops: int) -> None:
    """Add ``ops`` to every active counter scope.  Cheap no-op when none is active."""
    scopes = _ACTIVE.get()
    if not scopes:
        return
    for c in scopes:
        c.bump(**ops)


@contextmanager
def counting() -> Iterator[OpCounter]:
    """Open a counter scope; nested scopes all see the inner operations."""
    if not ENABLED:
        raise UnsupportedError("operation counters are disabled (SORBET_COUNTERS=0)")
    counter = OpCounter()
    token = _ACTIVE.set(_ACTIVE.get() + (counter,))
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)
