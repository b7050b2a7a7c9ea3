"""Operation-count tables, instrumented measurement and energy arithmetic.

Energies are in addition-equivalents: one addition costs 1 and one
multiplication costs ``mult_add_ratio`` (5.1 by default).  Every other
column defaults to 1 unless overridden in :class:`EnergyModel`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .counters import ARITHMETIC_HEAVY, OP_NAMES, OpCounter, counting
from .errors import DomainError, StateError
from .kernels import BspnState, bspn_forward_infer, ptsoftmax
from .numerics import FixedTensor
from .spiking import encode_rate, spike_rate

TABLE_KERNELS = ("softmax", "ptsoftmax", "layernorm", "bspn")
DELTA_E_COMPONENTS = ("softmax", "ptsoftmax", "layernorm", "bspn", "gelu", "tanh", "relu")
MULT_ADD_RATIO = 5.1


def table_cost(kernel: str, n: int) -> OpCounter:
    """Closed-form operation counts for one length-``n`` vector."""
    if n < 1:
        raise DomainError("vector length must be >= 1")
    if kernel == "softmax":
        return OpCounter(add=n - 1, div=n, exp=n)
    if kernel == "ptsoftmax":
        return OpCounter(add=n - 1, sub=n, shift=n, lut=1)
    if kernel == "layernorm":
        return OpCounter(add=3 * n - 2, sub=2 * n, mul=2 * n, div=n + 2, square=n, sqrt=1)
    if kernel == "bspn":
        return OpCounter(add=2 * n - 1, shift=2 * n, lut=1)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {TABLE_KERNELS}")


def measure(fn: Callable, *args, **kwargs) -> OpCounter:
    """Operations executed by ``fn(*args, **kwargs)``."""
    with counting() as c:
        fn(*args, **kwargs)
    return c


def measure_kernel(kernel: str, n: int, seed: int = 0) -> OpCounter:
    """Run the instrumented shift-based kernel on one random length-``n`` input.

    ``ptsoftmax`` measures one score row; ``bspn`` measures power-of-two
    inference on one group of ``n`` channels.
    """
    rng = np.random.default_rng(seed)
    if kernel == "ptsoftmax":
        row = FixedTensor.from_real(rng.uniform(-8.0, 0.0, n))
        return measure(ptsoftmax, row)
    if kernel == "bspn":
        state = BspnState(rng.uniform(0.5, 2.0, n), rng.uniform(0.5, 2.0, n),
                          rng.normal(0.0, 0.1, n), num_heads=1, pow2_scale_mode=True)
        x = FixedTensor.from_real(rng.normal(0.0, 1.0, (1, n)))
        return measure(bspn_forward_infer, x, state.snapped())
    raise ValueError(f"no instrumented kernel for {kernel!r}")


@dataclass
class EnergyModel:
    mult_add_ratio: float = MULT_ADD_RATIO
    T: int = 16
    op_energy: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.mult_add_ratio > 0:
            raise ValueError("mult_add_ratio must be positive")
        unknown = set(self.op_energy) - set(OP_NAMES)
        if unknown:
            raise ValueError(f"unknown op columns {sorted(unknown)}")

    def weight(self, op: str) -> float:
        if op in self.op_energy:
            return self.op_energy[op]
        return self.mult_add_ratio if op == "mul" else 1.0

    def energy(self, counts: OpCounter) -> float:
        return float(sum(self.weight(op) * v for op, v in counts.as_dict().items()))


def n_sorbet(T: int, r: float, n_bert_mults: int) -> float:
    """Additions replacing ``n_bert_mults`` multiplications at spike rate ``r``."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"spike rate must lie in [0, 1], got {r}")
    if T < 1:
        raise DomainError("T must be >= 1")
    return T * r * n_bert_mults


def break_even_rate(T: int, mult_add_ratio: float = MULT_ADD_RATIO) -> float:
    """Spike rate at which spiking additions cost as much as the dense multiplies."""
    if T < 1:
        raise DomainError("T must be >= 1")
    return mult_add_ratio / T


def energy_favorable(rate: float, T: int, mult_add_ratio: float = MULT_ADD_RATIO) -> bool:
    return rate < break_even_rate(T, mult_add_ratio)


def component_energies(n: int, model: EnergyModel) -> dict[str, float]:
    """Energies of the four tabulated kernels at vector length ``n``."""
    return {k: model.energy(table_cost(k, n)) for k in TABLE_KERNELS}


def delta_e(L: int, costs: Mapping[str, float]) -> float:
    """Energy saved over ``L`` layers by the kernel and activation replacements."""
    missing = [c for c in DELTA_E_COMPONENTS if c not in costs]
    if missing:
        raise StateError(f"missing component costs: {missing}")
    c = costs
    return (L * (c["softmax"] - c["ptsoftmax"])
            + 2 * L * (c["layernorm"] - c["bspn"])
            + L * (c["gelu"] + c["tanh"] - 2 * c["relu"]))


def cost_report(kernel: str, n: int, model: EnergyModel, measured: OpCounter | None = None) -> dict:
    counts = table_cost(kernel, n)
    doc = {
        "kernel": kernel,
        "n": n,
        "counts": counts.as_dict(),
        "energy": model.energy(counts),
        "model": {"T": model.T, "ratio": model.mult_add_ratio},
    }
    if measured is not None:
        doc["measured"] = measured.as_dict()
        doc["measured_matches_table"] = measured == counts
    return doc


def multiplier_free(counts: OpCounter) -> bool:
    return all(getattr(counts, op) == 0 for op in ARITHMETIC_HEAVY)


# ---------------------------------------------------------------------------
# spike rates
# ---------------------------------------------------------------------------

def measure_block_spike_rates(model, ids=None, hidden: FixedTensor | None = None) -> list[float]:
    """Spike rate of each block's output as its consumer encodes it.

    Block ``b``'s output is rate coded by block ``b+1``'s input quantizer;
    the last block's output by the classifier's quantizer (all tokens).
    """
    from .model import embed, forward_hidden
    from .quantize import elastic_levels

    if model.stage != "S":
        raise StateError("block spike rates are defined for the spiking stage")
    q = model.quant
    if hidden is None:
        if ids is None:
            raise ValueError("pass token ids or embedded activations")
        hidden = embed(q, ids)
    trace: dict = {}
    forward_hidden(model, hidden, trace)
    rates = []
    for b in range(len(q.blocks)):
        consumer = q.blocks[b + 1].act["x"] if b + 1 < len(q.blocks) else q.cls_act
        levels = elastic_levels(trace[f"block{b}.out"], consumer)
        rates.append(spike_rate(encode_rate(levels, model.config.T)))
    return rates


def spike_rates_csv(rates: list[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "rate"])
    for i, r in enumerate(rates):
        w.writerow([i, f"{r:.6f}"])
    return buf.getvalue()
