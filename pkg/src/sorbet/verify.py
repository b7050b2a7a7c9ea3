"""Oracles and seeded property suites.

The oracles here are deliberately independent of the kernels they check:
exact rationals for base-2 softmax on integer exponents, multi-precision
or extended-precision floats elsewhere, brute-force integer products for
the spike equivalence, central differences for the gradients.  Every
sample draws from its own seed so any counterexample can be replayed.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import mpmath
import numpy as np

from .counters import counting
from .distill import DistillBatch, total_loss_grad
from .energy import measure_kernel, multiplier_free, table_cost
from .errors import DomainError
from .kernels import BspnState, ptsoftmax
from .model import (
    Kernels,
    ModelConfig,
    SorbetBlockParams,
    build_toy,
    forward,
    random_ids,
    sorbet_block,
    transform_pipeline,
)
from .numerics import FixedTensor
from .quantize import BinaryLinear, ElasticParams
from .spiking import encode_rate, spiking_matmul

LOWER = 1.0 / (2.0 * math.sqrt(2.0))
UPPER = 2.0 * math.sqrt(2.0)
SQRT2 = math.sqrt(2.0)
PAD = 1e-12


# ---------------------------------------------------------------------------
# ratio bound and its two-step decomposition
# ---------------------------------------------------------------------------

def oracle_base2(x) -> list[Fraction]:
    """Exact base-2 softmax for integer-valued inputs."""
    vals = [Fraction(v) for v in np.ravel(x)]
    if any(v.denominator != 1 for v in vals):
        raise DomainError("2**x is rational only for integer x")
    lo = min(int(v) for v in vals)
    w = [1 << (int(v) - lo) for v in vals]
    s = sum(w)
    return [Fraction(v, s) for v in w]


def _round_log2(total: Fraction) -> int:
    """round(log2 total), via the square comparison total^2 vs 2^(2b+1)."""
    b = math.floor(mpmath.log(total.numerator, 2) - mpmath.log(total.denominator, 2))
    while Fraction(2) ** b > total:
        b -= 1
    while Fraction(2) ** (b + 1) <= total:
        b += 1
    return b + 1 if total * total >= Fraction(2) ** (2 * b + 1) else b


@dataclass
class Lemma1Sample:
    x: list[float]
    a: list[float]
    b: list[Fraction]
    c: list[Fraction]
    k: int
    ratio_ab: tuple[float, float]
    ratio_bc: tuple[float, float]
    ratio_ca: tuple[float, float]
    ineq_i: bool
    ineq_ii: bool
    lemma: bool

    @property
    def consistent(self) -> bool:
        """(i) and (ii) together imply the composed bound."""
        return not (self.ineq_i and self.ineq_ii) or self.lemma


def lemma1_check(x) -> Lemma1Sample:
    """a = F2(x), b = F2(ceil x), c = 2**(ceil x - k) with k = round(log2 sum 2**ceil x_j)."""
    x = [float(v) for v in np.ravel(x)]
    if not x or not all(math.isfinite(v) for v in x):
        raise DomainError("finite non-empty vector required")
    ceil = [math.ceil(v) for v in x]
    b = oracle_base2(ceil)
    lo = min(ceil)
    k = _round_log2(Fraction(sum(1 << (c - lo) for c in ceil))) + lo
    c = [Fraction(2) ** (ci - k) for ci in ceil]
    with mpmath.workdps(50):
        top = max(mpmath.mpf(v) for v in x)
        w = [mpmath.power(2, mpmath.mpf(v) - top) for v in x]
        s = mpmath.fsum(w)
        a_mp = [v / s for v in w]
        ab = [a_mp[i] / mpmath.mpf(b[i].numerator) * b[i].denominator for i in range(len(x))]
        ca = [mpmath.mpf(c[i].numerator) / c[i].denominator / a_mp[i] for i in range(len(x))]
    bc = [b[i] / c[i] for i in range(len(x))]
    ab_f = (float(min(ab)), float(max(ab)))
    ca_f = (float(min(ca)), float(max(ca)))
    bc_f = (float(min(bc)), float(max(bc)))
    ineq_i = ab_f[0] >= 0.5 * (1 - PAD) and ab_f[1] <= 2.0 * (1 + PAD)
    ineq_ii = min(bc) * min(bc) * 2 >= 1 and max(bc) * max(bc) <= 2  # exact
    lemma = ca_f[0] >= LOWER * (1 - PAD) and ca_f[1] <= UPPER * (1 + PAD)
    return Lemma1Sample(x, [float(v) for v in a_mp], b, c, k, ab_f, bc_f, ca_f, ineq_i, ineq_ii, lemma)


def _draw_rows(seed: int, count: int, n: int, lo: float, hi: float, frac_bits: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = rng.integers(int(lo * (1 << frac_bits)), int(hi * (1 << frac_bits)) + 1, size=(count, n))
    return m


def _base2_rows(x: np.ndarray) -> np.ndarray:
    xl = x.astype(np.longdouble)
    w = np.exp2(xl - xl.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


@dataclass
class SweepResult:
    samples: int
    elements: int
    violations: dict[str, int]
    extremes: dict[str, list[float]]
    counterexamples: list[dict]


def lemma1_sweep(seed: int = 0, samples: int = 100_000, n_range=(2, 64), x_range=(-10.0, 4.0),
                 k_mode: str = "round_nearest", clamp_max=None, frac_bits: int = 16,
                 max_counterexamples: int = 10) -> SweepResult:
    """Random score rows through :func:`ptsoftmax`, checked against base-2 softmax.

    Rows are drawn on the ``2**-frac_bits`` grid, one generator per row
    length, seeded from ``(seed, n)``.  Inequality (ii) and the lemma use
    the kernel's own outputs as ``c``.
    """
    lengths = np.arange(n_range[0], n_range[1] + 1)
    per_n = np.full(lengths.size, samples // lengths.size)
    per_n[: samples % lengths.size] += 1
    viol = {"i": 0, "ii": 0, "lemma": 0}
    ext = {"a/b": [math.inf, -math.inf], "b/c": [math.inf, -math.inf], "c/a": [math.inf, -math.inf]}
    examples: list[dict] = []
    elements = 0
    for n, count in zip(lengths.tolist(), per_n.tolist()):
        if count == 0:
            continue
        row_seed = _row_seed(seed, n)
        m = _draw_rows(row_seed, count, n, x_range[0], x_range[1], frac_bits)
        x = np.ldexp(m.astype(np.float64), -frac_bits)
        ceil = -((-m) >> frac_bits)
        a = _base2_rows(x)
        b = _base2_rows(ceil.astype(np.float64))
        c = np.ldexp(np.longdouble(1.0), ptsoftmax(FixedTensor(m, frac_bits, 48), clamp_max, k_mode).exponents)
        ab, bc, ca = a / b, b / c, c / a
        checks = {
            "i": (ab < 0.5 * (1 - PAD)) | (ab > 2.0 * (1 + PAD)),
            "ii": (bc < (1 / SQRT2) * (1 - PAD)) | (bc > SQRT2 * (1 + PAD)),
            "lemma": (ca < LOWER * (1 - PAD)) | (ca > UPPER * (1 + PAD)),
        }
        for key, bad in checks.items():
            viol[key] += int(bad.sum())
        for key, r in (("a/b", ab), ("b/c", bc), ("c/a", ca)):
            ext[key][0] = min(ext[key][0], float(r.min()))
            ext[key][1] = max(ext[key][1], float(r.max()))
        bad_rows = np.flatnonzero(checks["lemma"].any(axis=1) | checks["i"].any(axis=1) | checks["ii"].any(axis=1))
        for r in bad_rows[: max(0, max_counterexamples - len(examples))]:
            examples.append({"seed": row_seed, "n": n, "row": int(r), "frac_bits": frac_bits,
                             "x": x[r].tolist(), "c_over_a": ca[r].astype(float).tolist()})
        elements += count * n
    return SweepResult(int(per_n.sum()), elements, viol, ext, examples)


def _row_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, n]).generate_state(1)[0])


def replay_lemma1(example: dict, x_range=(-10.0, 4.0)) -> np.ndarray:
    """Regenerate the row a counterexample came from."""
    fb = example["frac_bits"]
    count = example["row"] + 1
    m = _draw_rows(example["seed"], count, example["n"], x_range[0], x_range[1], fb)
    return np.ldexp(m[example["row"]].astype(np.float64), -fb)


# ---------------------------------------------------------------------------
# spike / level equivalence
# ---------------------------------------------------------------------------

def random_binary_linear(rng: np.random.Generator, n_in: int, n_out: int) -> BinaryLinear:
    signs = rng.choice(np.array([-1, 1]), size=(n_in, n_out))
    bias = FixedTensor(rng.integers(-64, 65, n_out))
    return BinaryLinear(signs, int(rng.integers(-5, -1)), bias)


def random_block(rng: np.random.Generator, d: int = 16, heads: int = 2, ffn: int = 32,
                 T: int = 16) -> SorbetBlockParams:
    def norm():
        st = BspnState(rng.uniform(0.02, 0.2, d), rng.uniform(0.5, 2.0, d), rng.normal(0, 0.2, d),
                       num_heads=heads, pow2_scale_mode=True)
        return st.snapped()

    def act(signed=True):
        beta = float(rng.integers(-4, 1)) / 4 if signed else 0.0
        return ElasticParams.from_exponent(int(rng.integers(-3, 0)), beta)

    d_k = d // heads
    ones = (np.ones(d), np.zeros(d))
    return SorbetBlockParams(
        wq=random_binary_linear(rng, d, d), wk=random_binary_linear(rng, d, d),
        wv=random_binary_linear(rng, d, d), wo=random_binary_linear(rng, d, d),
        ffn_in=random_binary_linear(rng, d, ffn), ffn_out=random_binary_linear(rng, ffn, d),
        attn_norm=norm(), ffn_norm=norm(), attn_ln=ones, ffn_ln=ones,
        act={"x": act(), "q": act(False), "p": ElasticParams.from_exponent(-4),
             "o": act(), "h": act(), "f": act(False)},
        d_k=d_k, heads=heads, T=T,
    )


def block_equivalence(seed: int, seq: int = 8, d: int = 16, heads: int = 2, T: int = 16) -> bool:
    """One random instance: spiking block output == level-domain block output."""
    rng = np.random.default_rng(seed)
    p = random_block(rng, d, heads, 2 * d, T)
    x = FixedTensor.from_real(rng.normal(0.0, 1.5, (seq, d)))
    spike = sorbet_block(x, p, Kernels(matmul="spike", T=T))
    level = sorbet_block(x, p, Kernels(matmul="level", T=T))
    return spike == level


def matmul_equivalence(seed: int, m: int = 32, p: int = 16, rows: int = 8, T: int = 16) -> bool:
    rng = np.random.default_rng(seed)
    levels = rng.integers(0, 16, size=(rows, m))
    W = random_binary_linear(rng, m, p)
    got = spiking_matmul(encode_rate(levels, T), W, out_frac_bits=16)
    want = np.array([[sum(int(levels[r, i]) * int(W.signs[i, j]) for i in range(m)) for j in range(p)]
                     for r in range(rows)], dtype=np.int64)
    s = W.scale_exponent + 16
    want = want << s if s >= 0 else want >> -s
    return bool(np.array_equal(got.mantissas, want))


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

@dataclass
class SuiteConfig:
    seed: int = 0
    suites: tuple[str, ...] = ("lemma1", "decomposition", "matmul_equivalence", "op_counts",
                               "gradients", "multiplier_free")
    lemma_samples: int = 100_000
    k_mode: str = "round_nearest"
    clamp_max: float | None = None
    equivalence_instances: int = 1000
    gradient_batches: int = 100
    op_count_sizes: tuple[int, ...] = (1, 8, 64, 512)
    bspn_group_sizes: tuple[int, ...] = (8, 16, 64)
    model: ModelConfig = field(default_factory=ModelConfig)
    workers: int = 4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    samples: int
    failures: int
    seconds: float = 0.0
    counterexamples: list = field(default_factory=list)
    details: dict = field(default_factory=dict)


@dataclass
class SuiteReport:
    config: dict
    results: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self) -> str:
        # wall-clock timings are left out so equal configs give equal bytes
        results = []
        for r in self.results:
            d = asdict(r)
            d.pop("seconds")
            results.append(_jsonable(d))
        doc = {"passed": self.passed, "config": self.config, "results": results}
        return json.dumps(doc, indent=2, sort_keys=True)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


def _suite_lemma(cfg: SuiteConfig, which: str) -> SuiteResult:
    sweep = lemma1_sweep(cfg.seed, cfg.lemma_samples, k_mode=cfg.k_mode, clamp_max=cfg.clamp_max)
    keys = ("lemma",) if which == "lemma1" else ("i", "ii")
    fails = sum(sweep.violations[k] for k in keys)
    return SuiteResult(which, fails == 0, sweep.elements, fails, counterexamples=sweep.counterexamples if fails else [],
                       details={"elements": sweep.elements, "violations": sweep.violations,
                                "extremes": sweep.extremes, "k_mode": cfg.k_mode})


def _instance_seeds(seed: int, tag: int, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, tag])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


def _suite_matmul(cfg: SuiteConfig) -> SuiteResult:
    seeds = _instance_seeds(cfg.seed, 1, cfg.equivalence_instances)
    bad = [s for s in seeds if not block_equivalence(s, T=cfg.model.T)]
    direct = _instance_seeds(cfg.seed, 2, 20)
    bad += [s for s in direct if not matmul_equivalence(s, T=cfg.model.T)]
    return SuiteResult("matmul_equivalence", not bad, len(seeds) + len(direct), len(bad),
                       counterexamples=[{"seed": s} for s in bad[:10]])


def _suite_op_counts(cfg: SuiteConfig) -> SuiteResult:
    rows, bad = [], []
    for n in cfg.op_count_sizes:
        for kernel in ("ptsoftmax", "bspn"):
            got, want = measure_kernel(kernel, n, cfg.seed), table_cost(kernel, n)
            rows.append({"kernel": kernel, "n": n, "measured": got.as_dict(), "table": want.as_dict()})
            if got != want:
                bad.append(rows[-1])
    return SuiteResult("op_counts", not bad, len(rows), len(bad), counterexamples=bad,
                       details={"rows": rows})


def gradient_check(seed: int, h: float = 1e-5, rtol: float = 1e-4) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    B, C = int(rng.integers(1, 5)), int(rng.integers(2, 8))
    soft = lambda z: np.exp(z - z.max(1, keepdims=True)) / np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)
    p, q = soft(rng.normal(size=(B, C))), soft(rng.normal(size=(B, C)))
    shapes = [tuple(rng.integers(1, 5, size=2)) for _ in range(int(rng.integers(1, 4)))]
    rt = [rng.normal(size=s) for s in shapes]
    rs = [rng.normal(size=s) for s in shapes]
    _, gq, gr = total_loss_grad(DistillBatch(p, q, rt, rs))

    def loss(qq, rr):
        return total_loss_grad(DistillBatch(p, qq, rt, rr), check=False)[0]

    worst = 0.0
    ok = True

    def compare(analytic, numeric):
        nonlocal worst, ok
        err = abs(analytic - numeric)
        scale = max(abs(analytic), abs(numeric))
        worst = max(worst, err / scale if scale else err)
        if err > rtol * scale + 1e-9:
            ok = False

    for idx in np.ndindex(q.shape):
        qp, qm = q.copy(), q.copy()
        qp[idx] += h
        qm[idx] -= h
        compare(gq[idx], (loss(qp, rs) - loss(qm, rs)) / (2 * h))
    for bi, r in enumerate(rs):
        for idx in np.ndindex(r.shape):
            rp = [x.copy() for x in rs]
            rm = [x.copy() for x in rs]
            rp[bi][idx] += h
            rm[bi][idx] -= h
            compare(gr[bi][idx], (loss(q, rp) - loss(q, rm)) / (2 * h))
    return ok, worst


def _suite_gradients(cfg: SuiteConfig) -> SuiteResult:
    seeds = _instance_seeds(cfg.seed, 3, cfg.gradient_batches)
    results = [(s, *gradient_check(s)) for s in seeds]
    bad = [{"seed": s, "rel_err": e} for s, ok, e in results if not ok]
    return SuiteResult("gradients", not bad, len(seeds), len(bad), counterexamples=bad[:10],
                       details={"max_rel_err": max(e for _, _, e in results) if results else 0.0})


def _suite_multiplier_free(cfg: SuiteConfig) -> SuiteResult:
    mc = cfg.model
    m0 = build_toy(mc, cfg.seed)
    stages, _ = transform_pipeline(m0, random_ids(mc, 16, cfg.seed + 1), random_ids(mc, 4, cfg.seed + 2))
    s = stages[-1]
    with counting() as c:
        forward(s, random_ids(mc, 2, cfg.seed + 3))
    ok = multiplier_free(c)
    return SuiteResult("multiplier_free", ok, 1, 0 if ok else 1, details={"counts": c.as_dict()})


SUITES: dict[str, Callable[[SuiteConfig], SuiteResult]] = {
    "lemma1": lambda c: _suite_lemma(c, "lemma1"),
    "decomposition": lambda c: _suite_lemma(c, "decomposition"),
    "matmul_equivalence": _suite_matmul,
    "op_counts": _suite_op_counts,
    "gradients": _suite_gradients,
    "multiplier_free": _suite_multiplier_free,
}


def run_suite(cfg: SuiteConfig) -> SuiteReport:
    """Run the configured suites (concurrently); failures are returned, never raised."""
    unknown = [s for s in cfg.suites if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites {unknown}")

    def run(name):
        t0 = time.perf_counter()
        res = SUITES[name](cfg)
        res.seconds = round(time.perf_counter() - t0, 3)
        return res

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(run, cfg.suites))
    conf = _jsonable(asdict(cfg))
    return SuiteReport(conf, results)
