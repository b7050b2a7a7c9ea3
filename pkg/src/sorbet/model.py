"""Toy Sorbet encoder: spiking attention, BSPN sublayers and the stage chain.

Stages follow the quantize-then-replace chain:

* ``M0``  full precision (float64, softmax, layer norm, GeLU)
* ``M1``  1-bit weights, 4-bit activations, ReLU; softmax and layer norm kept
* ``M2``  M1 with PTsoftmax
* ``M3``  M2 with BSPN in place of layer norm
* ``S``   M3 with every matmul driven by rate-coded spike trains

M1 through S share one set of quantized parameters.  M3 multiplies
integer levels directly; S replaces each such product by spike-driven
accumulation, which is exactly equal by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.special import erf

from .counters import record
from .errors import ShapeError, StateError
from .kernels import (
    DEFAULT_CLAMP_MAX,
    BspnState,
    bspn_forward_infer,
    bspn_forward_train,
    ptsoftmax,
    relu,
)
from .numerics import DEFAULT_FRAC_BITS, FixedTensor, Mode
from .quantize import BinaryLinear, ElasticParams, binarize_weights, elastic_levels, pow2_scale
from .spiking import (
    DEFAULT_TIMESTEPS,
    SpikeTrain,
    encode_if,
    encode_rate,
    shift_to_grid,
    spike_accumulate,
    spike_accumulate_batched,
)

STAGES = ("M0", "M1", "M2", "M3", "S")
LN_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 64
    d: int = 32
    heads: int = 2
    blocks: int = 2
    seq: int = 16
    ffn_mult: int = 4
    classes: int = 2
    T: int = DEFAULT_TIMESTEPS
    act_bits: int = 4
    frac_bits: int = DEFAULT_FRAC_BITS
    clamp_max: float | None = DEFAULT_CLAMP_MAX
    k_mode: Mode = "round_nearest"
    pow2_norm: bool = True
    group_layout: Literal["heads", "channels_per_head"] = "heads"
    merge_attention_scale: bool = True
    encoder: Literal["rate", "if"] = "rate"

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if self.T < (1 << self.act_bits) - 1:
            raise ValueError("T too small to rate-code every activation level")

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @property
    def ffn(self) -> int:
        return self.d * self.ffn_mult


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class FloatBlock:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class FloatParams:
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    blocks: list[FloatBlock]
    cls_w: np.ndarray
    cls_b: np.ndarray


def init_float_params(cfg: ModelConfig, seed: int = 0) -> FloatParams:
    rng = np.random.default_rng(seed)

    def lin(n_in, n_out):
        return rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), rng.normal(0.0, 0.02, n_out)

    blocks = []
    for _ in range(cfg.blocks):
        wq, bq = lin(cfg.d, cfg.d)
        wk, bk = lin(cfg.d, cfg.d)
        wv, bv = lin(cfg.d, cfg.d)
        wo, bo = lin(cfg.d, cfg.d)
        w1, b1 = lin(cfg.d, cfg.ffn)
        w2, b2 = lin(cfg.ffn, cfg.d)
        blocks.append(FloatBlock(
            wq, bq, wk, bk, wv, bv, wo, bo,
            1.0 + rng.normal(0, 0.05, cfg.d), rng.normal(0, 0.05, cfg.d),
            w1, b1, w2, b2,
            1.0 + rng.normal(0, 0.05, cfg.d), rng.normal(0, 0.05, cfg.d),
        ))
    cls_w, cls_b = lin(cfg.d, cfg.classes)
    return FloatParams(
        rng.normal(0.0, 1.0, (cfg.vocab, cfg.d)),
        rng.normal(0.0, 0.5, (cfg.seq, cfg.d)),
        blocks, cls_w, cls_b,
    )


# Activation quantization sites inside a block.
#   x: block input feeding Q/K/V       q: scaled queries before SN(Q)
#   p: attention probabilities         o: attention context feeding wo
#   h: normalised input to the FFN     f: ReLU output feeding ffn_out
ACT_SITES = ("x", "q", "p", "o", "h", "f")


@dataclass
class SorbetBlockParams:
    wq: BinaryLinear
    wk: BinaryLinear
    wv: BinaryLinear
    wo: BinaryLinear
    ffn_in: BinaryLinear
    ffn_out: BinaryLinear
    attn_norm: BspnState
    ffn_norm: BspnState
    attn_ln: tuple[np.ndarray, np.ndarray]
    ffn_ln: tuple[np.ndarray, np.ndarray]
    act: dict[str, ElasticParams]
    d_k: int
    heads: int
    T: int = DEFAULT_TIMESTEPS
    # Q lands on a finer grid when 1/sqrt(d_k) is merged into wq, so the
    # merged shift loses no bits.
    q_frac_bits: int = DEFAULT_FRAC_BITS
    score_scale_exponent: int = 0


@dataclass
class QuantParams:
    tok_emb: FixedTensor
    pos_emb: FixedTensor
    blocks: list[SorbetBlockParams]
    cls: BinaryLinear
    cls_act: ElasticParams


@dataclass
class StageModel:
    stage: str
    config: ModelConfig
    float_params: FloatParams | None = None
    quant: QuantParams | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "M0" and self.float_params is None:
            raise StateError("stage M0 needs float parameters")
        if self.stage != "M0" and self.quant is None:
            raise StateError(f"stage {self.stage} needs quantized parameters")


@dataclass(frozen=True)
class Kernels:
    """Which kernel implements each replaceable operation."""

    softmax: Literal["float", "pt"] = "pt"
    norm: Literal["ln", "bspn"] = "bspn"
    matmul: Literal["level", "spike"] = "spike"
    clamp_max: float | None = DEFAULT_CLAMP_MAX
    k_mode: Mode = "round_nearest"
    T: int = DEFAULT_TIMESTEPS
    encoder: Literal["rate", "if"] = "rate"
    merged_scale: bool = True


def stage_kernels(stage: str, cfg: ModelConfig) -> Kernels:
    table = {
        "M1": ("float", "ln", "level"),
        "M2": ("pt", "ln", "level"),
        "M3": ("pt", "bspn", "level"),
        "S": ("pt", "bspn", "spike"),
    }
    if stage not in table:
        raise StateError(f"stage {stage} has no fixed-point kernel set")
    sm, norm, mm = table[stage]
    return Kernels(sm, norm, mm, cfg.clamp_max, cfg.k_mode, cfg.T, cfg.encoder,
                   cfg.merge_attention_scale)


# ---------------------------------------------------------------------------
# full-precision reference forward (M0)
# ---------------------------------------------------------------------------

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + LN_EPS) + b


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _split_heads(x, heads):
    *lead, seq, d = x.shape
    return np.swapaxes(x.reshape(*lead, seq, heads, d // heads), -2, -3)


def _merge_heads(x):
    *lead, heads, seq, dk = x.shape
    return np.swapaxes(x, -2, -3).reshape(*lead, seq, heads * dk)


def float_forward(p: FloatParams, ids: np.ndarray, cfg: ModelConfig, trace: dict | None = None) -> np.ndarray:
    ids = np.asarray(ids)
    x = p.tok_emb[ids] + p.pos_emb[: ids.shape[-1]]
    scale = 1.0 / math.sqrt(cfg.d_k)
    for i, b in enumerate(p.blocks):
        if trace is not None:
            trace[f"block{i}.x"] = x
        q = x @ b.wq + b.bq
        k = x @ b.wk + b.bk
        v = x @ b.wv + b.bv
        qh, kh, vh = (_split_heads(t, cfg.heads) for t in (q, k, v))
        probs = _softmax(scale * qh @ np.swapaxes(kh, -1, -2))
        ctx = _merge_heads(probs @ vh)
        x1 = _layer_norm(x + ctx @ b.wo + b.bo, b.ln1_g, b.ln1_b)
        hidden = _gelu(x1 @ b.w1 + b.b1)
        x = _layer_norm(x1 + hidden @ b.w2 + b.b2, b.ln2_g, b.ln2_b)
        if trace is not None:
            trace[f"block{i}.q"] = scale * q
            trace[f"block{i}.p"] = probs
            trace[f"block{i}.o"] = ctx
            trace[f"block{i}.h"] = x1
            trace[f"block{i}.f"] = np.maximum(x1 @ b.w1 + b.b1, 0.0)
    if trace is not None:
        trace["cls"] = x[..., 0, :]
    return x[..., 0, :] @ p.cls_w + p.cls_b


# ---------------------------------------------------------------------------
# fixed-point building blocks
# ---------------------------------------------------------------------------

def _encode(levels: np.ndarray, k: Kernels) -> SpikeTrain:
    return encode_rate(levels, k.T) if k.encoder == "rate" else encode_if(levels, k.T)


def _level_matmul(levels: np.ndarray, M: np.ndarray) -> np.ndarray:
    levels = levels.astype(np.int64)
    M = np.asarray(M, dtype=np.int64)
    out = np.matmul(levels, M)
    inner = levels.shape[-1]
    record(mul=out.size * inner, add=out.size * (inner - 1))
    return out


def _product(levels: np.ndarray, M: np.ndarray, k: Kernels, trace, name) -> np.ndarray:
    """levels @ M, by integer multiply (level domain) or spike accumulation."""
    if k.matmul == "level":
        return _level_matmul(levels, M)
    train = _encode(levels, k)
    if trace is not None:
        trace[name] = train
    if M.ndim == 2:
        return spike_accumulate(train, M)
    return spike_accumulate_batched(train, M)


def _add(a: FixedTensor, b: FixedTensor) -> FixedTensor:
    if a.frac_bits != b.frac_bits:
        raise ShapeError("operands on different grids")
    out = a.mantissas + b.mantissas
    record(add=out.size)
    return FixedTensor(out, a.frac_bits, a.width)


def binary_layer(levels: np.ndarray, in_exponent: int, W: BinaryLinear, k: Kernels,
                 out_frac_bits: int, trace=None, name="") -> FixedTensor:
    acc = _product(levels, W.signs, k, trace, name)
    y = shift_to_grid(acc, W.scale_exponent + in_exponent, out_frac_bits)
    bias = W.out_bias.regrid(out_frac_bits)
    return _add(y, FixedTensor(np.broadcast_to(bias.mantissas, y.shape), out_frac_bits))


def _fixed_layer_norm(x: FixedTensor, g, b) -> FixedTensor:
    n = x.shape[-1]
    rows = x.mantissas.size // n
    # cost table row for layer norm, per normalised vector
    record(add=rows * (3 * n - 2), sub=rows * 2 * n, mul=rows * 2 * n,
           div=rows * (n + 2), square=rows * n, sqrt=rows)
    return FixedTensor.from_real(_layer_norm(x.to_real(), g, b), x.frac_bits, x.width)


def _fixed_softmax(S: FixedTensor) -> FixedTensor:
    n = S.shape[-1]
    rows = S.mantissas.size // n
    record(add=rows * (n - 1), div=rows * n, exp=rows * n)
    return FixedTensor.from_real(_softmax(S.to_real()), S.frac_bits, S.width)


def _norm(x: FixedTensor, state: BspnState, ln, k: Kernels, calibrate: bool) -> tuple[FixedTensor, BspnState]:
    if k.norm == "ln":
        return _fixed_layer_norm(x, *ln), state
    if calibrate:
        _, fitted = bspn_forward_train(x, replace(state, momentum_alpha=0.0))
        state = replace(fitted, momentum_alpha=state.momentum_alpha)
        if state.pow2_scale_mode:
            state = state.snapped()
    return bspn_forward_infer(x, state), state


# ---------------------------------------------------------------------------
# block forward
# ---------------------------------------------------------------------------

def spiking_attention(x: FixedTensor, p: SorbetBlockParams, k: Kernels = Kernels(),
                      trace: dict | None = None, prefix: str = "") -> FixedTensor:
    """SN(PTsoftmax(alpha * SN(Q) K^T)) V followed by the output projection.

    ``x`` has shape ``[..., seq, d]`` on the activation grid.  The left
    operand of every product is the spike-coded (or level) side.
    """
    if x.mantissas.ndim < 2:
        raise ShapeError("attention input must be [..., seq, d]")
    f = x.frac_bits
    ax, aq, ap, ao = (p.act[s] for s in ("x", "q", "p", "o"))
    xl = elastic_levels(x, ax)
    q = binary_layer(xl, ax.k_alpha, p.wq, k, p.q_frac_bits, trace, prefix + "x")
    kk = binary_layer(xl, ax.k_alpha, p.wk, k, f)
    v = binary_layer(xl, ax.k_alpha, p.wv, k, f)

    ql = _split_heads(elastic_levels(q, aq), p.heads)
    kh = _split_heads(kk.mantissas, p.heads)
    vh = _split_heads(v.mantissas, p.heads)
    acc = _product(ql, np.swapaxes(kh, -1, -2), k, trace, prefix + "q")
    if k.merged_scale:
        scores = shift_to_grid(acc, aq.k_alpha - f, f)
    else:
        # scale applied after SN(Q) as a real multiply
        real = np.ldexp(acc.astype(np.float64), aq.k_alpha - f) / math.sqrt(p.d_k)
        record(mul=acc.size)
        scores = FixedTensor.from_real(real, f, rounding="floor")
    if k.softmax == "pt":
        probs = ptsoftmax(scores, k.clamp_max, k.k_mode).to_fixed(f)
    else:
        probs = _fixed_softmax(scores)
    pl = elastic_levels(probs, ap)
    ctx_acc = _product(pl, vh, k, trace, prefix + "p")
    ctx = shift_to_grid(_merge_heads(ctx_acc), ap.k_alpha - f, f)
    if trace is not None:
        trace[prefix + "scores"] = scores
        trace[prefix + "ctx"] = ctx
    ol = elastic_levels(ctx, ao)
    return binary_layer(ol, ao.k_alpha, p.wo, k, f, trace, prefix + "o")


def sorbet_block(x: FixedTensor, p: SorbetBlockParams, k: Kernels = Kernels(),
                 trace: dict | None = None, prefix: str = "",
                 calibrate: bool = False) -> FixedTensor:
    """norm(x + attention(x)) then norm(x + FFN(x)); FFN activation is ReLU."""
    f = x.frac_bits
    a = spiking_attention(x, p, k, trace, prefix)
    x1, st = _norm(_add(x, a), p.attn_norm, p.attn_ln, k, calibrate)
    if calibrate:
        p.attn_norm = st
    ah, af = p.act["h"], p.act["f"]
    u = relu(binary_layer(elastic_levels(x1, ah), ah.k_alpha, p.ffn_in, k, f, trace, prefix + "h"))
    v = binary_layer(elastic_levels(u, af), af.k_alpha, p.ffn_out, k, f, trace, prefix + "f")
    x2, st = _norm(_add(x1, v), p.ffn_norm, p.ffn_ln, k, calibrate)
    if calibrate:
        p.ffn_norm = st
    return x2


def embed(q: QuantParams, ids: np.ndarray) -> FixedTensor:
    ids = np.asarray(ids)
    tok = q.tok_emb.mantissas[ids]
    pos = q.pos_emb.mantissas[: ids.shape[-1]]
    return _add(FixedTensor(tok, q.tok_emb.frac_bits), FixedTensor(np.broadcast_to(pos, tok.shape), q.pos_emb.frac_bits))


def forward_hidden(model: StageModel, hidden: FixedTensor, trace: dict | None = None,
                   calibrate: bool = False) -> FixedTensor:
    """Fixed-point forward from embedded activations ``[..., seq, d]`` to logits."""
    if model.stage == "M0":
        raise StateError("M0 runs in floating point; use forward()")
    k = stage_kernels(model.stage, model.config)
    q = model.quant
    x = hidden
    for i, bp in enumerate(q.blocks):
        x = sorbet_block(x, bp, k, trace, f"block{i}.", calibrate)
        if trace is not None:
            trace[f"block{i}.out"] = x
    first = x[..., 0, :]
    cl = elastic_levels(first, q.cls_act)
    return binary_layer(cl, q.cls_act.k_alpha, q.cls, k, x.frac_bits, trace, "cls")


def forward(model: StageModel, ids: np.ndarray, trace: dict | None = None) -> np.ndarray:
    """Logits for integer token ids ``[..., seq]``; deterministic given the weights."""
    ids = np.asarray(ids)
    if ids.shape[-1] > model.config.seq:
        raise ShapeError(f"sequence longer than {model.config.seq}")
    if model.stage == "M0":
        return float_forward(model.float_params, ids, model.config, trace)
    return forward_hidden(model, embed(model.quant, ids), trace).to_real()


# ---------------------------------------------------------------------------
# stage transformations
# ---------------------------------------------------------------------------

def _site_params(values: np.ndarray, bits: int, signed: bool, frac_bits: int) -> ElasticParams:
    v = np.asarray(values, dtype=np.float64).ravel()
    lo = float(np.quantile(v, 0.001)) if signed else 0.0
    hi = float(np.quantile(v, 0.999))
    span = max(hi - lo, 2.0 ** -frac_bits)
    beta = math.floor(lo * (1 << frac_bits) + 0.5) / (1 << frac_bits)
    return ElasticParams(span / ((1 << bits) - 1), beta, bits)


def _fold(W: np.ndarray, b: np.ndarray, act: ElasticParams, cfg: ModelConfig) -> BinaryLinear:
    """Binarize and fold the activation threshold into the bias.

    The quantized input stands for ``level * 2**k + beta``, so
    ``beta * colsum(W_binary)`` moves into the bias.
    """
    bl = binarize_weights(W)
    bias = b + act.beta * bl.dense().sum(axis=0)
    return BinaryLinear(bl.signs, bl.scale_exponent, FixedTensor.from_real(bias, cfg.frac_bits))


def quantize_model(m0: StageModel, calib_ids: np.ndarray) -> StageModel:
    """M0 -> M1: sign weights, power-of-two scales, 4-bit activations, ReLU FFN.

    Activation scales and thresholds come from M0's activation ranges on
    ``calib_ids``.
    """
    cfg = m0.config
    fp = m0.float_params
    trace: dict = {}
    float_forward(fp, calib_ids, cfg, trace)
    f, bits = cfg.frac_bits, cfg.act_bits
    s_alpha = pow2_scale(1.0 / math.sqrt(cfg.d_k))
    blocks = []
    for i, b in enumerate(fp.blocks):
        act = {
            "x": _site_params(trace[f"block{i}.x"], bits, True, f),
            "q": _site_params(trace[f"block{i}.q"], bits, False, f),
            "p": ElasticParams.from_exponent(-bits, 0.0, bits),
            "o": _site_params(trace[f"block{i}.o"], bits, True, f),
            "h": _site_params(trace[f"block{i}.h"], bits, True, f),
            "f": _site_params(trace[f"block{i}.f"], bits, False, f),
        }
        wq = _fold(b.wq, b.bq, act["x"], cfg)
        q_frac = f
        if cfg.merge_attention_scale:
            q_frac = f + max(0, -s_alpha)
            # 2**s_alpha folded into the weight scale; bias mantissas reread on the finer grid
            wq = BinaryLinear(wq.signs, wq.scale_exponent + s_alpha,
                              FixedTensor(wq.out_bias.mantissas, wq.out_bias.frac_bits - s_alpha))
        else:
            act["q"] = ElasticParams.from_exponent(act["q"].k_alpha - s_alpha, 0.0, bits)
        blocks.append(SorbetBlockParams(
            wq=wq,
            wk=_fold(b.wk, b.bk, act["x"], cfg),
            wv=_fold(b.wv, b.bv, act["x"], cfg),
            wo=_fold(b.wo, b.bo, act["o"], cfg),
            ffn_in=_fold(b.w1, b.b1, act["h"], cfg),
            ffn_out=_fold(b.w2, b.b2, act["f"], cfg),
            attn_norm=BspnState(np.ones(cfg.d), b.ln1_g, b.ln1_b, num_heads=cfg.heads,
                                pow2_scale_mode=cfg.pow2_norm, group_layout=cfg.group_layout),
            ffn_norm=BspnState(np.ones(cfg.d), b.ln2_g, b.ln2_b, num_heads=cfg.heads,
                               pow2_scale_mode=cfg.pow2_norm, group_layout=cfg.group_layout),
            attn_ln=(b.ln1_g.copy(), b.ln1_b.copy()),
            ffn_ln=(b.ln2_g.copy(), b.ln2_b.copy()),
            act=act, d_k=cfg.d_k, heads=cfg.heads, T=cfg.T,
            q_frac_bits=q_frac, score_scale_exponent=s_alpha,
        ))
    cls_act = _site_params(trace["cls"], bits, True, f)
    quant = QuantParams(
        FixedTensor.from_real(fp.tok_emb, f),
        FixedTensor.from_real(fp.pos_emb, f),
        blocks,
        _fold(fp.cls_w, fp.cls_b, cls_act, cfg),
        cls_act,
    )
    return StageModel("M1", cfg, quant=quant)


def _copy_quant(q: QuantParams) -> QuantParams:
    blocks = [replace(b, attn_norm=b.attn_norm.copy(), ffn_norm=b.ffn_norm.copy(), act=dict(b.act))
              for b in q.blocks]
    return replace(q, blocks=blocks)


def with_ptsoftmax(m1: StageModel) -> StageModel:
    return StageModel("M2", m1.config, quant=_copy_quant(m1.quant))


def with_bspn(m2: StageModel, calib_ids: np.ndarray) -> StageModel:
    """M2 -> M3: swap layer norm for BSPN; psi from one calibration batch.

    Each site's psi is the second moment of its group-scaled input (the
    running update with momentum 0); in power-of-two mode gamma/psi is then
    snapped to a power of two.
    """
    m3 = StageModel("M3", m2.config, quant=_copy_quant(m2.quant))
    forward_hidden(m3, embed(m3.quant, calib_ids), calibrate=True)
    return m3


def to_spiking(m3: StageModel) -> StageModel:
    return StageModel("S", m3.config, quant=_copy_quant(m3.quant))


@dataclass
class StageReport:
    source: str
    target: str
    max_abs: float
    mean_abs: float
    argmax_agreement: float
    bound: str = ""

    def as_dict(self) -> dict:
        return {"from": self.source, "to": self.target, "max_abs": self.max_abs,
                "mean_abs": self.mean_abs, "argmax_agreement": self.argmax_agreement,
                "bound": self.bound}


_BOUNDS = {
    ("M1", "M2"): "each attention probability within a factor 2*sqrt(2) of base-2 softmax",
    ("M3", "S"): "exact: spike accumulation equals the level product",
}


def compare_stages(a: StageModel, b: StageModel, ids: np.ndarray) -> StageReport:
    la, lb = forward(a, ids), forward(b, ids)
    diff = np.abs(la - lb)
    agree = float(np.mean(np.argmax(la, axis=-1) == np.argmax(lb, axis=-1)))
    return StageReport(a.stage, b.stage, float(diff.max()), float(diff.mean()), agree,
                       _BOUNDS.get((a.stage, b.stage), ""))


def transform_pipeline(m0: StageModel, calib_ids: np.ndarray, battery_ids: np.ndarray
                       ) -> tuple[list[StageModel], list[StageReport]]:
    """Build M1, M2, M3 and S from ``m0`` and measure adjacent-stage logit deviation."""
    if m0.stage != "M0":
        raise StateError("pipeline starts from a full-precision M0")
    m1 = quantize_model(m0, calib_ids)
    m2 = with_ptsoftmax(m1)
    m3 = with_bspn(m2, calib_ids)
    s = to_spiking(m3)
    chain = [m0, m1, m2, m3, s]
    reports = [compare_stages(a, b, battery_ids) for a, b in zip(chain, chain[1:])]
    return chain[1:], reports


def build_toy(cfg: ModelConfig, seed: int = 0) -> StageModel:
    return StageModel("M0", cfg, float_params=init_float_params(cfg, seed))


def random_ids(cfg: ModelConfig, batch: int, seed: int, seq: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, cfg.vocab, size=(batch, seq or cfg.seq))
