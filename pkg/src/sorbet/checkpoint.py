"""Checkpoint format: ``manifest.json`` plus one raw little-endian file per tensor.

Manifest layout::

    {
      "format": "sorbet-checkpoint", "version": 1,
      "stage": "S", "config": {...ModelConfig fields...},
      "scalars": {"block0.wq.scale_exponent": -3, ...},
      "tensors": {"block0.wq.signs": {"file": "block0.wq.signs.bin",
                                      "dtype": "<i1", "shape": [32, 32],
                                      "frac_bits": null}, ...}
    }

Each ``.bin`` file is the C-order array with the stated dtype and no
header.  Fixed-point tensors carry ``frac_bits``; floating tensors
(``<f8``) hold only offline statistics and full-precision M0 weights.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .kernels import BspnState
from .model import (
    ACT_SITES,
    FloatBlock,
    FloatParams,
    ModelConfig,
    QuantParams,
    SorbetBlockParams,
    StageModel,
)
from .numerics import FixedTensor
from .quantize import BinaryLinear, ElasticParams

FORMAT = "sorbet-checkpoint"
VERSION = 1
_FLOAT_BLOCK_FIELDS = [f.name for f in dataclasses.fields(FloatBlock)]
_LINEARS = ("wq", "wk", "wv", "wo", "ffn_in", "ffn_out")
_NORMS = ("attn_norm", "ffn_norm")


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.tensors: dict = {}
        self.scalars: dict = {}

    def array(self, name: str, arr: np.ndarray, dtype: str, frac_bits: int | None = None):
        data = np.ascontiguousarray(np.asarray(arr).astype(np.dtype(dtype)))
        fname = f"{name}.bin"
        (self.root / fname).write_bytes(data.tobytes())
        self.tensors[name] = {"file": fname, "dtype": dtype, "shape": list(data.shape),
                              "frac_bits": frac_bits}

    def fixed(self, name: str, t: FixedTensor):
        self.array(name, t.mantissas, "<i8" if t.width > 32 else "<i4", t.frac_bits)
        self.scalars[f"{name}.width"] = t.width

    def linear(self, name: str, w: BinaryLinear):
        self.array(f"{name}.signs", w.signs, "<i1")
        self.scalars[f"{name}.scale_exponent"] = w.scale_exponent
        self.fixed(f"{name}.bias", w.out_bias)

    def elastic(self, name: str, p: ElasticParams):
        self.scalars[f"{name}.alpha"] = p.alpha
        self.scalars[f"{name}.beta"] = p.beta
        self.scalars[f"{name}.bits"] = p.bits


class _Reader:
    def __init__(self, root: Path, manifest: dict):
        self.root = root
        self.tensors = manifest["tensors"]
        self.scalars = manifest["scalars"]

    def array(self, name: str) -> np.ndarray:
        meta = self.tensors[name]
        raw = (self.root / meta["file"]).read_bytes()
        return np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()

    def fixed(self, name: str) -> FixedTensor:
        return FixedTensor(self.array(name).astype(np.int64), self.tensors[name]["frac_bits"],
                           self.scalars[f"{name}.width"])

    def linear(self, name: str) -> BinaryLinear:
        return BinaryLinear(self.array(f"{name}.signs"), self.scalars[f"{name}.scale_exponent"],
                            self.fixed(f"{name}.bias"))

    def elastic(self, name: str) -> ElasticParams:
        s = self.scalars
        return ElasticParams(s[f"{name}.alpha"], s[f"{name}.beta"], s[f"{name}.bits"])


def save_checkpoint(model: StageModel, directory: str | Path) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    w = _Writer(root)
    if model.stage == "M0":
        fp = model.float_params
        for name in ("tok_emb", "pos_emb", "cls_w", "cls_b"):
            w.array(name, getattr(fp, name), "<f8")
        for i, b in enumerate(fp.blocks):
            for name in _FLOAT_BLOCK_FIELDS:
                w.array(f"block{i}.{name}", getattr(b, name), "<f8")
    else:
        q = model.quant
        w.fixed("tok_emb", q.tok_emb)
        w.fixed("pos_emb", q.pos_emb)
        w.linear("cls", q.cls)
        w.elastic("cls_act", q.cls_act)
        for i, b in enumerate(q.blocks):
            p = f"block{i}"
            for name in _LINEARS:
                w.linear(f"{p}.{name}", getattr(b, name))
            for name in _NORMS:
                st: BspnState = getattr(b, name)
                for field in ("psi", "gamma", "beta"):
                    w.array(f"{p}.{name}.{field}", getattr(st, field), "<f8")
                w.scalars[f"{p}.{name}.momentum_alpha"] = st.momentum_alpha
                w.scalars[f"{p}.{name}.num_heads"] = st.num_heads
                w.scalars[f"{p}.{name}.pow2_scale_mode"] = st.pow2_scale_mode
                w.scalars[f"{p}.{name}.group_layout"] = st.group_layout
            for name in ("attn_ln", "ffn_ln"):
                g, bb = getattr(b, name)
                w.array(f"{p}.{name}.gamma", g, "<f8")
                w.array(f"{p}.{name}.beta", bb, "<f8")
            for site in ACT_SITES:
                w.elastic(f"{p}.act.{site}", b.act[site])
            for name in ("d_k", "heads", "T", "q_frac_bits", "score_scale_exponent"):
                w.scalars[f"{p}.{name}"] = getattr(b, name)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "stage": model.stage,
        "config": dataclasses.asdict(model.config),
        "scalars": w.scalars,
        "tensors": w.tensors,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory: str | Path) -> StageModel:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise ValueError("not a sorbet checkpoint (or unsupported version)")
    cfg = ModelConfig(**manifest["config"])
    r = _Reader(root, manifest)
    stage = manifest["stage"]
    if stage == "M0":
        blocks = [FloatBlock(**{n: r.array(f"block{i}.{n}") for n in _FLOAT_BLOCK_FIELDS})
                  for i in range(cfg.blocks)]
        fp = FloatParams(r.array("tok_emb"), r.array("pos_emb"), blocks, r.array("cls_w"), r.array("cls_b"))
        return StageModel("M0", cfg, float_params=fp)
    s = r.scalars
    blocks = []
    for i in range(cfg.blocks):
        p = f"block{i}"
        norms = {
            name: BspnState(
                r.array(f"{p}.{name}.psi"), r.array(f"{p}.{name}.gamma"), r.array(f"{p}.{name}.beta"),
                momentum_alpha=s[f"{p}.{name}.momentum_alpha"], num_heads=s[f"{p}.{name}.num_heads"],
                pow2_scale_mode=s[f"{p}.{name}.pow2_scale_mode"], group_layout=s[f"{p}.{name}.group_layout"],
            )
            for name in _NORMS
        }
        blocks.append(SorbetBlockParams(
            **{name: r.linear(f"{p}.{name}") for name in _LINEARS},
            **norms,
            attn_ln=(r.array(f"{p}.attn_ln.gamma"), r.array(f"{p}.attn_ln.beta")),
            ffn_ln=(r.array(f"{p}.ffn_ln.gamma"), r.array(f"{p}.ffn_ln.beta")),
            act={site: r.elastic(f"{p}.act.{site}") for site in ACT_SITES},
            **{name: s[f"{p}.{name}"] for name in ("d_k", "heads", "T", "q_frac_bits", "score_scale_exponent")},
        ))
    quant = QuantParams(r.fixed("tok_emb"), r.fixed("pos_emb"), blocks, r.linear("cls"), r.elastic("cls_act"))
    return StageModel(stage, cfg, quant=quant)
