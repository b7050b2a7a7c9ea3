import json

import numpy as np
import pytest

from sorbet.checkpoint import load_checkpoint, save_checkpoint
from sorbet.model import ModelConfig, build_toy, forward, random_ids, transform_pipeline

CFG = ModelConfig(d=16, heads=2, blocks=2, seq=8)


@pytest.fixture(scope="module")
def chain():
    m0 = build_toy(CFG, 0)
    stages, _ = transform_pipeline(m0, random_ids(CFG, 8, 1), random_ids(CFG, 2, 2))
    return [m0] + stages


@pytest.mark.parametrize("index", range(5))
def test_round_trip(chain, tmp_path, index):
    m = chain[index]
    save_checkpoint(m, tmp_path)
    back = load_checkpoint(tmp_path)
    assert back.stage == m.stage and back.config == m.config
    ids = random_ids(CFG, 3, 7)
    np.testing.assert_array_equal(forward(back, ids), forward(m, ids))


def test_layout(chain, tmp_path):
    s = chain[-1]
    save_checkpoint(s, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["format"] == "sorbet-checkpoint" and man["version"] == 1 and man["stage"] == "S"
    meta = man["tensors"]["block0.wq.signs"]
    assert meta["dtype"] == "<i1" and meta["shape"] == [16, 16]
    raw = np.fromfile(tmp_path / meta["file"], dtype="<i1").reshape(16, 16)
    np.testing.assert_array_equal(raw, s.quant.blocks[0].wq.signs)
    emb = man["tensors"]["tok_emb"]
    assert emb["dtype"] == "<i4" and emb["frac_bits"] == 8
    assert (tmp_path / emb["file"]).stat().st_size == 4 * CFG.vocab * CFG.d


def test_deterministic_bytes(chain, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    save_checkpoint(chain[-1], a)
    save_checkpoint(chain[-1], b)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_rejects_foreign_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)
