import json

import numpy as np
import pytest

from proco import checkpoint
from proco.config import TrainConfig
from proco.dataset import generate_long_tailed, split
from proco.trainer import fit


def test_round_trip_preserves_everything(tmp_path):
    ds = generate_long_tailed(3, 40, 5, 4, seed=0)
    tr, te = split(ds, 0.7)
    cfg = TrainConfig(hidden=16, g_hidden=16, k=8, M=16, batch_size=8, epochs=1)
    state, _ = fit(cfg, tr, te)
    path = tmp_path / "ck.json"
    checkpoint.save(path, state.params, state.bank, cfg, state.key.key_params)
    params, bank, cfg2 = checkpoint.load(path)
    assert cfg2 == cfg
    assert params.keys() == state.params.keys()
    for name in params:
        np.testing.assert_array_equal(params[name], state.params[name])
    np.testing.assert_array_equal(bank.P, state.bank.P)
    np.testing.assert_array_equal(bank.calib, state.bank.calib)
    doc = json.loads(path.read_text())
    assert doc["config_hash"] == cfg.digest()
    assert "key_params" in doc


def test_rejects_foreign_and_future_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ValueError, match="not a checkpoint"):
        checkpoint.load(p)
    p.write_text(json.dumps({"format": checkpoint.FORMAT, "version": 99}))
    with pytest.raises(ValueError, match="version"):
        checkpoint.load(p)
