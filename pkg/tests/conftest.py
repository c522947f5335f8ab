"""
Shared pytest setup: puts scripts/ on sys.path the way the runner does and
provides small experiment configurations.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

import storage


TINY_CONFIG = {
    "synth": {"n_ads": 4, "n_slots": 2, "d_x": 3, "d_y": 2, "instances": 24, "test_instances": 12, "seed": 3},
    "edgenet": {
        "d_x": 3, "d_y": 2, "d_e": 4, "d_h": 4, "d_c": 4, "d_a": 4, "d_ff": 8,
        "n_layers": 1, "n_heads": 2, "head_hidden": 3,
    },
    "train": {
        "batch_size": 4, "steps": 3, "learning_rate": 0.01,
        "regret": {"relative_step": 0.1, "half_width": 1},
        "checkpoint_every": 2, "log_every": 1, "audit_every": 2, "audit_instances": 4,
    },
    "dnalite": {"hidden": 4, "steps": 3, "batch_size": 4},
    "gsp": {"tune_grid": [0.5, 1.0]},
    "regret": {"relative_step": 0.1, "half_width": 1},
    "eval": {"audit_instances": 4},
    "seeds": [0, 1],
}


@pytest.fixture
def tiny_config_file(tmp_path):
    """A tiny experiment config written to disk."""
    return storage.write_json(tmp_path / "tiny.config.json", TINY_CONFIG)


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.delenv("ADLAB_VERBOSE", raising=False)
    monkeypatch.delenv("ADLAB_CONFIG", raising=False)
