from __future__ import annotations

import json

import pytest

from impulsive_lorenz.config import ExperimentConfig, load_config
from impulsive_lorenz.errors import ConfigError


def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    assert cfg.epsilons == (0.1, 0.05, 0.02, 0.01, 0.005, 0.0)
    assert cfg.measure.seeds == 200 and cfg.measure.orbit_length == 100_000


def test_nested_override():
    cfg = ExperimentConfig.from_json(json.dumps({"impulse": {"epsilon": 0.02},
                                                 "measure": {"seeds": 10}}))
    assert cfg.impulse.epsilon == 0.02 and cfg.measure.seeds == 10
    assert cfg.measure.burn_in == 1000


@pytest.mark.parametrize("text", [
    '{"bogus": 1}',
    '{"measure": {"sedes": 3}}',
    '{"backend": "pde"}',
    '{"schema": "experiment-config/2"}',
    '{"impulse": {"epsilon": 0.5}}',
    '{"epsilons": 0.1}',
    '[1, 2]',
    '{not json',
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))
    assert load_config(None) == ExperimentConfig()
