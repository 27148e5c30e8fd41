"""
Shared fixtures for the test suite.
"""
import copy
import json
import math

import pytest

BASE_CONFIG = {
    "grid": {"L": math.pi, "n": 64},
    "time": {"T": 0.02, "dt": 0.001},
    "equation": {"kind": "FP", "diffusion": {"kind": "constant", "value": 0.5}},
    "noise": {"family": "damped_trig", "N": 2, "c": 0.5, "p": 2.0},
    "initial_condition": {"profile": "gaussian", "width": 0.5},
    "experiment": {"mode": "B", "delta": 0.0, "ensemble_size": 3, "eps_ladder": [0.4, 0.2]},
}


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict update; a None value removes the key."""
    result = copy.deepcopy(base)
    for key, value in overrides.items():
        if value is None:
            result.pop(key, None)
        elif isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


@pytest.fixture
def make_config():
    """Factory for configuration dictionaries derived from BASE_CONFIG."""
    def factory(**overrides):
        return merge(BASE_CONFIG, overrides)
    return factory


@pytest.fixture
def write_config(tmp_path):
    """Write a configuration dictionary to a JSON file and return its path."""
    def writer(config: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(config, indent=2))
        return str(path)
    return writer
