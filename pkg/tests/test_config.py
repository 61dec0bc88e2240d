"""Config loading: dotted keys, family tables, domain and structure parsing."""

import json
import math

import pytest

from islandsim import ConfigError, Logistic, WrightFisher
from islandsim.config import build_spec, load_config, nest_keys


def test_nest_keys_expands_dotted_paths():
    flat = {"drift.family": "logistic", "drift.params.gamma": 2.0,
            "other": 1}
    out = nest_keys(flat)
    assert out == {"drift": {"family": "logistic", "params": {"gamma": 2.0}},
                   "other": 1}


def test_nest_keys_conflict_detection():
    with pytest.raises(ConfigError):
        nest_keys({"a.b": 1, "a": 2})
    with pytest.raises(ConfigError):
        nest_keys({"a": 2, "a.b": 1})


def test_build_spec_dotted_and_nested_agree():
    dotted = {"drift.family": "logistic", "drift.params.gamma": 1.5,
              "drift.params.K": 2.0, "diffusion.family": "linear",
              "diffusion.params.beta": 0.5, "domain.upper": "inf"}
    nested = {"drift": {"family": "logistic",
                        "params": {"gamma": 1.5, "K": 2.0}},
              "diffusion": {"family": "linear", "params": {"beta": 0.5}},
              "domain": {"upper": "inf"}}
    a = build_spec(nest_keys(dotted))
    b = build_spec(nested)
    assert isinstance(a.drift, Logistic)
    assert a.drift == b.drift and a.diffusion == b.diffusion
    assert math.isinf(a.domain.upper)


def test_build_spec_structure_flags():
    cfg = {"drift": {"family": "logistic", "params": {"gamma": 1.0, "K": 1.0}},
           "diffusion": {"family": "wright_fisher", "params": {}},
           "domain": {"upper": 1.0},
           "structure": {"mu_concave": True, "sigma2_subadditive": True}}
    spec = build_spec(cfg)
    assert isinstance(spec.diffusion, WrightFisher)
    assert spec.structure.mu_concave
    assert not spec.structure.sigma2_superadditive
    cfg["structure"] = {"mu_wiggly": True}
    with pytest.raises(ConfigError):
        build_spec(cfg)


def test_build_spec_custom_family():
    cfg = {"drift": {"family": "custom",
                     "params": {"breakpoints": [0.0],
                                "coefficients": [[0.0, 0.5]]}},
           "diffusion": {"family": "linear", "params": {"beta": 1.0}},
           "domain": {"upper": "inf"}}
    spec = build_spec(cfg)
    assert float(spec.mu(2.0)) == pytest.approx(1.0)


def test_build_spec_errors():
    base = {"drift": {"family": "logistic",
                      "params": {"gamma": 1.0, "K": 1.0}},
            "diffusion": {"family": "linear", "params": {"beta": 1.0}},
            "domain": {"upper": "inf"}}
    for mutate in (lambda c: c.pop("drift"),
                   lambda c: c["drift"].update(family="cubic"),
                   lambda c: c["drift"].update(params="nope"),
                   lambda c: c["domain"].update(upper="huge"),
                   lambda c: c["drift"]["params"].update(gamma=-1.0)):
        cfg = json.loads(json.dumps(base))
        mutate(cfg)
        with pytest.raises(ConfigError):
            build_spec(cfg)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(bad))
