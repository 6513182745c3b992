import json

import pytest

from idxadvisor.config import DEFAULTS, ConfigError, RunConfig, derive_seed


def test_defaults_validate():
    cfg = RunConfig.from_dict({})
    assert cfg.raw == DEFAULTS and cfg.seed == 0


def test_derive_seed_documented_formula():
    import hashlib
    assert derive_seed(7, "agent") == int(hashlib.sha256(b"7:agent").hexdigest()[:8], 16)
    assert derive_seed(7, "agent") != derive_seed(7, "generator")


def test_training_seed_is_subseed():
    cfg = RunConfig.from_dict({"seed": 4})
    assert cfg.training.seed == derive_seed(4, "agent")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"training": {"bogus": 1}})


def test_section_type_checked():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"training": 3})


@pytest.mark.parametrize("doc", [
    {"advise": {"method": "random"}},
    {"advise": {"envs": 0}},
    {"advise": {"budget": -5}},
    {"advise": {"budget_fraction": 0}},
    {"generator": {"redundancy": 1.2}},
    {"training": {"lr_actor": 0}},
])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_overrides():
    cfg = RunConfig.from_dict({}).with_overrides(seed=3, method="greedy", budget=100, envs=None)
    assert cfg.seed == 3 and cfg.raw["advise"]["method"] == "greedy"
    assert cfg.raw["advise"]["budget"] == 100 and cfg.raw["advise"]["envs"] == 1


def test_load_and_digest(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 2}))
    a = RunConfig.load(p)
    assert a.seed == 2 and a.digest() == RunConfig.from_dict({"seed": 2}).digest()
    assert a.digest() != RunConfig.from_dict({}).digest()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)
