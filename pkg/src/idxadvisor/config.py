"""Run configuration (JSON) and seed derivation.

Every section is optional; missing keys take the module defaults listed in
``DEFAULTS``. Subseeds come from the top-level seed and a component name:

    derive_seed(seed, name) = int(sha256(f"{seed}:{name}")[:8], 16)
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

from .agent import TrainingConfig
from .candidates import EnumerationConfig
from .compressor import CompressionConfig
from .costmodel import CostConstants
from .gym import MIB

DEFAULTS: dict = {
    "seed": 0,
    "generator": {
        "count": 500,
        "templates": 20,
        "redundancy": 0.8,
        "alternates": 3,
        "base_size": [4, 6],
        "schema": {"tables": 4, "fact_rows": 1_000_000, "dim_rows": [10_000, 200_000],
                   "attributes": [6, 8]},
        # explicit templates instead of synthetic ones: a list of
        # {id, template_sql, params, count, frequency} over ``catalog``
        "custom_templates": None,
        "catalog": None,
    },
    "cost_model": asdict(CostConstants()),
    "compression": asdict(CompressionConfig()),
    "rewrite": {"enabled": True, "rules": None, "max_passes": 5},
    "enumeration": {**asdict(EnumerationConfig()), "relevance_weights": [0.5, 0.3, 0.2]},
    "episode": {"max_steps": None, "m_floor": float(MIB), "gamma": 0.99},
    "training": {k: v for k, v in asdict(TrainingConfig()).items() if k != "seed"},
    "advise": {"method": "rl", "budget": None, "budget_fraction": 0.3, "envs": 1},
}

METHODS = ("rl", "greedy", "optimal")


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, name: str) -> int:
    return int(hashlib.sha256(f"{seed}:{name}".encode()).hexdigest()[:8], 16)


def _merge(base: dict, over: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, doc or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.from_dict({})
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc.msg} (line {exc.lineno})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def validate(self) -> None:
        try:
            self.compression, self.enumeration, self.training, self.cost_constants
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        adv = self.raw["advise"]
        if adv["method"] not in METHODS:
            raise ConfigError(f"advise.method must be one of {METHODS}")
        if int(adv["envs"]) < 1:
            raise ConfigError("advise.envs must be >= 1")
        if adv["budget"] is not None and int(adv["budget"]) <= 0:
            raise ConfigError("advise.budget must be > 0")
        if not 0 < float(adv["budget_fraction"]) <= 1:
            raise ConfigError("advise.budget_fraction must be in (0, 1]")
        gen = self.raw["generator"]
        if int(gen["count"]) < 0 or int(gen["templates"]) < 1:
            raise ConfigError("generator.count must be >= 0 and generator.templates >= 1")
        if not 0 <= float(gen["redundancy"]) <= 1:
            raise ConfigError("generator.redundancy must be in [0, 1]")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply CLI flags: seed, method, budget, envs (None means unset)."""
        raw = copy.deepcopy(self.raw)
        if kw.get("seed") is not None:
            raw["seed"] = int(kw["seed"])
        for k in ("method", "budget", "envs"):
            if kw.get(k) is not None:
                raw["advise"][k] = kw[k]
        return RunConfig.from_dict(raw)

    def subseed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    @property
    def compression(self) -> CompressionConfig:
        return CompressionConfig.from_dict(self.raw["compression"])

    @property
    def enumeration(self) -> EnumerationConfig:
        return EnumerationConfig.from_dict(self.raw["enumeration"])

    @property
    def training(self) -> TrainingConfig:
        return TrainingConfig.from_dict({**self.raw["training"], "seed": self.subseed("agent")})

    @property
    def cost_constants(self) -> CostConstants:
        return CostConstants.from_dict(self.raw["cost_model"])

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]
