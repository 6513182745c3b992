"""End-to-end glue: generate, compress, rewrite, enumerate, advise."""
from __future__ import annotations

import logging
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .advisors import AdviceReport, exhaustive_optimal, greedy_advise
from .agent import PolicyParams, advise as rl_advise
from .candidates import CandidatePool, enumerate_candidates
from .catalog import Catalog, load_catalog
from .compressor import CompressedWorkload, compress
from .config import RunConfig
from .costmodel import CostModel
from .generator import JACCARD_BAND, SchemaSpec, generate, measured_jaccard, synth_catalog, synth_templates
from .gym import EpisodeConfig
from .rewriter import apply_rules, load_rules, rank_rules
from .sqlfront.workload import Workload, expand_template, workload_from_records

log = logging.getLogger(__name__)


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--tags", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    desc = out.stdout.strip()
    return f"{__version__}+g{desc}" if out.returncode == 0 and desc else __version__


def cost_model(catalog: Catalog, cfg: RunConfig) -> CostModel:
    return CostModel(catalog, cfg.cost_constants)


@dataclass
class Generated:
    catalog: Catalog
    records: list[dict]
    report: dict


def generate_workload(cfg: RunConfig) -> Generated:
    gen = cfg.raw["generator"]
    seed = cfg.subseed("generator")
    if gen["custom_templates"] is not None:
        if gen["catalog"] is None:
            catalog = synth_catalog(SchemaSpec.from_dict(gen["schema"]), seed)
        else:
            catalog = load_catalog(gen["catalog"])
        records = []
        for entry in gen["custom_templates"]:
            records.extend(expand_template({"seed": seed, **entry}))
        # parse everything up front so a bad template fails with its id
        workload_from_records(records, catalog, skip_unsupported=False)
        return Generated(catalog, records, {"templates": len(gen["custom_templates"]),
                                            "count": len(records)})
    catalog = synth_catalog(SchemaSpec.from_dict(gen["schema"]), seed)
    templates = synth_templates(catalog, int(gen["templates"]), seed, int(gen["alternates"]),
                                tuple(gen["base_size"]))
    g = generate(catalog, templates, int(gen["count"]), float(gen["redundancy"]), seed)
    w = g.workload()
    report = {
        "templates": len(templates),
        "count": len(g.records),
        "redundancy": float(gen["redundancy"]),
        "jaccard_target": g.expected_jaccard(float(gen["redundancy"])),
        "jaccard_measured": measured_jaccard(w, g.assignment),
        "jaccard_band": JACCARD_BAND,
    }
    return Generated(catalog, g.records, report)


def rewrite_compressed(cw: CompressedWorkload, costmodel: CostModel, rules=None,
                       max_passes: int = 5) -> CompressedWorkload:
    """Apply the ranked rule library to the compressed queries; indexable
    columns are re-extracted from the rewritten ASTs."""
    rules = load_rules() if rules is None else rules
    ranking = rank_rules(rules, cw.queries, costmodel)
    ordered = [r.rule for r in ranking]
    if not ordered:
        return cw
    queries = tuple(apply_rules(q, ordered, costmodel.catalog, max_passes) for q in cw.queries)
    applied = [{"rule": r.rule.name, "saving": r.saving, "fired": r.fired} for r in ranking]
    return replace(cw, queries=queries, rules_applied=applied)


def compress_and_rewrite(w: Workload, cfg: RunConfig, costmodel: CostModel) -> CompressedWorkload:
    cw = compress(w, cfg.compression, costmodel)
    rw = cfg.raw["rewrite"]
    if rw["enabled"]:
        rules = load_rules(rw["rules"]) if rw["rules"] else None
        cw = rewrite_compressed(cw, costmodel, rules, int(rw["max_passes"]))
    return cw


def build_pool(w, cfg: RunConfig, costmodel: CostModel) -> CandidatePool:
    return enumerate_candidates(w, cfg.enumeration, costmodel)


def resolve_budget(cfg: RunConfig, pool: CandidatePool) -> int:
    adv = cfg.raw["advise"]
    if adv["budget"] is not None:
        return int(adv["budget"])
    total = sum(c.size_bytes for c in pool)
    return max(1, int(float(adv["budget_fraction"]) * total))


def episode_config(cfg: RunConfig, budget: int) -> EpisodeConfig:
    ep = cfg.raw["episode"]
    return EpisodeConfig(budget, ep["max_steps"], float(ep["m_floor"]), float(ep["gamma"]))


def run_advisor(method: str, w, pool: CandidatePool, budget: int, costmodel: CostModel,
                cfg: RunConfig, params: PolicyParams | None = None) -> AdviceReport:
    if method == "greedy":
        return greedy_advise(w, pool, budget, costmodel)
    if method == "optimal":
        return exhaustive_optimal(w, pool, budget, costmodel)
    if method == "rl":
        if params is None:
            raise ValueError("method rl needs a trained checkpoint")
        return rl_advise(w, pool, params, budget, costmodel, episode_config(cfg, budget),
                         cfg.training.keep_top_guarantee)
    raise ValueError(f"unknown method {method!r}")
