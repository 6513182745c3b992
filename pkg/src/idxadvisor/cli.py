"""Batch command line.

    idxadvisor gen       --out DIR                     catalog.json, workload.jsonl, gen_report.json
    idxadvisor compress  --catalog C --workload W      compressed.json
    idxadvisor train     --catalog C --workload W      pool.json, checkpoint.json, training_log.jsonl
    idxadvisor advise    --catalog C --workload W      advice_<method>.json
    idxadvisor evaluate  --catalog C --workload W --report R    evaluation.json
    idxadvisor compare   REPORT...                     compare.json, compare.csv

``--workload`` accepts a workload JSONL file or a compressed.json artifact.
Exit codes: 0 success, 2 validation error (bad config, input or artifact,
including an infeasible cover bound or a checkpoint/pool mismatch), 3
runtime error. Wall-clock timings go to ``timing.json`` so every other
output is byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from .advisors import AdviceReport, AdvisorError
from .agent import AgentError, PolicyParams, selector_speedup, train
from .candidates import CandidatePool
from .catalog import CatalogError, load_catalog, save_catalog
from .compressor import CompressedWorkload, CompressionError
from .config import METHODS, ConfigError, RunConfig
from .costmodel import IndexConfiguration
from .gym import GymError
from .pipeline import (build_pool, compress_and_rewrite, cost_model, episode_config,
                       generate_workload, resolve_budget, run_advisor, version_string)
from .sqlfront import SqlError, WorkloadError
from .sqlfront.workload import load_workload

log = logging.getLogger("idxadvisor")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_VALIDATION):
        super().__init__(msg)
        self.code = code


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "version": version_string(), "seed": cfg.seed}


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise CliError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing {what} file: {p}")
    return p


def _catalog(args):
    return load_catalog(_require(args.catalog, "catalog"))


def _workload(args, catalog):
    """A workload JSONL file, or the queries of a compressed.json artifact."""
    path = _require(args.workload, "workload")
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return CompressedWorkload.from_dict(doc, catalog).workload(catalog)
    return load_workload(path, catalog)


def _timing(out: Path, name: str, seconds: float) -> None:
    path = out / "timing.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[name] = seconds
    _dump(path, doc)


def cmd_gen(args, cfg: RunConfig, out: Path) -> None:
    g = generate_workload(cfg)
    save_catalog(g.catalog, out / "catalog.json")
    (out / "workload.jsonl").write_text("".join(json.dumps(r) + "\n" for r in g.records))
    _dump(out / "gen_report.json", {**g.report, **_provenance(cfg)})
    print(f"generated {g.report['count']} queries over {len(g.catalog.tables)} tables -> {out}")
    if "jaccard_target" in g.report:
        print(f"mean within-template Jaccard: target {g.report['jaccard_target']:.4f}, "
              f"measured {g.report['jaccard_measured']:.4f}")


def cmd_compress(args, cfg: RunConfig, out: Path) -> None:
    catalog = _catalog(args)
    w = _workload(args, catalog)
    cw = compress_and_rewrite(w, cfg, cost_model(catalog, cfg))
    _dump(out / "compressed.json", {**cw.to_dict(), **_provenance(cfg)})
    m = cw.metrics
    print(f"queries: {m['input_queries']} -> phase1 {m['phase1_queries']} -> "
          f"selected {m['phase3_queries']} ({m['phase3_method']})")
    print(f"columns: {m['phase2_columns_in']} scored, {m['phase2_columns_kept']} retained")
    print(f"frequency mass: {m['input_frequency']:g} in, {m['selected_frequency']:g} selected")
    print(f"what-if calls: {m['what_if_calls']} (scoring {m['what_if_calls_scoring']}, "
          f"graph {m['what_if_calls_graph']})")
    if cw.rules_applied:
        print("rules applied: " + ", ".join(r["rule"] for r in cw.rules_applied))


def _pool(args, w, cfg, cm) -> CandidatePool:
    if getattr(args, "pool", None):
        return CandidatePool.from_dict(json.loads(_require(args.pool, "pool").read_text()))
    return build_pool(w, cfg, cm)


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    catalog = _catalog(args)
    w = _workload(args, catalog)
    cm = cost_model(catalog, cfg)
    pool = _pool(args, w, cfg, cm)
    if not len(pool):
        raise CliError("candidate pool is empty")
    budget = resolve_budget(cfg, pool)
    tcfg = cfg.training
    t0 = time.perf_counter()
    params, tlog = train(w, pool, episode_config(cfg, budget), tcfg, cm,
                         k=int(cfg.raw["advise"]["envs"]))
    _timing(out, "train", time.perf_counter() - t0)
    params.config_hash = cfg.digest()
    rows = zip(tlog.returns, tlog.final_costs, tlog.lengths, tlog.retained)
    (out / "training_log.jsonl").write_text("".join(
        json.dumps({"episode": i, "return": r, "final_cost": c, "length": n, "mean_retained": m}) + "\n"
        for i, (r, c, n, m) in enumerate(rows)))
    _dump(out / "pool.json", pool.to_dict())
    params.save(out / "checkpoint.json")
    _dump(out / "train_report.json", {
        "episodes": tcfg.episodes, "budget": budget, "pool_size": len(pool),
        "pool_hash": pool.digest(), "what_if_calls": tlog.what_if_calls,
        "first_decile_return": _decile(tlog.returns, first=True),
        "last_decile_return": _decile(tlog.returns, first=False),
        **({"selector_speedup": selector_speedup(w, pool, episode_config(cfg, budget), tcfg, cm,
                                                 with_log=tlog)} if args.selector_ratio else {}),
        **_provenance(cfg)})
    print(f"trained {tcfg.episodes} episodes on {len(pool)} candidates, budget {budget} bytes")


def _decile(xs, first: bool) -> float | None:
    n = len(xs) // 10
    if n == 0:
        return None
    part = xs[:n] if first else xs[-n:]
    return sum(part) / n


def cmd_advise(args, cfg: RunConfig, out: Path) -> None:
    catalog = _catalog(args)
    w = _workload(args, catalog)
    cm = cost_model(catalog, cfg)
    method = cfg.raw["advise"]["method"]
    params = None
    if method == "rl":
        params = PolicyParams.load(_require(args.checkpoint, "checkpoint"))
        if not args.pool:
            raise CliError("--pool is required with --method rl (the pool the checkpoint was trained on)")
    pool = _pool(args, w, cfg, cm)
    budget = resolve_budget(cfg, pool)
    report = run_advisor(method, w, pool, budget, cm, cfg, params)
    _timing(out, f"advise_{method}", report.wall_time_s)
    doc = report.to_dict()
    doc.pop("wall_time_s")
    _dump(out / f"advice_{method}.json", {**doc, "budget": budget, **_provenance(cfg)})
    print(f"{method}: {len(report.configuration)} indexes, {report.size_bytes} bytes, "
          f"relative cost {report.relative_cost:.4f}, what-if calls {report.what_if_calls}")


def _load_report(path: Path) -> dict:
    doc = json.loads(path.read_text())
    for k in ("method", "configuration", "cost_before", "cost_after"):
        if k not in doc:
            raise CliError(f"{path}: not an advice report (missing {k!r})")
    return doc


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    """Cost of a report's configuration on the given (full) workload."""
    catalog = _catalog(args)
    w = _workload(args, catalog)
    cm = cost_model(catalog, cfg)
    doc = _load_report(_require(args.report, "report"))
    config = AdviceReport.from_dict({**doc, "wall_time_s": 0.0}).configuration
    config = IndexConfiguration(tuple(cm.candidate(c.table, c.columns) for c in config))
    before = cm.workload_cost(w)
    after = cm.workload_cost(w, config)
    result = {
        "method": doc["method"],
        "queries": len(w),
        "cost_before": before,
        "cost_after": after,
        "relative_cost": after / before if before > 0 else 1.0,
        "advised_cost_after": doc["cost_after"],
        "advised_relative_cost": doc.get("relative_cost"),
        "configuration": config.to_dict(),
        "what_if_calls": doc.get("what_if_calls"),
        **_provenance(cfg),
    }
    _dump(out / "evaluation.json", result)
    print(f"{doc['method']}: full-workload relative cost {result['relative_cost']:.4f} "
          f"over {len(w)} queries (advised on: {doc.get('relative_cost', float('nan')):.4f})")


COMPARE_COLUMNS = ("report", "method", "indexes", "size_bytes", "cost_before", "cost_after",
                   "relative_cost", "what_if_calls")


def cmd_compare(args, cfg: RunConfig, out: Path) -> None:
    if not args.reports:
        raise CliError("compare needs at least one report")
    rows = []
    for name in args.reports:
        path = _require(name, "report")
        doc = json.loads(path.read_text())
        if "configuration" not in doc:
            raise CliError(f"{path}: not an advice or evaluation report")
        idx = doc["configuration"]["indexes"]
        rows.append({
            "report": path.name,
            "method": doc["method"],
            "indexes": len(idx),
            "size_bytes": sum(int(i.get("size_bytes", 0)) for i in idx),
            "cost_before": doc["cost_before"],
            "cost_after": doc["cost_after"],
            "relative_cost": doc["relative_cost"],
            "what_if_calls": doc.get("what_if_calls"),
        })
    _dump(out / "compare.json", {"rows": rows, **_provenance(cfg)})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (out / "compare.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())


COMMANDS = {
    "gen": cmd_gen,
    "compress": cmd_compress,
    "train": cmd_train,
    "advise": cmd_advise,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--method", choices=METHODS, help="advisor for advise")
    common.add_argument("--budget", type=int, help="storage budget in bytes")
    common.add_argument("--envs", type=int, help="parallel environments for train")
    common.add_argument("-v", "--verbose", action="store_true")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--catalog", help="catalog.json")
    inputs.add_argument("--workload", help="workload JSONL or compressed.json")

    p = argparse.ArgumentParser(prog="idxadvisor", description="Batch index advisor.")
    p.add_argument("--version", action="version", version=f"%(prog)s {version_string()}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate catalog and workload")
    sub.add_parser("compress", parents=[common, inputs], help="compress and rewrite a workload")
    t = sub.add_parser("train", parents=[common, inputs], help="train the RL advisor")
    t.add_argument("--pool", help="reuse a candidate pool instead of enumerating")
    t.add_argument("--selector-ratio", action="store_true",
                   help="also train without the selector and report episodes-to-threshold ratio")
    a = sub.add_parser("advise", parents=[common, inputs], help="recommend an index configuration")
    a.add_argument("--pool", help="candidate pool (required for rl)")
    a.add_argument("--checkpoint", help="trained checkpoint (rl)")
    e = sub.add_parser("evaluate", parents=[common, inputs], help="cost a report on a workload")
    e.add_argument("--report", help="advice report to evaluate")
    c = sub.add_parser("compare", parents=[common], help="tabulate reports")
    c.add_argument("reports", nargs="*")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config).with_overrides(
            seed=args.seed, method=args.method, budget=args.budget, envs=args.envs)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CatalogError, WorkloadError, SqlError, CompressionError,
            AdvisorError, AgentError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GymError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
