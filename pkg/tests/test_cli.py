import json

import pytest

from idxadvisor.advisors import exhaustive_optimal
from idxadvisor.candidates import CandidatePool, EnumerationConfig, enumerate_candidates
from idxadvisor.catalog import load_catalog
from idxadvisor.cli import EXIT_OK, EXIT_VALIDATION, main
from idxadvisor.costmodel import CostModel
from idxadvisor.sqlfront.workload import load_workload

SMALL = {
    "seed": 1,
    "generator": {"count": 40, "templates": 6},
    "enumeration": {"max_pool": 12},
    "training": {"episodes": 20},
}


def write_config(tmp_path, **over):
    doc = json.loads(json.dumps(SMALL))
    for section, vals in over.items():
        doc.setdefault(section, {}).update(vals)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture
def gen_dir(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen", "--config", write_config(tmp_path), "--out", str(out)]) == EXIT_OK
    return out


def inputs(d):
    return ["--catalog", str(d / "catalog.json"), "--workload", str(d / "workload.jsonl")]


def test_gen_deterministic(tmp_path, gen_dir):
    again = tmp_path / "again"
    main(["gen", "--config", write_config(tmp_path), "--out", str(again)])
    for name in ("catalog.json", "workload.jsonl", "gen_report.json"):
        assert (again / name).read_bytes() == (gen_dir / name).read_bytes()


def test_gen_count_zero(tmp_path):
    out = tmp_path / "z"
    assert main(["gen", "--config", write_config(tmp_path, generator={"count": 0}),
                 "--out", str(out)]) == EXIT_OK
    assert (out / "workload.jsonl").read_text() == ""


def test_gen_bad_template_names_it(tmp_path, capsys):
    cfg = write_config(tmp_path, generator={"custom_templates": [
        {"id": "broken", "template_sql": "SELECT FROM WHERE", "params": {}, "count": 1}]})
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "broken" in capsys.readouterr().err


def test_compress_single_query(tmp_path, gen_dir):
    one = tmp_path / "one.jsonl"
    one.write_text((gen_dir / "workload.jsonl").read_text().splitlines()[0] + "\n")
    out = tmp_path / "c"
    args = ["compress", "--catalog", str(gen_dir / "catalog.json"), "--workload", str(one)]
    assert main(args + ["--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "compressed.json").read_text())
    first = json.loads(one.read_text())
    assert [q["id"] for q in doc["queries"]] == [first["id"]]


def test_compress_duplicate_heavy(tmp_path):
    cfg = write_config(tmp_path, generator={"count": 100, "templates": 5, "redundancy": 1.0})
    g = tmp_path / "g"
    main(["gen", "--config", cfg, "--out", str(g)])
    out = tmp_path / "c"
    assert main(["compress", "--config", cfg, *inputs(g), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "compressed.json").read_text())
    assert len(doc["queries"]) < 100
    assert doc["metrics"]["phase1_queries"] <= 5
    assert sum(q["frequency"] for q in doc["queries"]) == pytest.approx(100)


def test_compress_infeasible_cover(tmp_path, gen_dir, capsys):
    cfg = write_config(tmp_path, compression={"cover_bound": 10_000})
    code = main(["compress", "--config", cfg, *inputs(gen_dir), "--out", str(tmp_path / "c")])
    assert code == EXIT_VALIDATION and "error" in capsys.readouterr().err


def test_missing_file(tmp_path):
    code = main(["compress", "--catalog", str(tmp_path / "nope.json"),
                 "--workload", str(tmp_path / "w.jsonl"), "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION


def test_advise_optimal_is_oracle(tmp_path, gen_dir):
    cfg = write_config(tmp_path)
    out = tmp_path / "a"
    assert main(["advise", "--config", cfg, "--method", "optimal", *inputs(gen_dir),
                 "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "advice_optimal.json").read_text())
    catalog = load_catalog(gen_dir / "catalog.json")
    w = load_workload(gen_dir / "workload.jsonl", catalog)
    cm = CostModel(catalog)
    pool = enumerate_candidates(w, EnumerationConfig(max_pool=12), cm)
    ref = exhaustive_optimal(w, pool, doc["budget"], cm)
    assert doc["configuration"] == ref.configuration.to_dict()
    assert doc["cost_after"] == ref.cost_after


def test_train_advise_evaluate_compare(tmp_path, gen_dir):
    cfg = write_config(tmp_path)
    c = tmp_path / "c"
    main(["compress", "--config", cfg, *inputs(gen_dir), "--out", str(c)])
    comp = ["--catalog", str(gen_dir / "catalog.json"), "--workload", str(c / "compressed.json")]
    t = tmp_path / "t"
    assert main(["train", "--config", cfg, *comp, "--out", str(t)]) == EXIT_OK
    assert len((t / "training_log.jsonl").read_text().splitlines()) == 20
    a = tmp_path / "a"
    assert main(["advise", "--config", cfg, *comp, "--pool", str(t / "pool.json"),
                 "--checkpoint", str(t / "checkpoint.json"), "--out", str(a)]) == EXIT_OK
    advice = json.loads((a / "advice_rl.json").read_text())
    e = tmp_path / "e"
    assert main(["evaluate", "--config", cfg, *inputs(gen_dir), "--report",
                 str(a / "advice_rl.json"), "--out", str(e)]) == EXIT_OK
    ev = json.loads((e / "evaluation.json").read_text())
    # evaluation covers the uncompressed workload, not the advised one
    assert ev["queries"] == 40
    assert ev["cost_before"] != advice["cost_before"]
    catalog = load_catalog(gen_dir / "catalog.json")
    cm = CostModel(catalog)
    assert ev["cost_before"] == cm.workload_cost(load_workload(gen_dir / "workload.jsonl", catalog))
    r = tmp_path / "r"
    assert main(["compare", str(a / "advice_rl.json"), "--out", str(r)]) == EXIT_OK
    lines = (r / "compare.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("report,method")
    assert len(json.loads((r / "compare.json").read_text())["rows"]) == 1


def test_rl_pool_mismatch(tmp_path, gen_dir):
    cfg = write_config(tmp_path)
    t = tmp_path / "t"
    main(["train", "--config", cfg, *inputs(gen_dir), "--out", str(t)])
    pool = CandidatePool.from_dict(json.loads((t / "pool.json").read_text()))
    other = tmp_path / "other.json"
    other.write_text(json.dumps(pool.subset(reversed(range(len(pool)))).to_dict()))
    code = main(["advise", "--config", cfg, *inputs(gen_dir), "--pool", str(other),
                 "--checkpoint", str(t / "checkpoint.json"), "--out", str(tmp_path / "a")])
    assert code == EXIT_VALIDATION


def test_reports_carry_provenance(gen_dir):
    doc = json.loads((gen_dir / "gen_report.json").read_text())
    assert len(doc["config_hash"]) == 16 and doc["version"].startswith("0.1.0")
