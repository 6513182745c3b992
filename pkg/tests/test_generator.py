import pytest
from idxadvisor.catalog import catalog_to_dict

from idxadvisor.generator import (JACCARD_BAND, SchemaSpec, generate, measured_jaccard,
                                  synth_catalog, synth_templates, synth_workload, target_jaccard)


def test_deterministic():
    a, b = synth_workload(3, count=50), synth_workload(3, count=50)
    assert a.records == b.records and catalog_to_dict(a.catalog) == catalog_to_dict(b.catalog)
    assert synth_workload(4, count=50).records != a.records


def test_count_zero():
    g = synth_workload(0, count=0)
    assert g.records == [] and len(g.workload()) == 0


def test_all_queries_parse():
    g = synth_workload(1, count=200)
    assert len(g.workload()) == 200


@pytest.mark.parametrize("seed", range(3))
def test_jaccard_within_band(seed):
    g = synth_workload(seed, count=500, n_templates=20, redundancy=0.8)
    measured = measured_jaccard(g.workload(), g.assignment)
    assert abs(measured - g.expected_jaccard(0.8)) <= JACCARD_BAND


def test_full_redundancy_gives_identical_column_sets():
    g = synth_workload(2, count=60, redundancy=1.0)
    assert measured_jaccard(g.workload(), g.assignment) == 1.0
    assert target_jaccard(5, 1.0, 3) == 1.0


def test_target_formula_edges():
    # no redundancy, single alternate: every variant is the same shape
    assert target_jaccard(4, 0.0, 1) == pytest.approx(1.0)
    assert target_jaccard(4, 0.0, 0) == 1.0


def test_bad_redundancy():
    cat = synth_catalog(SchemaSpec(), 0)
    with pytest.raises(ValueError):
        generate(cat, synth_templates(cat, 2, 0), 5, 1.5, 0)
