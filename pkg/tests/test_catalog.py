import json

import pytest

from idxadvisor.catalog import (CatalogError, catalog_from_dict, catalog_to_dict, load_catalog,
                                materialize, save_catalog, selectivity)


def test_two_table_round_trip(demo_doc, tmp_path):
    cat = catalog_from_dict(demo_doc)
    assert cat.table_names == ("t", "u")
    save_catalog(cat, tmp_path / "c.json")
    again = load_catalog(tmp_path / "c.json")
    assert catalog_to_dict(again) == catalog_to_dict(cat)


def test_distinct_above_row_count_rejected():
    doc = {"tables": [{"name": "t", "row_count": 10, "columns": [
        {"name": "a", "type": "int", "cardinality": 100, "width_bytes": 4, "distinct_count": 50}]}]}
    with pytest.raises(CatalogError, match="distinct_count"):
        catalog_from_dict(doc)


def test_empty_table_list_is_valid():
    assert catalog_from_dict({"format": 1, "tables": []}).tables == ()


@pytest.mark.parametrize("doc, msg", [
    ({"format": 2, "tables": []}, "format"),
    ({"tables": [{"name": "t", "row_count": -1, "columns": []}]}, "row_count"),
    ({"tables": [{"name": "t", "row_count": 1, "columns": [
        {"name": "a", "type": "float", "cardinality": 1, "width_bytes": 4}]}]}, "type"),
    ({"tables": [{"name": "t", "row_count": 1, "columns": []},
                 {"name": "t", "row_count": 1, "columns": []}]}, "duplicate"),
])
def test_validation_errors(doc, msg):
    with pytest.raises(CatalogError, match=msg):
        catalog_from_dict(doc)


def test_load_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(CatalogError):
        load_catalog(p)


def test_materialize_deterministic(catalog):
    a = materialize(catalog, 10, seed=7)
    b = materialize(catalog, 10, seed=7)
    assert a.rows == b.rows
    assert len(a.table_rows("t")) == 10


def test_materialize_empty(catalog):
    inst = materialize(catalog, 0, seed=1)
    assert all(inst.table_rows(t) == () for t in catalog.table_names)


def test_materialize_domain_membership():
    cat = catalog_from_dict({"tables": [{"name": "t", "row_count": 100, "columns": [
        {"name": "c", "type": "cat", "cardinality": 3, "width_bytes": 4}]}]})
    rows = materialize(cat, 100, seed=3).table_rows("t")
    assert {r[0] for r in rows} <= {"v1", "v2", "v3"}


def test_materialize_unique_column(catalog):
    rows = materialize(catalog, 200, seed=0).table_rows("t")
    ids = [r[0] for r in rows]
    assert len(set(ids)) == len(ids)


def test_materialize_row_cap(catalog):
    with pytest.raises(ValueError, match="cap"):
        materialize(catalog, 1001, seed=0)


def test_selectivity_definitions():
    cat = catalog_from_dict({"tables": [{"name": "t", "row_count": 1000, "columns": [
        {"name": "a", "type": "int", "cardinality": 100, "width_bytes": 4},
        {"name": "b", "type": "int", "cardinality": 1, "width_bytes": 4}]}]})
    assert selectivity(cat.column("t", "a"), "equality") == 0.01
    assert selectivity(cat.column("t", "a"), "range", 0.25) == 0.25
    assert selectivity(cat.column("t", "b"), "equality") == 1.0
