import pytest

from idxadvisor.catalog import catalog_from_dict
from idxadvisor.costmodel import CostModel
from idxadvisor.sqlfront.workload import workload_from_records

DEMO = {
    "format": 1,
    "tables": [
        {"name": "t", "row_count": 1_000_000, "columns": [
            {"name": "id", "type": "int", "cardinality": 1_000_000, "width_bytes": 4, "unique": True},
            {"name": "a", "type": "int", "cardinality": 1000, "width_bytes": 4},
            {"name": "b", "type": "int", "cardinality": 100, "width_bytes": 8},
            {"name": "c", "type": "cat", "cardinality": 12, "width_bytes": 8},
            {"name": "d", "type": "int", "cardinality": 50, "width_bytes": 4},
            {"name": "k", "type": "int", "cardinality": 10_000, "width_bytes": 4},
        ]},
        {"name": "u", "row_count": 10_000, "columns": [
            {"name": "id", "type": "int", "cardinality": 10_000, "width_bytes": 4, "unique": True},
            {"name": "k", "type": "int", "cardinality": 10_000, "width_bytes": 4},
            {"name": "e", "type": "int", "cardinality": 20, "width_bytes": 4},
        ]},
    ],
}


@pytest.fixture
def demo_doc():
    import copy
    return copy.deepcopy(DEMO)


@pytest.fixture
def catalog():
    return catalog_from_dict(DEMO)


@pytest.fixture
def cm(catalog):
    return CostModel(catalog)


@pytest.fixture
def make_workload(catalog):
    def make(*sqls, freqs=None):
        recs = [{"id": f"q{i}", "sql": s, "frequency": (freqs[i] if freqs else 1)}
                for i, s in enumerate(sqls)]
        return workload_from_records(recs, catalog, skip_unsupported=False)
    return make
