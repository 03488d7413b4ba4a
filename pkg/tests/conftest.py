from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from hygrid.network import grid_from_dict, load_grid
from hygrid.powerflow import default_spec

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src" / "hygrid" / "scenarios"
EPFL_GRID = SCENARIO_DIR / "epfl.json"


@pytest.fixture(scope="session")
def epfl_model():
    return load_grid(EPFL_GRID)


def two_bus_dict(r=0.01, x=0.1):
    return {
        "base": {"s_va": 100000.0, "v_ac": 400.0, "v_dc": 800.0},
        "ac_nodes": [{"id": "N1", "kind": "slack"}, {"id": "N2", "kind": "pq"}],
        "dc_nodes": [],
        "ic_pairs": [],
        "lines": [
            {"id": "L1", "from": "N1", "to": "N2", "r": r * 1.6, "x": x * 1.6,
             "ampacity_A": 500.0}
        ],
        "devices": {},
    }


@pytest.fixture
def two_bus_model():
    return grid_from_dict(two_bus_dict())


def with_dct(model, spec, deadband=True, losses=True):
    """Attach droop-transformer runtime entries for every device on the model."""
    from hygrid.powerflow import DctRuntime

    spec.dct_runtime = [
        DctRuntime(dct=d, deadband=deadband, losses=losses) for d in model.dcts
    ]
    return spec


def epfl_loaded_spec(model, pv_kw=14.87, household_kw=-7.5, evcs_kw=-12.0,
                     supercap_kw=0.4, e_ic=None):
    """Representative operating point used across the test modules."""
    spec = default_spec(model)

    def put(node, p=None, q=None):
        u = model.unified_index(node)
        if p is not None:
            spec.p_set[u] = p
        if q is not None:
            spec.q_set[u] = q

    pf = 0.93
    q_household = household_kw * np.sqrt(1 - pf * pf) / pf
    put("B03", p=household_kw / 100.0, q=q_household / 100.0)
    put("B14", p=evcs_kw / 100.0, q=evcs_kw * 0.2 / 100.0)
    put("B11", p=pv_kw / 100.0, q=0.0)
    put("B24", p=supercap_kw / 100.0)
    if e_ic:
        for nid, e in e_ic.items():
            spec.e_set[model.dc_index(nid)] = e
    return spec
