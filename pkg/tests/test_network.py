from __future__ import annotations

import copy
import json

import numpy as np
import pytest

from hygrid.network import (
    GridValidationError,
    branch_current,
    branch_losses,
    build_unified_admittance,
    grid_from_dict,
    load_grid,
    load_state_csv,
    save_grid,
    save_state_csv,
    state_to_csv,
)
from hygrid.powerflow import solve_pf

from conftest import EPFL_GRID, epfl_loaded_spec, two_bus_dict


def test_epfl_grid_counts(epfl_model):
    assert epfl_model.n_ac == 18
    assert epfl_model.n_dc == 8
    assert len(epfl_model.ic_pairs) == 4
    assert epfl_model.n_nodes == 26


def test_epfl_node_kinds(epfl_model):
    assert epfl_model.ac_nodes[epfl_model.slack_index].node_id == "B01"
    assert [n.node_id for n in epfl_model.ac_nodes if n.kind == "ic"] == [
        "B15", "B16", "B17", "B18",
    ]
    assert [n.node_id for n in epfl_model.dc_nodes if n.kind == "ic"] == [
        "B19", "B20", "B21", "B22",
    ]
    assert [n.node_id for n in epfl_model.dc_nodes if n.kind == "p"] == [
        "B23", "B24", "B25", "B26",
    ]


def test_two_bus_minimal():
    model = grid_from_dict(two_bus_dict())
    assert model.n_ac == 2 and model.n_dc == 0 and not model.ic_pairs


def test_dc_island_without_voltage_imposer_rejected():
    payload = two_bus_dict()
    payload["dc_nodes"] = [{"id": "D1", "kind": "p"}, {"id": "D2", "kind": "p"}]
    payload["lines"].append({"id": "LD", "from": "D1", "to": "D2", "r": 0.1,
                             "ampacity_A": 10.0})
    with pytest.raises(GridValidationError, match="voltage-imposing"):
        grid_from_dict(payload)


def test_duplicate_node_ids_rejected():
    payload = two_bus_dict()
    payload["ac_nodes"].append({"id": "N2", "kind": "pq"})
    with pytest.raises(GridValidationError, match="duplicate"):
        grid_from_dict(payload)


def test_missing_slack_rejected():
    payload = two_bus_dict()
    payload["ac_nodes"][0]["kind"] = "pq"
    with pytest.raises(GridValidationError, match="slack"):
        grid_from_dict(payload)


def test_two_slacks_rejected():
    payload = two_bus_dict()
    payload["ac_nodes"][1]["kind"] = "slack"
    with pytest.raises(GridValidationError, match="slack"):
        grid_from_dict(payload)


def test_nonpositive_ampacity_rejected():
    payload = two_bus_dict()
    payload["lines"][0]["ampacity_A"] = 0.0
    with pytest.raises(GridValidationError, match="ampacity"):
        grid_from_dict(payload)


def test_line_side_mismatch_rejected():
    payload = two_bus_dict()
    payload["dc_nodes"] = [{"id": "D1", "kind": "v"}]
    # reactance present forces AC endpoints
    payload["lines"].append({"id": "LX", "from": "N1", "to": "D1", "r": 0.1,
                             "x": 0.1, "ampacity_A": 10.0})
    with pytest.raises(GridValidationError, match="AC nodes"):
        grid_from_dict(payload)


def test_ic_node_without_pair_rejected():
    payload = two_bus_dict()
    payload["ac_nodes"].append({"id": "N3", "kind": "ic"})
    payload["lines"].append({"id": "L2", "from": "N2", "to": "N3", "r": 0.016,
                             "x": 0.016, "ampacity_A": 10.0})
    with pytest.raises(GridValidationError, match="no pair"):
        grid_from_dict(payload)


def test_device_on_wrong_node_rejected(epfl_model):
    payload = copy.deepcopy(epfl_model.to_dict())
    payload["devices"]["pv"][0]["node"] = "B15"
    with pytest.raises(GridValidationError, match="pq node"):
        grid_from_dict(payload)


def test_unified_admittance_block_structure(epfl_model):
    y = build_unified_admittance(epfl_model)
    n = epfl_model.n_ac
    assert y.shape == (26, 26)
    assert np.array_equal(y[:n, :n], epfl_model.y_ac)
    assert np.array_equal(y[n:, n:].real, epfl_model.y_dc)
    assert np.all(y[:n, n:] == 0) and np.all(y[n:, :n] == 0)
    # shunt-free rows sum to zero
    assert np.abs(y.sum(axis=1)).max() < 1e-11


def test_unified_admittance_degenerate_dc(two_bus_model):
    y = build_unified_admittance(two_bus_model)
    assert np.array_equal(y, two_bus_model.y_ac)


def test_admittance_symmetry(epfl_model):
    assert np.array_equal(epfl_model.y_ac, epfl_model.y_ac.T)
    assert np.array_equal(epfl_model.y_dc, epfl_model.y_dc.T)


def test_grid_roundtrip_bit_exact(tmp_path, epfl_model):
    out = tmp_path / "grid.json"
    save_grid(epfl_model, out)
    again = load_grid(out)
    assert np.array_equal(epfl_model.y_ac, again.y_ac)
    assert np.array_equal(epfl_model.y_dc, again.y_dc)
    for a, b in zip(epfl_model.lines, again.lines):
        assert a.y_series == b.y_series and a.ampacity_pu == b.ampacity_pu
    for a, b in zip(epfl_model.ic_pairs, again.ic_pairs):
        assert a.p_loss_pu == b.p_loss_pu and a.q_filter_pu == b.q_filter_pu
    for a, b in zip(epfl_model.dcts, again.dcts):
        assert a.alpha_pu == b.alpha_pu and a.deadband_pu == b.deadband_pu
    assert epfl_model.to_dict() == again.to_dict()


def test_branch_current_zero_at_equal_voltages(epfl_model):
    from hygrid.powerflow import flat_state

    st = flat_state(epfl_model)
    for ln in epfl_model.lines:
        assert branch_current(epfl_model, st, ln) == 0


def test_branch_current_dc_direct_value():
    payload = two_bus_dict()
    payload["dc_nodes"] = [{"id": "D1", "kind": "v"}, {"id": "D2", "kind": "p"}]
    # g = 100 pu on the 6.4 ohm DC base -> r = 0.064 ohm
    payload["lines"].append({"id": "LD", "from": "D1", "to": "D2", "r": 0.064,
                             "ampacity_A": 500.0})
    model = grid_from_dict(payload)
    from hygrid.powerflow import flat_state

    st = flat_state(model)
    st.e_dc[0] = 1.0
    st.e_dc[1] = 0.99
    i = branch_current(model, st, "LD")
    assert isinstance(i, float)
    assert i == pytest.approx(1.0, abs=1e-12)


def test_branch_current_antisymmetric(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    state = solve_pf(epfl_model, spec).state
    for ln in epfl_model.lines:
        rev = copy.copy(ln)
        rev.from_idx, rev.to_idx = ln.to_idx, ln.from_idx
        assert abs(branch_current(epfl_model, state, ln)
                   + branch_current(epfl_model, state, rev)) < 1e-12


def test_nodal_current_consistency(epfl_model):
    # unified admittance times voltages reproduces the injections of a solved state
    spec = epfl_loaded_spec(epfl_model)
    state = solve_pf(epfl_model, spec).state
    n = epfl_model.n_ac
    s_ac = state.e_ac * np.conj(epfl_model.y_ac @ state.e_ac)
    p_dc = state.e_dc * (epfl_model.y_dc @ state.e_dc)
    assert np.abs(s_ac.real - state.p[:n]).max() < 1e-10
    assert np.abs(s_ac.imag - state.q[:n]).max() < 1e-10
    assert np.abs(p_dc - state.p[n:]).max() < 1e-10


def test_branch_losses_nonnegative_active(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    state = solve_pf(epfl_model, spec).state
    p, q = branch_losses(epfl_model, state)
    assert np.all(p >= 0)
    assert q.shape == p.shape


def test_state_csv_roundtrip(tmp_path, epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    state = solve_pf(epfl_model, spec).state
    path = tmp_path / "state.csv"
    save_state_csv(epfl_model, state, path)
    again = load_state_csv(epfl_model, path)
    # polar-form storage reconstructs the phasor to the last ulp or so
    assert np.abs(again.e_ac - state.e_ac).max() < 1e-15
    assert np.array_equal(again.e_dc, state.e_dc)
    assert np.array_equal(again.p, state.p)
    assert np.array_equal(again.q, state.q)
    # writing the same in-memory state twice is byte-stable
    assert state_to_csv(epfl_model, state) == state_to_csv(epfl_model, state)


def test_state_csv_missing_node_rejected(tmp_path, epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    state = solve_pf(epfl_model, spec).state
    path = tmp_path / "state.csv"
    text = state_to_csv(epfl_model, state).splitlines()
    path.write_text("\n".join(text[:-1]) + "\n")
    with pytest.raises(ValueError, match="missing"):
        load_state_csv(epfl_model, path)


def test_scenario_file_documents_b23(epfl_model):
    raw = json.loads(EPFL_GRID.read_text())
    assert "B23" in raw["description"]
