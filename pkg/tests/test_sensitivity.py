"""Sensitivity coefficients checked against central finite differences.

The oracle re-solves the nonlinear system twice per variable with the
specified quantity nudged by +/- h and differences every derived output.
Tight solver tolerance (1e-13) keeps the FD noise floor near 1e-9, well
under the asserted bounds.
"""

import numpy as np
import pytest
from scipy.linalg import lu_factor, lu_solve

from conftest import epfl_loaded_spec, two_bus_dict, with_dct
from hygrid.network import branch_current, grid_from_dict, load_grid
from hygrid.powerflow import PfSpec, default_spec, jacobian, solve_pf, total_losses
from hygrid.sensitivity import (
    ControlVariable,
    DegenerateOperatingPoint,
    SensitivityError,
    assemble_A,
    compute_bundle,
    full_variable_set,
    predict,
    rhs_u,
    sc_table,
    sc_to_csv,
)

FD_H = 1e-6
TIGHT = 1e-13


def frozen_dct_spec(model, spec, sol):
    """Replace droop devices by their realized anchor injections.

    The sensitivity system linearizes the grid with device transfers held
    fixed (the controller folds the droop response in separately), so the
    FD oracle must difference that same frozen model.
    """
    sp = spec.copy()
    sp.dct_runtime = []
    n = model.n_ac
    for dct in model.dcts:
        w1, w2, _ = sol.dct_injections[dct.name]
        sp.p_set[n + dct.primary_idx] += w1
        sp.p_set[n + dct.secondary_idx] += w2
    return sp


def perturbed_spec(model, spec, var, h):
    sp = spec.copy()
    if var.kind in ("p_ac", "p_dc", "p_ic"):
        sp.p_set[model.unified_index(var.node_id)] += h
    elif var.kind in ("q_ac", "q_ic"):
        sp.q_set[model.ac_index(var.node_id)] += h
    elif var.kind == "vm_pv":
        sp.vm_set[model.ac_index(var.node_id)] += h
    else:
        sp.e_set[model.dc_index(var.node_id)] += h
    return sp


def observables(model, state):
    """Every output family the bundle differentiates, from a solved state."""
    i_complex = np.array(
        [branch_current(model, state, ln) for ln in model.lines], dtype=complex
    )
    i_mag = np.where(
        np.array([ln.is_dc for ln in model.lines]), i_complex.real, np.abs(i_complex)
    ).astype(float)
    p_loss, q_loss = total_losses(model, state)
    s = model.slack_index
    p_ic = np.array([state.p[ic.ac_idx] for ic in model.ic_pairs])
    return {
        "vm": state.vm,
        "angle": state.angle,
        "i": i_mag,
        "i_complex": i_complex,
        "p_loss": p_loss,
        "q_loss": q_loss,
        "p_slack": state.p[s],
        "q_slack": state.q[s],
        "p_ic": p_ic,
    }


def central_difference(model, spec, var, anchor, h):
    up = solve_pf(model, perturbed_spec(model, spec, var, h), init=anchor, tol=TIGHT)
    dn = solve_pf(model, perturbed_spec(model, spec, var, -h), init=anchor, tol=TIGHT)
    hi = observables(model, up.state)
    lo = observables(model, dn.state)
    out = {}
    for key in hi:
        out[key] = (np.asarray(hi[key]) - np.asarray(lo[key])) / (2.0 * h)
    return out


def fd_derivatives(model, spec, var, anchor):
    """Richardson-extrapolated central differences.

    Voltage-setpoint variables act through high-gain converter loops; plain
    central differences at h=1e-6 are truncation-limited near 5e-6 on the
    branch currents. Combining h and h/2 cancels the quadratic term and
    leaves ~1e-7 worst case.
    """
    d1 = central_difference(model, spec, var, anchor, FD_H)
    d2 = central_difference(model, spec, var, anchor, FD_H / 2.0)
    return {k: (4.0 * np.asarray(d2[k]) - np.asarray(d1[k])) / 3.0 for k in d1}


def analytic_column(model, bundle, var):
    from hygrid.sensitivity import _FAMILY_OF, _variable_row_and_column

    fam = _FAMILY_OF[var.kind]
    _, col = _variable_row_and_column(model, var)
    # recombine the complex branch-current derivative from the magnitude and
    # angle solutions; this stays smooth where |I| itself has a kink
    n = model.n_ac
    e = bundle.anchor.e_ac
    d_e_ac = (e / np.abs(e)) * bundle.k_e[fam][:n, col] + 1j * e * bundle.k_th[fam][:, col]
    d_e_dc = bundle.k_e[fam][n:, col]
    di = np.empty(len(model.lines), dtype=complex)
    for k, ln in enumerate(model.lines):
        if ln.is_dc:
            di[k] = ln.y_series.real * (d_e_dc[ln.from_idx] - d_e_dc[ln.to_idx])
        else:
            di[k] = ln.y_series * (d_e_ac[ln.from_idx] - d_e_ac[ln.to_idx])
    return {
        "vm": bundle.k_e[fam][:, col],
        "angle": bundle.k_th[fam][:, col],
        "i": bundle.k_i[fam][:, col],
        "i_complex": di,
        "p_loss": bundle.k_ploss[fam][col],
        "q_loss": bundle.k_qloss[fam][col],
        "p_slack": bundle.k_ps[fam][col],
        "q_slack": bundle.k_qs[fam][col],
        "p_ic": bundle.k_pic[fam][:, col],
    }


VOLTAGE_TOL = 1e-6
CURRENT_TOL = 1e-6
LOSS_TOL = 1e-5
# |I| is not differentiable at zero current; below this anchor magnitude the
# comparison switches to the smooth complex components, which determine the
# magnitude derivative wherever it exists
I_MAG_FLOOR = 1e-3


def current_errors(model, anchor_i, fd, an):
    """(magnitude-row error, complex-component error) for one variable."""
    mag_err = 0.0
    cplx_err = 0.0
    for k, ln in enumerate(model.lines):
        d_cplx = abs(fd["i_complex"][k] - an["i_complex"][k])
        cplx_err = max(cplx_err, float(d_cplx))
        if ln.is_dc or abs(anchor_i[k]) >= I_MAG_FLOOR:
            mag_err = max(mag_err, float(abs(fd["i"][k] - an["i"][k])))
    return mag_err, cplx_err


def check_all_variables(model, spec, sol, bundle):
    frozen = frozen_dct_spec(model, spec, sol)
    worst = {k: 0.0 for k in ("vm", "angle", "i", "i_complex", "p_loss",
                              "q_loss", "p_slack", "q_slack", "p_ic")}
    for var in bundle.variables:
        fd = fd_derivatives(model, frozen, var, sol.state)
        an = analytic_column(model, bundle, var)
        for key in ("vm", "angle", "p_loss", "q_loss", "p_slack", "q_slack", "p_ic"):
            diff = np.abs(np.asarray(fd[key]) - np.asarray(an[key]))
            if diff.size:
                worst[key] = max(worst[key], float(np.max(diff)))
        mag_err, cplx_err = current_errors(model, bundle.i_anchor, fd, an)
        worst["i"] = max(worst["i"], mag_err)
        worst["i_complex"] = max(worst["i_complex"], cplx_err)
    assert worst["vm"] <= VOLTAGE_TOL
    assert worst["angle"] <= VOLTAGE_TOL
    assert worst["i"] <= CURRENT_TOL
    assert worst["i_complex"] <= CURRENT_TOL
    assert worst["p_loss"] <= LOSS_TOL
    assert worst["q_loss"] <= LOSS_TOL
    assert worst["p_slack"] <= LOSS_TOL
    assert worst["q_slack"] <= LOSS_TOL
    assert worst["p_ic"] <= LOSS_TOL
    return worst


# ---- variable enumeration -------------------------------------------------


def test_full_variable_set_epfl(epfl_model):
    vs = full_variable_set(epfl_model)
    assert len(vs) == 38
    kinds = {}
    for v in vs:
        kinds[v.kind] = kinds.get(v.kind, 0) + 1
    assert kinds == {"p_ac": 13, "q_ac": 13, "p_dc": 4, "q_ic": 4, "e_ic": 4}
    assert len({v.describe() for v in vs}) == len(vs)


def test_variable_validation(epfl_model):
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("q_ac", "B19"))  # DC node
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("p_ac", "B01"))  # slack
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("p_ic", "B15"))  # converter imposes E, not P
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("e_ic", "B23"))  # not a converter terminal
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("e_dc", "B23"))  # P node, not V
    with pytest.raises(SensitivityError):
        rhs_u(epfl_model, ControlVariable("banana", "B02"))


def test_rhs_rows(epfl_model):
    n = epfl_model.n_ac
    i02 = epfl_model.ac_index("B02")
    u = rhs_u(epfl_model, ControlVariable("p_ac", "B02"))
    assert u[2 * i02] == 1.0 and u.sum() == 1.0
    u = rhs_u(epfl_model, ControlVariable("q_ac", "B02"))
    assert u[2 * i02 + 1] == 1.0
    # converter AC terminal tracks Q in its first row (second row couples P)
    i15 = epfl_model.ac_index("B15")
    u = rhs_u(epfl_model, ControlVariable("q_ic", "B15"))
    assert u[2 * i15] == 1.0
    j20 = epfl_model.dc_index("B20")
    u = rhs_u(epfl_model, ControlVariable("e_ic", "B20"))
    assert u[2 * n + j20] == 1.0


def test_rhs_rows_pv_node():
    payload = two_bus_dict()
    payload["ac_nodes"].append({"id": "N3", "kind": "pv"})
    payload["lines"].append(
        {"id": "L2", "from": "N2", "to": "N3", "r": 0.016, "x": 0.16, "ampacity_A": 100}
    )
    model = grid_from_dict(payload)
    i3 = model.ac_index("N3")
    u = rhs_u(model, ControlVariable("vm_pv", "N3"))
    assert u[2 * i3 + 1] == 1.0
    # a voltage-regulating node exposes only its magnitude setpoint
    with pytest.raises(SensitivityError):
        rhs_u(model, ControlVariable("p_ac", "N3"))
    with pytest.raises(SensitivityError):
        rhs_u(model, ControlVariable("q_ac", "N3"))
    vs = full_variable_set(model)
    assert ControlVariable("vm_pv", "N3") in vs


# ---- coefficient matrix ---------------------------------------------------


def test_A_is_newton_jacobian(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    a = assemble_A(epfl_model, sol.state)
    spec_no_dct = spec.copy()
    spec_no_dct.dct_runtime = []
    j = jacobian(epfl_model, spec_no_dct, sol.state)
    assert np.array_equal(a, j)


def test_A_two_bus_hand_matrix(two_bus_model):
    sol = solve_pf(two_bus_model, default_spec(two_bus_model))
    a = assemble_A(two_bus_model, sol.state)
    y = 1.0 / complex(0.01, 0.1)
    g, b = y.real, y.imag
    # columns [vm1, vm2, th1, th2]; B1 slack rows, B2 power rows; flat start
    hand = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [-g, g, b, -b],
            [b, -b, g, -g],
        ]
    )
    assert np.allclose(a, hand, atol=1e-13)


def test_reuse_is_bitwise_identical(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    vs = full_variable_set(epfl_model)

    lu = lu_factor(assemble_A(epfl_model, sol.state))
    once = [lu_solve(lu, rhs_u(epfl_model, v)) for v in vs]
    per_var = [
        lu_solve(lu_factor(assemble_A(epfl_model, sol.state)), rhs_u(epfl_model, v))
        for v in vs
    ]
    for x1, x2 in zip(once, per_var):
        assert np.array_equal(x1, x2)

    b1 = compute_bundle(epfl_model, sol.state)
    b2 = compute_bundle(epfl_model, sol.state)
    for fam in ("p", "q", "e"):
        assert np.array_equal(b1.k_e[fam], b2.k_e[fam])
        assert np.array_equal(b1.k_i[fam], b2.k_i[fam])
        assert np.array_equal(b1.k_ploss[fam], b2.k_ploss[fam])


def test_structural_zeros(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    b = compute_bundle(epfl_model, sol.state)
    n = epfl_model.n_ac
    s = epfl_model.slack_index
    for fam in ("p", "q", "e"):
        # slack magnitude and angle are pinned by their identity rows
        assert np.max(np.abs(b.k_e[fam][s])) <= 1e-12
        assert np.max(np.abs(b.k_th[fam][s])) <= 1e-12
    # no reactive variable exists on the DC side: packed zeros stay exact
    assert np.all(b.K_Q_E[:, n:] == 0.0)
    assert np.all(b.k_i["q"][:, n:] == 0.0)


def test_dc_setpoint_self_sensitivity(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    b = compute_bundle(epfl_model, sol.state)
    n = epfl_model.n_ac
    for ic in epfl_model.ic_pairs:
        u = n + ic.dc_idx
        assert abs(b.k_e["e"][u, u] - 1.0) <= 1e-12


# ---- finite-difference verification --------------------------------------


def test_fd_representative_point(epfl_model):
    spec = with_dct(epfl_model, epfl_loaded_spec(epfl_model))
    sol = solve_pf(epfl_model, spec, tol=TIGHT)
    bundle = compute_bundle(epfl_model, sol.state)
    worst = check_all_variables(epfl_model, spec, sol, bundle)
    # the analytic derivatives should beat the asserted bounds comfortably
    assert worst["vm"] < 1e-7


def test_fd_randomized_points(epfl_model):
    rng = np.random.RandomState(11)
    dc_terminals = [ic.dc_id for ic in epfl_model.ic_pairs]
    checked = 0
    for _ in range(20):
        spec = with_dct(epfl_model, epfl_loaded_spec(
            epfl_model,
            pv_kw=float(rng.uniform(0.0, 14.87)),
            household_kw=float(rng.uniform(-12.0, -3.0)),
            evcs_kw=float(rng.uniform(-20.0, 0.0)),
            supercap_kw=float(rng.uniform(-0.4, 0.4)),
            e_ic={nid: float(1.0 + rng.uniform(-0.005, 0.005)) for nid in dc_terminals},
        ))
        sol = solve_pf(epfl_model, spec, tol=TIGHT)
        assert sol.converged
        bundle = compute_bundle(epfl_model, sol.state)
        check_all_variables(epfl_model, spec, sol, bundle)
        checked += 1
    assert checked == 20


def test_fd_two_bus(two_bus_model):
    spec = default_spec(two_bus_model)
    spec.p_set[two_bus_model.ac_index("N2")] = -0.02
    spec.q_set[two_bus_model.ac_index("N2")] = -0.005
    sol = solve_pf(two_bus_model, spec, tol=TIGHT)
    bundle = compute_bundle(two_bus_model, sol.state)
    check_all_variables(two_bus_model, spec, sol, bundle)


# ---- zero-current fallback ------------------------------------------------


def test_zero_current_branch_flagged(two_bus_model):
    sol = solve_pf(two_bus_model, default_spec(two_bus_model))
    b = compute_bundle(two_bus_model, sol.state)
    assert b.flagged_lines == [0]
    b.assert_finite()


def test_loaded_epfl_has_no_flagged_lines(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    b = compute_bundle(epfl_model, sol.state)
    assert b.flagged_lines == []


# ---- prediction -----------------------------------------------------------


def test_predict_zero_delta_is_anchor(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    b = compute_bundle(epfl_model, sol.state)
    nm = epfl_model.n_nodes
    z = np.zeros(nm)
    pred = predict(b, z, z, z)
    assert np.array_equal(pred.vm, sol.state.vm)
    assert pred.p_loss == b.p_loss_anchor
    assert np.max(np.abs(pred.i_mag - np.abs(b.i_anchor))) == 0.0


def test_predict_matches_resolve(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec, tol=TIGHT)
    b = compute_bundle(epfl_model, sol.state)
    n = epfl_model.n_ac
    nm = epfl_model.n_nodes
    rng = np.random.RandomState(3)

    dp = np.zeros(nm)
    dq = np.zeros(nm)
    de = np.zeros(nm)
    sp = spec.copy()
    for var in b.variables:
        step = float(rng.uniform(-1.0, 1.0))
        if var.kind in ("p_ac", "p_dc", "p_ic"):
            u = epfl_model.unified_index(var.node_id)
            dp[u] = 2e-3 * step
            sp.p_set[u] += dp[u]
        elif var.kind in ("q_ac", "q_ic"):
            u = epfl_model.ac_index(var.node_id)
            dq[u] = 2e-3 * step
            sp.q_set[u] += dq[u]
        elif var.kind in ("e_dc", "e_ic"):
            j = epfl_model.dc_index(var.node_id)
            de[n + j] = 2e-4 * step
            sp.e_set[j] += de[n + j]

    pred = predict(b, dp, dq, de)
    actual = solve_pf(epfl_model, sp, init=sol.state, tol=TIGHT)
    obs = observables(epfl_model, actual.state)
    # 38 simultaneous perturbations; residual is the quadratic remainder
    assert np.max(np.abs(pred.vm - obs["vm"])) <= 2e-5
    assert np.max(np.abs(pred.angle - obs["angle"])) <= 2e-5
    assert np.max(np.abs(pred.i_mag - np.abs(obs["i"]))) <= 2e-3
    assert abs(pred.p_loss - obs["p_loss"]) <= 5e-5
    assert abs(pred.q_slack - obs["q_slack"]) <= 5e-4


# ---- degenerate systems ---------------------------------------------------


def test_rcond_floor_raises(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    with pytest.raises(DegenerateOperatingPoint):
        compute_bundle(epfl_model, sol.state, rcond_floor=1.0)


def test_max_power_transfer_point_is_singular():
    # two-node DC island: at E_p = E_v / 2 the load node's injection is at
    # its extremum, dP/dE_p = y (2 E_p - E_v) = 0, and the whole E_p column
    # of the coefficient matrix vanishes
    payload = two_bus_dict()
    payload["dc_nodes"] = [{"id": "D1", "kind": "v"}, {"id": "D2", "kind": "p"}]
    payload["lines"].append({"id": "LD", "from": "D1", "to": "D2", "r": 0.64,
                             "ampacity_A": 100.0})
    model = grid_from_dict(payload)
    sol = solve_pf(model, default_spec(model))
    state = sol.state.copy()
    state.e_dc = np.array([1.0, 0.5])
    with pytest.raises(DegenerateOperatingPoint):
        compute_bundle(model, state)


# ---- tabulation -----------------------------------------------------------


def test_sc_table_layout(epfl_model):
    spec = epfl_loaded_spec(epfl_model)
    sol = solve_pf(epfl_model, spec)
    b = compute_bundle(epfl_model, sol.state)
    header, rows = sc_table(epfl_model, b)
    assert header[0] == "output"
    assert header[1:] == [v.describe() for v in b.variables]
    nm = epfl_model.n_nodes
    n = epfl_model.n_ac
    assert len(rows) == nm + n + len(epfl_model.lines) + 4
    labels = [r[0] for r in rows]
    assert "vm:B11" in labels and "i:L10" in labels and "p_loss" in labels

    # spot-check one value against the packed matrix
    k = header.index("q_ac:B11")
    var = b.variables[k - 1]
    assert var.describe() == "q_ac:B11"
    row_vm11 = rows[labels.index("vm:B11")]
    u11 = epfl_model.unified_index("B11")
    assert float(row_vm11[k]) == b.K_Q_E[u11, u11]

    assert sc_to_csv(epfl_model, b) == sc_to_csv(epfl_model, b)
