"""Unified Newton power flow for hybrid AC/DC networks.

One square nonlinear system covers both grids and the converter couplings.
The unknown vector is ``z = [vm_ac | theta_ac | e_dc]`` and the residual rows
follow the canonical row plan of :class:`hygrid.network.RowPlan`: fixed
quantities (slack voltage/angle, PV magnitudes, imposed DC voltages) are kept
in the system as identity rows rather than eliminated, so the Newton Jacobian
is exactly the matrix later reused for sensitivity analysis.

Residual conventions (everything per-unit, injections positive):

- power rows:      computed(E) - specified
- identity rows:   variable - setpoint
- coupling rows:   P_ac(E) + P_dc(E) + P_conv_loss(|I_ac|)   (= 0 at solution)

Converter losses follow a polynomial in the AC terminal current magnitude,
``a0 + a1*|I| + a2*|I|^2``; the filter reactive draw uses the same form. Both
default to zero.

A DC transformer can be attached to the system as an endogenous device (the
"plant truth" configuration): its voltage-dependent injections and their
derivatives enter the DC power rows. The device characteristic is
discontinuous at the deadband edge, so the solve runs in two phases: first
with the deadband ignored (smooth), then, if the resulting voltage difference
lies inside the band, a re-solve with the transfer forced off. The on/off
branch is decided by the first phase, which makes the resolution of the
bistable corner deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .devices import dct_injections_with_jacobian
from .network import (
    AC_PQ,
    AC_PV,
    AC_SLACK,
    MODE_EDC_QAC,
    MODE_PAC_QAC,
    Dct,
    GridModel,
    GridState,
    GridValidationError,
)

PF_TOL = 1e-8
PF_MAX_ITER = 50
CURRENT_EPS = 1e-9


class PowerFlowError(RuntimeError):
    pass


class ConvergenceError(PowerFlowError):
    def __init__(self, iterations: int, max_mismatch: float):
        self.iterations = iterations
        self.max_mismatch = max_mismatch
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {max_mismatch:.3e} p.u.)"
        )


class SingularJacobianError(PowerFlowError):
    def __init__(self, iteration: int, row: int, row_label: str):
        self.iteration = iteration
        self.row = row
        self.row_label = row_label
        super().__init__(
            f"singular Jacobian at iteration {iteration}; "
            f"worst-conditioned row {row} ({row_label})"
        )


@dataclass
class DctRuntime:
    """Plant-side DCT configuration for one device.

    ``deadband`` gates the transfer cutoff around zero voltage difference;
    ``losses`` gates the magnetizing draw and the ohmic term; ``force_off``
    pins the transfer to zero regardless of voltages (used by the second
    solve phase). The controller's model never uses any of this: it treats
    DCT injections as frozen inputs.
    """

    dct: Dct
    deadband: bool = True
    losses: bool = True
    force_off: bool = False


@dataclass
class PfSpec:
    """Specified quantities for one power-flow solve.

    Arrays are aligned with the model's node ordering and hold NaN where the
    corresponding quantity is not specified for that node kind. Validation
    enforces an exact match between the non-NaN pattern and what each node
    kind requires, so over- and under-specification are both rejected.

    ``p_set`` covers AC and DC nodes (length N+M); the others are side-local.
    """

    p_set: np.ndarray            # (N+M,) injections; NaN where P not specified
    q_set: np.ndarray            # (N,)
    vm_set: np.ndarray           # (N,)
    angle_set: np.ndarray        # (N,)
    e_set: np.ndarray            # (M,)
    dct_runtime: list[DctRuntime] = field(default_factory=list)

    @classmethod
    def blank(cls, model: GridModel) -> "PfSpec":
        n, m = model.n_ac, model.n_dc
        return cls(
            p_set=np.full(n + m, np.nan),
            q_set=np.full(n, np.nan),
            vm_set=np.full(n, np.nan),
            angle_set=np.full(n, np.nan),
            e_set=np.full(m, np.nan),
        )

    @classmethod
    def from_tables(cls, model: GridModel, table: dict) -> "PfSpec":
        """Build a spec from a per-node mapping, e.g. loaded from JSON.

        ``table`` maps node id to a dict with keys among {"p", "q", "vm",
        "angle", "e"}; powers in per-unit. Nodes omitted from the table get
        zero injections / 1.0 p.u. setpoints where a value is required.
        """
        spec = default_spec(model)
        n = model.n_ac
        for nid, vals in table.items():
            u = model.unified_index(nid)
            for key, val in vals.items():
                val = float(val)
                if key == "p":
                    spec.p_set[u] = val
                elif key == "q":
                    if u >= n:
                        raise GridValidationError(
                            f"node {nid}: reactive power is not a DC quantity"
                        )
                    spec.q_set[u] = val
                elif key == "vm":
                    if u >= n:
                        raise GridValidationError(
                            f"node {nid}: use 'e' for DC voltage setpoints"
                        )
                    spec.vm_set[u] = val
                elif key == "angle":
                    if u >= n:
                        raise GridValidationError(f"node {nid}: no angle on DC side")
                    spec.angle_set[u] = val
                elif key == "e":
                    if u < n:
                        raise GridValidationError(
                            f"node {nid}: use 'vm' for AC voltage setpoints"
                        )
                    spec.e_set[u - n] = val
                else:
                    raise GridValidationError(f"node {nid}: unknown spec key {key!r}")
        spec.validate(model)
        return spec

    def copy(self) -> "PfSpec":
        return PfSpec(
            p_set=self.p_set.copy(),
            q_set=self.q_set.copy(),
            vm_set=self.vm_set.copy(),
            angle_set=self.angle_set.copy(),
            e_set=self.e_set.copy(),
            dct_runtime=list(self.dct_runtime),
        )

    def validate(self, model: GridModel) -> None:
        n, m = model.n_ac, model.n_dc
        if self.p_set.shape != (n + m,):
            raise GridValidationError("p_set must cover all nodes")
        for arr, size, name in (
            (self.q_set, n, "q_set"),
            (self.vm_set, n, "vm_set"),
            (self.angle_set, n, "angle_set"),
            (self.e_set, m, "e_set"),
        ):
            if arr.shape != (size,):
                raise GridValidationError(f"{name} has wrong length")

        def need(cond: bool, have, what: str, nid: str):
            if cond and np.isnan(have):
                raise GridValidationError(f"node {nid}: {what} must be specified")
            if not cond and not np.isnan(have):
                raise GridValidationError(f"node {nid}: {what} must not be specified")

        for i, node in enumerate(model.ac_nodes):
            kind = node.kind
            ic = model.ic_for_ac_node(i)
            p_needed = kind in (AC_PQ, AC_PV) or (
                ic is not None and ic.mode == MODE_PAC_QAC
            )
            q_needed = kind == AC_PQ or ic is not None
            vm_needed = kind in (AC_SLACK, AC_PV)
            th_needed = kind == AC_SLACK
            need(p_needed, self.p_set[i], "P", node.node_id)
            need(q_needed, self.q_set[i], "Q", node.node_id)
            need(vm_needed, self.vm_set[i], "|E|", node.node_id)
            need(th_needed, self.angle_set[i], "angle", node.node_id)
            if vm_needed and self.vm_set[i] <= 0:
                raise GridValidationError(f"node {node.node_id}: |E| setpoint must be positive")
        for j, node in enumerate(model.dc_nodes):
            ic = model.ic_for_dc_node(j)
            p_needed = node.kind == "p"
            e_needed = node.kind == "v" or (ic is not None and ic.mode == MODE_EDC_QAC)
            need(p_needed, self.p_set[n + j], "P", node.node_id)
            need(e_needed, self.e_set[j], "E", node.node_id)
            if e_needed and self.e_set[j] <= 0:
                raise GridValidationError(f"node {node.node_id}: E setpoint must be positive")
        for rt in self.dct_runtime:
            if rt.dct not in model.dcts:
                raise GridValidationError(f"dct runtime for unknown device {rt.dct.name}")


def default_spec(model: GridModel) -> PfSpec:
    """Zero-injection spec with all voltage setpoints at 1.0 p.u."""
    spec = PfSpec.blank(model)
    n = model.n_ac
    for i, node in enumerate(model.ac_nodes):
        ic = model.ic_for_ac_node(i)
        if node.kind == AC_SLACK:
            spec.vm_set[i] = 1.0
            spec.angle_set[i] = 0.0
        elif node.kind == AC_PQ:
            spec.p_set[i] = 0.0
            spec.q_set[i] = 0.0
        elif node.kind == AC_PV:
            spec.p_set[i] = 0.0
            spec.vm_set[i] = 1.0
        elif ic is not None:
            spec.q_set[i] = 0.0
            if ic.mode == MODE_PAC_QAC:
                spec.p_set[i] = 0.0
    for j, node in enumerate(model.dc_nodes):
        ic = model.ic_for_dc_node(j)
        if node.kind == "p":
            spec.p_set[n + j] = 0.0
        elif node.kind == "v":
            spec.e_set[j] = 1.0
        elif ic is not None and ic.mode == MODE_EDC_QAC:
            spec.e_set[j] = 1.0
    return spec


@dataclass
class PfSolution:
    state: GridState
    iterations: int
    max_mismatch: float
    converged: bool
    # per-DCT applied grid injections (primary, secondary) and on-branch flag,
    # only populated when the spec carried endogenous DCT devices
    dct_injections: dict = field(default_factory=dict)


def flat_state(model: GridModel) -> GridState:
    n, m = model.n_ac, model.n_dc
    return GridState(
        e_ac=np.ones(n, dtype=complex),
        e_dc=np.ones(m),
        p=np.zeros(n + m),
        q=np.zeros(n + m),
    )


def initial_state(model: GridModel, spec: PfSpec) -> GridState:
    """Flat start, except fixed voltages begin exactly at their setpoints."""
    st = flat_state(model)
    fixed_vm = ~np.isnan(spec.vm_set)
    fixed_th = ~np.isnan(spec.angle_set)
    vm = np.ones(model.n_ac)
    th = np.zeros(model.n_ac)
    vm[fixed_vm] = spec.vm_set[fixed_vm]
    th[fixed_th] = spec.angle_set[fixed_th]
    st.e_ac = vm * np.exp(1j * th)
    fixed_e = ~np.isnan(spec.e_set)
    st.e_dc[fixed_e] = spec.e_set[fixed_e]
    return st


# ---------------------------------------------------------------------------
# residual / Jacobian
# ---------------------------------------------------------------------------


def _ac_power(model: GridModel, e_ac: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F, P, Q) where F[i, n] = E_i * conj(Y_in * E_n)."""
    f = e_ac[:, None] * np.conj(model.y_ac * e_ac[None, :])
    s = f.sum(axis=1)
    return f, s.real, s.imag

def _dc_power(model: GridModel, e_dc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    f = e_dc[:, None] * model.y_dc * e_dc[None, :]
    return f, f.sum(axis=1)


def _ic_ac_current(model: GridModel, e_ac: np.ndarray, ac_idx: int) -> complex:
    """Nodal injection current at the converter's AC terminal."""
    return model.y_ac[ac_idx] @ e_ac


def _poly(coeffs: tuple[float, float, float], mag: float) -> float:
    c0, c1, c2 = coeffs
    return c0 + c1 * mag + c2 * mag * mag


def _dct_terms(model: GridModel, spec: PfSpec, e_dc: np.ndarray):
    """Aggregate endogenous DCT injections and their E-derivatives.

    Returns (w, dw) with w shape (M,) and dw shape (M, M); also a per-device
    report dict for PfSolution.
    """
    m = model.n_dc
    w = np.zeros(m)
    dw = np.zeros((m, m))
    report = {}
    for rt in spec.dct_runtime:
        d = rt.dct
        j1, j2 = d.primary_idx, d.secondary_idx
        (w1, w2), jac, on = dct_injections_with_jacobian(
            d,
            e_dc[j1],
            e_dc[j2],
            deadband=rt.deadband,
            losses=rt.losses,
            force_off=rt.force_off,
        )
        w[j1] += w1
        w[j2] += w2
        dw[np.ix_([j1, j2], [j1, j2])] += jac
        report[d.name] = (w1, w2, on)
    return w, dw, report


def mismatch(model: GridModel, spec: PfSpec, state: GridState) -> np.ndarray:
    """Residual vector over the canonical row plan (see module docstring)."""
    n = model.n_ac
    plan = model.row_plan
    r = np.zeros(model.n_rows)
    _, p_ac, q_ac = _ac_power(model, state.e_ac)
    _, p_dc = _dc_power(model, state.e_dc)

    r[plan.p_rows] = p_ac[plan.p_nodes] - spec.p_set[plan.p_nodes]
    r[plan.q_rows] = q_ac[plan.q_nodes] - spec.q_set[plan.q_nodes]
    r[plan.vmid_rows] = np.abs(state.e_ac[plan.vmid_nodes]) - spec.vm_set[plan.vmid_nodes]
    r[plan.thid_rows] = (
        np.angle(state.e_ac[plan.thid_nodes]) - spec.angle_set[plan.thid_nodes]
    )
    r[plan.eid_rows] = state.e_dc[plan.eid_nodes] - spec.e_set[plan.eid_nodes]
    r[plan.dcp_rows] = p_dc[plan.dcp_nodes] - spec.p_set[n + plan.dcp_nodes]

    if spec.dct_runtime:
        w, _, _ = _dct_terms(model, spec, state.e_dc)
        r[plan.dcp_rows] -= w[plan.dcp_nodes]

    for row, pair_idx in zip(plan.cpl_rows, plan.cpl_pairs):
        ic = model.ic_pairs[pair_idx]
        i_mag = abs(_ic_ac_current(model, state.e_ac, ic.ac_idx))
        r[row] = p_ac[ic.ac_idx] + p_dc[ic.dc_idx] + _poly(ic.p_loss_pu, i_mag)

    # filter draw shifts the converter's net reactive injection
    for ic in model.ic_pairs:
        if all(c == 0.0 for c in ic.q_filter_pu):
            continue
        i_mag = abs(_ic_ac_current(model, state.e_ac, ic.ac_idx))
        row = 2 * ic.ac_idx + (1 if ic.mode == MODE_PAC_QAC else 0)
        r[row] += _poly(ic.q_filter_pu, i_mag)
    return r


@dataclass
class PowerGradients:
    """Gradients of the bus power functions w.r.t. z = [vm | theta | e_dc].

    Row i of ``dp_dvm``/``dp_dth`` is the gradient of P_i over all AC
    magnitudes/angles; ``dpdc_de`` likewise for DC injections over DC
    voltages. These blocks serve the Newton Jacobian, the sensitivity
    system and the slack/converter power derivative rows.
    """

    dp_dvm: np.ndarray
    dp_dth: np.ndarray
    dq_dvm: np.ndarray
    dq_dth: np.ndarray
    dpdc_de: np.ndarray


def power_gradients(model: GridModel, state: GridState) -> PowerGradients:
    n = model.n_ac
    e_ac = state.e_ac
    vm = np.abs(e_ac)
    f_ac, p_ac, q_ac = _ac_power(model, e_ac)
    f_dc, p_dc = _dc_power(model, state.e_dc)

    dp_dvm = f_ac.real / vm[None, :]
    dp_dth = f_ac.imag.copy()
    dq_dvm = f_ac.imag / vm[None, :]
    dq_dth = -f_ac.real
    idx = np.arange(n)
    dp_dvm[idx, idx] = (p_ac + f_ac.real[idx, idx]) / vm
    dp_dth[idx, idx] = -q_ac + f_ac.imag[idx, idx]
    dq_dvm[idx, idx] = (q_ac + f_ac.imag[idx, idx]) / vm
    dq_dth[idx, idx] = p_ac - f_ac.real[idx, idx]

    jdx = np.arange(model.n_dc)
    dpdc = f_dc / state.e_dc[None, :]
    dpdc[jdx, jdx] = (p_dc + f_dc[jdx, jdx]) / state.e_dc
    return PowerGradients(dp_dvm, dp_dth, dq_dvm, dq_dth, dpdc)


def jacobian(model: GridModel, spec: PfSpec, state: GridState) -> np.ndarray:
    """Jacobian of :func:`mismatch` w.r.t. ``z = [vm | theta | e_dc]``.

    This same matrix is the coefficient matrix of the sensitivity linear
    system, assembled once per operating point and reused for every
    controllable variable.
    """
    n, m = model.n_ac, model.n_dc
    plan = model.row_plan
    jac = np.zeros((model.n_rows, model.n_rows))
    e_ac = state.e_ac
    vm = np.abs(e_ac)
    g = power_gradients(model, state)
    idx = np.arange(n)
    jdx = np.arange(m)

    jac[np.ix_(plan.p_rows, idx)] = g.dp_dvm[plan.p_nodes]
    jac[np.ix_(plan.p_rows, n + idx)] = g.dp_dth[plan.p_nodes]
    jac[np.ix_(plan.q_rows, idx)] = g.dq_dvm[plan.q_nodes]
    jac[np.ix_(plan.q_rows, n + idx)] = g.dq_dth[plan.q_nodes]

    jac[plan.vmid_rows, plan.vmid_nodes] = 1.0
    jac[plan.thid_rows, n + plan.thid_nodes] = 1.0
    jac[plan.eid_rows, 2 * n + plan.eid_nodes] = 1.0

    jac[np.ix_(plan.dcp_rows, 2 * n + jdx)] = g.dpdc_de[plan.dcp_nodes]

    if spec.dct_runtime:
        _, dw, _ = _dct_terms(model, spec, state.e_dc)
        jac[np.ix_(plan.dcp_rows, 2 * n + jdx)] -= dw[plan.dcp_nodes]

    # converter coupling rows and filter contributions
    for row, pair_idx in zip(plan.cpl_rows, plan.cpl_pairs):
        ic = model.ic_pairs[pair_idx]
        l = ic.ac_idx
        jac[row, idx] += g.dp_dvm[l]
        jac[row, n + idx] += g.dp_dth[l]
        jac[row, 2 * n + jdx] += g.dpdc_de[ic.dc_idx]
        _add_current_poly_derivative(jac, row, model, e_ac, vm, l, ic.p_loss_pu)
    for ic in model.ic_pairs:
        if all(c == 0.0 for c in ic.q_filter_pu):
            continue
        row = 2 * ic.ac_idx + (1 if ic.mode == MODE_PAC_QAC else 0)
        _add_current_poly_derivative(jac, row, model, e_ac, vm, ic.ac_idx, ic.q_filter_pu)
    return jac


def _add_current_poly_derivative(
    jac: np.ndarray,
    row: int,
    model: GridModel,
    e_ac: np.ndarray,
    vm: np.ndarray,
    l: int,
    coeffs: tuple[float, float, float],
) -> None:
    """Accumulate d(c0 + c1|I_l| + c2|I_l|^2)/dz into one Jacobian row.

    The |I| term is non-differentiable at zero current; below CURRENT_EPS its
    contribution is dropped (the |I|^2 term stays exact, it vanishes there).
    """
    _, c1, c2 = coeffs
    if c1 == 0.0 and c2 == 0.0:
        return
    n = model.n_ac
    i_l = model.y_ac[l] @ e_ac
    # d|I|^2/dz = 2 Re{conj(I) dI/dz};  dI/dvm_n = Y_ln E_n / vm_n, dI/dth_n = j Y_ln E_n
    yn_en = model.y_ac[l] * e_ac
    re_conj = (np.conj(i_l) * yn_en).real
    im_conj = (np.conj(i_l) * yn_en).imag
    mag = abs(i_l)
    scale = 2.0 * c2
    if c1 != 0.0 and mag >= CURRENT_EPS:
        scale_abs = c1 / mag
        jac[row, :n] += (scale + scale_abs) * re_conj / vm
        jac[row, n : 2 * n] += -(scale + scale_abs) * im_conj
    else:
        jac[row, :n] += scale * re_conj / vm
        jac[row, n : 2 * n] += -scale * im_conj


def _apply_step(state: GridState, dz: np.ndarray, n: int) -> GridState:
    vm = np.abs(state.e_ac) - dz[:n]
    th = np.angle(state.e_ac) - dz[n : 2 * n]
    new = state.copy()
    new.e_ac = vm * np.exp(1j * th)
    new.e_dc = state.e_dc - dz[2 * n :]
    return new


def _fill_injections(model: GridModel, spec: PfSpec, state: GridState) -> None:
    """Record realized injections on the state (slack/IC quantities float)."""
    n = model.n_ac
    _, p_ac, q_ac = _ac_power(model, state.e_ac)
    _, p_dc = _dc_power(model, state.e_dc)
    state.p[:n] = p_ac
    state.p[n:] = p_dc
    state.q[:n] = q_ac
    state.q[n:] = 0.0


def _solve_once(
    model: GridModel,
    spec: PfSpec,
    init: GridState | None,
    tol: float,
    max_iter: int,
) -> PfSolution:
    n = model.n_ac
    state = init.copy() if init is not None else initial_state(model, spec)
    r = mismatch(model, spec, state)
    max_mis = float(np.max(np.abs(r)))
    iterations = 1
    while max_mis > tol:
        if iterations >= max_iter:
            raise ConvergenceError(iterations, max_mis)
        jac = jacobian(model, spec, state)
        if not np.all(np.isfinite(jac)):
            raise _singular(model, jac, iterations)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu, piv = lu_factor(jac)
        if not np.all(np.isfinite(lu)):
            raise _singular(model, jac, iterations)
        udiag = np.abs(np.diag(lu))
        if udiag.min() < 1e-12 * max(udiag.max(), 1.0):
            raise _singular(model, jac, iterations)
        dz = lu_solve((lu, piv), r)
        # plain Newton with a deterministic halving fallback for bad steps
        step = 1.0
        for _ in range(5):
            cand = _apply_step(state, step * dz, n)
            r_new = mismatch(model, spec, cand)
            new_mis = float(np.max(np.abs(r_new)))
            if np.isfinite(new_mis) and (new_mis < max_mis or new_mis <= tol):
                break
            step *= 0.5
        state, r, max_mis = cand, r_new, new_mis
        iterations += 1
    _fill_injections(model, spec, state)
    state.validate(model)
    report = {}
    if spec.dct_runtime:
        _, _, report = _dct_terms(model, spec, state.e_dc)
    return PfSolution(
        state=state,
        iterations=iterations,
        max_mismatch=max_mis,
        converged=True,
        dct_injections=report,
    )


def _singular(model: GridModel, jac: np.ndarray, iteration: int) -> SingularJacobianError:
    # point at the most linearly dependent row: smallest pivot after LU would
    # do, but a plain row-norm scan is robust when factorization failed
    norms = np.linalg.norm(jac, axis=1)
    row = int(np.argmin(norms))
    return SingularJacobianError(iteration, row, model.row_plan.labels[row])


def solve_pf(
    model: GridModel,
    spec: PfSpec,
    init: GridState | None = None,
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
) -> PfSolution:
    """Newton solve of the unified system; see module docstring for phases.

    ``iterations`` on the result counts mismatch evaluations including the
    accepting one, so an already-converged start reports 1.
    """
    spec.validate(model)
    has_deadband = any(rt.deadband for rt in spec.dct_runtime)
    if not has_deadband:
        return _solve_once(model, spec, init, tol, max_iter)

    # phase 1: smooth system (deadband ignored) decides each device's branch
    smooth = spec.copy()
    smooth.dct_runtime = [
        DctRuntime(rt.dct, deadband=False, losses=rt.losses,
                   force_off=rt.force_off)
        for rt in spec.dct_runtime
    ]
    sol = _solve_once(model, smooth, init, tol, max_iter)
    off_devices = []
    for rt in spec.dct_runtime:
        if not rt.deadband or rt.force_off:
            continue
        de = sol.state.e_dc[rt.dct.primary_idx] - sol.state.e_dc[rt.dct.secondary_idx]
        if abs(de) <= rt.dct.deadband_pu:
            off_devices.append(rt.dct.name)
    if not off_devices:
        return sol

    # phase 2: re-solve with the in-band devices' transfer forced off
    final = spec.copy()
    final.dct_runtime = [
        DctRuntime(
            rt.dct,
            deadband=False,
            losses=rt.losses,
            force_off=rt.force_off or rt.dct.name in off_devices,
        )
        for rt in spec.dct_runtime
    ]
    sol2 = _solve_once(model, final, init, tol, max_iter)
    sol2.iterations = max(sol.iterations, sol2.iterations)
    return sol2


def total_losses(model: GridModel, state: GridState) -> tuple[float, float]:
    """(P, Q) series losses summed over every branch, per-unit."""
    from .network import branch_losses

    p, q = branch_losses(model, state)
    return float(p.sum()), float(q.sum())
