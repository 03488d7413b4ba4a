"""Analytical sensitivity coefficients around a converged operating point.

The linear system reuses the power-flow machinery: the coefficient matrix is
exactly the Newton Jacobian of the unified residual (same row plan, same
state), and each controllable variable contributes an indicator right-hand
side with a single 1 at the equation row whose specified quantity it is.
One LU factorization therefore serves every variable.

Variable families and their packed-matrix column layout:

- family "p": active-power variables (PQ nodes, DC P nodes, PacQac converter
  AC power). Column = unified node index.
- family "q": reactive-power variables (PQ nodes, converter AC terminals).
- family "e": voltage setpoints (PV magnitudes, DC V nodes, EdcQac converter
  DC voltages).

Packed matrices are full-width over unified node columns; columns with no
variable of that family stay zero, which keeps the DC positions of the
reactive family identically zero by construction.

Derived coefficients: complex branch-current derivatives come from the
magnitude and angle solutions via ``dE = (E/|E|) d|E| + jE dtheta``; the
current-magnitude chain rule divides by |I|, so branches carrying less than
``CURRENT_EPS`` are flagged and their magnitude row falls back to the
derivative of the dominant rectangular component. Loss rows accumulate
``2 r Re{conj(I) dI}`` per branch (reactive with x), and slack / converter
power rows reuse the bus power-function gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve

from .network import (
    AC_PQ,
    AC_PV,
    DC_P,
    DC_V,
    MODE_EDC_QAC,
    MODE_PAC_QAC,
    GridModel,
    GridState,
    GridValidationError,
)
from .powerflow import CURRENT_EPS, PfSpec, jacobian, power_gradients

FAMILIES = ("p", "q", "e")

KIND_P_AC = "p_ac"
KIND_Q_AC = "q_ac"
KIND_VM_PV = "vm_pv"
KIND_P_DC = "p_dc"
KIND_E_DC = "e_dc"
KIND_P_IC = "p_ic"
KIND_Q_IC = "q_ic"
KIND_E_IC = "e_ic"

_FAMILY_OF = {
    KIND_P_AC: "p",
    KIND_P_DC: "p",
    KIND_P_IC: "p",
    KIND_Q_AC: "q",
    KIND_Q_IC: "q",
    KIND_VM_PV: "e",
    KIND_E_DC: "e",
    KIND_E_IC: "e",
}


class SensitivityError(RuntimeError):
    pass


class DegenerateOperatingPoint(SensitivityError):
    def __init__(self, rcond: float):
        self.rcond = rcond
        super().__init__(
            f"sensitivity system is numerically singular (rcond ~ {rcond:.2e})"
        )


@dataclass(frozen=True)
class ControlVariable:
    """One differentiable specified quantity: what is perturbed and where."""

    kind: str
    node_id: str

    def describe(self) -> str:
        return f"{self.kind}:{self.node_id}"


def _variable_row_and_column(model: GridModel, var: ControlVariable) -> tuple[int, int]:
    """(equation row owning the variable, unified column index)."""
    try:
        return _row_and_column(model, var)
    except GridValidationError as exc:
        raise SensitivityError(f"{var.describe()}: {exc}") from None


def _row_and_column(model: GridModel, var: ControlVariable) -> tuple[int, int]:
    kind = var.kind
    if kind not in _FAMILY_OF:
        raise SensitivityError(f"unknown variable kind {kind!r}")
    n = model.n_ac
    if kind in (KIND_P_AC, KIND_Q_AC, KIND_VM_PV):
        i = model.ac_index(var.node_id)
        node = model.ac_nodes[i]
        if kind == KIND_P_AC:
            if node.kind != AC_PQ:
                raise SensitivityError(f"{var.describe()}: node is not PQ")
            return 2 * i, i
        if kind == KIND_Q_AC:
            if node.kind != AC_PQ:
                raise SensitivityError(f"{var.describe()}: node is not PQ")
            return 2 * i + 1, i
        if node.kind != AC_PV:
            raise SensitivityError(f"{var.describe()}: node is not PV")
        return 2 * i + 1, i
    if kind in (KIND_P_DC, KIND_E_DC):
        j = model.dc_index(var.node_id)
        node = model.dc_nodes[j]
        want = DC_P if kind == KIND_P_DC else DC_V
        if node.kind != want:
            raise SensitivityError(f"{var.describe()}: node kind mismatch")
        return 2 * n + j, n + j
    # converter variables are named by their AC terminal (p_ic, q_ic) or DC
    # terminal (e_ic)
    if kind == KIND_P_IC:
        ic = _pair_by_ac(model, var.node_id)
        if ic.mode != MODE_PAC_QAC:
            raise SensitivityError(f"{var.describe()}: converter does not track P")
        return 2 * ic.ac_idx, ic.ac_idx
    if kind == KIND_Q_IC:
        ic = _pair_by_ac(model, var.node_id)
        row = 2 * ic.ac_idx + (1 if ic.mode == MODE_PAC_QAC else 0)
        return row, ic.ac_idx
    ic = _pair_by_dc(model, var.node_id)
    if ic.mode != MODE_EDC_QAC:
        raise SensitivityError(f"{var.describe()}: converter does not impose E")
    return 2 * n + ic.dc_idx, n + ic.dc_idx


def _pair_by_ac(model: GridModel, node_id: str):
    ic = model.ic_for_ac_node(model.ac_index(node_id))
    if ic is None:
        raise SensitivityError(f"node {node_id} is not a converter AC terminal")
    return ic


def _pair_by_dc(model: GridModel, node_id: str):
    ic = model.ic_for_dc_node(model.dc_index(node_id))
    if ic is None:
        raise SensitivityError(f"node {node_id} is not a converter DC terminal")
    return ic


def full_variable_set(model: GridModel) -> list[ControlVariable]:
    """Every controllable specified quantity of the model, fixed order."""
    out: list[ControlVariable] = []
    for node in model.ac_nodes:
        if node.kind == AC_PQ:
            out.append(ControlVariable(KIND_P_AC, node.node_id))
            out.append(ControlVariable(KIND_Q_AC, node.node_id))
        elif node.kind == AC_PV:
            out.append(ControlVariable(KIND_VM_PV, node.node_id))
    for node in model.dc_nodes:
        if node.kind == DC_P:
            out.append(ControlVariable(KIND_P_DC, node.node_id))
        elif node.kind == DC_V:
            out.append(ControlVariable(KIND_E_DC, node.node_id))
    for ic in model.ic_pairs:
        if ic.mode == MODE_PAC_QAC:
            out.append(ControlVariable(KIND_P_IC, ic.ac_id))
            out.append(ControlVariable(KIND_Q_IC, ic.ac_id))
        else:
            out.append(ControlVariable(KIND_Q_IC, ic.ac_id))
            out.append(ControlVariable(KIND_E_IC, ic.dc_id))
    return out


def rhs_u(model: GridModel, variable: ControlVariable) -> np.ndarray:
    """Indicator right-hand side: 1 at the variable's owning equation row."""
    row, _ = _variable_row_and_column(model, variable)
    u = np.zeros(model.n_rows)
    u[row] = 1.0
    return u


def assemble_A(model: GridModel, state: GridState) -> np.ndarray:
    """Coefficient matrix of the sensitivity system at ``state``.

    Identical to the Newton Jacobian of the unified power-flow residual with
    device injections frozen, and independent of which variable is
    differentiated.
    """
    return jacobian(model, PfSpec.blank(model), state)


def _rcond_estimate(a: np.ndarray, lu: np.ndarray) -> float:
    gecon = get_lapack_funcs(("gecon",), (a,))[0]
    anorm = np.linalg.norm(a, 1)
    rcond, _ = gecon(lu, anorm, norm="1")
    return float(rcond)


@dataclass
class SensitivityBundle:
    """All packed sensitivity matrices valid at one anchor state.

    ``k_e[f]`` maps a family-``f`` delta vector (indexed by unified node) to
    unified voltage-magnitude changes; ``k_th[f]`` to AC angle changes;
    ``k_i[f]`` to branch-current changes (AC rows are |I| derivatives, DC rows
    signed current derivatives); ``k_ploss/k_qloss`` to total-series-loss
    changes; ``k_ps/k_qs`` to slack injection changes and ``k_pic[f][r]`` to
    the AC active power of converter pair ``r``.
    """

    anchor: GridState
    variables: list[ControlVariable]
    rcond: float
    k_e: dict[str, np.ndarray]
    k_th: dict[str, np.ndarray]
    k_i: dict[str, np.ndarray]
    k_ploss: dict[str, np.ndarray]
    k_qloss: dict[str, np.ndarray]
    k_ps: dict[str, np.ndarray]
    k_qs: dict[str, np.ndarray]
    k_pic: dict[str, np.ndarray]
    i_anchor: np.ndarray
    flagged_lines: list[int]
    p_loss_anchor: float
    q_loss_anchor: float
    p_ic_anchor: np.ndarray
    p_slack_anchor: float = 0.0
    q_slack_anchor: float = 0.0
    line_is_dc: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    slack_index: int = 0

    # spec-facing aliases (Eq. 7 family naming)
    @property
    def K_P_E(self) -> np.ndarray:
        return self.k_e["p"]

    @property
    def K_Q_E(self) -> np.ndarray:
        return self.k_e["q"]

    @property
    def K_E_E(self) -> np.ndarray:
        return self.k_e["e"]

    @property
    def K_P_I(self) -> np.ndarray:
        return self.k_i["p"]

    @property
    def K_Q_I(self) -> np.ndarray:
        return self.k_i["q"]

    @property
    def K_E_I(self) -> np.ndarray:
        return self.k_i["e"]

    def assert_finite(self) -> None:
        for fam in FAMILIES:
            for mat in (self.k_e[fam], self.k_th[fam], self.k_i[fam],
                        self.k_ploss[fam], self.k_qloss[fam]):
                if not np.all(np.isfinite(mat)):
                    raise SensitivityError("non-finite sensitivity entries")


def compute_bundle(
    model: GridModel,
    state: GridState,
    variables: list[ControlVariable] | None = None,
    rcond_floor: float = 1e-12,
) -> SensitivityBundle:
    """Solve the sensitivity system for every variable and pack K-matrices."""
    if variables is None:
        variables = full_variable_set(model)
    n, m = model.n_ac, model.n_dc
    nm = n + m

    a = assemble_A(model, state)
    if not np.all(np.isfinite(a)):
        raise SensitivityError("coefficient matrix has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # exact singularity is reported below
        lu, piv = lu_factor(a)
    rcond = _rcond_estimate(a, lu)
    if not np.isfinite(rcond) or rcond < rcond_floor:
        raise DegenerateOperatingPoint(rcond)

    # one LU, one back-substitution per variable (bitwise equal to assembling
    # the matrix from scratch for each variable, which tests rely on)
    xs = np.empty((model.n_rows, len(variables)))
    cols = np.empty(len(variables), dtype=int)
    fams: list[str] = []
    for k, var in enumerate(variables):
        row, col = _variable_row_and_column(model, var)
        u = np.zeros(model.n_rows)
        u[row] = 1.0
        xs[:, k] = lu_solve((lu, piv), u)
        cols[k] = col
        fams.append(_FAMILY_OF[var.kind])

    dvm = xs[:n, :]
    dth = xs[n : 2 * n, :]
    de = xs[2 * n :, :]
    dvm_unified = np.vstack([dvm, de])

    # complex voltage derivatives feed the current chain rule
    e_ac = state.e_ac
    vm = np.abs(e_ac)
    de_ac = (e_ac / vm)[:, None] * dvm + 1j * e_ac[:, None] * dth

    n_lines = len(model.lines)
    i_anchor = np.zeros(n_lines, dtype=complex)
    di_rows = np.zeros((n_lines, len(variables)))
    flagged: list[int] = []
    dploss = np.zeros(len(variables))
    dqloss = np.zeros(len(variables))
    p_loss_anchor = 0.0
    q_loss_anchor = 0.0
    for kdx, ln in enumerate(model.lines):
        if ln.is_dc:
            g = ln.y_series.real
            i0 = g * (state.e_dc[ln.from_idx] - state.e_dc[ln.to_idx])
            d_i = g * (de[ln.from_idx, :] - de[ln.to_idx, :])
            i_anchor[kdx] = i0
            di_rows[kdx] = d_i
            dploss += 2.0 * ln.r_pu * i0 * d_i
            p_loss_anchor += ln.r_pu * i0 * i0
        else:
            i0 = ln.y_series * (e_ac[ln.from_idx] - e_ac[ln.to_idx])
            d_i = ln.y_series * (de_ac[ln.from_idx, :] - de_ac[ln.to_idx, :])
            i_anchor[kdx] = i0
            re_conj = (np.conj(i0) * d_i).real
            mag = abs(i0)
            if mag < CURRENT_EPS:
                flagged.append(kdx)
                # magnitude derivative undefined; fall back to the dominant
                # rectangular component so downstream math stays finite
                di_rows[kdx] = d_i.real if abs(i0.real) >= abs(i0.imag) else d_i.imag
            else:
                di_rows[kdx] = re_conj / mag
            dploss += 2.0 * ln.r_pu * re_conj
            dqloss += 2.0 * ln.x_pu * re_conj
            p_loss_anchor += ln.r_pu * mag * mag
            q_loss_anchor += ln.x_pu * mag * mag

    grads = power_gradients(model, state)
    s_complex = e_ac * np.conj(model.y_ac @ e_ac)
    s_idx = model.slack_index
    dps = grads.dp_dvm[s_idx] @ dvm + grads.dp_dth[s_idx] @ dth
    dqs = grads.dq_dvm[s_idx] @ dvm + grads.dq_dth[s_idx] @ dth
    n_pairs = len(model.ic_pairs)
    dpic = np.zeros((n_pairs, len(variables)))
    p_ic_anchor = np.zeros(n_pairs)
    for r, ic in enumerate(model.ic_pairs):
        l = ic.ac_idx
        dpic[r] = grads.dp_dvm[l] @ dvm + grads.dp_dth[l] @ dth
        p_ic_anchor[r] = s_complex[l].real

    def pack_vec(vec: np.ndarray) -> dict[str, np.ndarray]:
        out = {f: np.zeros(nm) for f in FAMILIES}
        for k in range(len(variables)):
            out[fams[k]][cols[k]] = vec[k]
        return out

    bundle = SensitivityBundle(
        anchor=state.copy(),
        variables=list(variables),
        rcond=rcond,
        k_e=_pack_matrix(dvm_unified, fams, cols, nm),
        k_th=_pack_matrix(dth, fams, cols, nm),
        k_i=_pack_matrix(di_rows, fams, cols, nm),
        k_ploss=pack_vec(dploss),
        k_qloss=pack_vec(dqloss),
        k_ps=pack_vec(dps),
        k_qs=pack_vec(dqs),
        k_pic=_pack_matrix(dpic, fams, cols, nm),
        i_anchor=i_anchor,
        flagged_lines=flagged,
        p_loss_anchor=p_loss_anchor,
        q_loss_anchor=q_loss_anchor,
        p_ic_anchor=p_ic_anchor,
        p_slack_anchor=float(s_complex[s_idx].real),
        q_slack_anchor=float(s_complex[s_idx].imag),
        line_is_dc=np.asarray([ln.is_dc for ln in model.lines], dtype=bool),
        slack_index=model.slack_index,
    )
    bundle.assert_finite()
    return bundle


def _pack_matrix(rows: np.ndarray, fams: list[str], cols: np.ndarray, width: int):
    out = {f: np.zeros((rows.shape[0], width)) for f in FAMILIES}
    for k in range(len(fams)):
        out[fams[k]][:, cols[k]] = rows[:, k]
    return out


@dataclass
class Prediction:
    vm: np.ndarray              # unified voltage magnitudes
    angle: np.ndarray           # AC angles
    i_branch: np.ndarray        # AC rows |I|, DC rows signed current
    i_mag: np.ndarray           # magnitudes for every branch
    p_loss: float
    q_loss: float
    p_slack: float
    q_slack: float
    p_ic: np.ndarray


def predict(
    bundle: SensitivityBundle,
    delta_p: np.ndarray,
    delta_q: np.ndarray,
    delta_e: np.ndarray,
) -> Prediction:
    """First-order Taylor prediction anchored at ``bundle.anchor``.

    Delta vectors are indexed by unified node and must be zero wherever the
    corresponding family has no variable (enforced by construction when they
    come from the controller).
    """
    deltas = {"p": delta_p, "q": delta_q, "e": delta_e}
    vm = bundle.anchor.vm.copy()
    th = bundle.anchor.angle.copy()
    i_br = np.where(
        bundle.line_is_dc, bundle.i_anchor.real, np.abs(bundle.i_anchor)
    ).astype(float)
    p_loss = bundle.p_loss_anchor
    q_loss = bundle.q_loss_anchor
    p_s = bundle.p_slack_anchor
    q_s = bundle.q_slack_anchor
    p_ic = bundle.p_ic_anchor.copy()
    for f in FAMILIES:
        d = deltas[f]
        vm = vm + bundle.k_e[f] @ d
        th = th + bundle.k_th[f] @ d
        i_br = i_br + bundle.k_i[f] @ d
        p_loss = p_loss + float(bundle.k_ploss[f] @ d)
        q_loss = q_loss + float(bundle.k_qloss[f] @ d)
        p_s = p_s + float(bundle.k_ps[f] @ d)
        q_s = q_s + float(bundle.k_qs[f] @ d)
        p_ic = p_ic + bundle.k_pic[f] @ d
    i_mag = np.abs(i_br)
    return Prediction(
        vm=vm,
        angle=th,
        i_branch=i_br,
        i_mag=i_mag,
        p_loss=p_loss,
        q_loss=q_loss,
        p_slack=p_s,
        q_slack=q_s,
        p_ic=p_ic,
    )


def sc_table(model: GridModel, bundle: SensitivityBundle) -> tuple[list[str], list[list[str]]]:
    """Tabulate the bundle: one row per output, one column per variable."""
    header = ["output"] + [v.describe() for v in bundle.variables]
    fam_col = []
    for var in bundle.variables:
        _, col = _variable_row_and_column(model, var)
        fam_col.append((_FAMILY_OF[var.kind], col))

    def row(label: str, per_family_rows: dict[str, np.ndarray], idx: int) -> list[str]:
        vals = [repr(float(per_family_rows[f][idx, c])) for f, c in fam_col]
        return [label] + vals

    def vec_row(label: str, per_family: dict[str, np.ndarray]) -> list[str]:
        return [label] + [repr(float(per_family[f][c])) for f, c in fam_col]

    rows: list[list[str]] = []
    for u, node_id in enumerate(model.node_ids()):
        rows.append(row(f"vm:{node_id}", bundle.k_e, u))
    for i, node in enumerate(model.ac_nodes):
        rows.append(row(f"angle:{node.node_id}", bundle.k_th, i))
    for kdx, ln in enumerate(model.lines):
        rows.append(row(f"i:{ln.line_id}", bundle.k_i, kdx))
    rows.append(vec_row("p_loss", bundle.k_ploss))
    rows.append(vec_row("q_loss", bundle.k_qloss))
    rows.append(vec_row("p_slack", bundle.k_ps))
    rows.append(vec_row("q_slack", bundle.k_qs))
    return header, rows


def sc_to_csv(model: GridModel, bundle: SensitivityBundle) -> str:
    header, rows = sc_table(model, bundle)
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def save_sc_csv(path, model: GridModel, bundle: SensitivityBundle) -> None:
    with open(path, "w") as fh:
        fh.write(sc_to_csv(model, bundle))
