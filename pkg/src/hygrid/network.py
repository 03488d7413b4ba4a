"""Grid topology, per-unit conversion, and state containers for hybrid AC/DC networks.

The network couples a three-phase AC grid (modeled as its single-phase
direct-sequence equivalent) with one or more DC grids through
interfacing converters (ICs). A converter occupies one AC node and one
DC node and runs in one of two modes:

- ``pac_qac``: the converter tracks active/reactive power setpoints on
  its AC terminal; the DC terminal voltage floats.
- ``edc_qac``: the converter imposes the DC terminal voltage and tracks
  a reactive power setpoint on its AC terminal; the AC active power
  floats so that the pair balances.

Sign conventions used throughout the package:

- Nodal powers are injections: generation positive, consumption negative.
- For every converter pair, ``P_ac + P_dc + P_conv_loss = 0`` where both
  powers are grid injections at the respective terminals.
- S_base is three-phase apparent power and V_base_ac is line-to-line
  voltage, so the AC current base is ``S_base / (sqrt(3) * V_base_ac)``.
  The DC current base is ``S_base / V_base_dc``.
- Branch current is directional: ``I(from, to) = y_series * (E_from - E_to)``.

Grid files are JSON with impedances in ohms, powers in watts / volt-ampere,
ampacities in amps, and voltage setpoints/bounds in per-unit. Everything is
converted to per-unit at load time and only converted back at I/O boundaries.
"""

from __future__ import annotations

import cmath
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SQRT3 = math.sqrt(3.0)

# AC node kinds
AC_SLACK = "slack"
AC_PQ = "pq"
AC_PV = "pv"
AC_IC = "ic"
# DC node kinds
DC_P = "p"
DC_V = "v"
DC_IC = "ic"
# converter modes
MODE_PAC_QAC = "pac_qac"
MODE_EDC_QAC = "edc_qac"

_AC_KINDS = {AC_SLACK, AC_PQ, AC_PV, AC_IC}
_DC_KINDS = {DC_P, DC_V, DC_IC}
_IC_MODES = {MODE_PAC_QAC, MODE_EDC_QAC}


class GridValidationError(ValueError):
    """Raised when a grid description violates the schema or is not solvable."""


@dataclass(frozen=True)
class BaseValues:
    s_va: float          # three-phase apparent power base [VA]
    v_ac: float          # AC line-to-line voltage base [V]
    v_dc: float          # DC voltage base [V]

    @property
    def z_ac(self) -> float:
        return self.v_ac**2 / self.s_va

    @property
    def z_dc(self) -> float:
        return self.v_dc**2 / self.s_va

    @property
    def i_ac(self) -> float:
        return self.s_va / (SQRT3 * self.v_ac)

    @property
    def i_dc(self) -> float:
        return self.s_va / self.v_dc


@dataclass
class AcNode:
    node_id: str
    kind: str
    v_min: float | None = None   # per-unit bound override, None = use controller default
    v_max: float | None = None


@dataclass
class DcNode:
    node_id: str
    kind: str
    v_min: float | None = None
    v_max: float | None = None


@dataclass
class Line:
    line_id: str
    from_id: str
    to_id: str
    r_ohm: float
    x_ohm: float | None          # None marks a DC line
    ampacity_a: float
    # filled in by the loader
    is_dc: bool = False
    from_idx: int = -1           # side-local index (AC index or DC index)
    to_idx: int = -1
    r_pu: float = 0.0
    x_pu: float = 0.0
    y_series: complex = 0j       # per-unit series admittance (real for DC)
    ampacity_pu: float = 0.0


@dataclass
class IcPair:
    name: str
    ac_id: str
    dc_id: str
    mode: str
    s_rating_va: float
    # converter active loss polynomial in the AC terminal current magnitude,
    # SI coefficients (W, W/A, W/A^2); zero by default (lossless converter)
    p_loss_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # filter reactive consumption polynomial (var, var/A, var/A^2)
    q_filter_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ac_idx: int = -1
    dc_idx: int = -1
    s_rating_pu: float = 0.0
    p_loss_pu: tuple[float, float, float] = (0.0, 0.0, 0.0)
    q_filter_pu: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def lossless(self) -> bool:
        return all(c == 0.0 for c in self.p_loss_pu) and all(
            c == 0.0 for c in self.q_filter_pu
        )


@dataclass
class PvPlant:
    name: str
    node_id: str
    p_rating_w: float
    curtailable: bool
    node_idx: int = -1           # AC index
    p_rating_pu: float = 0.0


@dataclass
class Resource:
    """Uncontrollable profiled injection (load, EV charging station, storage)."""

    name: str
    node_id: str
    s_rating_va: float
    is_dc: bool = False
    node_idx: int = -1           # side-local index
    s_rating_pu: float = 0.0


@dataclass
class Dct:
    """Resonant DC transformer coupling two DC nodes.

    The transfer characteristic is linear in the terminal voltage difference
    with slope ``alpha``; ohmic losses are represented by an explicit series
    line in the grid file (``r_equiv_ohm`` documents its value), magnetizing
    losses are a constant split equally between both sides, and the physical
    unit has a deadband around zero voltage difference where no power flows.
    """

    name: str
    primary_id: str              # DC node id
    secondary_id: str
    alpha_kw_per_v: float
    p_rating_w: float
    r_equiv_ohm: float
    p_mag_loss_w: float = 600.0
    deadband_v: float = 0.5
    primary_idx: int = -1        # DC index
    secondary_idx: int = -1
    alpha_pu: float = 0.0
    p_rating_pu: float = 0.0
    r_equiv_pu: float = 0.0
    p_mag_loss_pu: float = 0.0
    deadband_pu: float = 0.0


@dataclass
class RowPlan:
    """Canonical equation-row ordering shared by the power-flow mismatch,
    the Newton Jacobian, and the sensitivity coefficient matrix.

    Every AC node owns rows ``2i`` and ``2i+1``; DC node ``j`` owns row
    ``2N+j``.  Which equation sits in each slot depends on the node kind:

    ==================  ======================  =====================
    node kind           row 2i                  row 2i+1
    ==================  ======================  =====================
    slack               |E| identity            angle identity
    pq                  P balance               Q balance
    pv                  P balance               |E| identity
    ic (pac_qac)        P balance               Q balance
    ic (edc_qac)        Q balance               converter coupling
    ==================  ======================  =====================

    ==================  ======================
    node kind           row 2N+j
    ==================  ======================
    dc p                P balance
    dc v                E identity
    ic dc (pac_qac)     converter coupling
    ic dc (edc_qac)     E identity
    ==================  ======================
    """

    labels: list[str]
    p_rows: np.ndarray           # rows holding AC P balances
    p_nodes: np.ndarray          # matching AC node indices
    q_rows: np.ndarray
    q_nodes: np.ndarray
    vmid_rows: np.ndarray        # |E| identity rows (slack + pv)
    vmid_nodes: np.ndarray
    thid_rows: np.ndarray        # angle identity rows (slack)
    thid_nodes: np.ndarray
    dcp_rows: np.ndarray         # DC P balance rows
    dcp_nodes: np.ndarray        # DC indices
    eid_rows: np.ndarray         # DC voltage identity rows
    eid_nodes: np.ndarray
    cpl_rows: np.ndarray         # converter coupling rows, one per IC pair
    cpl_pairs: np.ndarray        # matching indices into model.ic_pairs


@dataclass
class GridModel:
    base: BaseValues
    ac_nodes: list[AcNode]
    dc_nodes: list[DcNode]
    ic_pairs: list[IcPair]
    lines: list[Line]
    pv_plants: list[PvPlant]
    resources: list[Resource]
    dcts: list[Dct]
    y_ac: np.ndarray = field(repr=False, default=None)   # (N, N) complex, per-unit
    y_dc: np.ndarray = field(repr=False, default=None)   # (M, M) real, per-unit
    _source: dict = field(repr=False, default=None)      # original file payload
    _row_plan: RowPlan | None = field(repr=False, default=None)

    # ---- indexing -------------------------------------------------------

    @property
    def n_ac(self) -> int:
        return len(self.ac_nodes)

    @property
    def n_dc(self) -> int:
        return len(self.dc_nodes)

    @property
    def n_nodes(self) -> int:
        return self.n_ac + self.n_dc

    @property
    def n_rows(self) -> int:
        return 2 * self.n_ac + self.n_dc

    def ac_index(self, node_id: str) -> int:
        try:
            return self._ac_index[node_id]
        except KeyError:
            raise GridValidationError(f"unknown AC node {node_id!r}") from None

    def dc_index(self, node_id: str) -> int:
        try:
            return self._dc_index[node_id]
        except KeyError:
            raise GridValidationError(f"unknown DC node {node_id!r}") from None

    def unified_index(self, node_id: str) -> int:
        """Index into stacked [AC | DC] vectors."""
        if node_id in self._ac_index:
            return self._ac_index[node_id]
        return self.n_ac + self.dc_index(node_id)

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.ac_nodes] + [n.node_id for n in self.dc_nodes]

    def line_ids(self) -> list[str]:
        return [ln.line_id for ln in self.lines]

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.line_id == line_id:
                return ln
        raise GridValidationError(f"unknown line {line_id!r}")

    def ic_pair(self, name: str) -> IcPair:
        for ic in self.ic_pairs:
            if ic.name == name:
                return ic
        raise GridValidationError(f"unknown converter pair {name!r}")

    def __post_init__(self) -> None:
        self._ac_index = {n.node_id: i for i, n in enumerate(self.ac_nodes)}
        self._dc_index = {n.node_id: j for j, n in enumerate(self.dc_nodes)}
        self._ic_by_ac = {ic.ac_idx: ic for ic in self.ic_pairs}
        self._ic_by_dc = {ic.dc_idx: ic for ic in self.ic_pairs}

    def ic_for_ac_node(self, ac_idx: int) -> IcPair | None:
        return self._ic_by_ac.get(ac_idx)

    def ic_for_dc_node(self, dc_idx: int) -> IcPair | None:
        return self._ic_by_dc.get(dc_idx)

    # node-kind index sets, AC side
    def ac_kind_indices(self, kind: str) -> list[int]:
        return [i for i, n in enumerate(self.ac_nodes) if n.kind == kind]

    def dc_kind_indices(self, kind: str) -> list[int]:
        return [j for j, n in enumerate(self.dc_nodes) if n.kind == kind]

    @property
    def slack_index(self) -> int:
        return self.ac_kind_indices(AC_SLACK)[0]

    # ---- canonical row ordering ----------------------------------------

    @property
    def row_plan(self) -> RowPlan:
        if self._row_plan is None:
            self._row_plan = _build_row_plan(self)
        return self._row_plan

    # ---- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self._source))


def _build_row_plan(model: GridModel) -> RowPlan:
    n = model.n_ac
    labels: list[str] = [""] * model.n_rows
    p_rows, p_nodes = [], []
    q_rows, q_nodes = [], []
    vmid_rows, vmid_nodes = [], []
    thid_rows, thid_nodes = [], []
    dcp_rows, dcp_nodes = [], []
    eid_rows, eid_nodes = [], []
    cpl_rows, cpl_pairs = [], []

    for i, node in enumerate(model.ac_nodes):
        r0, r1 = 2 * i, 2 * i + 1
        if node.kind == AC_SLACK:
            vmid_rows.append(r0)
            vmid_nodes.append(i)
            thid_rows.append(r1)
            thid_nodes.append(i)
            labels[r0] = f"vm:{node.node_id}"
            labels[r1] = f"angle:{node.node_id}"
        elif node.kind == AC_PQ:
            p_rows.append(r0)
            p_nodes.append(i)
            q_rows.append(r1)
            q_nodes.append(i)
            labels[r0] = f"p:{node.node_id}"
            labels[r1] = f"q:{node.node_id}"
        elif node.kind == AC_PV:
            p_rows.append(r0)
            p_nodes.append(i)
            vmid_rows.append(r1)
            vmid_nodes.append(i)
            labels[r0] = f"p:{node.node_id}"
            labels[r1] = f"vm:{node.node_id}"
        else:  # interfacing converter AC terminal
            ic = model.ic_for_ac_node(i)
            if ic.mode == MODE_PAC_QAC:
                p_rows.append(r0)
                p_nodes.append(i)
                q_rows.append(r1)
                q_nodes.append(i)
                labels[r0] = f"p:{node.node_id}"
                labels[r1] = f"q:{node.node_id}"
            else:
                q_rows.append(r0)
                q_nodes.append(i)
                cpl_rows.append(r1)
                cpl_pairs.append(model.ic_pairs.index(ic))
                labels[r0] = f"q:{node.node_id}"
                labels[r1] = f"coupling:{ic.name}"

    for j, node in enumerate(model.dc_nodes):
        r = 2 * n + j
        if node.kind == DC_P:
            dcp_rows.append(r)
            dcp_nodes.append(j)
            labels[r] = f"p:{node.node_id}"
        elif node.kind == DC_V:
            eid_rows.append(r)
            eid_nodes.append(j)
            labels[r] = f"e:{node.node_id}"
        else:
            ic = model.ic_for_dc_node(j)
            if ic.mode == MODE_PAC_QAC:
                cpl_rows.append(r)
                cpl_pairs.append(model.ic_pairs.index(ic))
                labels[r] = f"coupling:{ic.name}"
            else:
                eid_rows.append(r)
                eid_nodes.append(j)
                labels[r] = f"e:{node.node_id}"

    as_arr = lambda xs: np.asarray(xs, dtype=int)  # noqa: E731
    return RowPlan(
        labels=labels,
        p_rows=as_arr(p_rows),
        p_nodes=as_arr(p_nodes),
        q_rows=as_arr(q_rows),
        q_nodes=as_arr(q_nodes),
        vmid_rows=as_arr(vmid_rows),
        vmid_nodes=as_arr(vmid_nodes),
        thid_rows=as_arr(thid_rows),
        thid_nodes=as_arr(thid_nodes),
        dcp_rows=as_arr(dcp_rows),
        dcp_nodes=as_arr(dcp_nodes),
        eid_rows=as_arr(eid_rows),
        eid_nodes=as_arr(eid_nodes),
        cpl_rows=as_arr(cpl_rows),
        cpl_pairs=as_arr(cpl_pairs),
    )


# ---------------------------------------------------------------------------
# loading / validation
# ---------------------------------------------------------------------------


def _req(d: dict, key: str, ctx: str):
    if key not in d:
        raise GridValidationError(f"{ctx}: missing required field {key!r}")
    return d[key]


def grid_from_dict(payload: dict) -> GridModel:
    if not isinstance(payload, dict):
        raise GridValidationError("grid payload must be a JSON object")

    base_d = _req(payload, "base", "grid")
    base = BaseValues(
        s_va=float(_req(base_d, "s_va", "base")),
        v_ac=float(_req(base_d, "v_ac", "base")),
        v_dc=float(_req(base_d, "v_dc", "base")),
    )
    if base.s_va <= 0 or base.v_ac <= 0 or base.v_dc <= 0:
        raise GridValidationError("base values must be positive")

    ac_nodes: list[AcNode] = []
    for nd in _req(payload, "ac_nodes", "grid"):
        kind = _req(nd, "kind", "ac node")
        if kind not in _AC_KINDS:
            raise GridValidationError(f"ac node {nd.get('id')}: unknown kind {kind!r}")
        ac_nodes.append(
            AcNode(
                node_id=str(_req(nd, "id", "ac node")),
                kind=kind,
                v_min=nd.get("v_min"),
                v_max=nd.get("v_max"),
            )
        )
    dc_nodes: list[DcNode] = []
    for nd in _req(payload, "dc_nodes", "grid"):
        kind = _req(nd, "kind", "dc node")
        if kind not in _DC_KINDS:
            raise GridValidationError(f"dc node {nd.get('id')}: unknown kind {kind!r}")
        dc_nodes.append(
            DcNode(
                node_id=str(_req(nd, "id", "dc node")),
                kind=kind,
                v_min=nd.get("v_min"),
                v_max=nd.get("v_max"),
            )
        )

    ids = [n.node_id for n in ac_nodes] + [n.node_id for n in dc_nodes]
    if len(set(ids)) != len(ids):
        raise GridValidationError("duplicate node ids")
    ac_index = {n.node_id: i for i, n in enumerate(ac_nodes)}
    dc_index = {n.node_id: j for j, n in enumerate(dc_nodes)}

    ic_pairs: list[IcPair] = []
    for icd in payload.get("ic_pairs", []):
        mode = _req(icd, "mode", "ic pair")
        if mode not in _IC_MODES:
            raise GridValidationError(f"ic pair {icd.get('id')}: unknown mode {mode!r}")
        ic = IcPair(
            name=str(_req(icd, "id", "ic pair")),
            ac_id=str(_req(icd, "ac", "ic pair")),
            dc_id=str(_req(icd, "dc", "ic pair")),
            mode=mode,
            s_rating_va=float(_req(icd, "s_rating_va", "ic pair")),
            p_loss_coeffs=tuple(icd.get("p_loss_coeffs", (0.0, 0.0, 0.0))),
            q_filter_coeffs=tuple(icd.get("q_filter_coeffs", (0.0, 0.0, 0.0))),
        )
        if ic.ac_id not in ac_index:
            raise GridValidationError(f"ic pair {ic.name}: unknown AC node {ic.ac_id!r}")
        if ic.dc_id not in dc_index:
            raise GridValidationError(f"ic pair {ic.name}: unknown DC node {ic.dc_id!r}")
        ic.ac_idx = ac_index[ic.ac_id]
        ic.dc_idx = dc_index[ic.dc_id]
        if ac_nodes[ic.ac_idx].kind != AC_IC:
            raise GridValidationError(
                f"ic pair {ic.name}: AC node {ic.ac_id} must have kind 'ic'"
            )
        if dc_nodes[ic.dc_idx].kind != DC_IC:
            raise GridValidationError(
                f"ic pair {ic.name}: DC node {ic.dc_id} must have kind 'ic'"
            )
        if ic.s_rating_va <= 0:
            raise GridValidationError(f"ic pair {ic.name}: rating must be positive")
        ic.s_rating_pu = ic.s_rating_va / base.s_va
        a0, a1, a2 = (float(c) for c in ic.p_loss_coeffs)
        ic.p_loss_pu = (
            a0 / base.s_va,
            a1 * base.i_ac / base.s_va,
            a2 * base.i_ac**2 / base.s_va,
        )
        b0, b1, b2 = (float(c) for c in ic.q_filter_coeffs)
        ic.q_filter_pu = (
            b0 / base.s_va,
            b1 * base.i_ac / base.s_va,
            b2 * base.i_ac**2 / base.s_va,
        )
        ic_pairs.append(ic)

    paired_ac = [ic.ac_idx for ic in ic_pairs]
    paired_dc = [ic.dc_idx for ic in ic_pairs]
    if len(set(paired_ac)) != len(paired_ac) or len(set(paired_dc)) != len(paired_dc):
        raise GridValidationError("a converter terminal appears in more than one pair")
    for i, n in enumerate(ac_nodes):
        if n.kind == AC_IC and i not in paired_ac:
            raise GridValidationError(f"AC node {n.node_id} has kind 'ic' but no pair")
    for j, n in enumerate(dc_nodes):
        if n.kind == DC_IC and j not in paired_dc:
            raise GridValidationError(f"DC node {n.node_id} has kind 'ic' but no pair")

    lines: list[Line] = []
    seen_line_ids = set()
    for lnd in _req(payload, "lines", "grid"):
        ln = Line(
            line_id=str(_req(lnd, "id", "line")),
            from_id=str(_req(lnd, "from", "line")),
            to_id=str(_req(lnd, "to", "line")),
            r_ohm=float(_req(lnd, "r", "line")),
            x_ohm=(float(lnd["x"]) if "x" in lnd and lnd["x"] is not None else None),
            ampacity_a=float(_req(lnd, "ampacity_A", "line")),
        )
        if ln.line_id in seen_line_ids:
            raise GridValidationError(f"duplicate line id {ln.line_id!r}")
        seen_line_ids.add(ln.line_id)
        if ln.ampacity_a <= 0:
            raise GridValidationError(f"line {ln.line_id}: ampacity must be positive")
        ln.is_dc = ln.x_ohm is None
        if ln.is_dc:
            if ln.from_id not in dc_index or ln.to_id not in dc_index:
                raise GridValidationError(
                    f"line {ln.line_id}: no reactance given, so both ends must be DC nodes"
                )
            if ln.r_ohm <= 0:
                raise GridValidationError(f"line {ln.line_id}: DC resistance must be positive")
            ln.from_idx = dc_index[ln.from_id]
            ln.to_idx = dc_index[ln.to_id]
            ln.r_pu = ln.r_ohm / base.z_dc
            ln.y_series = complex(1.0 / ln.r_pu, 0.0)
            ln.ampacity_pu = ln.ampacity_a / base.i_dc
        else:
            if ln.from_id not in ac_index or ln.to_id not in ac_index:
                raise GridValidationError(
                    f"line {ln.line_id}: reactance given, so both ends must be AC nodes"
                )
            if ln.r_ohm < 0 or (ln.r_ohm == 0 and ln.x_ohm == 0):
                raise GridValidationError(f"line {ln.line_id}: invalid impedance")
            ln.from_idx = ac_index[ln.from_id]
            ln.to_idx = ac_index[ln.to_id]
            ln.r_pu = ln.r_ohm / base.z_ac
            ln.x_pu = ln.x_ohm / base.z_ac
            ln.y_series = 1.0 / complex(ln.r_pu, ln.x_pu)
            ln.ampacity_pu = ln.ampacity_a / base.i_ac
        if ln.from_idx == ln.to_idx:
            raise GridValidationError(f"line {ln.line_id}: self-loop")
        lines.append(ln)

    devices = payload.get("devices", {})
    pv_plants: list[PvPlant] = []
    for pvd in devices.get("pv", []):
        pv = PvPlant(
            name=str(_req(pvd, "id", "pv device")),
            node_id=str(_req(pvd, "node", "pv device")),
            p_rating_w=float(_req(pvd, "p_rating_w", "pv device")),
            curtailable=bool(_req(pvd, "curtailable", "pv device")),
        )
        if pv.node_id not in ac_index:
            raise GridValidationError(f"pv {pv.name}: unknown AC node {pv.node_id!r}")
        pv.node_idx = ac_index[pv.node_id]
        if ac_nodes[pv.node_idx].kind != AC_PQ:
            raise GridValidationError(f"pv {pv.name}: must attach to a pq node")
        pv.p_rating_pu = pv.p_rating_w / base.s_va
        pv_plants.append(pv)

    resources: list[Resource] = []
    for rd in devices.get("loads", []):
        res = Resource(
            name=str(_req(rd, "id", "load device")),
            node_id=str(_req(rd, "node", "load device")),
            s_rating_va=float(_req(rd, "s_rating_va", "load device")),
        )
        if res.node_id in ac_index:
            res.is_dc = False
            res.node_idx = ac_index[res.node_id]
            if ac_nodes[res.node_idx].kind != AC_PQ:
                raise GridValidationError(f"load {res.name}: must attach to a pq node")
        elif res.node_id in dc_index:
            res.is_dc = True
            res.node_idx = dc_index[res.node_id]
            if dc_nodes[res.node_idx].kind != DC_P:
                raise GridValidationError(f"load {res.name}: must attach to a DC p node")
        else:
            raise GridValidationError(f"load {res.name}: unknown node {res.node_id!r}")
        res.s_rating_pu = res.s_rating_va / base.s_va
        resources.append(res)

    dcts: list[Dct] = []
    for dd in devices.get("dct", []):
        dct = Dct(
            name=str(_req(dd, "id", "dct device")),
            primary_id=str(_req(dd, "primary", "dct device")),
            secondary_id=str(_req(dd, "secondary", "dct device")),
            alpha_kw_per_v=float(_req(dd, "alpha_kw_per_v", "dct device")),
            p_rating_w=float(_req(dd, "p_rating_w", "dct device")),
            r_equiv_ohm=float(_req(dd, "r_equiv_ohm", "dct device")),
            p_mag_loss_w=float(dd.get("p_mag_loss_w", 600.0)),
            deadband_v=float(dd.get("deadband_v", 0.5)),
        )
        for nid in (dct.primary_id, dct.secondary_id):
            if nid not in dc_index:
                raise GridValidationError(f"dct {dct.name}: unknown DC node {nid!r}")
            if dc_nodes[dc_index[nid]].kind != DC_P:
                raise GridValidationError(
                    f"dct {dct.name}: terminal {nid} must be a DC p node"
                )
        dct.primary_idx = dc_index[dct.primary_id]
        dct.secondary_idx = dc_index[dct.secondary_id]
        if dct.primary_idx == dct.secondary_idx:
            raise GridValidationError(f"dct {dct.name}: terminals must differ")
        dct.alpha_pu = dct.alpha_kw_per_v * 1e3 * base.v_dc / base.s_va
        dct.p_rating_pu = dct.p_rating_w / base.s_va
        dct.r_equiv_pu = dct.r_equiv_ohm / base.z_dc
        dct.p_mag_loss_pu = dct.p_mag_loss_w / base.s_va
        dct.deadband_pu = dct.deadband_v / base.v_dc
        dcts.append(dct)

    dev_names = [d.name for d in pv_plants] + [d.name for d in resources] + [
        d.name for d in dcts
    ]
    if len(set(dev_names)) != len(dev_names):
        raise GridValidationError("duplicate device ids")

    n, m = len(ac_nodes), len(dc_nodes)
    y_ac = np.zeros((n, n), dtype=complex)
    y_dc = np.zeros((m, m), dtype=float)
    for ln in lines:
        if ln.is_dc:
            g = ln.y_series.real
            y_dc[ln.from_idx, ln.from_idx] += g
            y_dc[ln.to_idx, ln.to_idx] += g
            y_dc[ln.from_idx, ln.to_idx] -= g
            y_dc[ln.to_idx, ln.from_idx] -= g
        else:
            y = ln.y_series
            y_ac[ln.from_idx, ln.from_idx] += y
            y_ac[ln.to_idx, ln.to_idx] += y
            y_ac[ln.from_idx, ln.to_idx] -= y
            y_ac[ln.to_idx, ln.from_idx] -= y

    model = GridModel(
        base=base,
        ac_nodes=ac_nodes,
        dc_nodes=dc_nodes,
        ic_pairs=ic_pairs,
        lines=lines,
        pv_plants=pv_plants,
        resources=resources,
        dcts=dcts,
        y_ac=y_ac,
        y_dc=y_dc,
        _source=json.loads(json.dumps(payload)),
    )
    validate_grid(model)
    return model


def load_grid(path: str | Path) -> GridModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return grid_from_dict(payload)


def save_grid(model: GridModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def _connected_components(n_nodes: int, edges: list[tuple[int, int]]) -> list[set[int]]:
    parent = list(range(n_nodes))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, set[int]] = {}
    for i in range(n_nodes):
        comps.setdefault(find(i), set()).add(i)
    return list(comps.values())


def validate_grid(model: GridModel) -> None:
    """Structural checks beyond schema parsing; raises GridValidationError."""
    ac_edges = [(ln.from_idx, ln.to_idx) for ln in model.lines if not ln.is_dc]
    for comp in _connected_components(model.n_ac, ac_edges):
        slacks = [i for i in comp if model.ac_nodes[i].kind == AC_SLACK]
        if len(slacks) != 1:
            names = sorted(model.ac_nodes[i].node_id for i in comp)
            raise GridValidationError(
                f"AC component {names} must contain exactly one slack node, found {len(slacks)}"
            )
    dc_edges = [(ln.from_idx, ln.to_idx) for ln in model.lines if ln.is_dc]
    for comp in _connected_components(model.n_dc, dc_edges):
        imposing = [
            j
            for j in comp
            if model.dc_nodes[j].kind == DC_V
            or (
                model.dc_nodes[j].kind == DC_IC
                and model.ic_for_dc_node(j).mode == MODE_EDC_QAC
            )
        ]
        if not imposing:
            names = sorted(model.dc_nodes[j].node_id for j in comp)
            raise GridValidationError(
                f"DC component {names} has no voltage-imposing node"
            )
    if not np.allclose(model.y_ac, model.y_ac.T, rtol=0, atol=0):
        raise GridValidationError("AC admittance matrix is not symmetric")
    if not np.allclose(model.y_dc, model.y_dc.T, rtol=0, atol=0):
        raise GridValidationError("DC admittance matrix is not symmetric")


def build_unified_admittance(model: GridModel) -> np.ndarray:
    """Block-diagonal admittance over the stacked [AC | DC] node ordering."""
    n, m = model.n_ac, model.n_dc
    y = np.zeros((n + m, n + m), dtype=complex)
    y[:n, :n] = model.y_ac
    y[n:, n:] = model.y_dc
    return y


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class GridState:
    """Electrical operating point.

    ``e_ac`` holds complex AC phasors, ``e_dc`` real DC voltages, and ``p``/``q``
    the nodal injections over the stacked [AC | DC] ordering. Reactive power is
    identically zero at DC indices.
    """

    e_ac: np.ndarray
    e_dc: np.ndarray
    p: np.ndarray
    q: np.ndarray
    step: int = 0

    @property
    def vm(self) -> np.ndarray:
        """Voltage magnitudes over the unified ordering."""
        return np.concatenate([np.abs(self.e_ac), self.e_dc])

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.e_ac)

    def copy(self) -> "GridState":
        return GridState(
            e_ac=self.e_ac.copy(),
            e_dc=self.e_dc.copy(),
            p=self.p.copy(),
            q=self.q.copy(),
            step=self.step,
        )

    def validate(self, model: GridModel) -> None:
        n, m = model.n_ac, model.n_dc
        if self.e_ac.shape != (n,) or self.e_dc.shape != (m,):
            raise ValueError("state shape does not match model")
        if self.p.shape != (n + m,) or self.q.shape != (n + m,):
            raise ValueError("injection shape does not match model")
        if not np.all(np.isfinite(self.e_ac)) or not np.all(np.isfinite(self.e_dc)):
            raise ValueError("non-finite voltages")
        if np.any(np.abs(self.e_ac) <= 0) or np.any(self.e_dc <= 0):
            raise ValueError("voltage magnitudes must be positive")
        if np.any(self.q[n:] != 0.0):
            raise ValueError("reactive power must be zero at DC nodes")


def branch_current(model: GridModel, state: GridState, line: Line | str):
    """Directional branch current ``y * (E_from - E_to)``.

    Returns a complex phasor for AC lines and a signed float for DC lines.
    """
    if isinstance(line, str):
        line = model.line(line)
    if line.is_dc:
        return line.y_series.real * (state.e_dc[line.from_idx] - state.e_dc[line.to_idx])
    return line.y_series * (state.e_ac[line.from_idx] - state.e_ac[line.to_idx])


def branch_currents(model: GridModel, state: GridState) -> np.ndarray:
    """All branch currents as one complex vector (DC entries have zero imag)."""
    out = np.zeros(len(model.lines), dtype=complex)
    for k, ln in enumerate(model.lines):
        out[k] = branch_current(model, state, ln)
    return out


def branch_losses(model: GridModel, state: GridState) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch (active, reactive) series losses in per-unit.

    Active loss is ``|I|^2 r`` on every branch; reactive loss ``|I|^2 x`` on AC
    branches (series consumption, positive for inductive lines).
    """
    cur = branch_currents(model, state)
    p = np.zeros(len(model.lines))
    q = np.zeros(len(model.lines))
    for k, ln in enumerate(model.lines):
        i2 = abs(cur[k]) ** 2
        p[k] = i2 * ln.r_pu
        q[k] = 0.0 if ln.is_dc else i2 * ln.x_pu
    return p, q


def nodal_complex_power(model: GridModel, state: GridState) -> tuple[np.ndarray, np.ndarray]:
    """(S_ac, P_dc) computed from the admittance matrices and voltages."""
    i_ac = model.y_ac @ state.e_ac
    s_ac = state.e_ac * np.conj(i_ac)
    p_dc = state.e_dc * (model.y_dc @ state.e_dc)
    return s_ac, p_dc


# ---------------------------------------------------------------------------
# state CSV I/O  (node_id, |E| p.u., angle rad, P p.u., Q p.u.)
# ---------------------------------------------------------------------------

STATE_CSV_HEADER = ["node_id", "vm_pu", "angle_rad", "p_pu", "q_pu"]


def state_to_csv(model: GridModel, state: GridState) -> str:
    rows = [",".join(STATE_CSV_HEADER)]
    vm = state.vm
    ang = state.angle
    for i, node in enumerate(model.ac_nodes):
        rows.append(
            f"{node.node_id},{float(vm[i])!r},{float(ang[i])!r},"
            f"{float(state.p[i])!r},{float(state.q[i])!r}"
        )
    for j, node in enumerate(model.dc_nodes):
        u = model.n_ac + j
        rows.append(
            f"{node.node_id},{float(state.e_dc[j])!r},0.0,{float(state.p[u])!r},0.0"
        )
    return "\n".join(rows) + "\n"


def save_state_csv(model: GridModel, state: GridState, path: str | Path) -> None:
    Path(path).write_text(state_to_csv(model, state), encoding="utf-8")


def load_state_csv(model: GridModel, path: str | Path) -> GridState:
    n, m = model.n_ac, model.n_dc
    e_ac = np.zeros(n, dtype=complex)
    e_dc = np.zeros(m)
    p = np.zeros(n + m)
    q = np.zeros(n + m)
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(STATE_CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"state file missing columns {sorted(missing)}")
        for row in reader:
            nid = row["node_id"]
            seen.add(nid)
            u = model.unified_index(nid)
            vm = float(row["vm_pu"])
            ang = float(row["angle_rad"])
            p[u] = float(row["p_pu"])
            q[u] = float(row["q_pu"])
            if u < n:
                e_ac[u] = cmath.rect(vm, ang)
            else:
                e_dc[u - n] = vm
    expect = set(model.node_ids())
    if seen != expect:
        raise ValueError(f"state file nodes do not match grid: missing {sorted(expect - seen)}")
    state = GridState(e_ac=e_ac, e_dc=e_dc, p=p, q=q)
    state.validate(model)
    return state
