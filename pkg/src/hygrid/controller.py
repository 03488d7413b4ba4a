"""Grid-aware real-time controller: linearized QP over sensitivity columns.

Each control step linearizes the network around the measured state (the
sensitivity bundle), expresses every monitored quantity as an affine function
of the setpoint changes, and solves one strictly convex QP:

- decision variables: curtailable PV active power, converter reactive
  setpoints, converter DC-voltage setpoints (and converter active setpoints
  for power-tracking pairs, none in the reference grid);
- objective: weighted squares of slack reactive exchange, curtailment
  deviation from the available maximum, and total series losses, plus small
  regularizers that keep the Hessian positive definite and discourage
  converters from trading reactive power against each other;
- constraints: voltage bands on every node, branch ampacities (with a
  configurable safety margin), converter capability boxes, PV availability,
  DC-voltage rate limits, and the droop-transformer power rating.

The droop transformer couples the two DC islands through its own
voltage-power characteristic, so its transfer is not an independent input:
the controller eliminates it algebraically. With D the droop gain matrix and
S the voltage sensitivities of the terminal nodes to terminal injections,
the transfer change for any setpoint change solves
``(I - D S) dw = D (voltage change caused by everything else)``; the
resulting affine map folds into every prediction row before the QP is built.

All deltas are anchored at measured values, which cancels constant model
biases (idle losses, filter offsets): only the *change* predicted by the
sensitivities must be right.

Infeasible steps retry once with slack variables on the state-prediction
rows (L1 penalty); a step that still fails re-emits the previous setpoints
(fail-safe hold). Every path is deterministic.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .devices import pv_available
from .network import MODE_EDC_QAC, MODE_PAC_QAC, GridModel, GridState
from .powerflow import total_losses
from .qpsolver import InfeasibleProblem, QpError, QpResult, solve_qp
from .sensitivity import SensitivityBundle, SensitivityError, compute_bundle

SOFT_SLACK_EPS = 1e-9


class ControllerError(RuntimeError):
    pass


@dataclass
class ControllerConfig:
    """Weights, bounds and tolerances; JSON-overridable."""

    w_qs: float = 1.0
    w_curtail: float = 1000.0
    w_loss: float = 1.0
    w_dct: float = 1.0         # interchange pull-back: transfer only under duress
    curtail_price: float = 10.0  # linear term, prices curtailment out of the mix
    reg: float = 1e-6
    # absolute reactive duty is priced at the same order as the slack-exchange
    # term: the net demand still gets shared across converters, but a pair
    # injecting against each other is pure cost and gets squeezed out
    q_reg: float = 1.0
    # the first-order current/q coupling flips sign with the local reactive
    # flow, so an undamped step chases relief that a real plant does not
    # deliver and the loop limit-cycles on the rate bound; damp the move
    q_damp: float = 20.0
    e_reg: float = 20.0
    p_reg: float = 1e-3
    pv_snap_w: float = 10.0    # setpoint resolution: snap to availability
    v_min_default: float = 0.95
    v_max_default: float = 1.05
    rate_e: float = 0.02
    rate_q: float = 0.02
    ampacity_margin_a: float = 0.3
    soft_penalty: float = 1e4
    soft_reg: float = 1.0     # slack curvature, keeps the augmented QP well scaled
    stat_tol: float = 1e-8
    primal_tol: float = 1e-7
    comp_tol: float = 1e-8

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ControllerError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config(path) -> ControllerConfig:
    with open(path) as fh:
        return ControllerConfig.from_dict(json.load(fh))


@dataclass
class DecisionSpace:
    """Ordered decision variables with their family/column mapping."""

    labels: list[str]
    families: list[str]           # sensitivity family per variable
    columns: list[int]            # unified node column per variable
    kinds: list[str]              # pv | q_ic | e_ic | p_ic
    refs: list[object]            # PvPlant or IcPair per variable

    @property
    def n(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        return self.labels.index(label)


def decision_space(model: GridModel) -> DecisionSpace:
    labels, fams, cols, kinds, refs = [], [], [], [], []
    for pv in model.pv_plants:
        if not pv.curtailable:
            continue
        labels.append(f"pv:{pv.name}")
        fams.append("p")
        cols.append(pv.node_idx)
        kinds.append("pv")
        refs.append(pv)
    for ic in model.ic_pairs:
        if ic.mode == MODE_PAC_QAC:
            labels.append(f"p:{ic.name}")
            fams.append("p")
            cols.append(ic.ac_idx)
            kinds.append("p_ic")
            refs.append(ic)
        labels.append(f"q:{ic.name}")
        fams.append("q")
        cols.append(ic.ac_idx)
        kinds.append("q_ic")
        refs.append(ic)
        if ic.mode == MODE_EDC_QAC:
            labels.append(f"e:{ic.name}")
            fams.append("e")
            cols.append(model.n_ac + ic.dc_idx)
            kinds.append("e_ic")
            refs.append(ic)
    return DecisionSpace(labels, fams, cols, kinds, refs)


@dataclass
class AffineMap:
    """rows(delta) = a @ delta + a0 + meas (prediction anchored at measurement)."""

    a: np.ndarray
    a0: np.ndarray
    meas: np.ndarray

    def at(self, delta: np.ndarray) -> np.ndarray:
        return self.meas + self.a @ delta + self.a0


@dataclass
class ControlProblem:
    h: np.ndarray
    g: np.ndarray
    c: np.ndarray
    b: np.ndarray
    row_labels: list[str]
    soft_rows: np.ndarray          # True where infeasibility may be relaxed
    space: DecisionSpace
    maps: dict[str, AffineMap]
    anchors: np.ndarray            # absolute setpoint values the deltas add to
    boxes: list[tuple[float, float]]  # absolute (lo, hi) per decision variable
    const_obj: float
    pv_snap_pu: float = 0.0


def _anchor_values(model: GridModel, state: GridState, space: DecisionSpace,
                   pv_actual: dict[str, float]) -> np.ndarray:
    """Absolute setpoint values consistent with the measured state.

    Converter anchors invert the plant equations exactly (the DC voltage and
    tracked powers are pinned by their rows; the reactive row adds back the
    filter term). PV anchors are the realized plant outputs, reported by the
    caller since stacked devices on one node are not separable from the
    state alone.
    """
    anchors = np.zeros(space.n)
    for j, kind in enumerate(space.kinds):
        ref = space.refs[j]
        if kind == "pv":
            try:
                anchors[j] = pv_actual[ref.name]
            except KeyError:
                raise ControllerError(f"missing measured output for {ref.name}")
        elif kind == "p_ic":
            anchors[j] = state.p[ref.ac_idx]
        elif kind == "q_ic":
            i_mag = abs(model.y_ac[ref.ac_idx] @ state.e_ac)
            c0, c1, c2 = ref.q_filter_pu
            anchors[j] = state.q[ref.ac_idx] + c0 + c1 * i_mag + c2 * i_mag * i_mag
        else:
            anchors[j] = state.e_dc[ref.dc_idx]
    return anchors


def _node_bounds(model: GridModel, config: ControllerConfig):
    lo = np.full(model.n_nodes, config.v_min_default)
    hi = np.full(model.n_nodes, config.v_max_default)
    for u, node in enumerate(model.ac_nodes + model.dc_nodes):
        if node.v_min is not None:
            lo[u] = node.v_min
        if node.v_max is not None:
            hi[u] = node.v_max
    return lo, hi


def build_problem(
    model: GridModel,
    bundle: SensitivityBundle,
    state: GridState,
    config: ControllerConfig,
    pv_actual: dict[str, float],
    mpp_next: dict[str, float],
    exo_dp: np.ndarray,
    exo_dq: np.ndarray,
    dct_enabled: bool = True,
) -> ControlProblem:
    space = decision_space(model)
    nx = space.n
    if nx == 0:
        raise ControllerError("grid exposes no controllable resources")
    n = model.n_ac
    nm = model.n_nodes
    anchors = _anchor_values(model, state, space, pv_actual)

    def lin(kd: dict[str, np.ndarray], meas: np.ndarray) -> AffineMap:
        mat = np.atleast_2d(kd["p"])
        a = np.zeros((mat.shape[0], nx))
        for j in range(nx):
            a[:, j] = np.atleast_2d(kd[space.families[j]])[:, space.columns[j]]
        a0 = np.atleast_2d(kd["p"]) @ exo_dp + np.atleast_2d(kd["q"]) @ exo_dq
        return AffineMap(a=a, a0=a0, meas=np.atleast_1d(meas).astype(float))

    p_loss_meas, _ = total_losses(model, state)
    i_meas = np.where(bundle.line_is_dc, bundle.i_anchor.real, np.abs(bundle.i_anchor))
    maps = {
        "vm": lin(bundle.k_e, state.vm),
        "i": lin(bundle.k_i, i_meas),
        "p_ic": lin(bundle.k_pic, bundle.p_ic_anchor),
        "q_s": lin({f: bundle.k_qs[f][None, :] for f in ("p", "q", "e")},
                   [bundle.q_slack_anchor]),
        "p_loss": lin({f: bundle.k_ploss[f][None, :] for f in ("p", "q", "e")},
                      [p_loss_meas]),
    }

    # fold the droop transformer response into every prediction row
    if dct_enabled and model.dcts:
        terms: list[int] = []
        blocks = []
        for dct in model.dcts:
            terms.extend([n + dct.primary_idx, n + dct.secondary_idx])
            blocks.append(dct.alpha_pu * np.array([[1.0, -1.0], [-1.0, 1.0]]))
        nd = len(terms)
        d_gain = np.zeros((nd, nd))
        for r, blk in enumerate(blocks):
            d_gain[2 * r : 2 * r + 2, 2 * r : 2 * r + 2] = blk
        s_term = bundle.k_e["p"][np.ix_(terms, terms)]
        try:
            g_elim = np.linalg.solve(np.eye(nd) - d_gain @ s_term, d_gain)
        except np.linalg.LinAlgError:
            raise ControllerError("droop elimination is singular (loop gain 1)")
        base_vm = maps["vm"]
        dw_a = g_elim @ base_vm.a[terms]
        dw_a0 = g_elim @ base_vm.a0[terms]
        # terminal nodes are dedicated to the device, so the measured
        # injection there is the transfer itself
        w_meas = state.p[terms].astype(float)
        for key in maps:
            kp_cols = {
                "vm": bundle.k_e["p"],
                "i": bundle.k_i["p"],
                "p_ic": bundle.k_pic["p"],
                "q_s": bundle.k_qs["p"][None, :],
                "p_loss": bundle.k_ploss["p"][None, :],
            }[key][:, terms]
            maps[key] = AffineMap(
                a=maps[key].a + kp_cols @ dw_a,
                a0=maps[key].a0 + kp_cols @ dw_a0,
                meas=maps[key].meas,
            )
        maps["dct_w"] = AffineMap(a=dw_a, a0=dw_a0, meas=w_meas)

    # ---- objective: sum of weighted squared affine terms ------------------
    h = 2.0 * config.reg * np.eye(nx)
    g = np.zeros(nx)
    const = 0.0

    def add_square(weight: float, row: np.ndarray, offset: float):
        nonlocal h, g, const
        h += 2.0 * weight * np.outer(row, row)
        g += 2.0 * weight * offset * row
        const += weight * offset * offset

    add_square(config.w_qs, maps["q_s"].a[0],
               float(maps["q_s"].meas[0] + maps["q_s"].a0[0]))
    add_square(config.w_loss, maps["p_loss"].a[0],
               float(maps["p_loss"].meas[0] + maps["p_loss"].a0[0]))
    if "dct_w" in maps:
        # every watt routed through the conversion chain costs losses and
        # device duty, so pull the interchange back toward zero whenever the
        # network constraints stop demanding it
        wmap = maps["dct_w"]
        for side in range(wmap.a.shape[0]):
            add_square(config.w_dct, wmap.a[side],
                       float(wmap.meas[side] + wmap.a0[side]))
    for j, kind in enumerate(space.kinds):
        unit = np.zeros(nx)
        unit[j] = 1.0
        if kind == "pv":
            target = mpp_next.get(space.refs[j].name)
            if target is None:
                raise ControllerError(f"missing availability forecast for "
                                      f"{space.refs[j].name}")
            add_square(config.w_curtail, unit, float(anchors[j] - target))
            # a quadratic alone has zero marginal cost right at availability,
            # so competing soft terms would always shave a little; the linear
            # price keeps production at the bound until a hard row objects
            g[j] -= config.curtail_price
        elif kind == "q_ic":
            add_square(config.q_reg, unit, float(anchors[j]))
            h[j, j] += 2.0 * config.q_damp
        elif kind == "e_ic":
            # voltage setpoints re-dispatch flows with gains of tens of
            # per-unit current per per-unit volt; damp their deltas so the
            # linearized objective cannot ride model error to the ratings.
            # Hard rows (ampacity, voltage bands) still move them as far
            # as feasibility requires.
            h[j, j] += 2.0 * config.e_reg
        else:
            h[j, j] += 2.0 * config.p_reg

    # ---- constraints: c @ delta >= b --------------------------------------
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[str] = []
    soft: list[bool] = []

    def add_row(row, bound, label, relaxable):
        rows.append(np.asarray(row, dtype=float))
        rhs.append(float(bound))
        labels.append(label)
        soft.append(relaxable)

    v_lo, v_hi = _node_bounds(model, config)
    vm0 = maps["vm"].meas + maps["vm"].a0
    node_ids = model.node_ids()
    slack = model.slack_index
    for u in range(nm):
        if u == slack:
            continue
        add_row(maps["vm"].a[u], v_lo[u] - vm0[u], f"vm_lo:{node_ids[u]}", True)
        add_row(-maps["vm"].a[u], vm0[u] - v_hi[u], f"vm_hi:{node_ids[u]}", True)

    i0 = maps["i"].meas + maps["i"].a0
    for k, ln in enumerate(model.lines):
        base = model.base.i_dc if ln.is_dc else model.base.i_ac
        cap = ln.ampacity_pu - config.ampacity_margin_a / base
        if ln.is_dc:
            add_row(-maps["i"].a[k], i0[k] - cap, f"amp_hi:{ln.line_id}", True)
            add_row(maps["i"].a[k], -cap - i0[k], f"amp_lo:{ln.line_id}", True)
        elif k not in bundle.flagged_lines:
            add_row(-maps["i"].a[k], i0[k] - cap, f"amp:{ln.line_id}", True)

    pic0 = maps["p_ic"].meas + maps["p_ic"].a0
    for r, ic in enumerate(model.ic_pairs):
        add_row(-maps["p_ic"].a[r], pic0[r] - ic.s_rating_pu,
                f"icp_hi:{ic.name}", True)
        add_row(maps["p_ic"].a[r], -ic.s_rating_pu - pic0[r],
                f"icp_lo:{ic.name}", True)

    if "dct_w" in maps:
        w0 = maps["dct_w"].meas + maps["dct_w"].a0
        for r, dct in enumerate(model.dcts):
            for side, tag in ((2 * r, "pri"), (2 * r + 1, "sec")):
                add_row(-maps["dct_w"].a[side], w0[side] - dct.p_rating_pu,
                        f"dctw_hi:{dct.name}:{tag}", True)
                add_row(maps["dct_w"].a[side], -dct.p_rating_pu - w0[side],
                        f"dctw_lo:{dct.name}:{tag}", True)

    boxes: list[tuple[float, float]] = []
    for j, kind in enumerate(space.kinds):
        unit = np.zeros(nx)
        unit[j] = 1.0
        label = space.labels[j]
        if kind == "pv":
            # active power superposes almost linearly, so curtailment gets
            # no slew bound: emergency relief may need it all in one step
            lo_abs, hi_abs = 0.0, float(mpp_next[space.refs[j].name])
            relax = False
        elif kind in ("q_ic", "p_ic"):
            # reactive shifts move branch-current magnitudes quadratically;
            # bound the per-step move to where the linear model holds
            cap = space.refs[j].s_rating_pu
            add_row(unit, -config.rate_q, f"rate_lo:{label}", False)
            add_row(-unit, -config.rate_q, f"rate_hi:{label}", False)
            add_row(unit, -cap - anchors[j], f"box_lo:{label}", False)
            add_row(-unit, anchors[j] - cap, f"box_hi:{label}", False)
            lo_abs = float(anchors[j]) - config.rate_q
            hi_abs = float(anchors[j]) + config.rate_q
            if -cap <= hi_abs and cap >= lo_abs:
                lo_abs = max(lo_abs, -cap)
                hi_abs = min(hi_abs, cap)
            boxes.append((lo_abs, hi_abs))
            continue
        else:
            u = space.columns[j]
            band_lo, band_hi = float(v_lo[u]), float(v_hi[u])
            relax = True   # plant drift may strand the anchor outside the band
            add_row(unit, -config.rate_e, f"rate_lo:{label}", False)
            add_row(-unit, -config.rate_e, f"rate_hi:{label}", False)
            add_row(unit, band_lo - anchors[j], f"box_lo:{label}", relax)
            add_row(-unit, anchors[j] - band_hi, f"box_hi:{label}", relax)
            # emission box: rate window, tightened by the band when they
            # intersect; a stranded anchor marches toward the band instead
            lo_abs = float(anchors[j]) - config.rate_e
            hi_abs = float(anchors[j]) + config.rate_e
            if band_lo <= hi_abs and band_hi >= lo_abs:
                lo_abs = max(lo_abs, band_lo)
                hi_abs = min(hi_abs, band_hi)
            boxes.append((lo_abs, hi_abs))
            continue
        add_row(unit, lo_abs - anchors[j], f"box_lo:{label}", relax)
        add_row(-unit, anchors[j] - hi_abs, f"box_hi:{label}", relax)
        boxes.append((lo_abs, hi_abs))

    return ControlProblem(
        h=h,
        g=g,
        c=np.vstack(rows),
        b=np.asarray(rhs),
        row_labels=labels,
        soft_rows=np.asarray(soft, dtype=bool),
        space=space,
        maps=maps,
        anchors=anchors,
        boxes=boxes,
        const_obj=const,
        pv_snap_pu=config.pv_snap_w / model.base.s_va,
    )


@dataclass
class SolveOutcome:
    delta: np.ndarray
    result: QpResult
    soft_used: bool
    relaxed_rows: list[str]


def solve_problem(problem: ControlProblem, config: ControllerConfig) -> SolveOutcome:
    """Solve the hard QP; on infeasibility retry with slacked state rows."""
    try:
        res = solve_qp(problem.h, problem.g, problem.c, problem.b)
        if res.certificate.within(config.stat_tol, config.primal_tol,
                                  config.comp_tol):
            return SolveOutcome(res.x, res, False, [])
    except InfeasibleProblem:
        pass

    nx = problem.space.n
    soft_idx = np.flatnonzero(problem.soft_rows)
    ns = soft_idx.size
    if ns == 0:
        raise ControllerError("infeasible problem with no relaxable rows")
    h_aug = np.zeros((nx + ns, nx + ns))
    h_aug[:nx, :nx] = problem.h
    h_aug[nx:, nx:] = 2.0 * config.soft_reg * np.eye(ns)
    g_aug = np.concatenate([problem.g, config.soft_penalty * np.ones(ns)])
    c_aug = np.zeros((problem.c.shape[0] + ns, nx + ns))
    c_aug[: problem.c.shape[0], :nx] = problem.c
    for pos, row in enumerate(soft_idx):
        c_aug[row, nx + pos] = 1.0
    c_aug[problem.c.shape[0] :, nx:] = np.eye(ns)
    b_aug = np.concatenate([problem.b, np.zeros(ns)])
    res = solve_qp(h_aug, g_aug, c_aug, b_aug)
    # multipliers on relaxed rows live at the penalty scale, so the
    # stationarity/complementarity residuals scale with it; feasibility
    # stays absolute
    scale = max(1.0, config.soft_penalty)
    if not res.certificate.within(config.stat_tol * scale, config.primal_tol,
                                  config.comp_tol * scale):
        raise ControllerError(f"relaxed solve failed certification: "
                              f"{res.certificate}")
    slacks = res.x[nx:]
    relaxed = [problem.row_labels[soft_idx[pos]]
               for pos in range(ns) if slacks[pos] > SOFT_SLACK_EPS]
    trimmed = QpResult(
        x=res.x[:nx],
        multipliers=res.multipliers[: problem.c.shape[0]],
        active=[a for a in res.active if a < problem.c.shape[0]],
        iterations=res.iterations,
        certificate=res.certificate,
    )
    return SolveOutcome(res.x[:nx], trimmed, True, relaxed)


@dataclass
class ControlDecision:
    """Setpoints plus everything needed to audit the step."""

    pv_p: dict[str, float]
    ic_q: dict[str, float]
    ic_e: dict[str, float]
    ic_p: dict[str, float]
    predicted_vm: np.ndarray | None
    predicted_i: np.ndarray | None
    predicted_q_slack: float | None
    predicted_p_loss: float | None
    predicted_p_ic: np.ndarray | None
    predicted_dct_w: np.ndarray | None
    objective: float | None
    qp_iterations: int
    active_rows: list[str]
    relaxed_rows: list[str]
    soft_used: bool
    fallback: bool
    timings: dict[str, float] = field(default_factory=dict)

    def setpoint_table(self) -> dict:
        return {
            "pv_p_pu": dict(self.pv_p),
            "ic_q_pu": dict(self.ic_q),
            "ic_e_pu": dict(self.ic_e),
            "ic_p_pu": dict(self.ic_p),
        }

    def to_dict(self) -> dict:
        out = {
            "setpoints": self.setpoint_table(),
            "objective": self.objective,
            "qp_iterations": self.qp_iterations,
            "active_rows": list(self.active_rows),
            "relaxed_rows": list(self.relaxed_rows),
            "soft_used": self.soft_used,
            "fallback": self.fallback,
            "timings_s": dict(self.timings),
        }
        if self.predicted_vm is not None:
            out["predicted"] = {
                "vm_pu": [float(v) for v in self.predicted_vm],
                "i_pu": [float(v) for v in self.predicted_i],
                "q_slack_pu": self.predicted_q_slack,
                "p_loss_pu": self.predicted_p_loss,
                "p_ic_pu": [float(v) for v in self.predicted_p_ic],
                "dct_w_pu": None
                if self.predicted_dct_w is None
                else [float(v) for v in self.predicted_dct_w],
            }
        return out


def _clamped_setpoints(problem: ControlProblem, delta: np.ndarray):
    """Absolute setpoints with box bounds enforced exactly."""
    space = problem.space
    pv, qs, es, ps = {}, {}, {}, {}
    for j, kind in enumerate(space.kinds):
        lo, hi = problem.boxes[j]
        val = float(np.clip(problem.anchors[j] + delta[j], lo, hi))
        name = space.refs[j].name
        if kind == "pv":
            if hi - val < problem.pv_snap_pu:
                val = hi
            pv[name] = val
        elif kind == "q_ic":
            qs[name] = val
        elif kind == "e_ic":
            es[name] = val
        else:
            ps[name] = val
    return pv, qs, es, ps


def hold_decision(model: GridModel, prev: ControlDecision | None,
                  state: GridState, pv_actual: dict[str, float],
                  timings: dict[str, float]) -> ControlDecision:
    """Fail-safe: re-emit the previous setpoints (or the measured anchors)."""
    if prev is not None:
        return ControlDecision(
            pv_p=dict(prev.pv_p), ic_q=dict(prev.ic_q), ic_e=dict(prev.ic_e),
            ic_p=dict(prev.ic_p),
            predicted_vm=None, predicted_i=None, predicted_q_slack=None,
            predicted_p_loss=None, predicted_p_ic=None, predicted_dct_w=None,
            objective=None, qp_iterations=0, active_rows=[], relaxed_rows=[],
            soft_used=False, fallback=True, timings=timings,
        )
    space = decision_space(model)
    pv, qs, es, ps = {}, {}, {}, {}
    for j, kind in enumerate(space.kinds):
        ref = space.refs[j]
        if kind == "pv":
            pv[ref.name] = float(pv_actual.get(ref.name, 0.0))
        elif kind == "p_ic":
            ps[ref.name] = float(state.p[ref.ac_idx])
        elif kind == "q_ic":
            i_mag = abs(model.y_ac[ref.ac_idx] @ state.e_ac)
            c0, c1, c2 = ref.q_filter_pu
            qs[ref.name] = float(state.q[ref.ac_idx]
                                 + c0 + c1 * i_mag + c2 * i_mag * i_mag)
        else:
            es[ref.name] = float(state.e_dc[ref.dc_idx])
    return ControlDecision(
        pv_p=pv, ic_q=qs, ic_e=es, ic_p=ps,
        predicted_vm=None, predicted_i=None, predicted_q_slack=None,
        predicted_p_loss=None, predicted_p_ic=None, predicted_dct_w=None,
        objective=None, qp_iterations=0, active_rows=[], relaxed_rows=[],
        soft_used=False, fallback=True, timings=timings,
    )


def control_step(
    model: GridModel,
    plant_state: GridState,
    profiles,
    t: int,
    config: ControllerConfig | None = None,
    prev: ControlDecision | None = None,
    pv_actual: dict[str, float] | None = None,
    dct_enabled: bool = True,
) -> ControlDecision:
    """One pass of the control pipeline at step ``t``.

    ``pv_actual`` carries the realized per-plant outputs in per-unit; when
    omitted they are read from the profile's power series at ``t`` (the
    convention for offline use). Forecasts are one-step persistence for
    loads and the availability series at ``t+1`` for PV plants.
    """
    if config is None:
        config = ControllerConfig()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    try:
        t_next = min(t + 1, profiles.horizon - 1)
        if pv_actual is None:
            pv_actual = {}
            for pvp in model.pv_plants:
                series = profiles.p_kw.get(pvp.name)
                if series is None:
                    raise ControllerError(f"profile lacks series for {pvp.name}")
                pv_actual[pvp.name] = float(series[t]) * 1e3 / model.base.s_va
        else:
            pv_actual = dict(pv_actual)

        mpp_next = {}
        exo_dp = np.zeros(model.n_nodes)
        exo_dq = np.zeros(model.n_nodes)
        for pvp in model.pv_plants:
            mpp_kw = pv_available(profiles, t_next, pvp.name)
            mpp_now = pv_available(profiles, t, pvp.name)
            if pvp.curtailable:
                mpp_next[pvp.name] = mpp_kw * 1e3 / model.base.s_va
            else:
                # availability-tracking plant: its output moves with the sky
                exo_dp[pvp.node_idx] += (mpp_kw - mpp_now) * 1e3 / model.base.s_va
        timings["read_s"] = time.perf_counter() - t0

        t1 = time.perf_counter()
        bundle = compute_bundle(model, plant_state)
        timings["sensitivity_s"] = time.perf_counter() - t1

        t2 = time.perf_counter()
        problem = build_problem(
            model, bundle, plant_state, config, pv_actual, mpp_next,
            exo_dp, exo_dq, dct_enabled=dct_enabled,
        )
        timings["build_s"] = time.perf_counter() - t2

        t3 = time.perf_counter()
        outcome = solve_problem(problem, config)
        timings["solve_s"] = time.perf_counter() - t3
    except Exception:
        # fail-safe hold: a step must always emit something actuatable
        timings["total_s"] = time.perf_counter() - t0
        return hold_decision(model, prev, plant_state, pv_actual or {}, timings)

    t4 = time.perf_counter()
    delta = outcome.delta
    pv, qs, es, ps = _clamped_setpoints(problem, delta)
    pred_vm = problem.maps["vm"].at(delta)
    pred_i = problem.maps["i"].at(delta)
    pred_pic = problem.maps["p_ic"].at(delta)
    pred_qs = float(problem.maps["q_s"].at(delta)[0])
    pred_pl = float(problem.maps["p_loss"].at(delta)[0])
    pred_w = problem.maps["dct_w"].at(delta) if "dct_w" in problem.maps else None
    objective = float(
        0.5 * delta @ problem.h @ delta + problem.g @ delta + problem.const_obj
    )
    active = [problem.row_labels[a] for a in outcome.result.active]
    timings["emit_s"] = time.perf_counter() - t4
    timings["total_s"] = time.perf_counter() - t0

    return ControlDecision(
        pv_p=pv, ic_q=qs, ic_e=es, ic_p=ps,
        predicted_vm=pred_vm,
        predicted_i=pred_i,
        predicted_q_slack=pred_qs,
        predicted_p_loss=pred_pl,
        predicted_p_ic=pred_pic,
        predicted_dct_w=pred_w,
        objective=objective,
        qp_iterations=outcome.result.iterations,
        active_rows=active,
        relaxed_rows=outcome.relaxed_rows,
        soft_used=outcome.soft_used,
        fallback=False,
        timings=timings,
    )
