"""Closed-loop replay of the feeder controller against a nonlinear plant.

The run alternates full nonlinear plant solves with controller steps on a
fixed cadence. Setpoints decided at step ``t`` take effect at ``t + 1`` (one
control period of actuation delay); the plant is re-solved from a flat start
every step, and the controller only ever sees the solved state, optionally
with zero-mean gaussian noise on the voltage magnitudes.

Scenario files are JSON documents pointing at a grid file and a profile
file, plus plant fidelity switches and controller overrides. Replays are
deterministic: the trace carries no wall-clock data and floats are written
with ``repr`` so two runs of the same scenario produce byte-identical trace
files. Timing statistics live in the metrics dict instead, next to a sha256
of the trace text.

Trace rows are ``step,kind,id,value`` in long form. Units: voltage
magnitudes p.u., angles rad, currents A (signed for DC lines), powers kW,
reactive powers kvar.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .controller import ControlDecision, ControllerConfig, control_step
from .devices import ResourceProfile, load_profiles, pv_available
from .network import MODE_EDC_QAC, GridModel, GridState, branch_currents, load_grid
from .powerflow import DctRuntime, PfSpec, PowerFlowError, default_spec, solve_pf


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    """Everything a replay needs besides the grid and the profiles.

    ``grid`` and ``profiles`` are file paths (resolved against the scenario
    file's directory by :func:`load_scenario`); callers holding in-memory
    objects can pass them to :func:`run_scenario` directly and leave the
    paths unset. The three plant fidelity switches live under ``plant`` in
    the JSON form.
    """

    name: str = "scenario"
    grid: str | None = None
    profiles: str | None = None
    horizon: int | None = None          # None = whole profile
    control_period_s: float = 2.0
    dct_enabled: bool = True
    dct_deadband: bool = True
    dct_losses: bool = True
    ic_losses: bool = True
    noise_sigma_pu: float = 0.0
    seed: int = 1
    warmup_steps: int = 10              # excluded from error/violation metrics
    tail_steps: int = 60                # window for the end-of-replay means
    controller: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: dict, base_dir: str | Path = ".") -> "Scenario":
        payload = dict(payload)
        plant = payload.pop("plant", {})
        if not isinstance(plant, dict):
            raise SimulationError("'plant' must be an object of fidelity flags")
        for key, val in plant.items():
            if key not in ("dct_deadband", "dct_losses", "ic_losses"):
                raise SimulationError(f"unknown plant fidelity flag {key!r}")
            payload[key] = val
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise SimulationError(f"unknown scenario keys: {sorted(unknown)}")
        sc = cls(**payload)
        base = Path(base_dir)
        if sc.grid is not None:
            sc.grid = str((base / sc.grid).resolve())
        if sc.profiles is not None:
            sc.profiles = str((base / sc.profiles).resolve())
        if sc.horizon is not None and sc.horizon <= 0:
            raise SimulationError("horizon must be positive")
        if sc.control_period_s <= 0:
            raise SimulationError("control period must be positive")
        if sc.noise_sigma_pu < 0:
            raise SimulationError("noise sigma must be non-negative")
        return sc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "grid": self.grid,
            "profiles": self.profiles,
            "horizon": self.horizon,
            "control_period_s": self.control_period_s,
            "dct_enabled": self.dct_enabled,
            "plant": {
                "dct_deadband": self.dct_deadband,
                "dct_losses": self.dct_losses,
                "ic_losses": self.ic_losses,
            },
            "noise_sigma_pu": self.noise_sigma_pu,
            "seed": self.seed,
            "warmup_steps": self.warmup_steps,
            "tail_steps": self.tail_steps,
            "controller": dict(self.controller),
        }


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return Scenario.from_dict(payload, base_dir=path.parent)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# plant side
# ---------------------------------------------------------------------------


@dataclass
class Setpoints:
    """Actuated commands, per-unit, keyed by device name."""

    pv_p: dict[str, float]
    ic_q: dict[str, float]
    ic_e: dict[str, float]
    ic_p: dict[str, float]

    @classmethod
    def nominal(cls, model: GridModel, profiles: ResourceProfile) -> "Setpoints":
        """Start-of-replay commands: PV at availability, converters neutral."""
        kw = 1e3 / model.base.s_va
        pv = {
            p.name: pv_available(profiles, 0, p.name) * kw
            for p in model.pv_plants
            if p.curtailable
        }
        qs = {ic.name: 0.0 for ic in model.ic_pairs}
        es = {ic.name: 1.0 for ic in model.ic_pairs if ic.mode == MODE_EDC_QAC}
        ps = {ic.name: 0.0 for ic in model.ic_pairs if ic.mode != MODE_EDC_QAC}
        return cls(pv, qs, es, ps)

    @classmethod
    def from_decision(cls, dec: ControlDecision) -> "Setpoints":
        return cls(dict(dec.pv_p), dict(dec.ic_q), dict(dec.ic_e), dict(dec.ic_p))


def plant_spec(
    model: GridModel,
    profiles: ResourceProfile,
    t: int,
    sp: Setpoints,
    scenario: Scenario,
) -> tuple[PfSpec, dict[str, float]]:
    """Boundary conditions for the plant solve at step ``t``.

    Returns the spec and the realized per-plant PV output in per-unit
    (curtailable plants produce ``min(setpoint, availability)``, the rest
    track their profile).
    """
    kw = 1e3 / model.base.s_va
    spec = default_spec(model)
    n = model.n_ac
    for r in model.resources:
        if r.name not in profiles.p_kw:
            continue
        u = n + r.node_idx if r.is_dc else r.node_idx
        spec.p_set[u] += float(profiles.p_kw[r.name][t]) * kw
        if not r.is_dc:
            spec.q_set[u] += float(profiles.q_kvar[r.name][t]) * kw
    realized: dict[str, float] = {}
    for pv in model.pv_plants:
        if pv.curtailable:
            # same float expression the controller uses for its box top, so
            # a setpoint riding the availability realizes it exactly
            avail = pv_available(profiles, t, pv.name) * 1e3 / model.base.s_va
            out = min(float(sp.pv_p.get(pv.name, avail)), avail)
            out = max(out, 0.0)
        else:
            out = float(profiles.p_kw[pv.name][t]) * kw
        realized[pv.name] = out
        spec.p_set[pv.node_idx] += out
        spec.q_set[pv.node_idx] += float(profiles.q_kvar[pv.name][t]) * kw
    for ic in model.ic_pairs:
        spec.q_set[ic.ac_idx] = float(sp.ic_q.get(ic.name, 0.0))
        if ic.mode == MODE_EDC_QAC:
            spec.e_set[ic.dc_idx] = float(sp.ic_e.get(ic.name, 1.0))
        else:
            spec.p_set[ic.ac_idx] = float(sp.ic_p.get(ic.name, 0.0))
    if scenario.dct_enabled:
        spec.dct_runtime = [
            DctRuntime(d, deadband=scenario.dct_deadband, losses=scenario.dct_losses)
            for d in model.dcts
        ]
    return spec, realized


def _measured_view(
    state: GridState, sigma: float, rng: np.random.Generator
) -> GridState:
    """What the controller sees: the plant state plus magnitude noise."""
    if sigma <= 0.0:
        return state
    meas = state.copy()
    vm = np.abs(meas.e_ac) + rng.normal(0.0, sigma, meas.e_ac.size)
    meas.e_ac = np.maximum(vm, 1e-3) * np.exp(1j * np.angle(meas.e_ac))
    meas.e_dc = np.maximum(
        meas.e_dc + rng.normal(0.0, sigma, meas.e_dc.size), 1e-3
    )
    return meas


# ---------------------------------------------------------------------------
# replay loop
# ---------------------------------------------------------------------------


@dataclass
class ReplayResult:
    scenario: Scenario
    trace_csv: str
    metrics: dict
    final_state: GridState
    final_decision: ControlDecision | None


def _fnum(v: float) -> str:
    return repr(float(v))


def run_scenario(
    scenario: Scenario,
    model: GridModel | None = None,
    profiles: ResourceProfile | None = None,
    log_every: int = 0,
    realtime: bool = False,
) -> ReplayResult:
    """Run the closed loop over the scenario horizon.

    A plant divergence aborts the replay with the offending step's commands
    in the error message; the controller itself never aborts (it degrades to
    holding the previous setpoints). ``realtime`` paces the loop to one step
    per control period against a monotonic clock; it does not change the
    trace.
    """
    if model is None:
        if scenario.grid is None:
            raise SimulationError("scenario has no grid path and no model was given")
        model = load_grid(scenario.grid)
    if not scenario.ic_losses:
        # lossless-converter study: strip the polynomials from a copy
        model = copy.deepcopy(model)
        for ic in model.ic_pairs:
            ic.p_loss_coeffs = (0.0, 0.0, 0.0)
            ic.q_filter_coeffs = (0.0, 0.0, 0.0)
            ic.p_loss_pu = (0.0, 0.0, 0.0)
            ic.q_filter_pu = (0.0, 0.0, 0.0)
    if profiles is None:
        if scenario.profiles is None:
            raise SimulationError(
                "scenario has no profile path and no profiles were given"
            )
        profiles = load_profiles(scenario.profiles)
    profiles.validate_against(model)

    horizon = profiles.horizon if scenario.horizon is None else scenario.horizon
    if horizon > profiles.horizon:
        raise SimulationError(
            f"horizon {horizon} exceeds profile horizon {profiles.horizon}"
        )
    config = ControllerConfig.from_dict(scenario.controller)
    rng = np.random.default_rng(scenario.seed)
    dt_h = scenario.control_period_s / 3600.0
    to_kw = model.base.s_va / 1e3
    warm = scenario.warmup_steps

    node_ids = model.node_ids()
    n = model.n_ac
    amps_base = np.array(
        [model.base.i_dc if ln.is_dc else model.base.i_ac for ln in model.lines]
    )
    caps_a = np.array([ln.ampacity_a for ln in model.lines])
    line_ids = model.line_ids()
    curtailable = [p.name for p in model.pv_plants if p.curtailable]
    slack = model.slack_index

    sp = Setpoints.nominal(model, profiles)
    prev: ControlDecision | None = None
    rows: list[str] = []

    err_sum = 0.0
    err_count = 0
    err_min = math.inf       # signed statistics: error = predicted - actual
    err_max = -math.inf
    err_max_abs = 0.0
    over_max = 0.0
    over_steps = 0
    line_max = dict.fromkeys(line_ids, 0.0)
    curtailed_kwh = 0.0
    pv_kwh = 0.0
    qs_sq_sum = 0.0
    qs_count = 0
    opp_q_max = 0.0
    dct_tail: dict[str, list[list[float]]] = {
        d.name: [[], []] for d in model.dcts
    }
    dct_on_steps = dict.fromkeys((d.name for d in model.dcts), 0)
    stage_names = ("read_s", "sensitivity_s", "build_s", "solve_s", "emit_s",
                   "total_s")
    stage_ms: dict[str, list[float]] = {s: [] for s in stage_names}
    pf_iter_max = 0
    qp_iter_max = 0
    fallback_steps = 0
    soft_steps = 0
    pace_start = time.monotonic()

    for t in range(horizon):
        spec, realized = plant_spec(model, profiles, t, sp, scenario)
        try:
            sol = solve_pf(model, spec)
        except PowerFlowError as exc:
            raise SimulationError(
                f"plant solve diverged at step {t}: {exc}; commands were "
                f"pv={sp.pv_p} q={sp.ic_q} e={sp.ic_e} p={sp.ic_p}"
            ) from exc
        state = sol.state
        pf_iter_max = max(pf_iter_max, sol.iterations)

        vm = state.vm
        for idx, nid in enumerate(node_ids):
            rows.append(f"{t},vm,{nid},{_fnum(vm[idx])}")
        ang = state.angle
        for idx in range(n):
            rows.append(f"{t},angle,{node_ids[idx]},{_fnum(ang[idx])}")
        i_raw = branch_currents(model, state)
        amps = np.where(
            [ln.is_dc for ln in model.lines], i_raw.real, np.abs(i_raw)
        ) * amps_base
        for kdx, lid in enumerate(line_ids):
            rows.append(f"{t},i,{lid},{_fnum(amps[kdx])}")
        rows.append(f"{t},p_slack,,{_fnum(state.p[slack] * to_kw)}")
        rows.append(f"{t},q_slack,,{_fnum(state.q[slack] * to_kw)}")

        for d in model.dcts:
            w1, w2, on = sol.dct_injections.get(d.name, (0.0, 0.0, False))
            rows.append(f"{t},dct_w1,{d.name},{_fnum(w1 * to_kw)}")
            rows.append(f"{t},dct_w2,{d.name},{_fnum(w2 * to_kw)}")
            rows.append(f"{t},dct_on,{d.name},{int(on)}")
            if on:
                dct_on_steps[d.name] += 1
            if t >= horizon - scenario.tail_steps:
                dct_tail[d.name][0].append(w1 * to_kw)
                dct_tail[d.name][1].append(w2 * to_kw)

        step_curtailed = 0.0
        for name in curtailable:
            avail = pv_available(profiles, t, name)
            out = realized[name] * to_kw
            # compare in per-unit, where the plant clipped, so an uncurtailed
            # step contributes exactly zero
            avail_pu = avail * 1e3 / model.base.s_va
            step_curtailed += max(avail_pu - realized[name], 0.0) * to_kw
            pv_kwh += out * dt_h
            rows.append(f"{t},pv_avail,{name},{_fnum(avail)}")
            rows.append(f"{t},pv_out,{name},{_fnum(out)}")
            rows.append(f"{t},set_pv,{name},{_fnum(sp.pv_p.get(name, 0.0) * to_kw)}")
        curtailed_kwh += step_curtailed * dt_h
        rows.append(f"{t},curtailed,,{_fnum(step_curtailed)}")
        for ic in model.ic_pairs:
            rows.append(f"{t},set_q,{ic.name},{_fnum(sp.ic_q.get(ic.name, 0.0) * to_kw)}")
            if ic.mode == MODE_EDC_QAC:
                rows.append(f"{t},set_e,{ic.name},{_fnum(sp.ic_e.get(ic.name, 1.0))}")
            else:
                rows.append(f"{t},set_p,{ic.name},{_fnum(sp.ic_p.get(ic.name, 0.0) * to_kw)}")

        if prev is not None and prev.predicted_vm is not None:
            errs = prev.predicted_vm - vm
            rows.append(f"{t},pred_vm_err,,{_fnum(np.abs(errs).max())}")
            if t >= warm:
                err_sum += float(errs.sum())
                err_count += errs.size
                err_min = min(err_min, float(errs.min()))
                err_max = max(err_max, float(errs.max()))
                err_max_abs = max(err_max_abs, float(np.abs(errs).max()))

        if t >= warm:
            over = amps - caps_a
            worst = float(over.max())
            if worst > 0.0:
                over_steps += 1
                over_max = max(over_max, worst)
            for kdx, lid in enumerate(line_ids):
                if amps[kdx] > line_max[lid]:
                    line_max[lid] = float(amps[kdx])
            qs_sq_sum += float(state.q[slack] * to_kw) ** 2
            qs_count += 1
            q_cmd = [sp.ic_q.get(ic.name, 0.0) * to_kw for ic in model.ic_pairs]
            for a in range(len(q_cmd)):
                for b in range(a + 1, len(q_cmd)):
                    if q_cmd[a] * q_cmd[b] < 0.0:
                        opp_q_max = max(
                            opp_q_max, min(abs(q_cmd[a]), abs(q_cmd[b]))
                        )

        meas = _measured_view(state, scenario.noise_sigma_pu, rng)
        dec = control_step(
            model,
            meas,
            profiles,
            t,
            config=config,
            prev=prev,
            pv_actual=realized,
            dct_enabled=scenario.dct_enabled,
        )
        rows.append(f"{t},pf_iters,,{sol.iterations}")
        rows.append(f"{t},qp_iters,,{dec.qp_iterations}")
        rows.append(f"{t},fallback,,{int(dec.fallback)}")
        rows.append(f"{t},soft,,{int(dec.soft_used)}")

        for s in stage_names:
            stage_ms[s].append(dec.timings.get(s, 0.0) * 1e3)
        qp_iter_max = max(qp_iter_max, dec.qp_iterations)
        fallback_steps += int(dec.fallback)
        soft_steps += int(dec.soft_used)

        sp = Setpoints.from_decision(dec)
        prev = dec
        if log_every and (t + 1) % log_every == 0:
            print(
                f"[{scenario.name}] step {t + 1}/{horizon} "
                f"worst={amps.max():.2f}A curtailed={step_curtailed:.3f}kW",
                file=sys.stderr,
            )
        if realtime:
            due = pace_start + (t + 1) * scenario.control_period_s
            lag = due - time.monotonic()
            if lag > 0.0:
                time.sleep(lag)

    trace_csv = "step,kind,id,value\n" + "\n".join(rows) + "\n"

    def _cdf(samples: list[float]) -> dict[str, float]:
        arr = np.array(samples if samples else [0.0])
        return {
            "p50": float(np.percentile(arr, 50)),
            "p90": float(np.percentile(arr, 90)),
            "p99": float(np.percentile(arr, 99)),
            "p100": float(arr.max()),
        }

    metrics = {
        "scenario": scenario.name,
        "steps": horizon,
        "warmup_steps": warm,
        "tail_steps": scenario.tail_steps,
        "control_period_s": scenario.control_period_s,
        # signed: positive means the controller predicted a higher magnitude
        # than the plant delivered
        "vm_pred_err_mean_pu": err_sum / err_count if err_count else 0.0,
        "vm_pred_err_min_pu": err_min if err_count else 0.0,
        "vm_pred_err_max_pu": err_max if err_count else 0.0,
        "vm_pred_err_max_abs_pu": err_max_abs,
        "ampacity_overshoot_max_a": over_max,
        "ampacity_overshoot_steps": over_steps,
        "line_current_max_a": line_max,
        "curtailed_energy_kwh": curtailed_kwh,
        "pv_energy_kwh": pv_kwh,
        "q_slack_rms_kvar": math.sqrt(qs_sq_sum / qs_count) if qs_count else 0.0,
        "opposing_q_max_kvar": opp_q_max,
        "dct_tail_mean_w": {
            name: [
                1e3 * float(np.mean(side)) if side else 0.0
                for side in sides
            ]
            for name, sides in dct_tail.items()
        },
        "dct_on_steps": dct_on_steps,
        "control_ms": {s: _cdf(stage_ms[s]) for s in stage_names},
        "pf_iterations_max": pf_iter_max,
        "qp_iterations_max": qp_iter_max,
        "fallback_steps": fallback_steps,
        "soft_steps": soft_steps,
        "trace_sha256": hashlib.sha256(trace_csv.encode("utf-8")).hexdigest(),
    }
    return ReplayResult(
        scenario=scenario,
        trace_csv=trace_csv,
        metrics=metrics,
        final_state=state,
        final_decision=prev,
    )


def save_trace(result: ReplayResult, path: str | Path) -> None:
    Path(path).write_text(result.trace_csv, encoding="utf-8")


def save_metrics(result: ReplayResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(result.metrics, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_trace(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Trace CSV back into ``{kind: {id: series}}`` keyed arrays."""
    series: dict[str, dict[str, list[float]]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "step,kind,id,value":
            raise SimulationError(f"unexpected trace header {header!r}")
        for line in fh:
            _, kind, rid, value = line.rstrip("\n").split(",")
            series.setdefault(kind, {}).setdefault(rid, []).append(float(value))
    return {
        kind: {rid: np.array(vals) for rid, vals in by_id.items()}
        for kind, by_id in series.items()
    }


# ---------------------------------------------------------------------------
# profile synthesis
# ---------------------------------------------------------------------------

# Afternoon feeder replay: photovoltaics decline to about two thirds of the
# initial output, the household and the charging station hold roughly steady
# with slow wander, and the DC storage unit cycles gently. Endpoints of the
# PV series are exact; the seeded wander is tapered to zero at both ends.
DEFAULT_PROFILE_TEMPLATE: dict[str, dict] = {
    "pv_roof": {
        "kind": "pv",
        "start_kw": 9.57,
        "end_kw": 6.32,
        "decline_steps": 1400,
        "wiggle_kw": 0.04,
    },
    "pv_facade": {
        "kind": "pv",
        "start_kw": 5.30,
        "end_kw": 3.50,
        "decline_steps": 1400,
        "wiggle_kw": 0.03,
    },
    "household": {
        "kind": "load",
        "mean_kw": -7.5,
        "power_factor": 0.93,
        "wiggle_kw": 0.15,
    },
    "evcs": {
        "kind": "load",
        "mean_kw": -12.0,
        "q_over_p": 0.2,
        "swing_kw": 1.0,
        "swing_steps": 1400,
        "wiggle_kw": 0.10,
    },
    "supercap": {
        "kind": "cycle",
        "amp_kw": 0.4,
        "swing_steps": 420,
    },
}


def _wander(rng: np.random.Generator, horizon: int, stdev: float,
            theta: float = 0.02) -> np.ndarray:
    """Mean-reverting noise with stationary standard deviation ``stdev``."""
    if stdev <= 0.0:
        return np.zeros(horizon)
    sigma = stdev * math.sqrt(2.0 * theta - theta * theta)
    eps = rng.normal(0.0, sigma, horizon)
    x = np.zeros(horizon)
    for k in range(1, horizon):
        x[k] = (1.0 - theta) * x[k - 1] + eps[k]
    return x


def generate_profiles(
    horizon: int = 2130,
    seed: int = 20230915,
    template: dict[str, dict] | None = None,
) -> ResourceProfile:
    """Synthesize the replay's resource series from a template.

    ``template`` maps resource name to a spec dict with a ``kind`` of
    ``pv`` (declining availability, run at availability), ``load`` (constant
    mean plus optional slow swing; Q from a power factor or a fixed Q/P
    ratio) or ``cycle`` (zero-mean sine). All kinds accept ``wiggle_kw``.
    """
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    spec = DEFAULT_PROFILE_TEMPLATE if template is None else template
    rng = np.random.default_rng(seed)
    t = np.arange(horizon, dtype=float)
    x = t / (horizon - 1)
    taper = 4.0 * x * (1.0 - x)        # zero at both endpoints
    prof = ResourceProfile(horizon=horizon)
    for name in sorted(spec):
        cfg = spec[name]
        kind = cfg["kind"]
        wig = _wander(rng, horizon, float(cfg.get("wiggle_kw", 0.0))) * taper
        if kind == "pv":
            frac = np.minimum(t / float(cfg["decline_steps"]), 1.0)
            shape = 0.5 * (1.0 + np.cos(np.pi * frac))
            mpp = cfg["end_kw"] + (cfg["start_kw"] - cfg["end_kw"]) * shape + wig
            mpp = np.maximum(mpp, 0.0)
            prof.p_kw[name] = mpp.copy()
            prof.q_kvar[name] = np.zeros(horizon)
            prof.p_mpp_kw[name] = mpp
        elif kind == "load":
            p = np.full(horizon, float(cfg["mean_kw"])) + wig
            if cfg.get("swing_kw"):
                p = p + float(cfg["swing_kw"]) * np.sin(
                    2.0 * np.pi * t / float(cfg["swing_steps"])
                )
            if "power_factor" in cfg:
                ratio = math.tan(math.acos(float(cfg["power_factor"])))
            else:
                ratio = float(cfg.get("q_over_p", 0.0))
            prof.p_kw[name] = p
            prof.q_kvar[name] = ratio * p
        elif kind == "cycle":
            p = float(cfg["amp_kw"]) * np.sin(
                2.0 * np.pi * t / float(cfg["swing_steps"])
            ) + wig
            prof.p_kw[name] = p
            prof.q_kvar[name] = np.zeros(horizon)
        else:
            raise ValueError(f"unknown profile kind {kind!r} for {name!r}")
    prof.validate()
    return prof


__all__ = [
    "DEFAULT_PROFILE_TEMPLATE",
    "ReplayResult",
    "Scenario",
    "Setpoints",
    "SimulationError",
    "generate_profiles",
    "load_scenario",
    "load_trace",
    "plant_spec",
    "run_scenario",
    "save_metrics",
    "save_scenario",
    "save_trace",
]
