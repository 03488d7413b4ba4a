"""Resource models: DC transformer, profiled loads/PV, converter envelopes.

Profile files are CSV in SI units with columns ``t, resource_id, P_kW,
Q_kvar, P_mpp_kW``; the MPP column applies to PV resources and may be empty
elsewhere. Powers are injections (generation positive, consumption negative).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Dct, GridModel

FIDELITY_IDEAL = "ideal"
FIDELITY_PLANT = "plant"

PROFILE_CSV_HEADER = ["t", "resource_id", "P_kW", "Q_kvar", "P_mpp_kW"]


# ---------------------------------------------------------------------------
# DC transformer
# ---------------------------------------------------------------------------


def dct_injections_with_jacobian(
    dct: Dct,
    e1: float,
    e2: float,
    *,
    deadband: bool,
    losses: bool,
    force_off: bool = False,
):
    """Grid injections of both DCT terminals plus their voltage Jacobian.

    Returns ``((w1, w2), J, on)`` with ``J[a][b] = dw_{a+1}/dE_{b+1}`` (2x2)
    and ``on`` false when the device sits inside its deadband (or is forced
    off). Transfer follows the linear characteristic exactly whenever the
    device is on: the deadband is a hard cutoff, not a shifted ramp, so the
    plant and the ideal model coincide outside the band.

    Losses inside the device are the constant magnetizing draw, split equally
    across both sides; the ohmic part of the device is not modeled here, it
    belongs in the grid as an explicit series line (``r_equiv_ohm`` documents
    its value). Both terminals always satisfy ``w1 + w2 = -(total losses)``.
    """
    de = e1 - e2
    on = not force_off and (not deadband or abs(de) > dct.deadband_pu)
    jac = np.zeros((2, 2))
    idle = -0.5 * dct.p_mag_loss_pu if losses else 0.0
    if not on:
        return (idle, idle), jac, False

    alpha = dct.alpha_pu
    t = alpha * de
    w1, w2 = t + idle, -t + idle
    jac[0, 0] = alpha
    jac[0, 1] = -alpha
    jac[1, 0] = -alpha
    jac[1, 1] = alpha
    return (w1, w2), jac, True


def dct_power(dct: Dct, e1: float, e2: float, fidelity: str) -> tuple[float, float]:
    """Terminal injections (primary, secondary) in per-unit.

    ``ideal`` is the controller's model: pure linear transfer, no losses, no
    deadband. ``plant`` applies the deadband cutoff and both loss terms.
    """
    if fidelity == FIDELITY_IDEAL:
        (w1, w2), _, _ = dct_injections_with_jacobian(
            dct, e1, e2, deadband=False, losses=False
        )
    elif fidelity == FIDELITY_PLANT:
        (w1, w2), _, _ = dct_injections_with_jacobian(
            dct, e1, e2, deadband=True, losses=True
        )
    else:
        raise ValueError(f"unknown fidelity {fidelity!r}")
    return w1, w2


def pv_available(profile: "ResourceProfile", t: int, resource_id: str | None = None) -> float:
    """MPP bound in kW at step ``t``; summed over all PV series when no id given."""
    if t < 0 or t >= profile.horizon:
        raise IndexError(f"step {t} outside horizon {profile.horizon}")
    if resource_id is not None:
        if resource_id not in profile.p_mpp_kw:
            raise KeyError(f"resource {resource_id!r} carries no MPP series")
        return float(profile.p_mpp_kw[resource_id][t])
    return float(sum(series[t] for series in profile.p_mpp_kw.values()))


def ic_envelope(s_rating_pu: float, p_pu: float, q_pu: float) -> bool:
    """Converter operating box: |P| and |Q| within the rating (closed set)."""
    if s_rating_pu <= 0:
        raise ValueError("rating must be positive")
    return abs(p_pu) <= s_rating_pu and abs(q_pu) <= s_rating_pu


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


@dataclass
class ResourceProfile:
    """Timestep series of injections per resource, SI units (kW / kvar)."""

    horizon: int
    p_kw: dict[str, np.ndarray] = field(default_factory=dict)
    q_kvar: dict[str, np.ndarray] = field(default_factory=dict)
    p_mpp_kw: dict[str, np.ndarray] = field(default_factory=dict)

    def resource_ids(self) -> list[str]:
        return sorted(self.p_kw)

    def validate(self) -> None:
        for name, arr in self.p_kw.items():
            if arr.shape != (self.horizon,):
                raise ValueError(f"series {name!r} length does not match horizon")
            if name not in self.q_kvar or self.q_kvar[name].shape != (self.horizon,):
                raise ValueError(f"series {name!r} missing matching Q series")
        for name, arr in self.p_mpp_kw.items():
            if arr.shape != (self.horizon,):
                raise ValueError(f"MPP series {name!r} length does not match horizon")
            if np.any(self.p_kw[name] > arr + 1e-12):
                raise ValueError(f"series {name!r}: P exceeds MPP")

    def validate_against(self, model: GridModel) -> None:
        self.validate()
        known = {r.name for r in model.resources} | {p.name for p in model.pv_plants}
        unknown = set(self.p_kw) - known
        if unknown:
            raise ValueError(f"profile resources not in grid: {sorted(unknown)}")
        for pv in model.pv_plants:
            if pv.name in self.p_kw and pv.name not in self.p_mpp_kw:
                raise ValueError(f"PV series {pv.name!r} must carry an MPP column")


def profiles_to_csv(profile: ResourceProfile) -> str:
    lines = [",".join(PROFILE_CSV_HEADER)]
    for t in range(profile.horizon):
        for name in profile.resource_ids():
            mpp = ""
            if name in profile.p_mpp_kw:
                mpp = repr(float(profile.p_mpp_kw[name][t]))
            lines.append(
                f"{t},{name},{float(profile.p_kw[name][t])!r},"
                f"{float(profile.q_kvar[name][t])!r},{mpp}"
            )
    return "\n".join(lines) + "\n"


def save_profiles(profile: ResourceProfile, path: str | Path) -> None:
    Path(path).write_text(profiles_to_csv(profile), encoding="utf-8")


def load_profiles(path: str | Path) -> ResourceProfile:
    rows: dict[str, dict[int, tuple[float, float, float | None]]] = {}
    max_t = -1
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", "resource_id", "P_kW", "Q_kvar"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"profile file missing columns {sorted(missing)}")
        for row in reader:
            t = int(row["t"])
            name = row["resource_id"]
            mpp_raw = (row.get("P_mpp_kW") or "").strip()
            rows.setdefault(name, {})[t] = (
                float(row["P_kW"]),
                float(row["Q_kvar"]),
                float(mpp_raw) if mpp_raw else None,
            )
            max_t = max(max_t, t)
    horizon = max_t + 1
    prof = ResourceProfile(horizon=horizon)
    for name, series in rows.items():
        if len(series) != horizon:
            raise ValueError(f"series {name!r} has gaps")
        p = np.zeros(horizon)
        q = np.zeros(horizon)
        mpp = np.zeros(horizon)
        has_mpp = all(series[t][2] is not None for t in range(horizon))
        for t in range(horizon):
            p[t], q[t] = series[t][0], series[t][1]
            if has_mpp:
                mpp[t] = series[t][2]
        prof.p_kw[name] = p
        prof.q_kvar[name] = q
        if has_mpp:
            prof.p_mpp_kw[name] = mpp
    prof.validate()
    return prof
