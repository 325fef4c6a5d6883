"""Per-tick simulation records and their CSV serialization.

One row per tick, SI units, full float precision (repr round-trip), so a
re-parsed trace reproduces the records bit-exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

TRACE_COLUMNS = (
    "t,epm_x,epm_y,epm_z,epm_mx,epm_my,epm_mz,"
    "tip_x,tip_y,tip_z,tipn_x,tipn_y,tipn_z,"
    "theta,pressure,length,Fg,Fm_x,Fm_y,Fm_z,tau_x,tau_y,tau_z,"
    "contact,buckled,wall_gap"
).split(",")


@dataclass(frozen=True)
class TraceRecord:
    t: float
    epm_pos: np.ndarray
    epm_moment_dir: np.ndarray
    tip_true: np.ndarray
    tip_noisy: np.ndarray
    theta: float
    pressure: float
    total_length: float
    F_g: float
    F_m: np.ndarray
    tau_m: np.ndarray
    contact: bool
    buckled: bool
    wall_gap: float

    def row(self) -> list[float | bool]:
        return [self.t, *self.epm_pos, *self.epm_moment_dir,
                *self.tip_true, *self.tip_noisy,
                self.theta, self.pressure, self.total_length, self.F_g,
                *self.F_m, *self.tau_m,
                self.contact, self.buckled, self.wall_gap]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    f = float(v)
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return repr(f)


def export_trace(history: list[TraceRecord], path=None) -> str:
    """Serialize trace records to CSV; writes to path when given."""
    if not history:
        raise ValueError("empty trace")
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for rec in history:
        buf.write(",".join(_fmt(v) for v in rec.row()) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def parse_trace(text: str) -> list[TraceRecord]:
    """Inverse of export_trace."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header: {header}")
    out = []
    for ln in lines[1:]:
        v = ln.split(",")
        f = [float(x) for x in v]
        out.append(TraceRecord(
            t=f[0],
            epm_pos=np.array(f[1:4]), epm_moment_dir=np.array(f[4:7]),
            tip_true=np.array(f[7:10]), tip_noisy=np.array(f[10:13]),
            theta=f[13], pressure=f[14], total_length=f[15], F_g=f[16],
            F_m=np.array(f[17:20]), tau_m=np.array(f[20:23]),
            contact=bool(int(v[23])), buckled=bool(int(v[24])),
            wall_gap=f[25]))
    return out
