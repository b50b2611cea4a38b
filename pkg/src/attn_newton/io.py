"""JSON instance files, CSV traces and run summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .forward import ParamState, ProblemInstance, forward
from .solver import IterationTrace

TRACE_COLUMNS = (
    "t",
    "loss",
    "grad_norm_x",
    "grad_norm_y",
    "step_norm",
    "r_t",
    "t_forward_ms",
    "t_grad_ms",
    "t_hess_ms",
    "t_solve_ms",
)
PLANT_LOSS_TOL = 1e-20


class InstanceFileError(ValueError):
    """Raised for malformed or inconsistent instance files."""


def _matrix(rows, name: str) -> np.ndarray:
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2:
        raise InstanceFileError(f"{name} must be a nested list of rows")
    return arr


def instance_to_dict(
    inst: ProblemInstance,
    seed: Optional[int] = None,
    plant: Optional[ParamState] = None,
) -> dict:
    out = {
        "n": inst.n,
        "d": inst.d,
        "R": float(inst.R),
        "l": float(inst.l),
        "seed": seed,
        "A1": inst.A1.tolist(),
        "A2": inst.A2.tolist(),
        "A3": inst.A3.tolist(),
        "B": inst.B.tolist(),
        "W": inst.w.tolist(),
    }
    if plant is not None:
        out["Xstar"] = plant.X.tolist()
        out["Ystar"] = plant.Y.tolist()
    return out


def instance_from_dict(data: dict) -> tuple[ProblemInstance, Optional[ParamState], Optional[int]]:
    """Rebuild an instance and optional plant; ``W`` defaults to all ones.

    A stored plant is re-checked: its loss must not exceed ``1e-20``.
    """
    try:
        A1, A2, A3, B = (_matrix(data[k], k) for k in ("A1", "A2", "A3", "B"))
    except KeyError as exc:
        raise InstanceFileError(f"instance file lacks {exc.args[0]!r}") from None
    w = data.get("W")
    if w is not None:
        w = np.array(w, dtype=float)
        if w.ndim == 2:
            w = np.diag(w)
    inst = ProblemInstance(A1, A2, A3, B, w=w, R=float(data.get("R", 1.0)), l=float(data.get("l", 1.0)))
    for key, value in (("n", inst.n), ("d", inst.d)):
        if key in data and int(data[key]) != value:
            raise InstanceFileError(f"declared {key}={data[key]} but matrices give {value}")
    plant = None
    if "Xstar" in data or "Ystar" in data:
        plant = ParamState(_matrix(data["Xstar"], "Xstar"), _matrix(data["Ystar"], "Ystar"))
        plant_loss = forward(inst, plant).loss
        if plant_loss > PLANT_LOSS_TOL:
            raise InstanceFileError(f"stored plant has loss {plant_loss:.3e} > {PLANT_LOSS_TOL}")
    seed = data.get("seed")
    return inst, plant, None if seed is None else int(seed)


def save_instance(path, inst: ProblemInstance, seed: Optional[int] = None, plant: Optional[ParamState] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(instance_to_dict(inst, seed, plant), indent=1) + "\n")
    return path


def load_instance(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFileError(f"{path}: not valid JSON ({exc})") from None
    return instance_from_dict(data)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return repr(value) if math.isfinite(value) else str(value)


def trace_rows(trace: IterationTrace, timings: bool = False) -> list[list[str]]:
    rows = []
    for r in trace.records:
        times = (r.t_forward_ms, r.t_grad_ms, r.t_hess_ms, r.t_solve_ms)
        rows.append(
            [_fmt(r.t), _fmt(r.loss), _fmt(r.grad_norm_x), _fmt(r.grad_norm_y), _fmt(r.step_norm), _fmt(r.r_t)]
            + [f"{x:.3f}" if timings else "" for x in times]
        )
    return rows


def trace_to_csv(trace: IterationTrace, timings: bool = False) -> str:
    """CSV text of a trace.  Timing columns stay empty unless ``timings`` is set,
    so that identical runs give identical bytes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(trace_rows(trace, timings))
    return buf.getvalue()


def write_trace(path, trace: IterationTrace, timings: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trace_to_csv(trace, timings))
    return path


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
