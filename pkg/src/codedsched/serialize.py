"""On-disk formats: instance and schedule documents plus result CSVs.

Floats are written with 17 significant digits so that a write/read cycle
reproduces the exact double, and emission is hand-assembled (fixed key
order, fixed separators) so identical inputs give identical bytes. All
writers stage into a temp file next to the destination and rename it into
place, so readers never observe a half-written file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from collections.abc import Iterable, Sequence

import numpy as np

from .model import (
    AssignMode,
    Assignment,
    LoadAllocation,
    ProblemInstance,
    Schedule,
)

CSV_HEADER = "policy,master,t_approx_ms,mean_completion_ms,infeasible_trials,trials"

_UNITS = {"u": "1/ms", "a": "ms/row", "L": "rows", "s": "cols", "t": "ms"}


def format_float(x: float) -> str:
    """17-significant-digit decimal form; round-trips the exact double."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return f"{x:.17g}"


def _float_list(values: Iterable[float]) -> str:
    return "[" + ", ".join(format_float(v) for v in values) + "]"


def _int_list(values: Iterable[int]) -> str:
    return "[" + ", ".join(str(int(v)) for v in values) + "]"


def atomic_write_text(path: str, text: str) -> None:
    """Write text then rename into place; no partially written target."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def instance_to_json(instance: ProblemInstance) -> str:
    seed = "null" if instance.seed is None else str(int(instance.seed))
    units = json.dumps(_UNITS)
    lines = [
        "{",
        f'  "M": {instance.num_masters},',
        f'  "N": {instance.num_workers},',
        f'  "u": {_float_list(instance.straggle_rate.ravel())},',
        f'  "a": {_float_list(instance.shift_per_row.ravel())},',
        f'  "L": {_int_list(instance.required_rows)},',
        f'  "s": {_int_list(instance.task_cols)},',
        f'  "seed": {seed},',
        f'  "units": {units}',
        "}",
    ]
    return "\n".join(lines) + "\n"


def instance_from_json(text: str) -> ProblemInstance:
    doc = json.loads(text)
    for key in ("M", "N", "u", "a", "L", "s"):
        if key not in doc:
            raise ValueError(f"instance document missing field {key!r}")
    num_m, num_n = int(doc["M"]), int(doc["N"])
    u = np.array(doc["u"], dtype=float).reshape(num_m, num_n)
    a = np.array(doc["a"], dtype=float).reshape(num_m, num_n)
    seed = doc.get("seed")
    return ProblemInstance(
        num_masters=num_m,
        num_workers=num_n,
        straggle_rate=u,
        shift_per_row=a,
        required_rows=np.array(doc["L"], dtype=np.int64),
        task_cols=np.array(doc["s"], dtype=np.int64),
        seed=None if seed is None else int(seed),
    )


def write_instance(instance: ProblemInstance, path: str) -> None:
    atomic_write_text(path, instance_to_json(instance))


def read_instance(path: str) -> ProblemInstance:
    with open(path) as handle:
        return instance_from_json(handle.read())


def schedule_to_json(schedule: Schedule) -> str:
    num_m, num_n = schedule.loads.loads.shape
    lines = [
        "{",
        f'  "M": {num_m},',
        f'  "N": {num_n},',
        f'  "mode": "{schedule.assignment.mode.value}",',
        f'  "probs": {_float_list(schedule.assignment.probs.ravel())},',
        f'  "loads": {_float_list(schedule.loads.loads.ravel())},',
        f'  "t_approx": {format_float(schedule.t_approx)},',
        f'  "per_master_t": {_float_list(schedule.per_master_t)},',
        f'  "uncoded": {"true" if schedule.uncoded else "false"},',
        f'  "t_empirical": {"true" if schedule.t_empirical else "false"}',
        "}",
    ]
    return "\n".join(lines) + "\n"


def schedule_from_json(text: str) -> Schedule:
    doc = json.loads(text)
    num_m, num_n = int(doc["M"]), int(doc["N"])
    probs = np.array(doc["probs"], dtype=float).reshape(num_m, num_n)
    loads = np.array(doc["loads"], dtype=float).reshape(num_m, num_n)
    return Schedule(
        assignment=Assignment(mode=AssignMode(doc["mode"]), probs=probs),
        loads=LoadAllocation(loads=loads),
        t_approx=float(doc["t_approx"]),
        per_master_t=np.array(doc["per_master_t"], dtype=float),
        uncoded=bool(doc["uncoded"]),
        t_empirical=bool(doc["t_empirical"]),
    )


def write_schedule(schedule: Schedule, path: str) -> None:
    atomic_write_text(path, schedule_to_json(schedule))


def read_schedule(path: str) -> Schedule:
    with open(path) as handle:
        return schedule_from_json(handle.read())


def comparison_csv(rows: Sequence[tuple[str, str, float, float, int, int]]) -> str:
    """CSV text for (policy, master, t_approx_ms, mean_ms, infeasible, trials) rows."""
    out = [CSV_HEADER]
    for policy, master, t_approx, mean, infeasible, trials in rows:
        out.append(
            f"{policy},{master},{format_float(t_approx)},"
            f"{format_float(mean)},{int(infeasible)},{int(trials)}"
        )
    return "\n".join(out) + "\n"


def read_comparison_csv(path: str) -> list[tuple[str, str, float, float, int, int]]:
    with open(path) as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unrecognized comparison CSV header")
    rows = []
    for line in lines[1:]:
        policy, master, t_approx, mean, infeasible, trials = line.split(",")
        rows.append(
            (policy, master, float(t_approx), float(mean), int(infeasible), int(trials))
        )
    return rows


def trace_csv(t_values: Iterable[float]) -> str:
    """Per-iteration deadline trace; row 0 is the initial point."""
    out = ["iteration,t_ms"]
    for i, t in enumerate(t_values):
        out.append(f"{i},{format_float(t)}")
    return "\n".join(out) + "\n"
