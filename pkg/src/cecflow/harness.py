"""Experiment orchestration: method comparison and the two sweeps.

All tables are lists of flat dicts. ``write_table`` turns them into CSV
or JSON with ``repr`` floats, so equal inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import io as _io
import json
import logging
from dataclasses import replace

import numpy as np

from .baselines import run_baseline
from .errors import CecflowError, OrderingError
from .gp import GPParams, run_gp
from .model import Instance
from .scenarios import ScenarioConfig, generate, sweep

log = logging.getLogger(__name__)

ALL_METHODS = ("gp", "spoc", "lcof", "lpr-sc")
ORDER_TOL = 1e-6


def run_method(method: str, inst: Instance, params: GPParams | None = None) -> dict:
    """Run one method; failures become a row with ``error`` set."""
    params = params or GPParams()
    row = {"method": method, "cost": float("inf"), "saturated": False, "converged": False,
           "iterations": 0, "error": ""}
    try:
        if method == "gp":
            traj = run_gp(inst, params)
            row.update(cost=traj.cost, converged=traj.converged, iterations=len(traj.records) - 1)
        else:
            res = run_baseline(method, inst, params)
            row["cost"] = res.cost
            row["saturated"] = res.saturated
            traj = res.trajectory
            row["converged"] = bool(traj.converged if traj is not None else np.isfinite(res.cost))
            row["iterations"] = len(traj.records) - 1 if traj is not None else 0
    except CecflowError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["saturated"] = True
    row["saturated"] = bool(row["saturated"] or not np.isfinite(row["cost"]))
    return row


def _normalise(rows):
    finite = [r["cost"] for r in rows if np.isfinite(r["cost"])]
    worst = max(finite) if finite else float("inf")
    for r in rows:
        if not np.isfinite(r["cost"]):
            r["normalized"] = float("inf")
        elif worst > 0:
            r["normalized"] = r["cost"] / worst
        else:
            r["normalized"] = 1.0
    return rows


def _check_order(rows, tol=ORDER_TOL):
    gp = next((r for r in rows if r["method"] == "gp"), None)
    if gp is None or not gp["converged"]:
        return
    for r in rows:
        if r["method"] != "gp" and np.isfinite(r["cost"]) and gp["cost"] > r["cost"] * (1 + tol) + tol:
            raise OrderingError(f"gp cost {gp['cost']!r} exceeds {r['method']} cost {r['cost']!r}")


def compare(inst: Instance, methods=ALL_METHODS, params: GPParams | None = None,
            check_order: bool = True) -> list[dict]:
    """One row per method with absolute and worst-normalised cost."""
    rows = [dict(instance=inst.name, **run_method(m, inst, params)) for m in methods]
    _normalise(rows)
    if check_order:
        _check_order(rows)
    return rows


def rate_sweep_experiment(config: ScenarioConfig, values, methods=ALL_METHODS,
                          params: GPParams | None = None) -> list[dict]:
    """Cost versus input-rate scale for each method."""
    rows = []
    for v, inst in zip(values, sweep(config, "rate-scale", values)):
        for r in compare(inst, methods, params, check_order=True):
            rows.append({"rate_scale": float(v), "method": r["method"], "cost": r["cost"],
                         "normalized": r["normalized"], "saturated": r["saturated"],
                         "converged": r["converged"]})
    return rows


def _injections(inst: Instance, fs) -> np.ndarray:
    inj = inst.inject.sum(axis=1)
    prev = inst.stage_prev
    has_prev = prev >= 0
    inj[has_prev] = fs.g[prev[has_prev]].sum(axis=1)
    return inj


def average_hops(inst: Instance, fs) -> np.ndarray:
    """Per-stage ``sum_e f[s, e] / injected rate of stage s`` (0 if nothing enters)."""
    inj = _injections(inst, fs)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(inj > 0, fs.f.sum(axis=1) / inj, 0.0)


def stage_hops(inst: Instance, fs) -> dict:
    """Flow-weighted hops of data packets (stage 0) and of later-stage packets."""
    inj = _injections(inst, fs)
    hop = fs.f.sum(axis=1)
    data = inst.stage_k == 0
    out = {}
    for name, sel in (("data", data), ("result", ~data)):
        tot = inj[sel].sum()
        out[name] = float(hop[sel].sum() / tot) if tot > 0 else 0.0
    return out


def hopcount_experiment(config: ScenarioConfig, values, params: GPParams | None = None) -> list[dict]:
    """GP's average hop counts as the data packet size ``L[0] = v * L[1]`` grows."""
    params = params or GPParams()
    rows = []
    for v, inst in zip(values, sweep(config, "L0-ratio", values)):
        row = {"L0_ratio": float(v), "L0": float(inst.apps[0].packet_size[0]),
               "cost": float("inf"), "data_hops": float("nan"), "result_hops": float("nan"),
               "converged": False, "error": ""}
        try:
            traj = run_gp(inst, params)
            h = stage_hops(inst, traj.state.flows)
            row.update(cost=traj.cost, data_hops=h["data"], result_hops=h["result"],
                       converged=traj.converged)
        except CecflowError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def format_table(rows: list[dict], fmt: str = "csv") -> str:
    if fmt == "json":
        clean = [{k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                  for k, v in r.items()} for r in rows]
        return json.dumps(clean, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = _io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


def write_table(rows: list[dict], path, fmt: str = "csv") -> str:
    text = format_table(rows, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def scenario_instance(config: ScenarioConfig, seed: int | None = None) -> Instance:
    return generate(config if seed is None else replace(config, seed=seed))
