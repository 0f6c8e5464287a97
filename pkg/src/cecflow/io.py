"""Instance and strategy files (JSON) and DOT export.

Instance file::

    {"format": "cecflow-instance", "version": 1, "name": "...",
     "nodes": 4,
     "edges": [{"link": [0, 1], "cost": {"kind": "queue", "mu": 10.0}}, ...],
     "node_costs": [{"kind": "linear", "slope": 0.5}, ...],
     "applications": [{"id": 0, "chain_len": 2, "destination": 3,
                       "packet_sizes": [10, 5, 0],
                       "input_rates": {"0": 1.2},
                       "comp_weights": 1.0}]}

``comp_weights`` is either one number for every (node, task) or a
``nodes x chain_len`` nested list where ``null`` marks an incapable node.
Edges that are down carry ``"active": false``.

Strategy file: ``{"i/a/k": {"cpu": x, "j": y, ...}}`` with only non-zero
entries; ``a`` is the application id.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .cost import CostFn, CostModel, KIND_NAMES
from .errors import ValidationError
from .model import Application, Instance, NetworkGraph, Strategy

FORMAT = "cecflow-instance"


def _dump(doc, path):
    text = json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n"
    if path is None:
        return text
    Path(path).write_text(text, encoding="utf-8")
    return text


def _cost_dict(kind_code, param) -> dict:
    return CostFn(KIND_NAMES[int(kind_code)], float(param)).to_dict()


def instance_to_dict(inst: Instance) -> dict:
    g, c = inst.graph, inst.costs
    edges = []
    for e in range(g.edge_count):
        item = {"link": [int(g.src[e]), int(g.dst[e])],
                "cost": _cost_dict(c.link_kind[e], c.link_param[e])}
        if not inst.active[e]:
            item["active"] = False
        edges.append(item)
    apps = []
    for a in inst.apps:
        w = a.comp_weight
        if np.all(w == w.flat[0]) and np.isfinite(w.flat[0]):
            weights = float(w.flat[0])
        else:
            weights = [[float(x) if math.isfinite(x) else None for x in row] for row in w]
        apps.append({
            "id": int(a.id),
            "chain_len": int(a.chain_len),
            "destination": int(a.destination),
            "packet_sizes": [float(x) for x in a.packet_size],
            "input_rates": {str(i): float(a.input_rate[i]) for i in np.flatnonzero(a.input_rate)},
            "comp_weights": weights,
        })
    return {
        "format": FORMAT,
        "version": 1,
        "name": inst.name,
        "nodes": int(g.node_count),
        "edges": edges,
        "node_costs": [_cost_dict(k, p) for k, p in zip(c.node_kind, c.node_param)],
        "applications": apps,
    }


def instance_from_dict(doc: dict) -> Instance:
    try:
        n = int(doc["nodes"])
        edges = [tuple(item["link"]) for item in doc["edges"]]
        link_fns = [CostFn.from_dict(item["cost"]) for item in doc["edges"]]
        node_fns = [CostFn.from_dict(d) for d in doc["node_costs"]]
        if len(node_fns) != n:
            raise ValidationError(f"node_costs has {len(node_fns)} entries for {n} nodes")
        active = np.array([bool(item.get("active", True)) for item in doc["edges"]], dtype=bool)
        graph = NetworkGraph(n, edges)
        apps = []
        for d in doc["applications"]:
            K = int(d["chain_len"])
            w = d.get("comp_weights", 1.0)
            if isinstance(w, (int, float)):
                w = np.full((n, K), float(w))
            else:
                w = np.array([[np.inf if x is None else float(x) for x in row] for row in w])
                if w.shape != (n, K):
                    raise ValidationError(f"app {d['id']}: comp_weights must be {n} x {K}")
            rate = np.zeros(n)
            for i, r in d.get("input_rates", {}).items():
                if not 0 <= int(i) < n:
                    raise ValidationError(f"app {d['id']}: source {i} out of range")
                rate[int(i)] = float(r)
            apps.append(Application(int(d["id"]), K, int(d["destination"]),
                                    np.array(d["packet_sizes"], float), rate, w))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed instance document: {exc}") from exc
    costs = CostModel.from_functions(link_fns, node_fns)
    return Instance(graph, apps, costs, active, str(doc.get("name", "")))


def write_instance(inst: Instance, path=None) -> str:
    return _dump(instance_to_dict(inst), path)


def read_instance(path) -> Instance:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)


def strategy_to_dict(inst: Instance, strat: Strategy) -> dict:
    out = {}
    for s in range(inst.S):
        app_id, k = inst.stage_label(s)
        for i in range(inst.n):
            row = strat.row(inst, s, i)
            if row:
                out[f"{i}/{app_id}/{k}"] = {str(key): v for key, v in row.items()}
    return out


def strategy_from_dict(inst: Instance, doc: dict) -> Strategy:
    strat = Strategy.zeros(inst)
    for key, row in doc.items():
        try:
            i, app_id, k = (int(x) for x in key.split("/"))
            s = inst.stage(app_id, k)
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"bad strategy key {key!r}") from exc
        if not 0 <= i < inst.n:
            raise ValidationError(f"bad strategy key {key!r}: node out of range")
        for d in row:
            if d != "cpu" and not inst.graph.has_edge(i, int(d)):
                raise ValidationError(f"{key}: ({i}, {d}) is not a link")
        strat.set_row(inst, s, i, {d if d == "cpu" else int(d): float(v) for d, v in row.items()})
    return strat


def write_strategy(inst: Instance, strat: Strategy, path=None) -> str:
    return _dump(strategy_to_dict(inst, strat), path)


def read_strategy(inst: Instance, path) -> Strategy:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return strategy_from_dict(inst, doc)


def to_dot(inst: Instance, strat: Strategy | None = None, stage=None) -> str:
    """Graph in DOT syntax. With a strategy and ``stage = (app_id, k)``,
    links carrying that stage are labelled with their fraction."""
    g = inst.graph
    if strat is None or stage is None:
        return g.to_dot(inst.name or "network")
    s = inst.stage(*stage)
    lines = [f'digraph "{inst.name or "network"}" {{']
    for i in range(g.node_count):
        extra = f' xlabel="cpu {strat.phi_cpu[s, i]:.3g}"' if strat.phi_cpu[s, i] > 0 else ""
        lines.append(f"  {i}[{extra.strip()}];" if extra else f"  {i};")
    for e in range(g.edge_count):
        v = strat.phi_link[s, e]
        attr = f' [label="{v:.3g}", penwidth=2]' if v > 0 else " [style=dotted]"
        lines.append(f"  {g.src[e]} -> {g.dst[e]}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def events_from_list(items) -> dict:
    """Parse ``[{"iter": 40, "type": "rate", ...}, ...]`` into ``{iter: [event, ...]}``.

    Types: ``rate`` (node, app, rate), ``link-remove`` (i, j), ``link-add``
    (i, j, optional cost), ``node-add`` (edges as ``[i, j, cost]``,
    optional node_cost, comp_weight, seed).
    """
    from .gp import LinkAdd, LinkRemove, NodeAdd, RateChange

    out: dict = {}
    for item in items:
        try:
            kind = item["type"]
            it = int(item["iter"])
            if kind == "rate":
                ev = RateChange(int(item["node"]), int(item["app"]), float(item["rate"]))
            elif kind == "link-remove":
                ev = LinkRemove(int(item["i"]), int(item["j"]))
            elif kind == "link-add":
                ev = LinkAdd(int(item["i"]), int(item["j"]), item.get("cost"))
            elif kind == "node-add":
                ev = NodeAdd([(int(i), int(j), c) for i, j, c in item["edges"]],
                             item.get("node_cost"), float(item.get("comp_weight", 1.0)),
                             int(item.get("seed", 0)))
            else:
                raise ValidationError(f"unknown event type {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed event {item!r}: {exc}") from exc
        if it < 0:
            raise ValidationError("event iteration must be >= 0")
        out.setdefault(it, []).append(ev)
    return out


def read_events(path) -> dict:
    try:
        items = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(items, list):
        raise ValidationError("events file must hold a JSON list")
    return events_from_list(items)
