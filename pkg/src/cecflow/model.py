"""Core data model and the traffic solver."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .cost import CostModel
from .errors import LoopError, ValidationError

EPS_PHI = 1e-9
ROW_TOL = 1e-12


class NetworkGraph:
    """Directed graph on nodes ``0..node_count-1`` with CSR adjacency."""

    def __init__(self, node_count: int, edges):
        if node_count < 1:
            raise ValidationError("node_count must be positive")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        seen = set()
        for i, j in edges.tolist():
            if i == j:
                raise ValidationError(f"self-loop at node {i}")
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise ValidationError(f"edge ({i}, {j}) references an unknown node")
            if (i, j) in seen:
                raise ValidationError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        self.node_count = int(node_count)
        self.edges = edges
        self.src = np.ascontiguousarray(edges[:, 0])
        self.dst = np.ascontiguousarray(edges[:, 1])
        self._index = {(i, j): e for e, (i, j) in enumerate(edges.tolist())}
        self.out_ptr, self.out_edge = _csr(self.src, node_count)
        self.in_ptr, self.in_edge = _csr(self.dst, node_count)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_id(self, i: int, j: int) -> int:
        return self._index[(i, j)]

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self._index

    def out_edges(self, i: int) -> np.ndarray:
        return self.out_edge[self.out_ptr[i]:self.out_ptr[i + 1]]

    def in_edges(self, i: int) -> np.ndarray:
        return self.in_edge[self.in_ptr[i]:self.in_ptr[i + 1]]

    def out_neighbors(self, i: int) -> list[int]:
        return [int(self.dst[e]) for e in self.out_edges(i)]

    def in_neighbors(self, i: int) -> list[int]:
        return [int(self.src[e]) for e in self.in_edges(i)]

    def to_networkx(self):
        import networkx as nx

        g = nx.DiGraph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(self.edges.tolist())
        return g

    def to_dot(self, name: str = "network") -> str:
        lines = [f"digraph \"{name}\" {{"]
        lines += [f"  {i};" for i in range(self.node_count)]
        lines += [f"  {i} -> {j};" for i, j in self.edges.tolist()]
        lines.append("}")
        return "\n".join(lines) + "\n"


def _csr(keys, n):
    order = np.argsort(keys, kind="stable").astype(np.int64)
    counts = np.bincount(keys, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, order


@dataclass(eq=False)
class Application:
    """A service chain: ``chain_len`` tasks, results delivered to ``destination``.

    ``packet_size[k]`` is the size of stage-k packets (k = 0 is raw data).
    ``comp_weight[i, k]`` is the workload per packet of task k+1 at node i;
    ``inf`` marks a node that cannot run that task.
    """

    id: int
    chain_len: int
    destination: int
    packet_size: np.ndarray
    input_rate: np.ndarray
    comp_weight: np.ndarray

    def __post_init__(self):
        self.packet_size = np.asarray(self.packet_size, dtype=float)
        self.input_rate = np.asarray(self.input_rate, dtype=float)
        self.comp_weight = np.asarray(self.comp_weight, dtype=float).reshape(
            len(self.input_rate), self.chain_len
        )
        if self.chain_len < 1:
            raise ValidationError("chain_len must be >= 1")
        if self.packet_size.shape != (self.chain_len + 1,):
            raise ValidationError("packet_size needs chain_len + 1 entries")
        if (self.packet_size < 0).any():
            raise ValidationError("packet sizes must be non-negative")
        if (self.input_rate < 0).any():
            raise ValidationError("input rates must be non-negative")
        if (self.comp_weight < 0).any() or np.isnan(self.comp_weight).any():
            raise ValidationError("computational weights must be >= 0 (inf = incapable)")

    @classmethod
    def from_maps(cls, id, chain_len, destination, packet_size, input_rate: dict,
                  node_count, comp_weight=1.0):
        """Build from sparse maps. ``comp_weight`` is a scalar default or a
        ``{(node, k): weight}`` dict; nodes absent from the dict are incapable."""
        r = np.zeros(node_count)
        for i, v in input_rate.items():
            r[int(i)] = v
        if isinstance(comp_weight, dict):
            w = np.full((node_count, chain_len), np.inf)
            for (i, k), v in comp_weight.items():
                w[int(i), int(k)] = v
        else:
            w = np.full((node_count, chain_len), float(comp_weight))
        return cls(id, chain_len, destination, packet_size, r, w)

    @property
    def sources(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.input_rate > 0)]


@dataclass(eq=False)
class Instance:
    """Graph + applications + costs, with flattened per-stage tables.

    ``active`` flags links that are up; a removed link stays in the arrays
    (so strategies keep their shape) but is always blocked.
    """

    graph: NetworkGraph
    apps: list
    costs: CostModel
    active: np.ndarray | None = None
    name: str = ""
    stages: list = field(init=False)

    def __post_init__(self):
        n, E = self.graph.node_count, self.graph.edge_count
        if self.active is None:
            self.active = np.ones(E, dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)
        if len(self.costs.link_kind) != E or len(self.costs.node_kind) != n:
            raise ValidationError("cost model does not match the graph")
        ids = [a.id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate application ids")
        for a in self.apps:
            if len(a.input_rate) != n:
                raise ValidationError(f"app {a.id}: input_rate length != node_count")
            if not 0 <= a.destination < n:
                raise ValidationError(f"app {a.id}: destination out of range")
        self.stages = [(ai, k) for ai, a in enumerate(self.apps) for k in range(a.chain_len + 1)]
        S = len(self.stages)
        self.stage_app = np.array([ai for ai, _ in self.stages], dtype=np.int64)
        self.stage_k = np.array([k for _, k in self.stages], dtype=np.int64)
        self.stage_L = np.array([self.apps[ai].packet_size[k] for ai, k in self.stages])
        final = np.array([k == self.apps[ai].chain_len for ai, k in self.stages], dtype=bool)
        self.stage_final = final
        self.stage_prev = np.array([s - 1 if k > 0 else -1 for s, (_, k) in enumerate(self.stages)],
                                   dtype=np.int64)
        self.stage_next = np.array([-1 if final[s] else s + 1 for s in range(S)], dtype=np.int64)
        self.stage_w = np.full((S, n), np.inf)
        self.inject = np.zeros((S, n))
        self.zero_row = np.zeros((S, n), dtype=bool)
        for s, (ai, k) in enumerate(self.stages):
            a = self.apps[ai]
            if k < a.chain_len:
                self.stage_w[s] = a.comp_weight[:, k]
            else:
                self.zero_row[s, a.destination] = True
            if k == 0:
                self.inject[s] = a.input_rate
        self.cpu_ok = np.isfinite(self.stage_w)
        self._stage_of = {(self.apps[ai].id, k): s for s, (ai, k) in enumerate(self.stages)}

    @property
    def n(self) -> int:
        return self.graph.node_count

    @property
    def S(self) -> int:
        return len(self.stages)

    def stage(self, app_id: int, k: int) -> int:
        return self._stage_of[(app_id, k)]

    def stage_label(self, s: int) -> tuple:
        ai, k = self.stages[s]
        return (self.apps[ai].id, k)

    def app_by_id(self, app_id):
        for a in self.apps:
            if a.id == app_id:
                return a
        raise KeyError(app_id)

    def row_target(self) -> np.ndarray:
        """Required row sums: 0 at the destination of the final stage, else 1."""
        return np.where(self.zero_row, 0.0, 1.0)

    def with_apps(self, apps) -> "Instance":
        return Instance(self.graph, apps, self.costs, self.active.copy(), self.name)


@dataclass(eq=False)
class Strategy:
    """Forwarding/offloading fractions: ``phi_cpu[s, i]`` and ``phi_link[s, e]``."""

    phi_cpu: np.ndarray
    phi_link: np.ndarray

    @classmethod
    def zeros(cls, inst: Instance) -> "Strategy":
        return cls(np.zeros((inst.S, inst.n)), np.zeros((inst.S, inst.graph.edge_count)))

    def copy(self) -> "Strategy":
        return Strategy(self.phi_cpu.copy(), self.phi_link.copy())

    def row_sums(self, inst: Instance) -> np.ndarray:
        sums = self.phi_cpu.copy()
        np.add.at(sums.T, inst.graph.src, self.phi_link.T)
        return sums

    def row(self, inst: Instance, s: int, i: int) -> dict:
        """``{"cpu": x, j: y, ...}`` for the non-zero entries of one row."""
        out = {}
        if self.phi_cpu[s, i] != 0:
            out["cpu"] = float(self.phi_cpu[s, i])
        for e in inst.graph.out_edges(i):
            v = self.phi_link[s, e]
            if v != 0:
                out[int(inst.graph.dst[e])] = float(v)
        return out

    def set_row(self, inst: Instance, s: int, i: int, row: dict):
        self.phi_cpu[s, i] = 0.0
        self.phi_link[s, inst.graph.out_edges(i)] = 0.0
        for key, v in row.items():
            if key == "cpu":
                self.phi_cpu[s, i] = v
            else:
                self.phi_link[s, inst.graph.edge_id(i, int(key))] = v


@dataclass(eq=False)
class FlowState:
    t: np.ndarray
    f: np.ndarray
    g: np.ndarray
    F: np.ndarray
    G: np.ndarray
    order: np.ndarray


@dataclass
class ValidationReport:
    simplex: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    cpu: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    inactive: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not (self.simplex or self.cpu or self.bounds or self.inactive)

    @property
    def loop_free(self) -> bool:
        return not self.loops

    @property
    def ok(self) -> bool:
        return self.feasible and self.loop_free

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "simplex": self.simplex,
            "loops": self.loops,
            "cpu": self.cpu,
            "bounds": self.bounds,
            "inactive": self.inactive,
        }


def validate_strategy(inst: Instance, strat: Strategy, eps: float = EPS_PHI,
                      row_tol: float = ROW_TOL) -> ValidationReport:
    """Check the simplex constraint, loop-freedom and CPU capability."""
    rep = ValidationReport()
    if strat.phi_cpu.shape != (inst.S, inst.n) or strat.phi_link.shape != (
        inst.S, inst.graph.edge_count
    ):
        raise ValidationError("strategy shape does not match the instance")
    sums = strat.row_sums(inst)
    target = inst.row_target()
    for s, i in zip(*np.nonzero(np.abs(sums - target) > row_tol)):
        rep.simplex.append({"node": int(i), "stage": inst.stage_label(s),
                            "sum": float(sums[s, i]), "expected": float(target[s, i])})
    for s, i in zip(*np.nonzero((strat.phi_cpu > 0) & ~inst.cpu_ok)):
        rep.cpu.append({"node": int(i), "stage": inst.stage_label(s),
                        "value": float(strat.phi_cpu[s, i])})
    for arr, what in ((strat.phi_cpu, "cpu"), (strat.phi_link, "link")):
        bad = (arr < 0) | (arr > 1) | ~np.isfinite(arr)
        for s, x in zip(*np.nonzero(bad)):
            rep.bounds.append({"stage": inst.stage_label(s), what: int(x), "value": float(arr[s, x])})
    off = ~inst.active
    if off.any():
        for s, e in zip(*np.nonzero(strat.phi_link[:, off] > 0)):
            edge = int(np.flatnonzero(off)[e])
            rep.inactive.append({"stage": inst.stage_label(s), "edge": inst.graph.edges[edge].tolist()})
    g = inst.graph
    cyc = K.stage_cycles(g.node_count, g.dst, g.out_ptr, g.out_edge, strat.phi_link > eps)
    rep.loops = [inst.stage_label(s) for s in np.flatnonzero(cyc)]
    return rep


def solve_traffic(inst: Instance, strat: Strategy) -> FlowState:
    """Traffic, link/CPU flows and aggregate loads for a loop-free strategy."""
    g = inst.graph
    t, f, gc, order, bad = K.traffic_sweep(
        g.node_count, g.dst, g.out_ptr, g.out_edge, inst.stage_prev, inst.inject,
        strat.phi_cpu, strat.phi_link,
    )
    if bad >= 0:
        raise LoopError(inst.stage_label(bad))
    F = inst.stage_L @ f
    with np.errstate(invalid="ignore"):
        G = np.where(gc > 0, inst.stage_w * gc, 0.0).sum(axis=0)
    return FlowState(t, f, gc, F, G, order)


def strategy_cost(inst: Instance, strat: Strategy) -> float:
    fs = solve_traffic(inst, strat)
    return inst.costs.total(fs.F, fs.G)
