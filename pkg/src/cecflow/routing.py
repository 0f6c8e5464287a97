"""Layered (node, stage) shortest paths and flow-domain helpers.

The layered graph of application ``a`` has one copy of the network per
stage ``k = 0..K``. Inside layer ``k`` an edge costs ``L[k] * D'_ij``; the
jump from layer ``k`` to ``k+1`` at node ``i`` costs ``w_i(a,k) * C'_i``.
A shortest path from a source in layer 0 to ``(d_a, K)`` is a route plus a
placement for every task.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import InfeasibleError, SaturationError
from .model import Instance, Strategy, solve_traffic

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Tree:
    dist: np.ndarray
    succ: np.ndarray
    settle: np.ndarray


@dataclass(eq=False)
class Flows:
    """Flow-domain point: ``f[s, e]`` link rates and ``g[s, i]`` CPU rates."""

    f: np.ndarray
    g: np.ndarray

    def loads(self, inst: Instance):
        F = inst.stage_L @ self.f
        with np.errstate(invalid="ignore"):
            G = np.where(self.g > 0, inst.stage_w * self.g, 0.0).sum(axis=0)
        return F, G

    def cost(self, inst: Instance) -> float:
        return inst.costs.total(*self.loads(inst))

    def copy(self) -> "Flows":
        return Flows(self.f.copy(), self.g.copy())


def app_stages(inst: Instance, ai: int) -> slice:
    first = inst.stage(inst.apps[ai].id, 0)
    return slice(first, first + inst.apps[ai].chain_len + 1)


def layered_weights(inst: Instance, ai: int, Dp, Cp, allowed=None):
    """Per-layer link and CPU weights; ``allowed`` is an optional (S, E) mask."""
    a = inst.apps[ai]
    L = a.packet_size
    with np.errstate(invalid="ignore"):
        link_w = np.where(L[:, None] == 0, 0.0, L[:, None] * Dp[None, :])
        link_w[:, ~inst.active] = np.inf
        if allowed is not None:
            link_w[~allowed[app_stages(inst, ai)]] = np.inf
        w = a.comp_weight.T
        cpu_w = np.where(w == 0, 0.0, w * Cp[None, :])
    cpu_w = np.where(np.isnan(cpu_w), np.inf, cpu_w)
    return np.ascontiguousarray(link_w), np.ascontiguousarray(cpu_w)


def shortest_tree(inst: Instance, ai: int, Dp, Cp, allowed=None) -> Tree:
    g = inst.graph
    link_w, cpu_w = layered_weights(inst, ai, Dp, Cp, allowed)
    dist, succ, settle = K.layered_tree(
        g.node_count, g.src, g.in_ptr, g.in_edge, inst.apps[ai].destination, link_w, cpu_w
    )
    return Tree(dist, succ, settle)


def zero_load_marginals(inst: Instance):
    E, n = inst.graph.edge_count, inst.n
    return inst.costs.marginal_link(np.zeros(E)), inst.costs.marginal_node(np.zeros(n))


def tree_rows(inst: Instance, ai: int, tree: Tree, strat: Strategy, only=None):
    """Write one-hot rows following ``tree`` into ``strat`` for app ``ai``.

    ``only`` optionally restricts the rows written (bool mask ``(K+1, n)``).
    """
    sl = app_stages(inst, ai)
    for k, s in enumerate(range(sl.start, sl.stop)):
        for i in range(inst.n):
            if only is not None and not only[k, i]:
                continue
            sc = tree.succ[k, i]
            if sc == K.SUCC_SINK:
                continue
            if sc == K.SUCC_NONE:
                raise InfeasibleError(
                    f"node {i} cannot reach destination of app {inst.apps[ai].id} from stage {k}"
                )
            strat.phi_cpu[s, i] = 0.0
            strat.phi_link[s, inst.graph.out_edges(i)] = 0.0
            if sc == K.SUCC_CPU:
                strat.phi_cpu[s, i] = 1.0
            else:
                strat.phi_link[s, sc] = 1.0


def tree_strategy(inst: Instance, Dp=None, Cp=None, allowed=None) -> Strategy:
    if Dp is None:
        Dp, Cp = zero_load_marginals(inst)
    strat = Strategy.zeros(inst)
    for ai in range(len(inst.apps)):
        tree_rows(inst, ai, shortest_tree(inst, ai, Dp, Cp, allowed), strat)
    return strat


def all_or_nothing(inst: Instance, Dp, Cp, scale: float = 1.0, allowed=None) -> Flows:
    """Route every application's input along its layered shortest-path tree."""
    out = Flows(np.zeros((inst.S, inst.graph.edge_count)), np.zeros((inst.S, inst.n)))
    for ai, a in enumerate(inst.apps):
        tree = shortest_tree(inst, ai, Dp, Cp, allowed)
        f, g, stranded = K.tree_load(inst.n, inst.graph.dst, tree.succ, tree.settle,
                                     a.input_rate * scale)
        if stranded > 0:
            raise InfeasibleError(f"app {a.id}: input cannot reach its destination")
        sl = app_stages(inst, ai)
        out.f[sl] += f
        out.g[sl] += g
    return out


def incremental_assignment(inst: Instance, increments: int, allowed=None) -> Flows:
    """Load the network in ``increments`` equal slices, re-pricing links and
    CPUs at the current loads before each slice."""
    flows = Flows(np.zeros((inst.S, inst.graph.edge_count)), np.zeros((inst.S, inst.n)))
    share = 1.0 / increments
    for _ in range(increments):
        for ai, a in enumerate(inst.apps):
            F, G = flows.loads(inst)
            Dp, Cp = inst.costs.marginal_link(F), inst.costs.marginal_node(G)
            tree = shortest_tree(inst, ai, Dp, Cp, allowed)
            f, g, stranded = K.tree_load(inst.n, inst.graph.dst, tree.succ, tree.settle,
                                         a.input_rate * share)
            if stranded > 0:
                raise SaturationError(f"app {a.id}: no unsaturated route left")
            sl = app_stages(inst, ai)
            flows.f[sl] += f
            flows.g[sl] += g
    return flows


def cancel_cycles(inst: Instance, flows: Flows, tol: float = 0.0) -> Flows:
    """Remove circulations stage by stage. Loads only go down."""
    import networkx as nx

    g = inst.graph
    out = flows.copy()
    for s in range(inst.S):
        fs = out.f[s]
        while True:
            on = np.flatnonzero(fs > tol)
            if on.size == 0:
                break
            dg = nx.DiGraph()
            for e in on:
                dg.add_edge(int(g.src[e]), int(g.dst[e]), e=int(e))
            try:
                cyc = nx.find_cycle(dg)
            except nx.NetworkXNoCycle:
                break
            ids = [dg.edges[u, v]["e"] for u, v in cyc]
            amt = fs[ids].min()
            fs[ids] -= amt
            for e in ids:
                if fs[e] <= tol:
                    fs[e] = 0.0
    return out


def flows_to_strategy(inst: Instance, flows: Flows, fallback: Strategy) -> Strategy:
    """``phi = flow / outflow`` where a node carries traffic, else ``fallback``."""
    g = inst.graph
    strat = fallback.copy()
    tout = flows.g.copy()
    np.add.at(tout.T, g.src, flows.f.T)
    busy = (tout > 0) & ~inst.zero_row
    s_idx, i_idx = np.nonzero(busy)
    for s, i in zip(s_idx, i_idx):
        strat.phi_cpu[s, i] = flows.g[s, i] / tout[s, i]
        oe = g.out_edges(i)
        strat.phi_link[s, oe] = flows.f[s, oe] / tout[s, i]
    return strat


def initial_strategy(inst: Instance, increments=(4, 16, 64, 256), allowed=None) -> Strategy:
    """Loop-free feasible strategy with finite cost.

    First tries the zero-load layered shortest-path tree. If that saturates
    something, the load is spread with incremental assignment at growing
    resolution, circulations are cancelled and the flows converted to
    fractions; idle rows keep the zero-load tree.
    """
    base = tree_strategy(inst, allowed=allowed)
    fs = solve_traffic(inst, base)
    if np.isfinite(inst.costs.total(fs.F, fs.G)):
        return base
    for m in increments:
        try:
            flows = incremental_assignment(inst, m, allowed)
        except SaturationError:
            continue
        if not np.isfinite(flows.cost(inst)):
            continue
        flows = cancel_cycles(inst, flows)
        strat = flows_to_strategy(inst, flows, base)
        fs = solve_traffic(inst, strat)
        if np.isfinite(inst.costs.total(fs.F, fs.G)):
            log.debug("initial strategy from %d-slice incremental assignment", m)
            return strat
    raise SaturationError("no finite-cost initial strategy found")
