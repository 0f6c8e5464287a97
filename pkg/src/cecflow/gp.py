"""Distributed gradient projection over forwarding/offloading fractions.

Each slot every node reads the same marginals, blocks directions that
could close a routing loop, and moves mass from directions with larger
modified marginal to the smallest ones. The driver adds a global
backtracking line search on the step size so the cost never goes up.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .broadcast import broadcast_marginals
from .cost import CostModel
from .errors import InfeasibleError, SaturationError, ValidationError
from .marginal import MarginalState, compute_marginals
from .model import (EPS_PHI, Application, FlowState, Instance, NetworkGraph, Strategy,
                    solve_traffic, validate_strategy)
from .optimality import row_residuals
from .routing import initial_strategy

log = logging.getLogger(__name__)

TIE = 1e-12


@dataclass
class GPParams:
    """``alpha`` is the starting step; with ``scaled`` (default) a row with
    traffic ``t`` moves ``alpha * e / t`` of its fraction off a direction whose
    marginal exceeds the row minimum by ``e``, i.e. ``alpha * e`` packets/s."""

    alpha: float = 0.05
    max_iters: int = 20000
    tol: float = 1e-6
    cost_tol: float = 1e-9
    backtracking: bool = True
    scaled: bool = True
    distributed: bool = False
    alpha_growth: float = 1.5
    alpha_max: float = 1e8
    alpha_min: float = 1e-14
    stall_iters: int = 200
    check_invariants: bool = True


@dataclass(eq=False)
class GPState:
    inst: Instance
    strategy: Strategy
    flows: FlowState = None
    marginals: MarginalState = None
    cost: float = float("inf")
    messages: int = 0
    round_log: object = None

    def refresh(self, distributed=False) -> "GPState":
        self.flows = solve_traffic(self.inst, self.strategy)
        self.cost = self.inst.costs.total(self.flows.F, self.flows.G)
        if distributed:
            self.marginals, self.round_log = broadcast_marginals(self.inst, self.strategy, self.flows)
            self.messages = self.round_log.messages
        else:
            self.marginals = compute_marginals(self.inst, self.strategy, self.flows)
            self.messages = int((self.strategy.phi_link > 0).sum())
        return self


def evaluate(inst: Instance, strat: Strategy, distributed=False) -> GPState:
    return GPState(inst, strat).refresh(distributed)


class BlockedSets:
    """Blocked directions per (stage, node), stored as an ``(S, E)`` link mask.

    The CPU is never blocked. Non-neighbours are implicitly blocked.
    """

    def __init__(self, inst: Instance, mask: np.ndarray):
        self.inst = inst
        self.mask = mask

    def nodes(self, s: int, i: int) -> set:
        g = self.inst.graph
        free = {int(g.dst[e]) for e in g.out_edges(i) if not self.mask[s, e]}
        return set(range(self.inst.n)) - free - {i}

    def __contains__(self, key):
        s, i, j = key
        return j in self.nodes(s, i)


def compute_blocked_sets(inst: Instance, strat: Strategy, ms: MarginalState) -> BlockedSets:
    g = inst.graph
    mask = K.blocked_links(g.node_count, g.src, g.dst, g.in_ptr, g.in_edge,
                           strat.phi_link, ms.dD_dt, inst.active, TIE)
    return BlockedSets(inst, mask)


@dataclass
class StepReport:
    moved: np.ndarray
    forced: float
    alpha: float


def gp_step(state: GPState, params: GPParams, alpha=None, blocked=None, frozen=None, allowed=None):
    """One synchronous update of every row. Returns ``(Strategy, StepReport)``.

    ``frozen`` (S, n) rows are left untouched; ``allowed`` (S, E) restricts
    the usable links (baselines use both).
    """
    inst, strat, ms = state.inst, state.strategy, state.marginals
    alpha = params.alpha if alpha is None else alpha
    if blocked is None:
        blocked = compute_blocked_sets(inst, strat, ms)
    mask = blocked.mask if allowed is None else (blocked.mask | ~allowed)
    if frozen is None:
        frozen = np.zeros((inst.S, inst.n), dtype=bool)
    g = inst.graph
    while True:
        cpu, link, moved, forced, bad = K.gp_update(
            g.node_count, g.out_ptr, g.out_edge, inst.zero_row, inst.cpu_ok, frozen, mask,
            strat.phi_cpu, strat.phi_link, ms.delta_cpu, ms.delta_link, state.flows.t,
            float(alpha), bool(params.scaled), TIE, EPS_PHI,
        )
        if bad < 0:
            break
        s, i = divmod(int(bad), inst.n)
        mask = _unstrand(inst, strat, mask, allowed, s, i)
    return Strategy(cpu, link), StepReport(moved, forced, float(alpha))


def _reroute_stranded(state, params, alpha, frozen, allowed):
    """After a topology event, replace each stage that GP cannot repair
    locally with that stage of a fresh loop-free starting strategy."""
    fresh = None
    for _ in range(state.inst.S):
        try:
            gp_step(state, params, alpha, None, frozen, allowed)
            return state
        except _Stranded as exc:
            if frozen is not None or allowed is not None:
                raise
            if fresh is None:
                fresh = initial_strategy(state.inst)
            log.warning("stage %s stranded at node %d; rerouting the stage",
                        state.inst.stage_label(exc.stage), exc.node)
            strat = state.strategy.copy()
            strat.phi_cpu[exc.stage] = fresh.phi_cpu[exc.stage]
            strat.phi_link[exc.stage] = fresh.phi_link[exc.stage]
            state = evaluate(state.inst, strat, params.distributed)
            if not np.isfinite(state.cost):
                state = evaluate(state.inst, fresh, params.distributed)
    return state


class _Stranded(InfeasibleError):
    def __init__(self, msg, stage, node):
        super().__init__(msg)
        self.stage, self.node = stage, node


def _unstrand(inst, strat, mask, allowed, s, i):
    """Unblock links for a row whose every direction is blocked.

    This happens when marginals tie (for example zero-size result packets)
    and the row's only used link has gone down. A link ``i -> j`` is opened
    when ``j`` cannot reach ``i`` over used or open links, which keeps the
    union of both sets acyclic.
    """
    g = inst.graph
    usable = (strat.phi_link[s] > 0) | ~mask[s]
    seen = np.zeros(inst.n, dtype=bool)
    seen[i] = True
    todo = [i]
    while todo:
        v = todo.pop()
        for e in g.in_edges(v):
            u = g.src[e]
            if usable[e] and not seen[u]:
                seen[u] = True
                todo.append(u)
    opened = [e for e in g.out_edges(i) if inst.active[e] and not seen[g.dst[e]]
              and (allowed is None or allowed[s, e])]
    if not opened:
        raise _Stranded(f"node {i} has no usable direction in stage {inst.stage_label(s)}", s, i)
    mask = mask.copy()
    mask[s, opened] = False
    return mask


def sufficiency_residual(state: GPState, allowed=None, frozen=None) -> float:
    res = row_residuals(state.inst, state.strategy, state.marginals.delta_cpu,
                        state.marginals.delta_link, allowed=allowed, skip=frozen)
    return float(res.max()) if res.size else 0.0


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    state: GPState = None
    converged: bool = False
    status: str = ""

    @property
    def strategy(self) -> Strategy:
        return self.state.strategy

    @property
    def cost(self) -> float:
        return self.state.cost

    @property
    def costs(self) -> np.ndarray:
        return np.array([r["cost"] for r in self.records])

    @property
    def residual(self) -> float:
        return self.records[-1]["residual"]

    def to_csv(self, path):
        cols = ["iter", "cost", "residual", "loop_free", "messages"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r["iter"], repr(r["cost"]), repr(r["residual"]),
                            int(r["loop_free"]), r["messages"]])


def _structure(inst, strat):
    rep = validate_strategy(inst, strat)
    row_err = float(np.abs(strat.row_sums(inst) - inst.row_target()).max()) if inst.S else 0.0
    return rep.loop_free, row_err


def run_gp(inst: Instance, params: GPParams | None = None, initial: Strategy | None = None,
           events=None, frozen=None, allowed=None) -> Trajectory:
    """Iterate until the sufficiency residual drops below ``params.tol``.

    ``events`` maps an iteration number to a list of events applied at the
    start of that slot (see ``apply_event``).
    """
    params = params or GPParams()
    events = dict(events or {})
    if events and (frozen is not None or allowed is not None):
        raise ValidationError("events are not supported on restricted runs")
    last_event = max(events, default=-1)
    strat = initial.copy() if initial is not None else initial_strategy(inst)
    state = evaluate(inst, strat, params.distributed)
    if not np.isfinite(state.cost):
        raise SaturationError("initial strategy has infinite cost")
    traj = Trajectory(state=state)
    alpha = params.alpha
    flat = 0
    for it in range(params.max_iters + 1):
        forced_slot = it in events
        if forced_slot:
            for ev in events[it]:
                state = apply_event(state, ev)
            state.refresh(params.distributed)
            if not np.isfinite(state.cost):
                log.warning("strategy saturated after event at iteration %d; re-initialising", it)
                state.strategy = initial_strategy(state.inst)
                state.refresh(params.distributed)
            flat = 0
        res = sufficiency_residual(state, allowed, frozen)
        loop_free, row_err = _structure(state.inst, state.strategy) if params.check_invariants \
            else (True, 0.0)
        traj.records.append({"iter": it, "cost": state.cost, "residual": res, "loop_free": loop_free,
                             "row_error": row_err, "messages": state.messages, "alpha": alpha})
        traj.state = state
        settled = it >= last_event
        if res <= params.tol and settled:
            traj.converged, traj.status = True, "converged"
            break
        if it == params.max_iters:
            traj.status = "max_iters"
            break
        if flat >= params.stall_iters and settled:
            # secondary stop: cost flat and residual no longer shrinking
            before = traj.records[-params.stall_iters - 1]["residual"]
            if res > before * (1 - 1e-3):
                traj.status = "stalled"
                break
            flat = 0
        if forced_slot:
            state = _reroute_stranded(state, params, alpha, frozen, allowed)
        blocked = compute_blocked_sets(state.inst, state.strategy, state.marginals)
        while True:
            new, rep = gp_step(state, params, alpha, blocked, frozen, allowed)
            cand = evaluate(state.inst, new, params.distributed)
            ok = bool(np.isfinite(cand.cost))
            if ok and params.backtracking and not forced_slot and rep.forced == 0.0:
                ok = cand.cost <= state.cost + 1e-13 * max(1.0, abs(state.cost))
            if ok or not params.backtracking or alpha < params.alpha_min:
                break
            alpha *= 0.5
        if not ok:
            traj.status = "stalled"
            break
        drop = state.cost - cand.cost
        flat = flat + 1 if abs(drop) <= params.cost_tol * max(1.0, abs(state.cost)) else 0
        state = cand
        alpha = min(alpha * params.alpha_growth, params.alpha_max)
    return traj


# ---------------------------------------------------------------- events

@dataclass
class RateChange:
    node: int
    app: int
    rate: float


@dataclass
class LinkRemove:
    i: int
    j: int


@dataclass
class LinkAdd:
    i: int
    j: int
    cost: dict = None  # CostFn.to_dict() layout; needed for brand-new links


@dataclass
class NodeAdd:
    edges: list  # [(i, j, cost_dict), ...], each touching the new node
    node_cost: dict = None
    comp_weight: float = 1.0
    seed: int = 0


def apply_event(state: GPState, event) -> GPState:
    """Return a new state with the instance (and strategy shape) updated."""
    inst, strat = state.inst, state.strategy.copy()
    g = inst.graph
    if isinstance(event, RateChange):
        if not 0 <= event.node < inst.n:
            raise ValidationError(f"unknown node {event.node}")
        apps = []
        for a in inst.apps:
            r = a.input_rate.copy()
            if a.id == event.app:
                r[event.node] = event.rate
            apps.append(Application(a.id, a.chain_len, a.destination, a.packet_size, r, a.comp_weight))
        if event.app not in [a.id for a in inst.apps]:
            raise ValidationError(f"unknown application {event.app}")
        new = inst.with_apps(apps)
    elif isinstance(event, LinkRemove):
        if not g.has_edge(event.i, event.j):
            raise ValidationError(f"unknown link ({event.i}, {event.j})")
        new = inst.with_apps(inst.apps)
        new.active[g.edge_id(event.i, event.j)] = False
    elif isinstance(event, LinkAdd):
        if g.has_edge(event.i, event.j):
            new = inst.with_apps(inst.apps)
            new.active[g.edge_id(event.i, event.j)] = True
        else:
            if event.cost is None:
                raise ValidationError("a new link needs cost parameters")
            new, strat = _grow(inst, strat, [(event.i, event.j, event.cost)], None)
    elif isinstance(event, NodeAdd):
        new, strat = _grow(inst, strat, event.edges, event)
    else:
        raise ValidationError(f"unknown event {event!r}")
    return GPState(new, strat)


def _grow(inst: Instance, strat: Strategy, edges, node_event):
    from .cost import CostFn

    n = inst.n + (1 if node_event is not None else 0)
    new_edges = [(int(i), int(j)) for i, j, _ in edges]
    for i, j in new_edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"link ({i}, {j}) references an unknown node")
        if node_event is not None and n - 1 not in (i, j):
            raise ValidationError("edges of an added node must touch it")
    graph = NetworkGraph(n, np.vstack([inst.graph.edges, np.array(new_edges).reshape(-1, 2)]))
    fns = [CostFn.from_dict(c) for _, _, c in edges]
    c = inst.costs
    node_kind, node_param = c.node_kind, c.node_param
    apps = inst.apps
    if node_event is not None:
        nc = CostFn.from_dict(node_event.node_cost or {"kind": "linear", "slope": 0.0})
        node_kind = np.append(node_kind, nc.code)
        node_param = np.append(node_param, nc.param)
        apps = [Application(a.id, a.chain_len, a.destination, a.packet_size,
                            np.append(a.input_rate, 0.0),
                            np.vstack([a.comp_weight, np.full(a.chain_len, node_event.comp_weight)]))
                for a in inst.apps]
    costs = CostModel(np.append(c.link_kind, [f.code for f in fns]),
                      np.append(c.link_param, [f.param for f in fns]), node_kind, node_param)
    new = Instance(graph, apps, costs, np.append(inst.active, np.ones(len(fns), bool)), inst.name)
    phi_cpu = np.zeros((new.S, n))
    phi_cpu[:, :inst.n] = strat.phi_cpu
    phi_link = np.zeros((new.S, graph.edge_count))
    phi_link[:, :inst.graph.edge_count] = strat.phi_link
    out = Strategy(phi_cpu, phi_link)
    if node_event is not None:
        v = n - 1
        rng = np.random.default_rng(node_event.seed)
        oe = graph.out_edges(v)
        for s in range(new.S):
            if new.zero_row[s, v]:
                continue
            dirs = (1 if new.cpu_ok[s, v] else 0) + len(oe)
            if dirs == 0:
                raise InfeasibleError(f"new node {v} has no direction in stage {new.stage_label(s)}")
            x = rng.dirichlet(np.ones(dirs))
            if new.cpu_ok[s, v]:
                out.phi_cpu[s, v], x = x[0], x[1:]
            out.phi_link[s, oe] = x
            diff = new.row_target()[s, v] - out.row_sums(new)[s, v]
            if new.cpu_ok[s, v]:
                out.phi_cpu[s, v] += diff
            else:
                out.phi_link[s, oe[0]] += diff
    return new, out
