"""Comparison methods and a flow-domain convex oracle.

``spoc``
    Routes every stage along the zero-load shortest-path tree towards the
    destination and optimises only where along that path each task runs.
``lcof``
    Runs every task at the data source and optimises the routing of the
    final result.
``lpr_sc``
    Single-path joint routing and placement on the layered graph, priced
    with zero-load marginals (congestion-blind), evaluated at true cost.
``frank_wolfe_oracle``
    Solves the problem directly in link/CPU flow variables. Its cost is an
    upper bound on the optimum and ``cost - gap`` a lower bound.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import InfeasibleError, SaturationError, ValidationError
from .gp import GPParams, Trajectory, run_gp
from .model import Instance, Strategy, solve_traffic, strategy_cost
from .routing import (Flows, all_or_nothing, app_stages, cancel_cycles, incremental_assignment,
                      initial_strategy, shortest_tree, tree_strategy, zero_load_marginals)

log = logging.getLogger(__name__)

METHODS = ("spoc", "lcof", "lpr-sc")


@dataclass(eq=False)
class BaselineResult:
    method: str
    strategy: Strategy | None
    cost: float
    saturated: bool = False
    trajectory: Trajectory | None = None
    info: dict = field(default_factory=dict)


def _restricted_gp(inst, params, allowed=None, frozen=None, initial=None):
    params = params or GPParams()
    try:
        start = initial if initial is not None else initial_strategy(inst, allowed=allowed)
    except SaturationError:
        return None, None
    if not np.isfinite(strategy_cost(inst, start)):
        return start, None
    traj = run_gp(inst, params, initial=start, frozen=frozen, allowed=allowed)
    return traj.strategy, traj


def _finish(method, inst, strat, traj) -> BaselineResult:
    if strat is None:
        return BaselineResult(method, None, float("inf"), saturated=True)
    cost = traj.cost if traj is not None else strategy_cost(inst, strat)
    return BaselineResult(method, strat, float(cost), saturated=not np.isfinite(cost),
                          trajectory=traj)


# ------------------------------------------------------------------ SPOC

def spoc_mask(inst: Instance) -> np.ndarray:
    """(S, E) mask holding, for each application, its zero-load next-hop tree."""
    Dp, _ = zero_load_marginals(inst)
    g = inst.graph
    mask = np.zeros((inst.S, g.edge_count), dtype=bool)
    with np.errstate(invalid="ignore"):
        w = np.where(inst.active, Dp, np.inf)[None, :]
    for ai, a in enumerate(inst.apps):
        _, succ, _ = K.layered_tree(g.node_count, g.src, g.in_ptr, g.in_edge, a.destination,
                                    np.ascontiguousarray(w), np.zeros((0, g.node_count)))
        hops = succ[0]
        for i in np.flatnonzero(a.input_rate > 0):
            if hops[i] == K.SUCC_NONE:
                raise InfeasibleError(f"app {a.id}: destination unreachable from node {i}")
        tree = hops[hops >= 0]
        mask[app_stages(inst, ai), tree[:, None]] = True
    return mask


def spoc(inst: Instance, params: GPParams | None = None) -> BaselineResult:
    allowed = spoc_mask(inst)
    strat, traj = _restricted_gp(inst, params, allowed=allowed)
    return _finish("spoc", inst, strat, traj)


# ------------------------------------------------------------------ LCOF

def lcof_start(inst: Instance):
    """Strategy computing every task at the source, plus the rows GP may not touch."""
    frozen = np.zeros((inst.S, inst.n), dtype=bool)
    strat = tree_strategy(inst)
    for ai, a in enumerate(inst.apps):
        srcs = np.flatnonzero(a.input_rate > 0)
        bad = srcs[~np.isfinite(a.comp_weight[srcs]).all(axis=1)]
        if bad.size:
            raise InfeasibleError(f"app {a.id}: source {int(bad[0])} cannot run every task")
        sl = app_stages(inst, ai)
        for s in range(sl.start, sl.stop - 1):
            frozen[s] = True
            ok = inst.cpu_ok[s]
            strat.phi_cpu[s, ok] = 1.0
            strat.phi_link[s, ok[inst.graph.src]] = 0.0
    return strat, frozen


def lcof(inst: Instance, params: GPParams | None = None) -> BaselineResult:
    strat, frozen = lcof_start(inst)
    if not np.isfinite(strategy_cost(inst, strat)):
        return BaselineResult("lcof", strat, float("inf"), saturated=True)
    strat, traj = _restricted_gp(inst, params, frozen=frozen, initial=strat)
    return _finish("lcof", inst, strat, traj)


# ---------------------------------------------------------------- LPR-SC

def lpr_sc(inst: Instance, params: GPParams | None = None) -> BaselineResult:
    strat = tree_strategy(inst)
    cost = strategy_cost(inst, strat)
    return BaselineResult("lpr-sc", strat, float(cost), saturated=not np.isfinite(cost))


def run_baseline(method: str, inst: Instance, params: GPParams | None = None) -> BaselineResult:
    fn = {"spoc": spoc, "lcof": lcof, "lpr-sc": lpr_sc}.get(method)
    if fn is None:
        raise ValidationError(f"unknown baseline {method!r}")
    return fn(inst, params)


# ---------------------------------------------------------------- oracle

@dataclass(eq=False)
class OracleResult:
    flows: Flows
    cost: float
    gap: float
    lower: float
    iterations: int
    converged: bool
    max_utilization: float

    @property
    def upper(self) -> float:
        return self.cost


def _line_search(inst, F, G, dF, dG, iters=60):
    c = inst.costs
    return K.segment_min(c.link_kind, c.link_param, F, dF, c.node_kind, c.node_param, G, dG, iters)


def _start_flows(inst: Instance) -> Flows:
    Dp, Cp = zero_load_marginals(inst)
    x = all_or_nothing(inst, Dp, Cp)
    if np.isfinite(x.cost(inst)):
        return x
    for m in (4, 16, 64, 256, 1024):
        try:
            x = incremental_assignment(inst, m)
        except SaturationError:
            continue
        if np.isfinite(x.cost(inst)):
            return x
    raise SaturationError("no finite-cost flow found for the required rates")


def frank_wolfe_oracle(inst: Instance, gap_tol: float | None = None, rel_gap: float = 1e-4,
                       max_iters: int = 200000, step: str = "line",
                       time_limit: float | None = None) -> OracleResult:
    """Frank-Wolfe in flow space.

    Stops once the duality gap is at most ``gap_tol`` (absolute) or, if
    ``gap_tol`` is None, ``rel_gap * cost``. ``step`` is ``"line"`` for
    exact line search or ``"open-loop"`` for ``2 / (t + 2)``.
    """
    import time

    if step not in ("line", "open-loop"):
        raise ValidationError(f"unknown step rule {step!r}")
    if not any((a.input_rate > 0).any() for a in inst.apps):
        f = Flows(np.zeros((inst.S, inst.graph.edge_count)), np.zeros((inst.S, inst.n)))
        cost = f.cost(inst)
        return OracleResult(f, cost, 0.0, cost, 0, True, 0.0)
    x = _start_flows(inst)
    lower = -np.inf
    t0 = time.perf_counter()
    gap = np.inf
    it = 0
    converged = False
    for it in range(max_iters):
        F, G = x.loads(inst)
        cost = inst.costs.total(F, G)
        Dp, Cp = inst.costs.marginal_link(F), inst.costs.marginal_node(G)
        y = all_or_nothing(inst, Dp, Cp)
        Fy, Gy = y.loads(inst)
        dF, dG = Fy - F, Gy - G
        with np.errstate(invalid="ignore"):
            gap = -(np.where(dF != 0, Dp * dF, 0.0).sum() + np.where(dG != 0, Cp * dG, 0.0).sum())
        gap = max(float(gap), 0.0)
        lower = max(lower, cost - gap)
        limit = gap_tol if gap_tol is not None else rel_gap * cost
        if cost - lower <= limit:
            converged = True
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break
        gamma = _line_search(inst, F, G, dF, dG) if step == "line" else 2.0 / (it + 2.0)
        if step == "open-loop":
            while gamma > 0 and not np.isfinite(inst.costs.total(F + gamma * dF, G + gamma * dG)):
                gamma *= 0.5
        x = Flows(x.f + gamma * (y.f - x.f), x.g + gamma * (y.g - x.g))
    F, G = x.loads(inst)
    cost = inst.costs.total(F, G)
    return OracleResult(x, float(cost), float(cost - lower), float(lower), it, converged,
                        float(inst.costs.max_utilization(F, G)))


def oracle_strategy(inst: Instance, res: OracleResult) -> Strategy:
    """Fractions induced by the oracle flows after removing circulations."""
    flows = cancel_cycles(inst, res.flows, tol=1e-12)
    from .routing import flows_to_strategy
    strat = flows_to_strategy(inst, flows, tree_strategy(inst))
    solve_traffic(inst, strat)
    return strat
