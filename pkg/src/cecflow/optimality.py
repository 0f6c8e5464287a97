"""KKT and sufficiency checks, and a degenerate KKT-but-suboptimal instance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import CostModel, linear
from .errors import ValidationError
from .marginal import MarginalState
from .model import EPS_PHI, Application, Instance, NetworkGraph, Strategy

DEFAULT_TOL = 1e-6


@dataclass
class OptimalityReport:
    condition: str
    tol: float
    residual: float
    rows: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return self.residual <= self.tol

    def worst(self):
        return max(self.rows, key=lambda r: r["residual"]) if self.rows else None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "tol": self.tol,
            "satisfied": self.satisfied,
            "residual": self.residual,
            "rows": self.rows,
            "degenerate": self.degenerate,
        }


def row_residuals(inst: Instance, strat: Strategy, cpu_vals, link_vals, eps=EPS_PHI,
                  allowed=None, skip=None):
    """Per-row ``max_{phi > eps}(value) - min(value)``.

    Inactive links count as missing directions. ``allowed`` (S, E) hides
    further links; ``skip`` (S, n) drops whole rows.
    """
    src = inst.graph.src
    link_vals = np.where(inst.active[None, :], link_vals, np.inf)
    if allowed is not None:
        link_vals = np.where(allowed, link_vals, np.inf)
    cpu_vals = np.where(inst.cpu_ok, cpu_vals, np.inf)
    rmin = cpu_vals.copy()
    np.minimum.at(rmin.T, src, link_vals.T)
    with np.errstate(invalid="ignore"):
        res_cpu = np.where(strat.phi_cpu > eps, cpu_vals - rmin, 0.0)
        res_link = np.where(strat.phi_link > eps, link_vals - rmin[:, src], 0.0)
    res = np.nan_to_num(res_cpu, nan=np.inf)
    np.maximum.at(res.T, src, np.nan_to_num(res_link, nan=np.inf).T)
    res[inst.zero_row] = 0.0
    if skip is not None:
        res[skip] = 0.0
    return res


def _report(inst, name, tol, res, degenerate_mask=None):
    rows = []
    for s, i in zip(*np.nonzero(res > 0)):
        rows.append({"node": int(i), "stage": inst.stage_label(s), "residual": float(res[s, i])})
    deg = []
    if degenerate_mask is not None:
        deg = [{"node": int(i), "stage": inst.stage_label(s)} for s, i in zip(*np.nonzero(degenerate_mask))]
    return OptimalityReport(name, tol, float(res.max()) if res.size else 0.0, rows, deg)


def check_kkt(inst: Instance, strat: Strategy, ms: MarginalState, tol=DEFAULT_TOL) -> OptimalityReport:
    """Necessary condition on dD/dphi. Rows without traffic hold vacuously and
    are listed in ``degenerate``."""
    idle = (ms.t <= 0) & ~inst.zero_row
    res = row_residuals(inst, strat, ms.dD_dphi_cpu, ms.dD_dphi_link, skip=idle)
    return _report(inst, "kkt", tol, res, idle)


def check_sufficiency(inst: Instance, strat: Strategy, ms: MarginalState, tol=DEFAULT_TOL,
                      allowed=None, skip=None) -> OptimalityReport:
    """Sufficient condition: the same test on the traffic-free marginals."""
    res = row_residuals(inst, strat, ms.delta_cpu, ms.delta_link, allowed=allowed, skip=skip)
    return _report(inst, "sufficiency", tol, res)


def build_degenerate_instance(rho: float):
    """Four nodes, one single-task application from node 0 to node 3.

    Only node 3 computes and every cost is linear. The returned strategy
    sends data 0 -> 2 -> 3 at cost 1 and satisfies the KKT condition only
    because idle node 1 points at an expensive direct link; the path
    0 -> 1 -> 2 -> 3 costs ``rho``.
    """
    if not 0 < rho < 1:
        raise ValidationError("rho must lie in (0, 1)")
    q = rho / 4.0
    edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
    slopes = [q, 1.0 - 2.0 * q, q, 1.0 - 1.5 * q, q]
    graph = NetworkGraph(4, edges)
    costs = CostModel.from_functions(
        [linear(d) for d in slopes],
        [linear(0.0), linear(0.0), linear(0.0), linear(q)],
    )
    app = Application.from_maps(0, 1, 3, [1.0, 1.0], {0: 1.0}, 4, comp_weight={(3, 0): 1.0})
    inst = Instance(graph, [app], costs, name=f"degenerate-rho{rho:g}")
    strat = Strategy.zeros(inst)
    s0, s1 = inst.stage(0, 0), inst.stage(0, 1)
    for s, rows in (
        (s0, {0: {2: 1.0}, 1: {3: 1.0}, 2: {3: 1.0}, 3: {"cpu": 1.0}}),
        (s1, {0: {1: 1.0}, 1: {2: 1.0}, 2: {3: 1.0}}),
    ):
        for i, row in rows.items():
            strat.set_row(inst, s, i, row)
    return inst, strat
