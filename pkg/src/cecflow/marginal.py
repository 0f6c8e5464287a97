"""Marginal costs: dD/dt, modified marginals (delta) and dD/dphi."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import LoopError
from .model import FlowState, Instance, Strategy


@dataclass(eq=False)
class MarginalState:
    """``delta_cpu[s, i]`` / ``delta_link[s, e]`` are the traffic-free marginals
    of each direction; ``dD_dphi_*`` the same scaled by the row traffic."""

    dD_dt: np.ndarray
    delta_cpu: np.ndarray
    delta_link: np.ndarray
    dD_dphi_cpu: np.ndarray
    dD_dphi_link: np.ndarray
    link_marginal: np.ndarray
    node_marginal: np.ndarray
    t: np.ndarray

    def row_deltas(self, inst: Instance, s: int, i: int) -> dict:
        out = {"cpu": float(self.delta_cpu[s, i])}
        for e in inst.graph.out_edges(i):
            out[int(inst.graph.dst[e])] = float(self.delta_link[s, e])
        return out


def _scale_by_traffic(t_rows, delta):
    with np.errstate(invalid="ignore"):
        return np.where(t_rows > 0, t_rows * delta, 0.0)


def assemble(inst: Instance, fs: FlowState, dDdt, dcpu, dlink, Dp, Cp) -> MarginalState:
    t_link = fs.t[:, inst.graph.src]
    return MarginalState(
        dDdt, dcpu, dlink,
        _scale_by_traffic(fs.t, dcpu),
        _scale_by_traffic(t_link, dlink),
        Dp, Cp, fs.t,
    )


def compute_marginals(inst: Instance, strat: Strategy, fs: FlowState) -> MarginalState:
    """Centralised reverse sweep over each stage's topological order."""
    if (fs.order < 0).any():
        bad = int(np.flatnonzero((fs.order < 0).any(axis=1))[0])
        raise LoopError(inst.stage_label(bad))
    g = inst.graph
    Dp = np.asarray(inst.costs.marginal_link(fs.F), dtype=float)
    Cp = np.asarray(inst.costs.marginal_node(fs.G), dtype=float)
    dDdt, dcpu, dlink = K.marginal_sweep(
        g.node_count, g.dst, g.out_ptr, g.out_edge, inst.stage_next, inst.stage_L,
        inst.stage_w, strat.phi_cpu, strat.phi_link, fs.order, Dp, Cp,
    )
    return assemble(inst, fs, dDdt, dcpu, dlink, Dp, Cp)
