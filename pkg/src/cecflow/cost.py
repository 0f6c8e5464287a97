"""Convex, increasing link and CPU cost functions.

Two kinds are supported, encoded as small integers so they can travel
through the numba kernels as plain arrays:

* ``linear``: ``D(F) = d * F``
* ``queue``:  ``D(F) = F / (mu - F)`` (M/M/1 occupancy), ``+inf`` once ``F >= mu``

``+inf`` is the saturation sentinel. It is never turned into NaN: every
helper here treats ``0 * inf`` as 0 when the load coefficient is zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LINEAR = 0
QUEUE = 1

KIND_CODES = {"linear": LINEAR, "queue": QUEUE}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

INF = float("inf")


@dataclass(frozen=True)
class CostFn:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not np.isfinite(self.param) or self.param < 0:
            raise ValueError(f"cost parameter must be finite and >= 0, got {self.param}")
        if self.kind == "queue" and self.param <= 0:
            raise ValueError("queue capacity must be positive")

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    def evaluate(self, load):
        return cost_values(self.code, self.param, load)

    def derivative(self, load):
        return cost_derivatives(self.code, self.param, load)

    def to_dict(self) -> dict:
        key = "mu" if self.kind == "queue" else "slope"
        return {"kind": self.kind, key: self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "CostFn":
        kind = d["kind"]
        if kind == "queue":
            return cls("queue", float(d["mu"]))
        if kind == "linear":
            return cls("linear", float(d.get("slope", d.get("d", 0.0))))
        raise ValueError(f"unknown cost kind {kind!r}")


def linear(slope: float) -> CostFn:
    return CostFn("linear", float(slope))


def queue(mu: float) -> CostFn:
    return CostFn("queue", float(mu))


def cost_values(kind, param, load):
    """Elementwise cost. Arguments broadcast against each other."""
    kind, param, load = np.broadcast_arrays(
        np.asarray(kind), np.asarray(param, dtype=float), np.asarray(load, dtype=float)
    )
    out = np.where(kind == LINEAR, param * load, 0.0)
    q = kind == QUEUE
    if q.any():
        mu, x = param[q], load[q]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(x < mu, x / (mu - x), INF)
        out = out.astype(float)
        out[q] = v
    return out if out.ndim else float(out)


def cost_derivatives(kind, param, load):
    """Elementwise first derivative, ``+inf`` at or above capacity."""
    kind, param, load = np.broadcast_arrays(
        np.asarray(kind), np.asarray(param, dtype=float), np.asarray(load, dtype=float)
    )
    out = np.where(kind == LINEAR, param, 0.0).astype(float)
    q = kind == QUEUE
    if q.any():
        mu, x = param[q], load[q]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[q] = np.where(x < mu, mu / (mu - x) ** 2, INF)
    return out if out.ndim else float(out)


def utilization(kind, param, load):
    """Load over capacity for queue components, 0 for linear ones."""
    kind, param, load = np.broadcast_arrays(
        np.asarray(kind), np.asarray(param, dtype=float), np.asarray(load, dtype=float)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(kind == QUEUE, load / np.where(param > 0, param, 1.0), 0.0)


@dataclass(eq=False)
class CostModel:
    """Per-link ``D_ij`` and per-node ``C_i`` parameters as parallel arrays."""

    link_kind: np.ndarray
    link_param: np.ndarray
    node_kind: np.ndarray
    node_param: np.ndarray

    def __post_init__(self):
        self.link_kind = np.asarray(self.link_kind, dtype=np.int64)
        self.link_param = np.asarray(self.link_param, dtype=float)
        self.node_kind = np.asarray(self.node_kind, dtype=np.int64)
        self.node_param = np.asarray(self.node_param, dtype=float)

    @classmethod
    def from_functions(cls, link_fns, node_fns) -> "CostModel":
        return cls(
            [c.code for c in link_fns],
            [c.param for c in link_fns],
            [c.code for c in node_fns],
            [c.param for c in node_fns],
        )

    def link(self, e: int) -> CostFn:
        return CostFn(KIND_NAMES[int(self.link_kind[e])], float(self.link_param[e]))

    def node(self, i: int) -> CostFn:
        return CostFn(KIND_NAMES[int(self.node_kind[i])], float(self.node_param[i]))

    def link_costs(self, F):
        return cost_values(self.link_kind, self.link_param, F)

    def node_costs(self, G):
        return cost_values(self.node_kind, self.node_param, G)

    def marginal_link(self, F):
        return cost_derivatives(self.link_kind, self.link_param, F)

    def marginal_node(self, G):
        return cost_derivatives(self.node_kind, self.node_param, G)

    def total(self, F, G) -> float:
        """``sum D_ij(F_ij) + sum C_i(G_i)``; ``+inf`` if anything saturates."""
        d = np.asarray(self.link_costs(F), dtype=float)
        c = np.asarray(self.node_costs(G), dtype=float)
        if np.isinf(d).any() or np.isinf(c).any():
            return INF
        return float(d.sum() + c.sum())

    def max_utilization(self, F, G) -> float:
        u = np.concatenate(
            [
                np.atleast_1d(utilization(self.link_kind, self.link_param, F)),
                np.atleast_1d(utilization(self.node_kind, self.node_param, G)),
            ]
        )
        return float(u.max()) if u.size else 0.0


def total_cost(flow_state, cost_model: CostModel) -> float:
    return cost_model.total(flow_state.F, flow_state.G)


def marginal_link(cost_model: CostModel, edge: int, F: float) -> float:
    return float(cost_model.link(edge).derivative(F))


def marginal_node(cost_model: CostModel, node: int, G: float) -> float:
    return float(cost_model.node(node).derivative(G))
