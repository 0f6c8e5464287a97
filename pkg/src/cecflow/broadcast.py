"""Round-synchronous simulation of the upstream marginal-cost broadcast.

For every application the protocol runs one phase per stage, from the
final stage down to stage 0. In a phase, a node waits for a message from
each downstream neighbour it forwards to, computes its own dD/dt, then
sends it to each upstream neighbour that forwards to it. A message sent in
round r is consumed in round r + 1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DeadlockError
from .marginal import MarginalState, assemble
from .model import FlowState, Instance, Strategy


@dataclass
class RoundLog:
    rows: list = field(default_factory=list)  # (app, k, round, messages)
    completion: dict = field(default_factory=dict)  # (app, k) -> last round

    @property
    def messages(self) -> int:
        return sum(r[3] for r in self.rows)

    def messages_for(self, app_id) -> int:
        return sum(r[3] for r in self.rows if r[0] == app_id)

    def app_completion(self, app_id) -> int:
        """Rounds until every phase of ``app_id`` is done (phases run back to back)."""
        return sum(v + 1 for (a, _), v in self.completion.items() if a == app_id)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["app", "phase", "round", "messages"])
            w.writerows(self.rows)


def broadcast_marginals(inst: Instance, strat: Strategy, fs: FlowState):
    """Same numbers as ``compute_marginals``, produced by message passing.

    Returns ``(MarginalState, RoundLog)``. Raises ``DeadlockError`` if some
    node never hears from all of its downstream neighbours.
    """
    g = inst.graph
    n = g.node_count
    Dp = np.asarray(inst.costs.marginal_link(fs.F), dtype=float)
    Cp = np.asarray(inst.costs.marginal_node(fs.G), dtype=float)
    dDdt = np.zeros((inst.S, n))
    dcpu = np.full((inst.S, n), np.inf)
    log = RoundLog()
    out_lists = [g.out_edges(i) for i in range(n)]
    in_lists = [g.in_edges(i) for i in range(n)]

    for s in range(inst.S - 1, -1, -1):
        app_id, k = inst.stage_label(s)
        nxt = inst.stage_next[s]
        Ls = inst.stage_L[s]
        on = strat.phi_link[s] > 0
        if nxt >= 0:
            w = inst.stage_w[s]
            ok = np.isfinite(w)
            with np.errstate(invalid="ignore"):
                c = np.where(w == 0, 0.0, w * Cp)
            dcpu[s, ok] = c[ok] + dDdt[nxt, ok]

        need = np.array([int(on[out_lists[i]].sum()) for i in range(n)])
        got = np.zeros(n, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        ready = [i for i in range(n) if need[i] == 0]
        rnd = 0
        while ready:
            sent = 0
            arriving = []
            for i in ready:
                acc = 0.0
                pc = strat.phi_cpu[s, i]
                if pc > 0.0:
                    acc += pc * dcpu[s, i]
                for e in out_lists[i]:
                    ph = strat.phi_link[s, e]
                    if ph > 0.0:
                        lc = 0.0 if Ls == 0.0 else Ls * Dp[e]
                        acc += ph * (lc + dDdt[s, g.dst[e]])
                dDdt[s, i] = acc
                done[i] = True
                for e in in_lists[i]:
                    if on[e]:
                        sent += 1
                        arriving.append(int(g.src[e]))
            log.rows.append((app_id, k, rnd, sent))
            log.completion[(app_id, k)] = rnd
            ready = []
            for u in arriving:
                got[u] += 1
                if got[u] == need[u] and not done[u]:
                    ready.append(u)
            ready.sort()
            rnd += 1
        if not done.all():
            raise DeadlockError(app_id, k, set(np.flatnonzero(~done).tolist()))

    with np.errstate(invalid="ignore"):
        lc = np.where(inst.stage_L[:, None] == 0, 0.0, inst.stage_L[:, None] * Dp[None, :])
    dlink = lc + dDdt[:, g.dst]
    return assemble(inst, fs, dDdt, dcpu, dlink, Dp, Cp), log
