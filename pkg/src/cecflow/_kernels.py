"""Inner loops over (stage, node, edge).

Every kernel is written against plain numpy arrays so it runs unchanged
with or without numba (see ``_jit``). Conventions shared by all kernels:

* stages are ordered by application, then by ``k`` ascending, so
  ``prev[s] == s - 1`` and ``nxt[s] == s + 1`` inside one application;
* edges are indexed ``0..E-1`` with ``src``/``dst`` arrays and CSR
  adjacency (``out_ptr``/``out_edge``, ``in_ptr``/``in_edge``);
* a fraction counts as "on" when it is strictly positive.
"""
import numpy as np

from ._jit import njit

INF = np.inf

# successor codes used by layered_tree
SUCC_CPU = -1
SUCC_NONE = -2
SUCC_SINK = -3


@njit
def traffic_sweep(n, dst, out_ptr, out_edge, prev, inject, phi_cpu, phi_link):
    """Exact traffic fixed point, one topological sweep per stage.

    Returns ``(t, f, g, order, bad)``; ``bad`` is the first stage whose
    positive-fraction subgraph has a cycle, or -1.
    """
    S = phi_cpu.shape[0]
    E = dst.shape[0]
    t = np.zeros((S, n))
    f = np.zeros((S, E))
    g = np.zeros((S, n))
    order = np.full((S, n), -1, dtype=np.int64)
    indeg = np.zeros(n, dtype=np.int64)
    stack = np.zeros(n, dtype=np.int64)
    for s in range(S):
        p = prev[s]
        for i in range(n):
            indeg[i] = 0
            if p < 0:
                t[s, i] = inject[s, i]
            else:
                t[s, i] = g[p, i]
        for e in range(E):
            if phi_link[s, e] > 0.0:
                indeg[dst[e]] += 1
        top = 0
        for i in range(n - 1, -1, -1):
            if indeg[i] == 0:
                stack[top] = i
                top += 1
        cnt = 0
        while top > 0:
            top -= 1
            i = stack[top]
            order[s, cnt] = i
            cnt += 1
            ti = t[s, i]
            g[s, i] = ti * phi_cpu[s, i]
            for q in range(out_ptr[i], out_ptr[i + 1]):
                e = out_edge[q]
                ph = phi_link[s, e]
                if ph > 0.0:
                    j = dst[e]
                    f[s, e] = ti * ph
                    t[s, j] += f[s, e]
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        stack[top] = j
                        top += 1
        if cnt < n:
            return t, f, g, order, s
    return t, f, g, order, -1


@njit
def marginal_sweep(n, dst, out_ptr, out_edge, nxt, L, w, phi_cpu, phi_link, order, Dp, Cp):
    """Reverse sweep for dD/dt and the modified marginals.

    ``delta_cpu`` is ``+inf`` where the CPU direction does not exist
    (final stage, or ``w == inf``). ``delta_link`` is filled for every edge.
    """
    S = phi_cpu.shape[0]
    E = dst.shape[0]
    dDdt = np.zeros((S, n))
    dcpu = np.full((S, n), INF)
    dlink = np.full((S, E), INF)
    for s in range(S - 1, -1, -1):
        k1 = nxt[s]
        Ls = L[s]
        for i in range(n):
            if k1 >= 0:
                wi = w[s, i]
                if wi < INF:
                    c = 0.0 if wi == 0.0 else wi * Cp[i]
                    dcpu[s, i] = c + dDdt[k1, i]
        # dD/dt needs only downstream nodes on positive edges: reverse topo order
        for pos in range(n - 1, -1, -1):
            i = order[s, pos]
            acc = 0.0
            pc = phi_cpu[s, i]
            if pc > 0.0:
                acc += pc * dcpu[s, i]
            for q in range(out_ptr[i], out_ptr[i + 1]):
                e = out_edge[q]
                ph = phi_link[s, e]
                if ph > 0.0:
                    lc = 0.0 if Ls == 0.0 else Ls * Dp[e]
                    acc += ph * (lc + dDdt[s, dst[e]])
            dDdt[s, i] = acc
        for e in range(E):
            lc = 0.0 if Ls == 0.0 else Ls * Dp[e]
            dlink[s, e] = lc + dDdt[s, dst[e]]
    return dDdt, dcpu, dlink


@njit
def blocked_links(n, src, dst, in_ptr, in_edge, phi_link, dDdt, active, tie):
    """Blocked-direction mask, shape ``(S, E)``.

    A link with positive fraction is never blocked here (it can only shrink
    through the regular update), except when it is inactive. A currently
    unused link (i, j) is blocked when ``dDdt[j]`` is not strictly below
    ``dDdt[i]`` or when ``j`` reaches an improper link on positive edges.
    """
    S = phi_link.shape[0]
    E = src.shape[0]
    block = np.zeros((S, E), dtype=np.bool_)
    tainted = np.zeros(n, dtype=np.bool_)
    stack = np.zeros(n, dtype=np.int64)
    for s in range(S):
        for i in range(n):
            tainted[i] = False
        top = 0
        for e in range(E):
            if phi_link[s, e] > 0.0:
                p = src[e]
                a = dDdt[s, p]
                tol = tie * max(1.0, abs(a))
                if dDdt[s, dst[e]] >= a - tol and not tainted[p]:
                    tainted[p] = True
                    stack[top] = p
                    top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            for q in range(in_ptr[p], in_ptr[p + 1]):
                e = in_edge[q]
                if phi_link[s, e] > 0.0:
                    u = src[e]
                    if not tainted[u]:
                        tainted[u] = True
                        stack[top] = u
                        top += 1
        for e in range(E):
            if not active[e]:
                block[s, e] = True
                continue
            if phi_link[s, e] > 0.0:
                continue
            i = src[e]
            j = dst[e]
            a = dDdt[s, i]
            tol = tie * max(1.0, abs(a))
            if tainted[j] or dDdt[s, j] >= a - tol:
                block[s, e] = True
    return block


@njit
def gp_update(n, out_ptr, out_edge, zero_row, cpu_ok, frozen, block,
              phi_cpu, phi_link, dcpu, dlink, t, alpha, scaled, tie, eps):
    """One synchronous gradient-projection update of every row.

    ``scaled`` divides the step by the row traffic (flow-space step);
    otherwise the literal fraction-space step ``min(phi, alpha * e)``.
    Returns ``(phi_cpu, phi_link, moved, forced, bad_row)`` where ``bad_row``
    is ``s * n + i`` of the first row without a usable direction, or -1.
    """
    S = phi_cpu.shape[0]
    new_cpu = phi_cpu.copy()
    new_link = phi_link.copy()
    moved = np.zeros((S, n))
    forced = 0.0
    deg_max = 0
    for i in range(n):
        d = out_ptr[i + 1] - out_ptr[i]
        if d > deg_max:
            deg_max = d
    vals = np.zeros(deg_max + 1)
    deltas = np.zeros(deg_max + 1)
    usable = np.zeros(deg_max + 1, dtype=np.bool_)
    for s in range(S):
        for i in range(n):
            if zero_row[s, i] or frozen[s, i]:
                continue
            a = out_ptr[i]
            deg = out_ptr[i + 1] - a
            # slot 0 is the CPU, slot 1+q the q-th out edge
            vals[0] = phi_cpu[s, i]
            deltas[0] = dcpu[s, i]
            usable[0] = cpu_ok[s, i]
            for q in range(deg):
                e = out_edge[a + q]
                vals[q + 1] = phi_link[s, e]
                deltas[q + 1] = dlink[s, e]
                usable[q + 1] = not block[s, e]
            m = INF
            for q in range(deg + 1):
                if usable[q] and deltas[q] < m:
                    m = deltas[q]
            if not (m < INF):
                return new_cpu, new_link, moved, forced, s * n + i
            tol = tie * max(1.0, abs(m))
            ti = t[s, i]
            mass = 0.0
            nmin = 0
            for q in range(deg + 1):
                v = vals[q]
                if not usable[q]:
                    if v > 0.0:
                        mass += v
                        forced += v
                    vals[q] = 0.0
                    continue
                ex = deltas[q] - m
                if ex <= tol:
                    nmin += 1
                    continue
                if v <= 0.0:
                    continue
                if scaled:
                    if ti > 0.0:
                        amt = alpha * ex / ti
                    else:
                        amt = v
                else:
                    amt = alpha * ex
                if amt >= v or v - amt <= eps:
                    amt = v
                vals[q] = v - amt
                mass += amt
            if mass > 0.0:
                share = mass / nmin
                for q in range(deg + 1):
                    if usable[q] and deltas[q] - m <= tol:
                        vals[q] += share
                # exact re-normalisation onto the largest minimiser
                tot = 0.0
                best = -1
                for q in range(deg + 1):
                    tot += vals[q]
                    if usable[q] and deltas[q] - m <= tol:
                        if best < 0 or vals[q] > vals[best]:
                            best = q
                vals[best] += 1.0 - tot
            moved[s, i] = mass
            new_cpu[s, i] = vals[0]
            for q in range(deg):
                new_link[s, out_edge[a + q]] = vals[q + 1]
    return new_cpu, new_link, moved, forced, -1


@njit
def layered_tree(n, src, in_ptr, in_edge, dest, link_w, cpu_w):
    """Shortest paths to ``(dest, K)`` in the layered (node, stage) graph.

    ``link_w[k, e]`` is the cost of edge ``e`` in layer ``k``; ``cpu_w[k, i]``
    the cost of moving from layer ``k`` to ``k + 1`` at node ``i``.
    Returns ``(dist, succ, settle)``: ``succ`` is an edge id, ``SUCC_CPU``,
    ``SUCC_SINK`` (the destination in the last layer) or ``SUCC_NONE``;
    ``settle[k]`` lists nodes in the order they were finalised (unreached
    entries are -1). Successors always point to earlier-settled nodes, so
    the successor graph is acyclic even with zero-weight edges.
    """
    K1 = link_w.shape[0]
    dist = np.full((K1, n), INF)
    succ = np.full((K1, n), SUCC_NONE, dtype=np.int64)
    settle = np.full((K1, n), -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for k in range(K1 - 1, -1, -1):
        if k == K1 - 1:
            dist[k, dest] = 0.0
            succ[k, dest] = SUCC_SINK
        else:
            for i in range(n):
                c = cpu_w[k, i] + dist[k + 1, i]
                if c < INF:
                    dist[k, i] = c
                    succ[k, i] = SUCC_CPU
        for i in range(n):
            done[i] = False
        for it in range(n):
            best = -1
            bd = INF
            for i in range(n):
                if not done[i] and dist[k, i] < bd:
                    bd = dist[k, i]
                    best = i
            if best < 0:
                break
            done[best] = True
            settle[k, it] = best
            for q in range(in_ptr[best], in_ptr[best + 1]):
                e = in_edge[q]
                u = src[e]
                if done[u]:
                    continue
                c = bd + link_w[k, e]
                if c < dist[k, u]:
                    dist[k, u] = c
                    succ[k, u] = e
    return dist, succ, settle


@njit
def tree_load(n, dst, succ, settle, inject):
    """Push ``inject`` (node rates entering layer 0) down a successor tree.

    Returns ``(f, g, stranded)`` with ``f[k, e]`` link flows and ``g[k, i]``
    CPU flows per layer; ``stranded`` is the rate that met an unreachable
    node.
    """
    K1 = succ.shape[0]
    E = dst.shape[0]
    f = np.zeros((K1, E))
    g = np.zeros((K1, n))
    amt = np.zeros(n)
    stranded = 0.0
    for i in range(n):
        amt[i] = inject[i]
    for k in range(K1):
        if k > 0:
            for i in range(n):
                amt[i] = g[k - 1, i]
        for i in range(n):
            if amt[i] > 0.0 and succ[k, i] == SUCC_NONE:
                stranded += amt[i]
                amt[i] = 0.0
        for pos in range(n - 1, -1, -1):
            i = settle[k, pos]
            if i < 0:
                continue
            a = amt[i]
            if a == 0.0:
                continue
            sc = succ[k, i]
            if sc == SUCC_CPU:
                g[k, i] += a
            elif sc >= 0:
                f[k, sc] += a
                amt[dst[sc]] += a
            amt[i] = 0.0
    return f, g, stranded


@njit
def stage_cycles(n, dst, out_ptr, out_edge, on):
    """Per-stage cycle flag for the subgraph of edges with ``on[s, e]``."""
    S = on.shape[0]
    E = dst.shape[0]
    cyclic = np.zeros(S, dtype=np.bool_)
    indeg = np.zeros(n, dtype=np.int64)
    stack = np.zeros(n, dtype=np.int64)
    for s in range(S):
        for i in range(n):
            indeg[i] = 0
        for e in range(E):
            if on[s, e]:
                indeg[dst[e]] += 1
        top = 0
        for i in range(n):
            if indeg[i] == 0:
                stack[top] = i
                top += 1
        cnt = 0
        while top > 0:
            top -= 1
            i = stack[top]
            cnt += 1
            for q in range(out_ptr[i], out_ptr[i + 1]):
                e = out_edge[q]
                if on[s, e]:
                    j = dst[e]
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        stack[top] = j
                        top += 1
        cyclic[s] = cnt < n
    return cyclic


@njit
def _slope_part(kind, param, x, d, gamma):
    acc = 0.0
    for e in range(x.shape[0]):
        if d[e] == 0.0:
            continue
        if kind[e] == 0:
            acc += param[e] * d[e]
        else:
            y = x[e] + gamma * d[e]
            if y >= param[e]:
                return INF
            r = param[e] - y
            acc += param[e] / (r * r) * d[e]
    return acc


@njit
def segment_min(link_kind, link_param, F, dF, node_kind, node_param, G, dG, iters):
    """Step in ``[0, 1]`` minimising a separable convex cost along
    ``(F, G) + gamma * (dF, dG)``, by bisection on the directional slope.
    Kind codes: 0 linear (``param`` = slope), 1 queue (``param`` = capacity)."""
    s1 = (_slope_part(link_kind, link_param, F, dF, 1.0)
          + _slope_part(node_kind, node_param, G, dG, 1.0))
    if s1 <= 0.0:
        return 1.0
    lo = 0.0
    hi = 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = (_slope_part(link_kind, link_param, F, dF, mid)
             + _slope_part(node_kind, node_param, G, dG, mid))
        if s <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo
