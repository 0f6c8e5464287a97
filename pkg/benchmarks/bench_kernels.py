"""Time each hot kernel compiled with numba against its plain-Python body.

    python benchmarks/bench_kernels.py [--preset sw-queue] [--repeat 5]

The Python bodies are taken with ``python_version`` in the same process,
so both paths see identical inputs. A full GP run under each path is timed
in a subprocess with ``CECFLOW_NUMBA`` set accordingly.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cecflow import _kernels as K
from cecflow._jit import NUMBA_ENABLED, python_version
from cecflow.gp import TIE, evaluate
from cecflow.model import EPS_PHI
from cecflow.routing import initial_strategy, layered_weights, zero_load_marginals
from cecflow.scenarios import generate, preset


def _best(fn, args, repeat):
    fn(*args)  # warm-up (compilation for the jitted path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(inst):
    g = inst.graph
    state = evaluate(inst, initial_strategy(inst))
    st, fs, ms = state.strategy, state.flows, state.marginals
    Dp, Cp = zero_load_marginals(inst)
    link_w, cpu_w = layered_weights(inst, 0, Dp, Cp)
    frozen = np.zeros((inst.S, inst.n), dtype=bool)
    block = K.blocked_links(g.node_count, g.src, g.dst, g.in_ptr, g.in_edge, st.phi_link,
                            ms.dD_dt, inst.active, TIE)
    return {
        "traffic_sweep": (K.traffic_sweep, (g.node_count, g.dst, g.out_ptr, g.out_edge,
                                            inst.stage_prev, inst.inject, st.phi_cpu, st.phi_link)),
        "marginal_sweep": (K.marginal_sweep, (g.node_count, g.dst, g.out_ptr, g.out_edge,
                                              inst.stage_next, inst.stage_L, inst.stage_w,
                                              st.phi_cpu, st.phi_link, fs.order, ms.link_marginal,
                                              ms.node_marginal)),
        "blocked_links": (K.blocked_links, (g.node_count, g.src, g.dst, g.in_ptr, g.in_edge,
                                            st.phi_link, ms.dD_dt, inst.active, TIE)),
        "gp_update": (K.gp_update, (g.node_count, g.out_ptr, g.out_edge, inst.zero_row, inst.cpu_ok,
                                    frozen, block, st.phi_cpu, st.phi_link, ms.delta_cpu,
                                    ms.delta_link, fs.t, 0.05, True, TIE, EPS_PHI)),
        "layered_tree": (K.layered_tree, (g.node_count, g.src, g.in_ptr, g.in_edge,
                                          inst.apps[0].destination, link_w, cpu_w)),
    }


_GP_SNIPPET = """
import time
from cecflow.gp import run_gp
from cecflow.scenarios import generate, preset
inst = generate(preset({name!r}, seed={seed}))
run_gp(inst)  # warm-up / compile
t0 = time.perf_counter(); tr = run_gp(inst); dt = time.perf_counter() - t0
print(dt, len(tr.records) - 1, tr.cost)
"""


def gp_run(name, seed, numba_on):
    env = dict(os.environ, CECFLOW_NUMBA="1" if numba_on else "0")
    out = subprocess.run([sys.executable, "-c", _GP_SNIPPET.format(name=name, seed=seed)],
                         env=env, capture_output=True, text=True, check=True)
    dt, iters, cost = out.stdout.split()
    return float(dt), int(iters), float(cost)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="sw-queue")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-gp", action="store_true", help="only time individual kernels")
    args = ap.parse_args(argv)
    if not NUMBA_ENABLED:
        sys.exit("numba is disabled (CECFLOW_NUMBA=0); nothing to compare")
    inst = generate(preset(args.preset, seed=args.seed))
    print(f"instance {inst.name}: {inst.n} nodes, {inst.graph.edge_count} links, {inst.S} stages")
    print(f"{'kernel':<16}{'numba [ms]':>12}{'python [ms]':>13}{'speed-up':>10}")
    for name, (fn, fargs) in kernel_cases(inst).items():
        t_jit = _best(fn, fargs, args.repeat)
        t_py = _best(python_version(fn), fargs, max(1, args.repeat // 2))
        print(f"{name:<16}{t_jit * 1e3:>12.3f}{t_py * 1e3:>13.3f}{t_py / t_jit:>9.1f}x")
    if not args.skip_gp:
        jit = gp_run(args.preset, args.seed, True)
        py = gp_run(args.preset, args.seed, False)
        print(f"run_gp ({jit[1]} iterations): numba {jit[0]:.2f}s, python {py[0]:.2f}s, "
              f"speed-up {py[0] / jit[0]:.1f}x, |cost diff| {abs(jit[2] - py[2]):.2e}")


if __name__ == "__main__":
    main()
