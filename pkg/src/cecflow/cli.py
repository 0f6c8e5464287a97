"""Command-line interface: ``cecflow {gen,run,baseline,check,compare,sweep}``.

Exit code 0 means success. Validation failures exit with 2, saturation
or infeasibility with 3, and non-convergence (including a GP-versus-baseline
ordering violation) with 4.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .baselines import frank_wolfe_oracle, oracle_strategy, run_baseline
from .errors import (CecflowError, ConvergenceError, InfeasibleError, LoopError, OrderingError,
                     ValidationError)
from .gp import GPParams, run_gp
from .harness import (ALL_METHODS, compare, format_table, hopcount_experiment,
                      rate_sweep_experiment)
from .marginal import compute_marginals
from .model import solve_traffic, validate_strategy
from .optimality import check_kkt, check_sufficiency
from .scenarios import AXES, PRESETS, ScenarioConfig, generate, preset

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NOCONV = 0, 2, 3, 4

log = logging.getLogger("cecflow")


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _emit(args, rows, stem: str):
    path = _out(args, f"{stem}.{args.format}")
    text = format_table(rows, args.format)
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    log.info("wrote %s", path)


def _config(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        cfg = ScenarioConfig.from_dict(json.loads(Path(args.config).read_text()))
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise ValidationError("give --preset or --config")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _instance(args):
    if getattr(args, "instance", None):
        return io.read_instance(args.instance)
    return generate(_config(args))


def _params(args) -> GPParams:
    p = GPParams()
    for name in ("alpha", "tol", "max_iters"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(p, name, v)
    if getattr(args, "distributed", False):
        p.distributed = True
    return p


def cmd_gen(args) -> int:
    inst = generate(_config(args))
    path = Path(args.out) if args.out else _out(args, f"{inst.name}.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    io.write_instance(inst, path)
    if args.dot:
        Path(args.dot).write_text(io.to_dot(inst), encoding="utf-8")
    print(f"{path}: {inst.n} nodes, {inst.graph.edge_count} links, {len(inst.apps)} apps")
    return EXIT_OK


def cmd_run(args) -> int:
    inst = _instance(args)
    params = _params(args)
    events = io.read_events(args.events) if args.events else None
    initial = io.read_strategy(inst, args.initial) if args.initial else None
    traj = run_gp(inst, params, initial=initial, events=events)
    final_inst = traj.state.inst
    io.write_strategy(final_inst, traj.strategy, _out(args, "strategy.json"))
    out = Path(args.out) if args.out else _out(args, "trajectory.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    if params.distributed and traj.state.round_log is not None:
        traj.state.round_log.to_csv(_out(args, "round_log.csv"))
    summary = {"instance": final_inst.name, "cost": traj.cost, "residual": traj.residual,
               "iterations": len(traj.records) - 1, "status": traj.status}
    print(format_table([summary], args.format), end="")
    if not traj.converged:
        return EXIT_NOCONV
    return EXIT_OK


def cmd_baseline(args) -> int:
    inst = _instance(args)
    if args.method == "oracle":
        res = frank_wolfe_oracle(inst, gap_tol=args.gap_tol)
        if args.out:
            io.write_strategy(inst, oracle_strategy(inst, res), args.out)
        print(f"oracle cost={res.cost!r} lower={res.lower!r} gap={res.gap!r} "
              f"iterations={res.iterations} max_utilization={res.max_utilization!r}")
        return EXIT_OK if res.converged else EXIT_NOCONV
    res = run_baseline(args.method, inst, _params(args))
    if args.out and res.strategy is not None:
        io.write_strategy(inst, res.strategy, args.out)
    print(f"{res.method} cost={res.cost!r} saturated={res.saturated}")
    if res.saturated:
        return EXIT_INFEASIBLE
    if res.trajectory is not None and not res.trajectory.converged:
        return EXIT_NOCONV
    return EXIT_OK


def cmd_check(args) -> int:
    inst = io.read_instance(args.instance)
    strat = io.read_strategy(inst, args.strategy)
    rep = validate_strategy(inst, strat)
    doc = {"validation": rep.to_dict()}
    code = EXIT_OK
    if rep.ok:
        fs = solve_traffic(inst, strat)
        ms = compute_marginals(inst, strat, fs)
        cost = inst.costs.total(fs.F, fs.G)
        doc["cost"] = cost if np.isfinite(cost) else None
        doc["kkt"] = check_kkt(inst, strat, ms, args.tol).to_dict()
        doc["sufficiency"] = check_sufficiency(inst, strat, ms, args.tol).to_dict()
        if not np.isfinite(cost):
            code = EXIT_INFEASIBLE
    else:
        code = EXIT_INVALID
    print(json.dumps(doc, indent=1, default=str))
    return code


def cmd_compare(args) -> int:
    inst = _instance(args)
    methods = args.methods.split(",") if args.methods else list(ALL_METHODS)
    for m in methods:
        if m not in ALL_METHODS:
            raise ValidationError(f"unknown method {m!r}")
    rows = compare(inst, methods, _params(args))
    _emit(args, rows, "compare")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [float(v) for v in args.values.split(",")] if args.values else []
    if args.axis == "rate-scale":
        methods = args.methods.split(",") if args.methods else list(ALL_METHODS)
        rows = rate_sweep_experiment(cfg, values, methods, _params(args))
        _emit(args, rows, "rate_sweep")
    else:
        rows = hopcount_experiment(cfg, values, _params(args))
        _emit(args, rows, "hopcount")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cecflow", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="scenario seed")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_opts(sp, required=False):
        g = sp.add_mutually_exclusive_group(required=required)
        g.add_argument("--instance", help="instance JSON file")
        g.add_argument("--preset", choices=sorted(PRESETS))
        g.add_argument("--config", help="scenario config JSON")

    def gp_opts(sp):
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iters", type=int)
        sp.add_argument("--distributed", action="store_true",
                        help="compute marginals with the round-based broadcast")

    sp = sub.add_parser("gen", help="generate an instance file")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--config", help="scenario config JSON (fields of ScenarioConfig)")
    sp.add_argument("--out", help="output path (default: OUT_DIR/NAME.json)")
    sp.add_argument("--dot", help="also write the graph in DOT syntax")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("run", help="run gradient projection")
    scenario_opts(sp, required=True)
    gp_opts(sp)
    sp.add_argument("--events", help="JSON list of scripted events")
    sp.add_argument("--initial", help="starting strategy JSON")
    sp.add_argument("--out", help="trajectory CSV path (default: OUT_DIR/trajectory.csv); "
                    "the strategy goes to OUT_DIR/strategy.json")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("baseline", help="run a comparison method or the oracle")
    scenario_opts(sp, required=True)
    gp_opts(sp)
    sp.add_argument("--method", required=True, choices=("spoc", "lcof", "lpr-sc", "oracle"))
    sp.add_argument("--gap-tol", type=float, default=None,
                    help="oracle absolute gap (default 1e-4 x cost)")
    sp.add_argument("--out", help="strategy output path")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("check", help="validate a strategy and test optimality conditions")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--strategy", required=True)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("compare", help="run GP and baselines on one instance")
    scenario_opts(sp, required=True)
    gp_opts(sp)
    sp.add_argument("--methods", help=f"comma list from {','.join(ALL_METHODS)}")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="rate sweep or hop-count experiment")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--config")
    gp_opts(sp)
    sp.add_argument("--axis", choices=AXES, required=True)
    sp.add_argument("--values", default="", help="comma-separated axis values")
    sp.add_argument("--methods", help="methods for the rate sweep")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, LoopError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except InfeasibleError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except (ConvergenceError, OrderingError) as exc:
        log.error("%s", exc)
        return EXIT_NOCONV
    except CecflowError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
