"""Joint forwarding and computation offloading for service-chain traffic.

Set ``CECFLOW_NUMBA=0`` before import to run the kernels as plain Python.
"""
from .baselines import (BaselineResult, OracleResult, frank_wolfe_oracle, lcof, lpr_sc,
                        run_baseline, spoc)
from .broadcast import RoundLog, broadcast_marginals
from .cost import CostFn, CostModel, linear, queue, total_cost
from .errors import (CecflowError, ConvergenceError, DeadlockError, InfeasibleError, LoopError,
                     OrderingError, SaturationError, ValidationError)
from .gp import (GPParams, GPState, LinkAdd, LinkRemove, NodeAdd, RateChange, Trajectory,
                 apply_event, compute_blocked_sets, gp_step, run_gp)
from .harness import compare, hopcount_experiment, rate_sweep_experiment
from .marginal import MarginalState, compute_marginals
from .model import (Application, FlowState, Instance, NetworkGraph, Strategy, solve_traffic,
                    strategy_cost, validate_strategy)
from .optimality import build_degenerate_instance, check_kkt, check_sufficiency
from .routing import initial_strategy
from .scenarios import ScenarioConfig, generate, preset, sweep

__version__ = "0.1.0"
