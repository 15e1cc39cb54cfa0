"""Quantile and CVaR objectives for finite Markov decision processes.

The optimal tau-quantile of cumulative reward is computed for every tau at
once by backward induction over value curves ``tau -> v_t(s, tau)``; the
optimal policy acts on the state augmented with a quantile level.
"""

from .baselines import MarkovPolicy, solve_exp_utility, solve_expectation, solve_qbdp
from .chain import ChainParams, gen_chain
from .cvar import CvarPolicy, CvarTable, cvar_act, cvar_solve, cvar_step, tail_integral, tau_grid
from .distributions import (
    DiscreteDistribution,
    StepCurve,
    compress,
    convolve,
    curve_to_dist,
    cvar_of,
    dist_to_curve,
    eval_curve,
    mixture_quantile,
    pointwise_max,
    quantile_of,
)
from .dp import (
    AugmentedState,
    QuantilePolicy,
    SolveOptions,
    ValueTable,
    act,
    backward_solve,
    bellman_operator,
    run_episode,
    stage_inputs,
    step_quantile,
    value_iterate,
)
from .estimators import CvarMDP, ExpectationMDP, ExpUtilityMDP, NestedQuantileMDP, QuantileMDP
from .exceptions import ConvergenceError, DomainError, ModelFormatError, ModelValidationError
from .hiv import HivParams, cohort_terminal_reward, gen_hiv, load_mortality
from .io import load, save
from .model import DeterministicRewards, Discounted, DistributionalRewards, Finite, MdpSpec, validate
from .opt import Allocation, OptInstance, allocation_matrix, extract_allocation, solve_opt_full
from .report import RiskReport, build_report
from .simulate import EmpiricalCdf, simulate_policy

__version__ = "0.1.0"
