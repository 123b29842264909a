"""Time-varying reward recovery for finite-horizon maximum-entropy MDPs."""

from .mdp_core import MdpModel, ModelError, build_E, build_phi, build_transition_stack
from .soft_rl import (
    SoftSolution,
    TrajectorySet,
    mean_action_loglik,
    policy_distance,
    reward_from_policy,
    sample_trajectories,
    soft_backward,
)
from .reward_sets import (
    ConstraintSet,
    SolverStalled,
    build_exact_set,
    build_invariant_set,
    build_robust_set,
    check_feasible,
)
from .min_switch import Partition, assemble_reward, count_switches, greedy_partition
from .estimation import build_bound_vector, epsilon_radius, estimate_policy
from .low_rank import AdmmParams, align_to_reference, decompose, solve_nuclear, svt

__all__ = [
    "MdpModel", "ModelError", "build_E", "build_phi", "build_transition_stack",
    "SoftSolution", "TrajectorySet", "mean_action_loglik", "policy_distance",
    "reward_from_policy", "sample_trajectories", "soft_backward",
    "ConstraintSet", "SolverStalled", "build_exact_set", "build_invariant_set",
    "build_robust_set", "check_feasible",
    "Partition", "assemble_reward", "count_switches", "greedy_partition",
    "build_bound_vector", "epsilon_radius", "estimate_policy",
    "AdmmParams", "align_to_reference", "decompose", "solve_nuclear", "svt",
]
