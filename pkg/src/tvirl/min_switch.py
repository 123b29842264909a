"""Minimally switching reward recovery by greedy backward interval partitioning.

The partition is built from the end of the horizon backwards. For the current
interval end ``tau`` a bisection finds the earliest start ``u`` such that one
time-invariant reward explains the policy on ``[u, tau)`` given the values
already committed at ``tau``; ``u`` then becomes a switch time and the search
restarts with ``tau = u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mdp_core import MdpModel
from .reward_sets import (
    EQUALITY_TOL,
    INTERVAL_TOL,
    build_exact_set,
    build_invariant_set,
    build_robust_set,
    check_feasible,
)

log = logging.getLogger(__name__)

ZERO_TOL = 1e-6


class PartitionError(RuntimeError):
    """An internal invariant of the partitioning algorithm was violated."""


@dataclass(frozen=True, eq=False)
class Partition:
    """Switch times (ascending) with one reward per interval.

    ``interval_rewards[k]`` is the reward on the ``k``-th interval counted from
    time 0; ``boundary_values`` has shape ``(T+1, n)`` with the last row zero.
    """

    switch_times: list
    interval_rewards: list
    boundary_values: np.ndarray
    oracle_calls: int = 0
    residuals: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.boundary_values.shape[0] - 1

    def intervals(self) -> list[tuple[int, int]]:
        edges = [0, *self.switch_times, self.horizon]
        return list(zip(edges[:-1], edges[1:]))

    def labels(self) -> np.ndarray:
        return labels_from_switches(self.switch_times, self.horizon)


def labels_from_switches(switch_times, T: int) -> np.ndarray:
    labels = np.zeros(T, dtype=int)
    for t in switch_times:
        labels[t:] += 1
    return labels


def greedy_partition(model: MdpModel, policy, bound=None, tol: float | None = None) -> Partition:
    """Minimum-switch reward consistent with ``policy``.

    With ``bound`` given, ``policy`` is treated as an empirical estimate and
    each interval query uses the interval (robust) constraints.
    """
    T, n = model.horizon, model.n
    if tol is None:
        tol = EQUALITY_TOL if bound is None else INTERVAL_TOL

    V = np.zeros((T + 1, n))
    switches: list[int] = []
    rewards: list[np.ndarray] = []
    residuals: list[float] = []
    calls = 0
    cached = None

    def query(j: int, tau: int):
        cs = build_invariant_set(model, policy, j, tau, V[tau], bound=bound)
        return cs, check_feasible(cs, tol)

    lo, up, j, tau = -1, T, T - 1, T
    while j >= 0:
        cs, pt = query(j, tau)
        calls += 1
        if pt is not None:
            up = j
            cached = (cs, pt)
        else:
            lo = j
            if up == lo + 1:
                if cached is None or cached[1].r.size == 0:
                    raise PartitionError(f"no feasible interval ending at {tau}")
                cs_c, pt_c = cached
                if cs_c.violation(pt_c.x) > tol:
                    raise PartitionError(f"cached solution for [{up}, {tau}) lost feasibility")
                switches.insert(0, up)
                rewards.insert(0, pt_c.r.copy())
                residuals.insert(0, pt_c.residual)
                V[up:tau] = pt_c.nu.reshape(tau - up, n)
                tau, lo = up, -1
                cached = None
        j = (lo + up) // 2
    # single-step intervals are always feasible, so the last query of the
    # final interval [0, tau) succeeded
    if cached is None:
        raise PartitionError(f"no feasible solution recorded for [0, {tau})")
    cs_c, pt_c = cached
    rewards.insert(0, pt_c.r.copy())
    residuals.insert(0, pt_c.residual)
    V[0:tau] = pt_c.nu.reshape(tau, n)
    log.debug("greedy partition: %d switches, %d oracle calls", len(switches), calls)
    return Partition(switch_times=switches, interval_rewards=rewards, boundary_values=V,
                     oracle_calls=calls, residuals=residuals)


def assemble_reward(partition: Partition, T: int | None = None) -> np.ndarray:
    """Expand a partition into a ``(T, m*n)`` piecewise-constant reward."""
    T = partition.horizon if T is None else T
    edges = [0, *partition.switch_times, T]
    if len(partition.interval_rewards) != len(edges) - 1:
        raise ValueError("partition needs one reward per interval")
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError("switch times must be strictly increasing inside (0, T)")
    mn = len(partition.interval_rewards[0])
    out = np.empty((T, mn))
    for (a, b), r in zip(zip(edges[:-1], edges[1:]), partition.interval_rewards):
        out[a:b] = r
    return out


def count_switches(reward, zero_tol: float = ZERO_TOL) -> int:
    reward = np.asarray(reward, dtype=float)
    if reward.shape[0] < 2:
        return 0
    jumps = np.max(np.abs(np.diff(reward, axis=0)), axis=1)
    return int(np.sum(jumps > zero_tol))


def partition_residual(model: MdpModel, partition: Partition, policy, bound=None) -> float:
    """Violation of the assembled (reward, values) pair in the full reward set."""
    r = assemble_reward(partition, model.horizon)
    if bound is None:
        cs = build_exact_set(model, policy)
    else:
        cs = build_robust_set(model, policy, bound)
    x = np.concatenate([r.ravel(), partition.boundary_values[:-1].ravel()])
    return cs.violation(x)
