"""Maximum-entropy forward solver, its inverse, and trajectory utilities.

Shapes used here:

* reward: ``(T, m*n)`` in the flat action-major layout of :mod:`tvirl.mdp_core`
* policy: ``(T, m, n)``, column ``policy[t][:, s]`` is a distribution over actions
* values: ``(T+1, n)``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mdp_core import MdpModel

log = logging.getLogger(__name__)

# Trajectories are generated in blocks; each block owns an independent stream
# derived from (seed, block index) so results don't depend on scheduling.
SAMPLE_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class SoftSolution:
    q: np.ndarray       # (T, m, n)
    v: np.ndarray       # (T+1, n)
    policy: np.ndarray  # (T, m, n)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """``N`` trajectories of horizon ``T``.

    ``states[i]`` holds ``s_0 .. s_T`` and ``actions[i]`` holds ``a_0 .. a_{T-1}``.
    """

    states: np.ndarray   # (N, T+1)
    actions: np.ndarray  # (N, T)
    seed: int | None = None

    def __post_init__(self):
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-d arrays")
        if self.states.shape[0] != self.actions.shape[0]:
            raise ValueError("states and actions disagree on trajectory count")
        if self.states.shape[1] != self.actions.shape[1] + 1:
            raise ValueError("each trajectory needs T actions and T+1 states")

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


def _check_reward(model: MdpModel, reward) -> np.ndarray:
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (model.horizon, model.mn):
        raise ValueError(
            f"reward must have shape (T, m*n) = {(model.horizon, model.mn)}, got {reward.shape}"
        )
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward contains non-finite entries")
    return reward


def soft_backward(model: MdpModel, reward, terminal_values=None) -> SoftSolution:
    """Solve the finite-horizon MaxEnt problem by backward soft Bellman recursion.

    ``terminal_values`` (default zero) is the value attached to the state
    reached after the last step; it only exists to support shaping checks.
    """
    reward = _check_reward(model, reward)
    T, m, n = model.horizon, model.m, model.n
    q = np.empty((T, m, n))
    v = np.zeros((T + 1, n))
    if terminal_values is not None:
        v[T] = np.asarray(terminal_values, dtype=float)
    for t in range(T - 1, -1, -1):
        q[t] = reward[t].reshape(m, n) + model.gamma * (model.transitions @ v[t + 1])
        v[t] = logsumexp(q[t], axis=0)
    policy = np.exp(q - v[:T, None, :])
    return SoftSolution(q=q, v=v, policy=policy)


def reward_from_policy(model: MdpModel, policy, nu) -> np.ndarray:
    """Return the unique reward inducing ``policy`` with soft values ``nu``.

    ``r_t(s, a) = log pi_t(a|s) - gamma * E[nu_{t+1}(s')] + nu_t(s)``.
    """
    policy = np.asarray(policy, dtype=float)
    nu = np.asarray(nu, dtype=float)
    T, m, n = model.horizon, model.m, model.n
    if policy.shape != (T, m, n):
        raise ValueError(f"policy must have shape {(T, m, n)}, got {policy.shape}")
    if nu.shape != (T + 1, n):
        raise ValueError(f"values must have shape {(T + 1, n)}, got {nu.shape}")
    if np.any(nu[T] != 0):
        raise ValueError("terminal values nu_T must be zero")
    if np.any(policy <= 0):
        raise ValueError("policy has zero entries; log-policy undefined")
    cont = np.einsum("aij,tj->tai", model.transitions, nu[1:])
    r = np.log(policy) - model.gamma * cont + nu[:T, None, :]
    return r.reshape(T, m * n)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def sample_trajectories(model: MdpModel, policy, count: int, seed: int) -> TrajectorySet:
    """Draw ``count`` i.i.d. trajectories from ``mu0``, ``policy`` and the dynamics."""
    if count < 1:
        raise ValueError("count must be at least 1")
    policy = np.asarray(policy, dtype=float)
    T, m, n = model.horizon, model.m, model.n
    if policy.shape != (T, m, n):
        raise ValueError(f"policy must have shape {(T, m, n)}, got {policy.shape}")
    dtype = np.int16 if max(m, n) < 2**15 else np.int64
    states = np.empty((count, T + 1), dtype=dtype)
    actions = np.empty((count, T), dtype=dtype)

    mu_cdf = np.cumsum(model.mu0)
    pi_cdf = np.cumsum(policy, axis=1).transpose(0, 2, 1)  # (T, n, m)
    p_cdf = np.cumsum(model.transitions, axis=2)          # (m, n, n)

    for block, start in enumerate(range(0, count, SAMPLE_BLOCK)):
        stop = min(start + SAMPLE_BLOCK, count)
        rng = _block_rng(seed, block)
        size = stop - start
        s = _draw(mu_cdf[None, :].repeat(size, axis=0), rng.random(size))
        states[start:stop, 0] = s
        for t in range(T):
            a = _draw(pi_cdf[t, s], rng.random(size))
            s = _draw(p_cdf[a, s], rng.random(size))
            actions[start:stop, t] = a
            states[start:stop, t + 1] = s
    return TrajectorySet(states=states, actions=actions, seed=int(seed))


def mean_action_loglik(policy, trajectories: TrajectorySet) -> float:
    """Mean per-step action log-likelihood ``(1/NT) sum log pi_t(a_t|s_t)``.

    Dynamics and initial-state terms are left out; they don't depend on the
    policy being scored. Returns ``-inf`` (with a warning) when a visited
    action has zero probability.
    """
    policy = np.asarray(policy, dtype=float)
    T = policy.shape[0]
    if trajectories.horizon != T:
        raise ValueError(
            f"trajectory horizon {trajectories.horizon} does not match policy horizon {T}"
        )
    t_idx = np.broadcast_to(np.arange(T), trajectories.actions.shape)
    probs = policy[t_idx, trajectories.actions, trajectories.states[:, :T]]
    if np.any(probs <= 0):
        log.warning("zero-probability action visited in %d steps", int(np.sum(probs <= 0)))
        return float("-inf")
    return float(np.mean(np.log(probs)))


def policy_distance(p1, p2) -> float:
    p1, p2 = np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise ValueError(f"policy shapes differ: {p1.shape} vs {p2.shape}")
    return float(np.max(np.abs(p1 - p2)))
