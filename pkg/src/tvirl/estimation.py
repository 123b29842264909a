"""Empirical policy estimates from demonstrations and Hoeffding error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .soft_rl import TrajectorySet

DEFAULT_DELTA = 0.9999


@dataclass(frozen=True, eq=False)
class CountTable:
    n_ts: np.ndarray   # (T, n) state visits per time step
    n_tsa: np.ndarray  # (T, m, n) action counts per (t, s)

    @property
    def visited(self) -> np.ndarray:
        return self.n_ts > 0


def count_visits(trajectories: TrajectorySet, m: int, n: int) -> CountTable:
    T = trajectories.horizon
    s = trajectories.states[:, :T].astype(np.int64)
    a = trajectories.actions.astype(np.int64)
    t = np.broadcast_to(np.arange(T), s.shape)
    n_tsa = np.bincount(((t * m + a) * n + s).ravel(), minlength=T * m * n).reshape(T, m, n)
    n_ts = np.bincount((t * n + s).ravel(), minlength=T * n).reshape(T, n)
    return CountTable(n_ts=n_ts, n_tsa=n_tsa)


def estimate_policy(trajectories: TrajectorySet, m: int, n: int, T: int | None = None):
    """Relative action frequencies per ``(t, s)``.

    Unvisited states get a uniform placeholder column so the table stays
    rectangular; ``counts.visited`` tells them apart and downstream
    constraint builders drop them.
    """
    if trajectories.count < 1:
        raise ValueError("no trajectories")
    if T is not None and T != trajectories.horizon:
        raise ValueError(f"trajectory horizon {trajectories.horizon} != {T}")
    counts = count_visits(trajectories, m, n)
    denom = np.maximum(counts.n_ts, 1)[:, None, :]
    pi_hat = counts.n_tsa / denom
    unvisited = ~counts.visited
    pi_hat = np.where(unvisited[:, None, :], 1.0 / m, pi_hat)
    return pi_hat, counts


def epsilon_radius(count, delta: float = DEFAULT_DELTA):
    """Hoeffding radius ``sqrt(log(2 / (1 - delta)) / (2 * count))``.

    Zero counts give ``inf`` (no information). Works elementwise on arrays.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    c = np.asarray(count, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    with np.errstate(divide="ignore"):
        eps = np.sqrt(math.log(2.0 / (1.0 - delta)) / (2.0 * c))
    return float(eps) if eps.ndim == 0 else eps


def build_bound_vector(pi_hat, counts: CountTable, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Per-entry log-deviation bound, flattened to length ``T*m*n``.

    Entry ``(t, a, s)`` is ``eps / (pi_hat - eps)`` when ``pi_hat > eps`` and
    the state was visited, and ``inf`` otherwise.
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    eps = epsilon_radius(counts.n_ts, delta)[:, None, :]
    eps = np.broadcast_to(eps, pi_hat.shape)
    ok = (pi_hat > eps) & counts.visited[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(ok, eps / np.where(ok, pi_hat - eps, 1.0), np.inf)
    return b.reshape(pi_hat.shape[0], -1).ravel()
