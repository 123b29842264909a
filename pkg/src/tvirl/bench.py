"""Gridworld environments, synthetic reward generators and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp_core import MdpModel
from .reward_sets import build_invariant_set, least_squares_point
from .soft_rl import TrajectorySet, mean_action_loglik, soft_backward

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
STICKY_STAY = 0.8
DEFAULT_WIND = 0.1
DEFAULT_SIGMA = 0.15


@dataclass(frozen=True)
class GridSpec:
    """Gridworld layout.

    Cells are ``(row, col)`` with row 0 at the top; state index is
    ``row * width + col``. ``walls`` lists blocked edges between adjacent
    cells.
    """

    width: int
    height: int
    wind_prob: float = DEFAULT_WIND
    walls: tuple = ()
    sticky_cells: tuple = ()
    landmarks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.wind_prob < 1.0:
            raise ValueError("wind probability must lie in [0, 1)")
        walls = tuple(tuple(sorted((tuple(a), tuple(b)))) for a, b in self.walls)
        for a, b in walls:
            if not (self.contains(a) and self.contains(b)):
                raise ValueError(f"wall {a}-{b} leaves the grid")
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ValueError(f"wall {a}-{b} does not join adjacent cells")
        sticky = tuple(tuple(c) for c in self.sticky_cells)
        for c in sticky:
            if not self.contains(c):
                raise ValueError(f"sticky cell {c} is outside the grid")
        marks = dict(self.landmarks) or default_landmarks(self.width, self.height)
        for name, c in marks.items():
            if not self.contains(tuple(c)):
                raise ValueError(f"landmark {name} at {c} is outside the grid")
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "sticky_cells", sticky)
        object.__setattr__(self, "landmarks", {k: tuple(v) for k, v in marks.items()})

    @property
    def n(self) -> int:
        return self.width * self.height

    def contains(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def state(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "wind_prob": self.wind_prob,
            "walls": [[list(a), list(b)] for a, b in self.walls],
            "sticky_cells": [list(c) for c in self.sticky_cells],
            "landmarks": {k: list(v) for k, v in self.landmarks.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        return cls(
            width=int(doc["width"]),
            height=int(doc["height"]),
            wind_prob=float(doc.get("wind_prob", DEFAULT_WIND)),
            walls=tuple((tuple(a), tuple(b)) for a, b in doc.get("walls", [])),
            sticky_cells=tuple(tuple(c) for c in doc.get("sticky_cells", [])),
            landmarks={k: tuple(v) for k, v in doc.get("landmarks", {}).items()},
        )


def default_landmarks(width: int, height: int) -> dict:
    return {"home": (0, 0), "water": (height - 1, width // 2)}


def open_grid(size: int = 5, wind_prob: float = DEFAULT_WIND) -> GridSpec:
    return GridSpec(size, size, wind_prob)


def blocked_grid(wind_prob: float = DEFAULT_WIND) -> GridSpec:
    """5x5 grid with a barrier between rows 2 and 3 over columns 0-3."""
    walls = tuple(((2, c), (3, c)) for c in range(4))
    return GridSpec(5, 5, wind_prob, walls=walls)


def sticky_grid(wind_prob: float = DEFAULT_WIND) -> GridSpec:
    """5x5 grid with sticky cells on the diagonal routes home and to water."""
    return GridSpec(5, 5, wind_prob, sticky_cells=((1, 1), (2, 2), (3, 2)))


def _outcome(spec: GridSpec, walls: set, cell, move):
    target = (cell[0] + move[0], cell[1] + move[1])
    if move == (0, 0) or not spec.contains(target) or (cell, target) in walls:
        return cell
    return target


def make_gridworld(spec: GridSpec, gamma: float, T: int, mu0=None) -> MdpModel:
    """Five-action gridworld (up, down, left, right, stay).

    The intended move happens with probability ``1 - p_w``; with probability
    ``p_w`` the agent is pushed toward one of the four cardinal directions,
    each chosen with probability ``p_w / 4``. Moves off the grid or through a
    wall leave the agent in place. In sticky cells the agent stays with
    probability 0.8 and follows the rule above with probability 0.2.
    ``mu0`` defaults to uniform over cells.
    """
    n, m = spec.n, len(ACTIONS)
    walls = set()
    for a, b in spec.walls:
        walls.add((a, b))
        walls.add((b, a))
    sticky = set(spec.sticky_cells)
    P = np.zeros((m, n, n))
    pw = spec.wind_prob
    for r in range(spec.height):
        for c in range(spec.width):
            cell = (r, c)
            s = spec.state(cell)
            for a, move in enumerate(MOVES):
                row = np.zeros(n)
                row[spec.state(_outcome(spec, walls, cell, move))] += 1.0 - pw
                for wind in MOVES[:4]:
                    row[spec.state(_outcome(spec, walls, cell, wind))] += pw / 4.0
                if cell in sticky:
                    row *= 1.0 - STICKY_STAY
                    row[s] += STICKY_STAY
                P[a, s] = row
    # remove accumulated rounding so rows pass the stochasticity check
    P /= P.sum(axis=2, keepdims=True)
    if mu0 is None:
        mu0 = np.full(n, 1.0 / n)
    return MdpModel(P, mu0, gamma, T)


def indicator_features(spec: GridSpec, m: int = len(ACTIONS),
                       names=("home", "water")) -> np.ndarray:
    """One column per landmark: 1 at that landmark state for every action."""
    n = spec.n
    U = np.zeros((m * n, len(names)))
    for k, name in enumerate(names):
        s = spec.state(spec.landmarks[name])
        U[np.arange(m) * n + s, k] = 1.0
    return U


def random_piecewise_reward(mn: int, T: int, k: int, beta_range=(0.1, 0.4), seed=None):
    """Piecewise-constant reward with ``k`` switch times drawn without replacement.

    The first interval is ``U[0, 1]^{mn}``; each later interval adds a
    ``U[0, beta_i]^{mn}`` perturbation, ``beta_i`` linearly spaced over
    ``beta_range``. Returns the ``(T, mn)`` reward and per-step interval labels.
    """
    if not 0 <= k <= T - 1:
        raise ValueError(f"need 0 <= k <= T-1, got k={k}, T={T}")
    rng = np.random.default_rng(seed)
    switches = np.sort(rng.choice(np.arange(1, T), size=k, replace=False)) if k else np.array([], int)
    betas = np.linspace(beta_range[0], beta_range[1], k) if k else np.array([])
    level = rng.uniform(0.0, 1.0, mn)
    reward = np.empty((T, mn))
    edges = [0, *switches.tolist(), T]
    labels = np.zeros(T, dtype=int)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if i > 0:
            level = level + rng.uniform(0.0, betas[i - 1], mn)
        reward[a:b] = level
        labels[a:b] = i
    return reward, labels


def random_walk_feature_reward(u_basis, T: int, sigma: float = DEFAULT_SIGMA, seed=None):
    """Reward ``r_t = U @ alpha_t`` with Gaussian random-walk weights.

    ``alpha_0 ~ N(0, I)`` and ``alpha_{t+1} = alpha_t + N(0, sigma^2 I)``.
    Returns the ``(T, mn)`` reward and the ``(K, T)`` weights.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    U = np.asarray(u_basis, dtype=float)
    K = U.shape[1]
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, sigma, size=(K, T))
    steps[:, 0] = rng.normal(0.0, 1.0, size=K)
    weights = np.cumsum(steps, axis=1)
    return (U @ weights).T.copy(), weights


def _comb2(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * (x - 1.0) / 2.0))


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand Index between two labelings of the same items."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings must have equal length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table)
    sa, sb = _comb2(table.sum(axis=1)), _comb2(table.sum(axis=0))
    expected = sa * sb / (n * (n - 1) / 2.0) if n > 1 else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / (max_index - expected))


def transfer_eval(reward, target_model: MdpModel, samples: TrajectorySet) -> float:
    """Score the MaxEnt policy of ``reward`` in ``target_model`` on ``samples``."""
    reward = np.asarray(reward, dtype=float)
    if reward.shape[0] != target_model.horizon:
        raise ValueError(
            f"reward horizon {reward.shape[0]} != target horizon {target_model.horizon}"
        )
    policy = soft_backward(target_model, reward).policy
    return mean_action_loglik(policy, samples)


def static_reward_fit(model: MdpModel, policy) -> np.ndarray:
    """Best single time-invariant reward for ``policy`` in the least-squares sense.

    Solves the invariant set over the whole horizon (no switches allowed) and
    keeps the least-squares point even when the set is empty.
    """
    cs = build_invariant_set(model, policy, 0, model.horizon, np.zeros(model.n))
    pt = least_squares_point(cs)
    return np.tile(pt.r, (model.horizon, 1))
