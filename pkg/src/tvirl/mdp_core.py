"""Finite MDP model and the structured matrices of the reward-consistency system.

Vector layout convention used throughout the package: a reward (or log-policy)
vector for one time step has length ``m * n`` and entry ``a * n + s`` holds the
value for action ``a`` at state ``s`` (action-major, state-minor). Reshaping such
a vector to ``(m, n)`` gives a table indexed ``[a, s]``, which is the layout of
one policy table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STOCHASTIC_TOL = 1e-12


class ModelError(ValueError):
    """Raised when an MDP model (or its file representation) is malformed."""


def flat_index(a: int, s: int, n: int) -> int:
    return a * n + s


def unflatten(flat: int, n: int) -> tuple[int, int]:
    a, s = divmod(flat, n)
    return a, s


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite-horizon MDP without reward.

    Attributes
    ----------
    transitions : ndarray, shape (m, n, n)
        ``transitions[a, i, j]`` is the probability of moving from state ``i``
        to state ``j`` under action ``a``.
    mu0 : ndarray, shape (n,)
        Initial state distribution.
    gamma : float
        Discount factor in ``[0, 1]``.
    horizon : int
        Number of decision steps ``T``.
    """

    transitions: np.ndarray
    mu0: np.ndarray
    gamma: float
    horizon: int

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        mu0 = np.array(self.mu0, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ModelError(f"transitions must have shape (m, n, n), got {P.shape}")
        m, n, _ = P.shape
        if m < 1 or n < 1:
            raise ModelError("need at least one state and one action")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            a, i, j = np.argwhere(~np.isfinite(P) | (P < 0))[0]
            raise ModelError(f"transition entry (action {a}, row {i}, column {j}) is not a probability")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if np.any(row_err > STOCHASTIC_TOL):
            a, i = np.argwhere(row_err > STOCHASTIC_TOL)[0]
            raise ModelError(
                f"transition row (action {a}, row {i}) sums to {P[a, i].sum()!r}, not 1"
            )
        if mu0.shape != (n,):
            raise ModelError(f"mu0 must have length {n}, got shape {mu0.shape}")
        if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > STOCHASTIC_TOL:
            raise ModelError("mu0 is not a probability vector")
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError(f"horizon must be a positive integer, got {self.horizon}")
        P.setflags(write=False)
        mu0.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def m(self) -> int:
        return self.transitions.shape[0]

    @property
    def n(self) -> int:
        return self.transitions.shape[1]

    @property
    def mn(self) -> int:
        return self.m * self.n

    def with_horizon(self, horizon: int) -> "MdpModel":
        return MdpModel(self.transitions, self.mu0, self.gamma, horizon)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "gamma": self.gamma,
            "T": self.horizon,
            "mu0": self.mu0.tolist(),
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MdpModel":
        for key in ("n", "m", "gamma", "T", "mu0", "transitions"):
            if key not in doc:
                raise ModelError(f"model document is missing field {key!r}")
        n, m = int(doc["n"]), int(doc["m"])
        mu0 = doc["mu0"]
        if len(mu0) != n:
            raise ModelError(f"mu0 has length {len(mu0)}, expected n = {n}")
        trans = doc["transitions"]
        if len(trans) != m:
            raise ModelError(f"transitions lists {len(trans)} matrices, expected m = {m}")
        for a, mat in enumerate(trans):
            if len(mat) != n:
                raise ModelError(f"transition matrix {a} has {len(mat)} rows, expected {n}")
            for i, row in enumerate(mat):
                if len(row) != n:
                    raise ModelError(
                        f"transition matrix {a}, row {i} has {len(row)} columns, expected {n}"
                    )
        return cls(np.array(trans, dtype=float), np.array(mu0, dtype=float),
                   float(doc["gamma"]), int(doc["T"]))


def build_transition_stack(model: MdpModel) -> np.ndarray:
    """Stack the per-action transition matrices into an ``(m*n, n)`` matrix.

    Row ``a * n + s`` is the next-state distribution from ``s`` under ``a``.
    """
    return model.transitions.reshape(model.mn, model.n).copy()


def build_E(m: int, n: int) -> np.ndarray:
    """``1_m kron I_n``: row ``a * n + s`` selects state ``s``."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    return np.kron(np.ones((m, 1)), np.eye(n))


def build_phi(model: MdpModel, k: int) -> np.ndarray:
    """Block bidiagonal matrix coupling ``k`` consecutive value vectors.

    Block row ``i`` carries ``-E`` in block column ``i`` and ``gamma * P`` in
    block column ``i + 1`` (absent for the last block row), so that
    ``(Phi @ nu)`` at step ``t`` equals ``-nu_t(s) + gamma * E_{s'}[nu_{t+1}(s')]``.
    """
    if k < 1:
        raise ValueError("block count must be at least 1")
    mn, n = model.mn, model.n
    E = build_E(model.m, n)
    gP = model.gamma * build_transition_stack(model)
    phi = np.zeros((k * mn, k * n))
    for i in range(k):
        phi[i * mn:(i + 1) * mn, i * n:(i + 1) * n] = -E
        if i + 1 < k:
            phi[i * mn:(i + 1) * mn, (i + 1) * n:(i + 2) * n] = gP
    return phi
