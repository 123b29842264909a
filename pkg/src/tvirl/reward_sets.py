"""Affine reward-consistency sets and a feasibility oracle over them.

Every set is an interval system ``lower <= A @ x <= upper`` over a stacked
variable ``x`` whose column ranges are named in ``layout`` (``"r"`` for reward
columns, ``"nu"`` for value columns). Equalities are rows with
``lower == upper``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .mdp_core import MdpModel, build_phi, build_transition_stack

EQUALITY_TOL = 1e-7
INTERVAL_TOL = 1e-9
LP_MAX_ITER = 100_000


class SolverStalled(RuntimeError):
    """The LP solver hit its iteration limit or failed numerically."""


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    a_matrix: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        rows, cols = self.a_matrix.shape
        if self.lower.shape != (rows,) or self.upper.shape != (rows,):
            raise ValueError("bound vectors must have one entry per row")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(self.a_matrix)):
            raise ValueError("constraint matrix has non-finite entries")
        covered = sorted(self.layout.values())
        pos = 0
        for start, stop in covered:
            if start != pos:
                raise ValueError("layout ranges must partition the columns")
            pos = stop
        if covered and pos != cols:
            raise ValueError("layout ranges must partition the columns")

    @property
    def shape(self) -> tuple[int, int]:
        return self.a_matrix.shape

    @property
    def is_equality(self) -> bool:
        return bool(np.all(self.lower == self.upper))

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        start, stop = self.layout[name]
        return x[start:stop]

    def violation(self, x: np.ndarray) -> float:
        """Largest elementwise bound violation of ``A @ x``."""
        ax = self.a_matrix @ x
        over = np.max(ax - self.upper, initial=0.0)
        under = np.max(self.lower - ax, initial=0.0)
        return float(max(over, under))


@dataclass(frozen=True, eq=False)
class FeasiblePoint:
    x: np.ndarray
    r: np.ndarray
    nu: np.ndarray
    residual: float


def log_policy(policy, allow_zero: bool = False) -> np.ndarray:
    """Vectorised log-policy, shape ``(T, m*n)``.

    With ``allow_zero`` entries of zero probability come back as ``nan``.
    """
    policy = np.asarray(policy, dtype=float)
    T = policy.shape[0]
    if np.any(policy <= 0):
        if not allow_zero:
            raise ValueError("policy has zero entries; log-policy undefined")
        with np.errstate(divide="ignore"):
            out = np.where(policy > 0, np.log(np.where(policy > 0, policy, 1.0)), np.nan)
        return out.reshape(T, -1)
    return np.log(policy).reshape(T, -1)


def _check_policy_shape(model: MdpModel, policy):
    shape = (model.horizon, model.m, model.n)
    if np.shape(policy) != shape:
        raise ValueError(f"policy must have shape {shape}, got {np.shape(policy)}")


def build_exact_set(model: MdpModel, policy) -> ConstraintSet:
    """Rewards/values inducing ``policy``: ``[I  Phi_T] [r; nu] = log pi`` (stacked log-policy)."""
    _check_policy_shape(model, policy)
    T, mn, n = model.horizon, model.mn, model.n
    xi = log_policy(policy).ravel()
    A = np.hstack([np.eye(T * mn), build_phi(model, T)])
    layout = {"r": (0, T * mn), "nu": (T * mn, T * mn + T * n)}
    return ConstraintSet(A, xi.copy(), xi.copy(), layout)


def _robust_bounds(xi: np.ndarray, bound: np.ndarray):
    bound = np.asarray(bound, dtype=float)
    if bound.shape != xi.shape:
        raise ValueError(f"bound vector has shape {bound.shape}, expected {xi.shape}")
    if np.any(bound < 0) or np.any(np.isnan(bound)):
        raise ValueError("bound entries must be nonnegative")
    finite = np.isfinite(bound)
    if np.any(finite & np.isnan(xi)):
        raise ValueError("finite bound on an entry with zero empirical probability")
    centre = np.where(finite, xi, 0.0)
    lower = np.where(finite, centre - np.where(finite, bound, 0.0), -np.inf)
    upper = np.where(finite, centre + np.where(finite, bound, 0.0), np.inf)
    return lower, upper


def build_robust_set(model: MdpModel, pi_hat, bound_b) -> ConstraintSet:
    """Interval relaxation ``Xi_hat - b <= [I Phi_T][r; nu] <= Xi_hat + b``.

    Entries with infinite ``b`` become unconstrained rows.
    """
    _check_policy_shape(model, pi_hat)
    T, mn, n = model.horizon, model.mn, model.n
    xi = log_policy(pi_hat, allow_zero=True).ravel()
    lower, upper = _robust_bounds(xi, bound_b)
    A = np.hstack([np.eye(T * mn), build_phi(model, T)])
    layout = {"r": (0, T * mn), "nu": (T * mn, T * mn + T * n)}
    return ConstraintSet(A, lower, upper, layout)


def build_invariant_set(model: MdpModel, policy, i: int, j: int, nu_boundary,
                        bound=None) -> ConstraintSet:
    """Time-invariant reward over steps ``[i, j)`` with boundary values at ``j``.

    Variables are one shared reward block (``m*n`` columns) followed by
    ``nu_i .. nu_{j-1}``. The boundary ``nu_boundary`` is data: its
    contribution ``gamma * P @ nu_boundary`` is moved to the right-hand side of
    the last block row. Passing ``bound`` (full-horizon, length ``T*m*n``)
    gives the interval counterpart for an empirical policy.
    """
    _check_policy_shape(model, policy)
    T, mn, n = model.horizon, model.mn, model.n
    if not 0 <= i < j <= T:
        raise ValueError(f"need 0 <= i < j <= T, got i={i}, j={j}, T={T}")
    nu_boundary = np.asarray(nu_boundary, dtype=float)
    if nu_boundary.shape != (n,):
        raise ValueError(f"boundary values must have length {n}")
    L = j - i
    sub = np.asarray(policy, dtype=float)[i:j]
    xi = log_policy(sub, allow_zero=bound is not None).ravel()
    fold = np.zeros(L * mn)
    fold[(L - 1) * mn:] = model.gamma * build_transition_stack(model) @ nu_boundary
    A = np.hstack([np.tile(np.eye(mn), (L, 1)), build_phi(model, L)])
    layout = {"r": (0, mn), "nu": (mn, mn + L * n)}
    if bound is None:
        rhs = xi - fold
        return ConstraintSet(A, rhs.copy(), rhs.copy(), layout)
    b = np.asarray(bound, dtype=float).reshape(T, mn)[i:j].ravel()
    lower, upper = _robust_bounds(xi, b)
    return ConstraintSet(A, lower - fold, upper - fold, layout)


def least_squares_point(cs: ConstraintSet) -> FeasiblePoint:
    """Minimum-norm least-squares solution of an equality system.

    Uses a complete orthogonal factorisation with column pivoting; columns
    whose pivot falls below ``eps * max(rows, cols)`` relative to the largest
    are treated as rank deficient.
    """
    if not cs.is_equality:
        raise ValueError("least squares applies to equality systems only")
    A = cs.a_matrix
    cond = np.finfo(float).eps * max(A.shape)
    x = scipy.linalg.lstsq(A, cs.lower, cond=cond, lapack_driver="gelsy")[0]
    return _point(cs, x)


def _point(cs: ConstraintSet, x: np.ndarray) -> FeasiblePoint:
    r = cs.block(x, "r") if "r" in cs.layout else np.empty(0)
    nu = cs.block(x, "nu") if "nu" in cs.layout else np.empty(0)
    return FeasiblePoint(x=x, r=r, nu=nu, residual=cs.violation(x))


def phase_one(cs: ConstraintSet) -> tuple[float, np.ndarray]:
    """Solve ``min t`` s.t. ``lower - t <= A x <= upper + t``, ``t >= 0``.

    Returns the optimal ``t`` and the matching ``x``.
    """
    A = cs.a_matrix
    rows, cols = A.shape
    up = np.isfinite(cs.upper)
    lo = np.isfinite(cs.lower)
    if not up.any() and not lo.any():
        return 0.0, np.zeros(cols)
    A_ub = np.vstack([
        np.hstack([A[up], -np.ones((up.sum(), 1))]),
        np.hstack([-A[lo], -np.ones((lo.sum(), 1))]),
    ])
    b_ub = np.concatenate([cs.upper[up], -cs.lower[lo]])
    c = np.zeros(cols + 1)
    c[-1] = 1.0
    bounds = [(None, None)] * cols + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"maxiter": LP_MAX_ITER, "primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverStalled(f"phase-1 LP did not finish: {res.message}")
    return float(res.x[-1]), res.x[:-1]


def check_feasible(cs: ConstraintSet, tol: float | None = None) -> FeasiblePoint | None:
    """Return a point of ``cs`` if one exists at tolerance ``tol``, else ``None``.

    Equality systems are decided by the max residual of the minimum-norm
    least-squares solution; interval systems by the optimum of the phase-1 LP.
    """
    if cs.is_equality:
        tol = EQUALITY_TOL if tol is None else tol
        pt = least_squares_point(cs)
        return pt if pt.residual <= tol else None
    tol = INTERVAL_TOL if tol is None else tol
    t, x = phase_one(cs)
    if t > tol:
        return None
    return _point(cs, x)
