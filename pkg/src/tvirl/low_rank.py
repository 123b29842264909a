"""Low-rank (feature-based) reward recovery via nuclear-norm minimisation.

The solver minimises ``||R||_*`` over rewards ``R = [r_0 ... r_{T-1}]`` whose
stacked pair ``(r, nu)`` lies in a :class:`~tvirl.reward_sets.ConstraintSet`.
It is an ADMM splitting with two auxiliary blocks: ``M`` (a copy of ``R`` that
carries the nuclear norm) and ``z`` (a copy of ``A @ x`` kept inside the
bounds). The ``x = (r, nu)`` update is a ridge-regularised least-squares solve
whose sparse LU factor is computed once; the constraint matrices built by
:mod:`tvirl.reward_sets` have a handful of nonzeros per row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .reward_sets import ConstraintSet

log = logging.getLogger(__name__)

RIDGE = 1e-10
RANK_TOL = 1e-4


class AlignmentError(ValueError):
    """The recovered subspace cannot be mapped onto the reference features."""


@dataclass(frozen=True)
class AdmmParams:
    rho: float = 1.0
    max_iter: int = 5000
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6
    adapt_rho: bool = True
    adapt_factor: float = 2.0
    adapt_ratio: float = 10.0

    def __post_init__(self):
        if self.rho <= 0 or self.max_iter <= 0 or self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("ADMM parameters must be positive")


@dataclass(eq=False)
class NuclearResult:
    reward_matrix: np.ndarray  # (m*n, T), column t is r_t
    nu: np.ndarray             # flat value block, as laid out in the constraint set
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    violation: float
    trace: list = field(default_factory=list)
    residual_increases: int = 0

    @property
    def nuclear_norm(self) -> float:
        return nuclear_norm(self.reward_matrix)

    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "violation": self.violation,
            "nuclear_norm": self.nuclear_norm,
            "residual_increases": self.residual_increases,
            "trace": self.trace,
        }


@dataclass(frozen=True, eq=False)
class FeatureDecomposition:
    u_basis: np.ndarray   # (m*n, K)
    weights: np.ndarray   # (K, T)
    rank_tol_used: float

    @property
    def rank(self) -> int:
        return self.u_basis.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.u_basis @ self.weights


def nuclear_norm(matrix) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)))


def svt(matrix, threshold: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of ``threshold * ||.||_*``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    U, s, Vt = np.linalg.svd(np.asarray(matrix, dtype=float), full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def reward_matrix_from_flat(r_flat, mn: int, T: int) -> np.ndarray:
    return np.asarray(r_flat, dtype=float).reshape(T, mn).T


def solve_nuclear(cs: ConstraintSet, dims: tuple[int, int],
                  params: AdmmParams | None = None) -> NuclearResult:
    """Minimise the nuclear norm of the reward matrix over ``cs``.

    ``dims`` is ``(m*n, T)``. A result is always returned; check
    ``converged`` before trusting it.
    """
    params = params or AdmmParams()
    mn, T = dims
    r_start, r_stop = cs.layout["r"]
    if r_stop - r_start != mn * T:
        raise ValueError(f"reward block has {r_stop - r_start} columns, expected {mn * T}")
    A = cs.a_matrix
    rows, cols = A.shape
    rsl = slice(r_start, r_stop)

    A = sp.csr_matrix(A)
    At = A.T.tocsr()
    r_mask = np.zeros(cols)
    r_mask[rsl] = 1.0
    H = (At @ A + sp.diags(r_mask + RIDGE)).tocsc()
    solve = splu(H).solve

    lower, upper = cs.lower, cs.upper
    rho = params.rho
    x = np.zeros(cols)
    ax = A @ x
    M = np.zeros((mn, T))
    z = np.clip(ax, lower, upper)
    uM = np.zeros((mn, T))  # scaled duals (dual / rho)
    uz = np.zeros(rows)

    trace = []
    history = []
    increases = 0
    stride = max(1, params.max_iter // 200)
    converged = False
    it = 0
    rp = rd = np.inf
    for it in range(1, params.max_iter + 1):
        rhs = At @ (z - uz)
        rhs[rsl] += (M - uM).T.ravel()
        x = solve(rhs)
        R = x[rsl].reshape(T, mn).T
        ax = A @ x

        M_prev, z_prev = M, z
        M = svt(R + uM, 1.0 / rho)
        z = np.clip(ax + uz, lower, upper)
        dM, dz = R - M, ax - z
        uM += dM
        uz += dz

        rp = max(np.max(np.abs(dM)), np.max(np.abs(dz), initial=0.0))
        dual = At @ (z - z_prev)
        dual[rsl] += (M - M_prev).T.ravel()
        rd = rho * np.max(np.abs(dual))

        history.append(max(rp, rd))
        if len(history) >= 20 and it % 10 == 0:
            recent, older = np.mean(history[-10:]), np.mean(history[-20:-10])
            if recent > older:
                increases += 1
        if it % stride == 0 or it == 1:
            trace.append((it, float(rp), float(rd), float(rho)))
        if rp <= params.primal_tol and rd <= params.dual_tol:
            converged = True
            break
        if params.adapt_rho:
            if rp > params.adapt_ratio * rd:
                rho *= params.adapt_factor
                uM /= params.adapt_factor
                uz /= params.adapt_factor
            elif rd > params.adapt_ratio * rp:
                rho /= params.adapt_factor
                uM *= params.adapt_factor
                uz *= params.adapt_factor

    if not converged:
        log.warning("nuclear-norm ADMM stopped after %d iterations (primal %.2e, dual %.2e)",
                    it, rp, rd)
    trace.append((it, float(rp), float(rd), float(rho)))
    nu = x[cs.layout["nu"][0]:cs.layout["nu"][1]].copy() if "nu" in cs.layout else np.empty(0)
    return NuclearResult(
        reward_matrix=x[rsl].reshape(T, mn).T.copy(),
        nu=nu,
        converged=converged,
        iterations=it,
        primal_residual=float(rp),
        dual_residual=float(rd),
        violation=cs.violation(x),
        trace=trace,
        residual_increases=increases,
    )


def decompose(reward_matrix, rank_tol: float = RANK_TOL) -> FeatureDecomposition:
    """Orthonormal feature basis and per-step weights of a reward matrix.

    Keeps singular directions with ``sigma_i > rank_tol * sigma_1``.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    R = np.asarray(reward_matrix, dtype=float)
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return FeatureDecomposition(np.zeros((R.shape[0], 0)), np.zeros((0, R.shape[1])), rank_tol)
    K = int(np.sum(s > rank_tol * s[0]))
    basis = U[:, :K]
    return FeatureDecomposition(basis, basis.T @ R, rank_tol)


def principal_angles(a, b) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of ``a`` and ``b``."""
    return scipy.linalg.subspace_angles(np.asarray(a, float), np.asarray(b, float))[::-1]


def standardize_rows(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    centred = w - w.mean(axis=1, keepdims=True)
    scale = centred.std(axis=1, keepdims=True)
    return centred / np.where(scale > 0, scale, 1.0)


def align_to_reference(fd: FeatureDecomposition, u_ref, ref_weights=None,
                       min_cosine: float = 1e-6) -> FeatureDecomposition:
    """Re-express a decomposition in the basis closest to ``u_ref``.

    The change of basis ``G`` minimises ``||u_basis @ G - u_ref||_F``; weights
    become ``G^{-1} @ weights`` and are then standardised row by row (zero
    mean, unit variance), flipping signs to correlate positively with
    ``ref_weights`` when those are given.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    if u_ref.shape != (fd.u_basis.shape[0], fd.rank):
        raise ValueError(f"reference features must have shape {(fd.u_basis.shape[0], fd.rank)}")
    G = np.linalg.lstsq(fd.u_basis, u_ref, rcond=None)[0]
    sv = np.linalg.svd(G, compute_uv=False)
    ref_scale = np.linalg.norm(u_ref, axis=0).max()
    if sv.size == 0 or sv[-1] < min_cosine * ref_scale:
        angles = principal_angles(fd.u_basis, u_ref)
        raise AlignmentError(
            f"change of basis is singular: principal angles up to {angles[-1]:.6f} rad "
            f"(smallest singular value of G {sv[-1] if sv.size else 0.0:.3e})"
        )
    basis = fd.u_basis @ G
    weights = standardize_rows(np.linalg.solve(G, fd.weights))
    if ref_weights is not None:
        ref = standardize_rows(ref_weights)
        signs = np.sign(np.sum(weights * ref, axis=1))
        signs[signs == 0] = 1.0
        weights = weights * signs[:, None]
        basis = basis * signs[None, :]
    return FeatureDecomposition(basis, weights, fd.rank_tol_used)
