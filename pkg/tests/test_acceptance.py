"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts appear in the
"acceptance criteria" section of the terminal summary.
"""

import itertools

import numpy as np
import pytest
import scipy.linalg

from oracles import pattern_feasible, random_model, scalar_soft_backward
from tvirl.bench import (
    adjusted_rand_index,
    blocked_grid,
    indicator_features,
    make_gridworld,
    open_grid,
    random_piecewise_reward,
    random_walk_feature_reward,
    static_reward_fit,
    sticky_grid,
    transfer_eval,
)
from tvirl.estimation import build_bound_vector, epsilon_radius, estimate_policy
from tvirl.low_rank import (
    AdmmParams,
    AlignmentError,
    align_to_reference,
    decompose,
    principal_angles,
    solve_nuclear,
    svt,
)
from tvirl.mdp_core import MdpModel
from tvirl.min_switch import assemble_reward, greedy_partition, partition_residual
from tvirl.reward_sets import (
    INTERVAL_TOL,
    build_exact_set,
    build_invariant_set,
    build_robust_set,
    check_feasible,
)
from tvirl.soft_rl import policy_distance, reward_from_policy, sample_trajectories, soft_backward

GAMMA = 0.9
pytestmark = pytest.mark.slow


def test_criterion_01_exact_switch_recovery(report):
    model = make_gridworld(open_grid(5), GAMMA, 50)
    results = []
    for seed in range(10):
        reward, labels = random_piecewise_reward(model.mn, 50, 5, seed=seed)
        part = greedy_partition(model, soft_backward(model, reward).policy)
        results.append((len(part.switch_times), adjusted_rand_index(part.labels(), labels)))
    ok = all(k == 5 and a == 1.0 for k, a in results)
    report(1, ok, f"switch counts {[k for k, _ in results]}, min ARI {min(a for _, a in results):.3f}")
    assert ok


def _small_instances():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n, m, T = int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(2, 9))
        model = random_model(rng, n, m, T)
        k = int(rng.integers(0, T))
        sw = sorted(rng.choice(np.arange(1, T), size=k, replace=False).tolist())
        edges = [0, *sw, T]
        r = np.empty((T, m * n))
        for a, b in zip(edges[:-1], edges[1:]):
            r[a:b] = rng.normal(size=m * n)
        yield rng, model, soft_backward(model, r).policy


def _all_feasible_patterns(model, policy):
    T = model.horizon
    return [list(p) for k in range(T) for p in itertools.combinations(range(1, T), k)
            if pattern_feasible(model, policy, list(p))]


def test_criterion_02_greedy_matches_brute_force(report):
    mismatches = 0
    for _, model, policy in _small_instances():
        greedy = greedy_partition(model, policy)
        best = min(len(p) for p in _all_feasible_patterns(model, policy))
        mismatches += len(greedy.switch_times) != best
    report(2, mismatches == 0, f"{mismatches}/50 instances where greedy != exhaustive minimum")
    assert mismatches == 0


def test_criterion_03_interval_properties(report):
    extendable = order_violations = 0
    for rng, model, policy in _small_instances():
        part = greedy_partition(model, policy)
        for u, tau in part.intervals()[1:]:
            for _ in range(10):
                cs = build_invariant_set(model, policy, u - 1, tau, rng.normal(scale=3.0, size=model.n))
                extendable += check_feasible(cs) is not None
        g = part.switch_times[::-1]
        for pattern in _all_feasible_patterns(model, policy):
            # compare the last, second-to-last, ... switch times
            order_violations += any(x > y for x, y in zip(g, pattern[::-1]))
    ok = extendable == 0 and order_violations == 0
    report(3, ok, f"{extendable} extendable intervals, {order_violations} ordering violations")
    assert ok


def test_criterion_04_finite_sample_trend(report):
    T, k = 20, 2
    model = make_gridworld(open_grid(3), GAMMA, T)
    means, worst_k = [], 0
    for N in (10**3, 10**4, 10**5, 10**6):
        aris = []
        for seed in range(10):
            reward, labels = random_piecewise_reward(model.mn, T, k, seed=seed)
            policy = soft_backward(model, reward).policy
            trajs = sample_trajectories(model, policy, N, seed=1000 + seed)
            pi_hat, counts = estimate_policy(trajs, model.m, model.n)
            part = greedy_partition(model, pi_hat, bound=build_bound_vector(pi_hat, counts, 0.9999))
            aris.append(adjusted_rand_index(part.labels(), labels))
            worst_k = max(worst_k, len(part.switch_times))
        means.append(float(np.mean(aris)))
    drops = [b - a for a, b in zip(means[:-1], means[1:]) if b < a]
    trend_ok = len(drops) == 0 or (len(drops) == 1 and drops[0] >= -0.02)
    ok = trend_ok and worst_k <= k
    report(4, ok, f"mean ARI by N {[round(v, 3) for v in means]}, max switches {worst_k}")
    assert ok


def test_criterion_05_low_rank_recovery(report):
    T = 15
    spec = open_grid(3)
    model = make_gridworld(spec, GAMMA, T)
    U = indicator_features(spec)
    reward, weights = random_walk_feature_reward(U, T, seed=0)
    policy = soft_backward(model, reward).policy
    res = solve_nuclear(build_exact_set(model, policy), (model.mn, T))
    fd = decompose(res.reward_matrix, 1e-4)
    angle, corr = float("nan"), []
    if fd.rank == 2:
        angle = float(principal_angles(fd.u_basis, U).max())
        try:
            aligned = align_to_reference(fd, U, weights)
            corr = [float(np.corrcoef(aligned.weights[i], weights[i])[0, 1]) for i in range(2)]
        except AlignmentError:
            pass
    ok = fd.rank == 2 and angle <= 1e-3 and len(corr) == 2 and min(corr) >= 0.99
    report(5, ok, f"rank {fd.rank}, max angle {angle:.3g} rad, weight corr {np.round(corr, 3).tolist()}, "
                  f"nuclear norm {res.nuclear_norm:.3f} vs truth {np.linalg.norm(reward, 'nuc'):.3f}")
    assert ok


def test_criterion_06_policy_reproduction(report):
    worst = 0.0
    # minimum-switch pipeline, exact
    model = make_gridworld(open_grid(4), GAMMA, 20)
    reward, _ = random_piecewise_reward(model.mn, 20, 3, seed=7)
    policy = soft_backward(model, reward).policy
    part = greedy_partition(model, policy)
    worst = max(worst, policy_distance(soft_backward(model, assemble_reward(part)).policy, policy))
    # low-rank pipeline, exact
    spec = open_grid(3)
    lr_model = make_gridworld(spec, GAMMA, 15)
    lr_reward, _ = random_walk_feature_reward(indicator_features(spec), 15, seed=0)
    lr_policy = soft_backward(lr_model, lr_reward).policy
    res = solve_nuclear(build_exact_set(lr_model, lr_policy), (lr_model.mn, 15))
    worst = max(worst, policy_distance(soft_backward(lr_model, res.reward_matrix.T).policy, lr_policy))
    # robust mode: recovered (reward, values) lie inside the b intervals
    trajs = sample_trajectories(model, policy, 20_000, seed=3)
    pi_hat, counts = estimate_policy(trajs, model.m, model.n)
    b = build_bound_vector(pi_hat, counts, 0.9999)
    rpart = greedy_partition(model, pi_hat, bound=b)
    ms_violation = partition_residual(model, rpart, pi_hat, b)
    lr_trajs = sample_trajectories(lr_model, lr_policy, 20_000, seed=4)
    lr_hat, lr_counts = estimate_policy(lr_trajs, lr_model.m, lr_model.n)
    lr_b = build_bound_vector(lr_hat, lr_counts, 0.9999)
    rres = solve_nuclear(build_robust_set(lr_model, lr_hat, lr_b), (lr_model.mn, 15))
    ok = worst <= 1e-5 and ms_violation <= INTERVAL_TOL and rres.violation <= 1e-6
    report(6, ok, f"exact max policy distance {worst:.2e}; robust interval violation "
                  f"{ms_violation:.1e} (min-switch), {rres.violation:.1e} (low-rank)")
    assert ok


def test_criterion_07_hoeffding_coverage(report):
    rng = np.random.default_rng(7)
    probs = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
    worst = []
    for delta in (0.9, 0.99):
        for count in (100, 1000):
            draws = rng.multinomial(count, probs, size=500) / count
            eps = epsilon_radius(count, delta)
            with np.errstate(divide="ignore"):
                dev = np.abs(np.log(draws) - np.log(probs))
                b = np.where(draws > eps, eps / (draws - eps), np.inf)
            freq = np.mean(dev <= b, axis=0).min()
            worst.append((delta, count, float(freq)))
    ok = all(f >= d - 0.02 for d, _, f in worst)
    report(7, ok, "min coverage per (delta, count): " + ", ".join(f"{d}/{c}: {f:.3f}" for d, c, f in worst))
    assert ok


def test_criterion_08_transfer_dominance(report):
    T = 50
    spec = open_grid(5)
    src = make_gridworld(spec, GAMMA, T)
    U = indicator_features(spec)
    lines, ok = [], True
    for seed in (0, 1):
        reward, _ = random_walk_feature_reward(U, T, seed=seed)
        policy = soft_backward(src, reward).policy
        res = solve_nuclear(build_exact_set(src, policy), (src.mn, T))
        static = static_reward_fit(src, policy)
        for name, grid in (("blocked", blocked_grid()), ("sticky", sticky_grid())):
            tgt = make_gridworld(grid, GAMMA, T)
            samples = sample_trajectories(tgt, soft_backward(tgt, reward).policy, 20_000, seed=100 + seed)
            s_true = transfer_eval(reward, tgt, samples)
            s_learned = transfer_eval(res.reward_matrix.T, tgt, samples)
            s_static = transfer_eval(static, tgt, samples)
            ok &= abs(s_learned - s_true) <= 0.05 and s_learned > s_static
            lines.append(f"{name}[{seed}] true {s_true:.4f} learned {s_learned:.4f} static {s_static:.4f}")
    report(8, ok, "; ".join(lines))
    assert ok


def test_criterion_09_forward_solver_oracle(report):
    rng = np.random.default_rng(9)
    worst_fwd = worst_rt = 0.0
    for _ in range(100):
        n, m, T = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
        model = random_model(rng, n, m, T)
        reward = rng.normal(scale=2.0, size=(T, m * n))
        sol = soft_backward(model, reward)
        Q, V, pi = scalar_soft_backward(model.transitions.tolist(), model.gamma, reward.tolist(), T, m, n)
        worst_fwd = max(worst_fwd, np.abs(sol.q - Q).max(), np.abs(sol.v - V).max(),
                        np.abs(sol.policy - pi).max())
        r2 = reward_from_policy(model, sol.policy, sol.v)
        worst_rt = max(worst_rt, np.abs(r2 - reward).max(),
                       np.abs(soft_backward(model, r2).policy - sol.policy).max())
    ok = worst_fwd <= 1e-12 and worst_rt <= 1e-8
    report(9, ok, f"scalar-loop gap {worst_fwd:.1e}, inverse round-trip gap {worst_rt:.1e}")
    assert ok


def test_criterion_10_svt_and_rank_one(report):
    rng = np.random.default_rng(10)
    svt_gap = 0.0
    for _ in range(50):
        M = rng.normal(size=(int(rng.integers(1, 10)), int(rng.integers(1, 10))))
        tau = float(rng.uniform(0, 3))
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
        svt_gap = max(svt_gap, np.abs(svt(M, tau) - (U * np.maximum(s - tau, 0)) @ Vt).max())
    ratios, violations = [], []
    for seed in range(10):
        irng = np.random.default_rng(seed)
        P = irng.dirichlet(np.ones(2), size=(2, 2))
        model = MdpModel(P / P.sum(axis=2, keepdims=True), np.ones(2) / 2, GAMMA, 4)
        u = irng.normal(size=4)
        reward = np.outer(irng.normal(size=4), u / np.linalg.norm(u))  # rank one, (T, mn)
        res = solve_nuclear(build_exact_set(model, soft_backward(model, reward).policy), (4, 4),
                            AdmmParams(primal_tol=1e-8, dual_tol=1e-8, max_iter=20000))
        s = np.linalg.svd(res.reward_matrix, compute_uv=False)
        ratios.append(float(s[1] / s[0]))
        violations.append(res.violation)
    ok = svt_gap <= 1e-10 and max(ratios) <= 1e-5 and max(violations) <= 1e-6
    report(10, ok, f"svt gap {svt_gap:.1e}; rank-one sigma2/sigma1 {[f'{v:.1e}' for v in ratios]}; "
                   f"max violation {max(violations):.1e}")
    assert ok

