"""Command-line experiment runner.

Every command writes its outputs plus a ``manifest.json`` (arguments, derived
seeds, tolerances, library versions) into ``--out``. ``tvirl replay`` reruns
a manifest into a fresh directory.

Exit status: 0 on success, 1 when a stage raised, 2 when a solver did not
converge and ``--allow-nonconverged`` was not given.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import bench, formats
from .estimation import DEFAULT_DELTA, build_bound_vector, estimate_policy
from .low_rank import RANK_TOL, AdmmParams, align_to_reference, decompose, principal_angles, solve_nuclear
from .mdp_core import MdpModel
from .min_switch import assemble_reward, greedy_partition, partition_residual
from .reward_sets import EQUALITY_TOL, build_exact_set, build_robust_set
from .soft_rl import mean_action_loglik, policy_distance, sample_trajectories, soft_backward

log = logging.getLogger("tvirl")

WORKERS_ENV = "TVIRL_WORKERS"
EXIT_ERROR = 1
EXIT_NONCONVERGED = 2


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


class NotConverged(RuntimeError):
    pass


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (StageError, NotConverged):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def substream(seed: int, name: str) -> int:
    """Derive a named, reproducible child seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"tvirl": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- gen

def cmd_gen(args, out: Path, manifest: dict) -> int:
    with stage("build gridworld"):
        spec = formats.read_grid(args.grid) if args.grid else bench.open_grid(args.size, args.wind)
        model = bench.make_gridworld(spec, args.gamma, args.T)
    seeds = {"reward": substream(args.seed, "reward"),
             "trajectories": substream(args.seed, "trajectories")}
    manifest["seeds"] = seeds
    with stage("generate reward"):
        if args.reward == "piecewise":
            reward, labels = bench.random_piecewise_reward(
                model.mn, args.T, args.k, (args.beta_min, args.beta_max), seeds["reward"])
        else:
            features = bench.indicator_features(spec, model.m)
            reward, weights = bench.random_walk_feature_reward(
                features, args.T, args.sigma, seeds["reward"])
    with stage("solve forward problem"):
        policy = soft_backward(model, reward).policy
    with stage("write outputs"):
        formats.write_grid(out / "grid.json", spec)
        formats.write_model(out / "model.json", model)
        formats.write_table(out / "reward.csv", reward)
        formats.write_policy(out / "policy.csv", policy)
        if args.reward == "piecewise":
            formats.write_labels(out / "labels.txt", labels)
        else:
            formats.write_table(out / "features.csv", features)
            formats.write_table(out / "weights.csv", weights)
    if args.n_traj > 0:
        with stage("sample trajectories"):
            trajs = sample_trajectories(model, policy, args.n_traj, seeds["trajectories"])
            formats.write_trajectories(out / "trajectories.txt", trajs)
    return 0


# ----------------------------------------------------------- targets

def _load_target(args, model: MdpModel):
    """Exact policy, or (empirical policy, bound vector) from trajectories."""
    if bool(args.policy) == bool(args.trajectories):
        raise ValueError("give exactly one of --policy or --trajectories")
    if args.policy:
        return formats.read_policy(args.policy, model.m, model.n), None
    trajs = formats.read_trajectories(args.trajectories)
    pi_hat, counts = estimate_policy(trajs, model.m, model.n, model.horizon)
    return pi_hat, build_bound_vector(pi_hat, counts, args.delta)


def cmd_minswitch(args, out: Path, manifest: dict) -> int:
    with stage("load inputs"):
        model = formats.read_model(args.model)
        policy, bound = _load_target(args, model)
    manifest["mode"] = "exact" if bound is None else "robust"
    with stage("greedy partition"):
        part = greedy_partition(model, policy, bound=bound, tol=args.tol)
        reward = assemble_reward(part, model.horizon)
        residual = partition_residual(model, part, policy, bound)
    summary = {
        "mode": manifest["mode"],
        "switch_times": [int(t) for t in part.switch_times],
        "switch_count": len(part.switch_times),
        "oracle_calls": part.oracle_calls,
        "residual": residual,
    }
    if bound is None:
        with stage("verify policy"):
            summary["policy_distance"] = policy_distance(soft_backward(model, reward).policy, policy)
    if args.labels:
        with stage("score partition"):
            truth = formats.read_labels(args.labels)
            summary["ari"] = bench.adjusted_rand_index(part.labels(), truth)
    with stage("write outputs"):
        formats.write_json(out / "partition.json", formats.partition_to_dict(part))
        formats.write_table(out / "reward.csv", reward)
        formats.write_labels(out / "labels.txt", part.labels())
        formats.write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_lowrank(args, out: Path, manifest: dict) -> int:
    with stage("load inputs"):
        model = formats.read_model(args.model)
        policy, bound = _load_target(args, model)
    manifest["mode"] = "exact" if bound is None else "robust"
    params = AdmmParams(rho=args.rho, max_iter=args.max_iter, primal_tol=args.tol, dual_tol=args.tol)
    with stage("nuclear-norm solve"):
        cs = build_exact_set(model, policy) if bound is None else build_robust_set(model, policy, bound)
        res = solve_nuclear(cs, (model.mn, model.horizon), params)
    with stage("decompose"):
        fd = decompose(res.reward_matrix, args.rank_tol)
    report = {"mode": manifest["mode"], "rank": fd.rank, **res.diagnostics()}
    if bound is None:
        report["policy_distance"] = policy_distance(
            soft_backward(model, res.reward_matrix.T).policy, policy)
    aligned = None
    if args.features:
        with stage("align to reference features"):
            u_ref = formats.read_table(args.features)
            ref_w = formats.read_table(args.weights) if args.weights else None
            report["principal_angles"] = principal_angles(fd.u_basis, u_ref).tolist() if fd.rank else []
            if fd.rank == u_ref.shape[1]:
                aligned = align_to_reference(fd, u_ref, ref_w)
                if ref_w is not None:
                    report["weight_correlation"] = [
                        float(np.corrcoef(aligned.weights[k], ref_w[k])[0, 1]) for k in range(fd.rank)]
            else:
                report["alignment"] = f"skipped: recovered rank {fd.rank} != {u_ref.shape[1]} references"
    with stage("write outputs"):
        formats.write_table(out / "reward_matrix.csv", res.reward_matrix)
        formats.write_table(out / "nu.csv", res.nu.reshape(model.horizon, model.n))
        formats.write_table(out / "basis.csv", fd.u_basis)
        formats.write_table(out / "feature_weights.csv", fd.weights)
        if aligned is not None:
            formats.write_table(out / "aligned_basis.csv", aligned.u_basis)
            formats.write_table(out / "aligned_weights.csv", aligned.weights)
        formats.write_json(out / "diagnostics.json", report)
    print(json.dumps({k: v for k, v in report.items() if k != "trace"}, sort_keys=True))
    if not res.converged and not args.allow_nonconverged:
        raise NotConverged(f"ADMM stopped after {res.iterations} iterations without converging")
    return 0


def cmd_estimate(args, out: Path, manifest: dict) -> int:
    with stage("load inputs"):
        model = formats.read_model(args.model)
        trajs = formats.read_trajectories(args.trajectories)
    with stage("estimate policy"):
        pi_hat, counts = estimate_policy(trajs, model.m, model.n, model.horizon)
        bound = build_bound_vector(pi_hat, counts, args.delta)
    with stage("write outputs"):
        formats.write_policy(out / "pi_hat.csv", pi_hat)
        formats.write_table(out / "counts_ts.csv", counts.n_ts)
        formats.write_table(out / "counts_tsa.csv", counts.n_tsa.reshape(model.horizon, -1))
        formats.write_table(out / "bound.csv", bound.reshape(model.horizon, -1))
    finite = np.isfinite(bound)
    print(json.dumps({"trajectories": trajs.count, "finite_bounds": int(finite.sum()),
                      "total_bounds": int(bound.size)}))
    return 0


# ------------------------------------------------------------- ari

def ari_run(job: dict) -> dict:
    """One ARI repetition; top-level so it can run in a worker."""
    spec = bench.open_grid(job["size"], job["wind"])
    model = bench.make_gridworld(spec, job["gamma"], job["T"])
    reward, labels = bench.random_piecewise_reward(model.mn, job["T"], job["k"],
                                                   seed=job["reward_seed"])
    policy = soft_backward(model, reward).policy
    if job["n_traj"] == 0:
        part = greedy_partition(model, policy)
    else:
        trajs = sample_trajectories(model, policy, job["n_traj"], job["traj_seed"])
        pi_hat, counts = estimate_policy(trajs, model.m, model.n)
        part = greedy_partition(model, pi_hat, bound=build_bound_vector(pi_hat, counts, job["delta"]))
    return {"n_traj": job["n_traj"], "rep": job["rep"],
            "ari": bench.adjusted_rand_index(part.labels(), labels),
            "switches": len(part.switch_times)}


def cmd_ari(args, out: Path, manifest: dict) -> int:
    counts = [int(v) for v in args.n_traj.split(",") if v.strip()]
    if args.include_exact:
        counts = [0, *counts]
    jobs = []
    for rep in range(args.reps):
        rseed = substream(args.seed, f"reward/{rep}")
        for n_traj in counts:
            jobs.append({"size": args.size, "wind": args.wind, "gamma": args.gamma, "T": args.T,
                         "k": args.k, "delta": args.delta, "n_traj": n_traj, "rep": rep,
                         "reward_seed": rseed,
                         "traj_seed": substream(args.seed, f"trajectories/{rep}/{n_traj}")})
    manifest["seeds"] = {f"{j['rep']}/{j['n_traj']}": [j["reward_seed"], j["traj_seed"]] for j in jobs}
    with stage("run repetitions"):
        workers = _worker_count()
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                runs = list(pool.map(ari_run, jobs))
        else:
            runs = [ari_run(j) for j in jobs]
    rows = []
    for n_traj in counts:
        sel = [r for r in runs if r["n_traj"] == n_traj]
        a = np.array([r["ari"] for r in sel])
        k = np.array([r["switches"] for r in sel])
        rows.append([n_traj, a.mean(), a.std(), k.mean(), k.std()])
    with stage("write outputs"):
        formats.write_table(out / "runs.csv", [[r["n_traj"], r["rep"], r["ari"], r["switches"]] for r in runs])
        formats.write_table(out / "table.csv", rows)
    for n_traj, am, asd, km, ksd in rows:
        name = "exact" if n_traj == 0 else str(n_traj)
        print(f"{name:>10}  ARI {am:.3f} +- {asd:.3f}  switches {km:.1f} +- {ksd:.1f}")
    return 0


# -------------------------------------------------------- transfer

def _target_specs(args):
    specs = []
    for name in args.targets.split(","):
        name = name.strip()
        if name == "blocked":
            specs.append((name, bench.blocked_grid(args.wind)))
        elif name == "sticky":
            specs.append((name, bench.sticky_grid(args.wind)))
        elif name:
            specs.append((Path(name).stem, formats.read_grid(name)))
    return specs


def cmd_transfer(args, out: Path, manifest: dict) -> int:
    seeds = {"reward": substream(args.seed, "reward"),
             "samples": substream(args.seed, "samples")}
    manifest["seeds"] = seeds
    with stage("build source problem"):
        src_spec = bench.open_grid(args.size, args.wind)
        src = bench.make_gridworld(src_spec, args.gamma, args.T)
        features = bench.indicator_features(src_spec, src.m)
        r_true, _ = bench.random_walk_feature_reward(features, args.T, args.sigma, seeds["reward"])
        pi_src = soft_backward(src, r_true).policy
    with stage("learn low-rank reward"):
        params = AdmmParams(rho=args.rho, max_iter=args.max_iter, primal_tol=args.tol, dual_tol=args.tol)
        res = solve_nuclear(build_exact_set(src, pi_src), (src.mn, args.T), params)
        learned = res.reward_matrix.T
    with stage("fit static reward"):
        static = bench.static_reward_fit(src, pi_src)
    with stage("evaluate targets"):
        targets = _target_specs(args)
        rows = {"source_policy": [], "true_reward": [],
                "low_rank_reward": [], "static_reward": []}
        for name, spec in targets:
            tgt = bench.make_gridworld(spec, args.gamma, args.T)
            pi_true = soft_backward(tgt, r_true).policy
            samples = sample_trajectories(tgt, pi_true, args.n_traj, substream(seeds["samples"], name))
            rows["source_policy"].append(mean_action_loglik(pi_src, samples))
            rows["true_reward"].append(mean_action_loglik(pi_true, samples))
            rows["low_rank_reward"].append(bench.transfer_eval(learned, tgt, samples))
            rows["static_reward"].append(bench.transfer_eval(static, tgt, samples))
    with stage("write outputs"):
        names = [n for n, _ in targets]
        lines = ["policy," + ",".join(names)]
        lines += [k + "," + ",".join(repr(float(v)) for v in vals) for k, vals in rows.items()]
        (out / "transfer.csv").write_text("\n".join(lines) + "\n")
        formats.write_table(out / "learned_reward.csv", learned)
        formats.write_table(out / "true_reward.csv", r_true)
        formats.write_json(out / "diagnostics.json", res.diagnostics())
    print("\n".join(lines))
    if not res.converged and not args.allow_nonconverged:
        raise NotConverged(f"ADMM stopped after {res.iterations} iterations without converging")
    return 0


# ------------------------------------------------------------- parser

COMMANDS = {
    "gen": cmd_gen,
    "minswitch": cmd_minswitch,
    "lowrank": cmd_lowrank,
    "estimate": cmd_estimate,
    "ari": cmd_ari,
    "transfer": cmd_transfer,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of option defaults (keys use option dest names)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _admm(p):
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6, help="primal and dual residual tolerance")
    p.add_argument("--allow-nonconverged", action="store_true")


def _target(p):
    p.add_argument("--model", required=True)
    p.add_argument("--policy", help="exact policy table")
    p.add_argument("--trajectories", help="demonstrations (robust mode)")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)


def _grid(p, size=5, T=50):
    p.add_argument("--size", type=int, default=size)
    p.add_argument("--wind", type=float, default=bench.DEFAULT_WIND)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--T", type=int, default=T)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvirl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="gridworld, reward, exact policy and trajectories")
    _common(p)
    _grid(p)
    p.add_argument("--grid", help="GridSpec JSON (overrides --size/--wind)")
    p.add_argument("--reward", choices=("piecewise", "features"), default="piecewise")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--beta-min", type=float, default=0.1)
    p.add_argument("--beta-max", type=float, default=0.4)
    p.add_argument("--sigma", type=float, default=bench.DEFAULT_SIGMA)
    p.add_argument("--n-traj", type=int, default=0)

    p = sub.add_parser("minswitch", help="minimum-switch reward recovery")
    _common(p)
    _target(p)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--labels", help="true interval labels, for ARI")

    p = sub.add_parser("lowrank", help="nuclear-norm reward recovery")
    _common(p)
    _target(p)
    _admm(p)
    p.add_argument("--rank-tol", type=float, default=RANK_TOL)
    p.add_argument("--features", help="reference feature table for alignment")
    p.add_argument("--weights", help="reference weight table for sign/correlation")

    p = sub.add_parser("estimate", help="empirical policy, counts and error bounds")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)

    p = sub.add_parser("ari", help="switch-recovery ARI table over repetitions")
    _common(p)
    _grid(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n-traj", default="", help="comma-separated trajectory counts")
    p.add_argument("--include-exact", action="store_true")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)

    p = sub.add_parser("transfer", help="transferability score table")
    _common(p)
    _grid(p)
    _admm(p)
    p.add_argument("--sigma", type=float, default=bench.DEFAULT_SIGMA)
    p.add_argument("--n-traj", type=int, default=10000)
    p.add_argument("--targets", default="blocked,sticky",
                   help="comma list of 'blocked', 'sticky' or GridSpec JSON paths")

    p = sub.add_parser("replay", help="rerun a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        defaults = formats.read_json(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            parser.error(f"unknown keys in {args.config}: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    params = {k: v for k, v in vars(args).items() if k not in ("out", "config", "verbose")}
    manifest = {"command": args.command, "args": params, "seeds": {"root": args.seed},
                "tolerances": {"feasibility": getattr(args, "tol", None) or EQUALITY_TOL,
                               "delta": getattr(args, "delta", None)},
                "versions": _versions()}
    status = 0
    try:
        status = COMMANDS[args.command](args, out, manifest)
    except StageError as exc:
        manifest["error"] = str(exc)
        (out / "FAILED").write_text(str(exc) + "\n")
        print(f"tvirl {args.command}: {exc}", file=sys.stderr)
        status = EXIT_ERROR
    except NotConverged as exc:
        manifest["error"] = str(exc)
        (out / "FAILED").write_text(str(exc) + "\n")
        print(f"tvirl {args.command}: {exc}", file=sys.stderr)
        status = EXIT_NONCONVERGED
    formats.write_json(out / "manifest.json", manifest)
    return status


def replay(manifest_path, out) -> int:
    doc = formats.read_json(manifest_path)
    args = argparse.Namespace(**doc["args"], out=out, config=None, verbose=False)
    return run(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = _parse(parser, argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        return replay(args.manifest, args.out)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
