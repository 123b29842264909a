"""Plain-text readers and writers for models, trajectories, tables and results.

* model / grid / partition / manifest: JSON documents
* numeric tables: first line ``# rows cols``, then comma-separated rows written
  with 17 significant digits so values round-trip exactly
* trajectories: ``N``, ``T`` and ``seed`` header lines, then one line per
  trajectory ``index s_0 a_0 s_1 ... a_{T-1} s_T``
* constraint dumps: ``rows cols`` header, dense matrix rows, then the lower and
  upper bound vectors, one line each
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bench import GridSpec
from .mdp_core import MdpModel, ModelError
from .min_switch import Partition
from .reward_sets import ConstraintSet
from .soft_rl import TrajectorySet


class FormatError(ValueError):
    pass


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def write_model(path, model: MdpModel) -> None:
    write_json(path, model.to_dict())


def read_model(path) -> MdpModel:
    try:
        return MdpModel.from_dict(read_json(path))
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from exc


def write_grid(path, spec: GridSpec) -> None:
    write_json(path, spec.to_dict())


def read_grid(path) -> GridSpec:
    return GridSpec.from_dict(read_json(path))


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def write_table(path, array) -> None:
    a = np.asarray(array, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError("tables must be 1-d or 2-d")
    lines = [f"# {a.shape[0]} {a.shape[1]}"]
    lines += [",".join(_fmt(v) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise FormatError(f"{path}: missing '# rows cols' header")
    try:
        rows, cols = (int(v) for v in text[0][1:].split())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header {text[0]!r}") from exc
    body = [line for line in text[1:] if line.strip()]
    if len(body) != rows:
        raise FormatError(f"{path}: header says {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for i, line in enumerate(body):
        vals = line.split(",")
        if len(vals) != cols:
            raise FormatError(f"{path}: row {i} has {len(vals)} columns, expected {cols}")
        out[i] = [float(v) for v in vals]
    return out


def write_policy(path, policy) -> None:
    """Policy ``(T, m, n)`` stored as a ``(T, m*n)`` table in flat layout."""
    policy = np.asarray(policy, dtype=float)
    write_table(path, policy.reshape(policy.shape[0], -1))


def read_policy(path, m: int, n: int) -> np.ndarray:
    table = read_table(path)
    if table.shape[1] != m * n:
        raise FormatError(f"{path}: policy table has {table.shape[1]} columns, expected {m * n}")
    return table.reshape(-1, m, n)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path) -> np.ndarray:
    return np.array([int(line) for line in Path(path).read_text().split()], dtype=int)


def write_trajectories(path, trajs: TrajectorySet) -> None:
    N, T = trajs.count, trajs.horizon
    inter = np.empty((N, 2 * T + 1), dtype=np.int64)
    inter[:, 0::2] = trajs.states
    inter[:, 1::2] = trajs.actions
    with open(path, "w") as fh:
        fh.write(f"N {N}\nT {T}\nseed {trajs.seed if trajs.seed is not None else -1}\n")
        idx = np.arange(N, dtype=np.int64)[:, None]
        np.savetxt(fh, np.hstack([idx, inter]), fmt="%d")


def read_trajectories(path) -> TrajectorySet:
    with open(path) as fh:
        header = {}
        for _ in range(3):
            key, _, val = fh.readline().partition(" ")
            try:
                header[key] = int(val)
            except ValueError as exc:
                raise FormatError(f"{path}: malformed header line {key!r}") from exc
        if set(header) != {"N", "T", "seed"}:
            raise FormatError(f"{path}: expected N, T and seed header lines")
        try:
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed trajectory record ({exc})") from exc
    N, T = header["N"], header["T"]
    if data.shape != (N, 2 * T + 2):
        raise FormatError(f"{path}: expected {N} records of {2 * T + 2} integers, got {data.shape}")
    if np.any(data[:, 0] != np.arange(N)):
        raise FormatError(f"{path}: trajectory indices are not 0..N-1")
    seed = header["seed"] if header["seed"] >= 0 else None
    return TrajectorySet(states=data[:, 1::2], actions=data[:, 2::2], seed=seed)


def partition_to_dict(p: Partition) -> dict:
    return {
        "switch_times": [int(t) for t in p.switch_times],
        "interval_rewards": [np.asarray(r).tolist() for r in p.interval_rewards],
        "boundary_values": p.boundary_values.tolist(),
        "residuals": [float(v) for v in p.residuals],
        "oracle_calls": int(p.oracle_calls),
    }


def partition_from_dict(doc: dict) -> Partition:
    return Partition(
        switch_times=[int(t) for t in doc["switch_times"]],
        interval_rewards=[np.array(r, dtype=float) for r in doc["interval_rewards"]],
        boundary_values=np.array(doc["boundary_values"], dtype=float),
        oracle_calls=int(doc.get("oracle_calls", 0)),
        residuals=[float(v) for v in doc.get("residuals", [])],
    )


def write_constraint_set(path, cs: ConstraintSet) -> None:
    rows, cols = cs.shape
    lines = [f"{rows} {cols}"]
    lines += [" ".join(_fmt(v) for v in row) for row in cs.a_matrix]
    lines.append(" ".join(_fmt(v) for v in cs.lower))
    lines.append(" ".join(_fmt(v) for v in cs.upper))
    Path(path).write_text("\n".join(lines) + "\n")


def read_constraint_set(path, layout=None) -> ConstraintSet:
    lines = Path(path).read_text().splitlines()
    rows, cols = (int(v) for v in lines[0].split())
    if len(lines) < rows + 3:
        raise FormatError(f"{path}: truncated constraint dump")
    A = np.array([[float(v) for v in line.split()] for line in lines[1:rows + 1]]).reshape(rows, cols)
    lower = np.array([float(v) for v in lines[rows + 1].split()])
    upper = np.array([float(v) for v in lines[rows + 2].split()])
    return ConstraintSet(A, lower, upper, layout or {})
