import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import random_model
from tvirl import formats
from tvirl.bench import blocked_grid
from tvirl.mdp_core import ModelError
from tvirl.min_switch import greedy_partition
from tvirl.reward_sets import build_robust_set
from tvirl.soft_rl import sample_trajectories, soft_backward

floats = st.floats(allow_nan=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 5), st.integers(1, 5)), elements=floats))
def test_table_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("t") / "a.csv"
    formats.write_table(path, a)
    back = formats.read_table(path)
    assert back.shape == a.shape
    assert np.array_equal(back, a)


def test_table_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n")
    with pytest.raises(formats.FormatError, match="header"):
        formats.read_table(p)
    p.write_text("# 2 2\n1,2\n")
    with pytest.raises(formats.FormatError, match="2 rows"):
        formats.read_table(p)
    p.write_text("# 1 2\n1,2,3\n")
    with pytest.raises(formats.FormatError, match="row 0"):
        formats.read_table(p)
    with pytest.raises(formats.FormatError):
        formats.write_table(p, np.zeros((1, 1, 1)))


def test_model_grid_policy_round_trip(tmp_path, rng):
    model = random_model(rng, 3, 2, 4)
    formats.write_model(tmp_path / "m.json", model)
    back = formats.read_model(tmp_path / "m.json")
    assert np.array_equal(back.transitions, model.transitions) and back.gamma == model.gamma
    formats.write_grid(tmp_path / "g.json", blocked_grid())
    assert formats.read_grid(tmp_path / "g.json") == blocked_grid()
    pol = soft_backward(model, rng.normal(size=(4, 6))).policy
    formats.write_policy(tmp_path / "p.csv", pol)
    assert np.array_equal(formats.read_policy(tmp_path / "p.csv", 2, 3), pol)
    with pytest.raises(formats.FormatError):
        formats.read_policy(tmp_path / "p.csv", 3, 3)


def test_model_file_errors(tmp_path, rng):
    doc = random_model(rng, 2, 2, 3).to_dict()
    doc["mu0"] = [1.0]
    formats.write_json(tmp_path / "m.json", doc)
    with pytest.raises(ModelError, match="m.json"):
        formats.read_model(tmp_path / "m.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(formats.FormatError):
        formats.read_json(tmp_path / "bad.json")


def test_trajectory_round_trip(tmp_path, rng):
    model = random_model(rng, 3, 2, 4)
    pol = soft_backward(model, rng.normal(size=(4, 6))).policy
    tr = sample_trajectories(model, pol, 50, seed=9)
    formats.write_trajectories(tmp_path / "t.txt", tr)
    back = formats.read_trajectories(tmp_path / "t.txt")
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.actions, tr.actions)
    assert back.seed == 9
    lines = (tmp_path / "t.txt").read_text().splitlines()
    lines[4] = lines[4] + " 1"
    (tmp_path / "t.txt").write_text("\n".join(lines))
    with pytest.raises(formats.FormatError):
        formats.read_trajectories(tmp_path / "t.txt")


def test_partition_labels_and_constraints_round_trip(tmp_path, rng):
    model = random_model(rng, 2, 2, 5)
    r = np.tile(rng.normal(size=4), (5, 1))
    r[:2] += 1.0
    pol = soft_backward(model, r).policy
    part = greedy_partition(model, pol)
    formats.write_json(tmp_path / "p.json", formats.partition_to_dict(part))
    back = formats.partition_from_dict(formats.read_json(tmp_path / "p.json"))
    assert back.switch_times == part.switch_times
    assert all(np.array_equal(a, b) for a, b in zip(back.interval_rewards, part.interval_rewards))
    assert np.array_equal(back.boundary_values, part.boundary_values)
    formats.write_labels(tmp_path / "l.txt", part.labels())
    assert np.array_equal(formats.read_labels(tmp_path / "l.txt"), part.labels())

    b = np.full(20, 0.1)
    b[3] = np.inf
    cs = build_robust_set(model, pol, b)
    formats.write_constraint_set(tmp_path / "c.txt", cs)
    cs2 = formats.read_constraint_set(tmp_path / "c.txt", cs.layout)
    assert np.array_equal(cs2.a_matrix, cs.a_matrix)
    assert np.array_equal(cs2.lower, cs.lower) and np.array_equal(cs2.upper, cs.upper)
    (tmp_path / "c.txt").write_text("3 3\n1 2 3\n")
    with pytest.raises(formats.FormatError):
        formats.read_constraint_set(tmp_path / "c.txt")
