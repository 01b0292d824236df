import numpy as np
import pytest

from sparse_rks.fixtures import (load_measurements, load_model, load_trajectory, read_blocks,
                                 save_measurements, save_model, save_trajectory, write_blocks)
from sparse_rks.model import LdsModel, build_random_system, generate_sparse_inputs, simulate


def test_block_format(tmp_path):
    path = tmp_path / "m.txt"
    write_blocks(path, [("A", np.array([[1.0 / 3.0, -2.0]]))])
    lines = path.read_text().splitlines()
    assert lines[0] == "A 1 2"
    first = lines[1].split()[0]
    assert "e" in first and len(first.split("e")[0].replace(".", "").lstrip("-")) == 17


def test_blocks_round_trip_exactly(tmp_path, rng):
    mats = [("X", rng.standard_normal((3, 4))), ("X", rng.standard_normal((3, 4))), ("s", np.array([[2.5]]))]
    write_blocks(tmp_path / "b.txt", mats)
    back = read_blocks(tmp_path / "b.txt")
    assert [n for n, _ in back] == ["X", "X", "s"]
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(mats, back))


def test_model_round_trip(tmp_path):
    model = build_random_system(3, 2, 4, 5, seed=3, sigma_v=0.7)
    save_model(tmp_path / "model.txt", model)
    back = load_model(tmp_path / "model.txt")
    assert back.K == 5
    for name in "ABCDQR":
        assert np.array_equal(getattr(model, name), getattr(back, name))


def test_time_varying_model_round_trip(tmp_path, rng):
    A = [0.3 * rng.standard_normal((2, 2)) for _ in range(3)]
    model = LdsModel(A=A, B=np.ones((2, 1)), C=np.eye(2), D=np.ones((2, 1)), Q=np.eye(2), R=np.eye(2), K=3)
    save_model(tmp_path / "tv.txt", model)
    back = load_model(tmp_path / "tv.txt")
    assert not back.time_invariant and np.array_equal(back.A, model.A)


def test_trajectory_and_measurements_round_trip(tmp_path):
    model = build_random_system(3, 4, 2, 6, seed=1)
    u, supports = generate_sparse_inputs(4, 6, 2, 3.0, seed=2)
    traj = simulate(model, u, seed=3, supports=supports, sigma_u=3.0)
    save_trajectory(tmp_path / "t.txt", traj)
    back = load_trajectory(tmp_path / "t.txt")
    for name in ("x", "u", "y", "w", "v"):
        assert np.array_equal(getattr(traj, name), getattr(back, name))
    assert back.sigma_u == 3.0
    assert all(np.array_equal(a, b) for a, b in zip(traj.supports, back.supports))
    save_measurements(tmp_path / "y.txt", traj.y)
    assert np.array_equal(load_measurements(tmp_path / "y.txt"), traj.y)


@pytest.mark.parametrize("text", ["A 2 2\n1 2\n", "A 2\n1 2\n", "A 1 2\n1 2 3\n"])
def test_malformed(tmp_path, text):
    (tmp_path / "bad.txt").write_text(text)
    with pytest.raises(ValueError):
        read_blocks(tmp_path / "bad.txt")


def test_missing_model_block(tmp_path):
    write_blocks(tmp_path / "m.txt", [("A", np.eye(2))])
    with pytest.raises(ValueError):
        load_model(tmp_path / "m.txt")
