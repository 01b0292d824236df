import numpy as np
import pytest

from sparse_rks.errors import DimensionMismatch
from sparse_rks.model import (LdsModel, build_random_system, generate_sparse_inputs, replay,
                              simulate, snr_to_sigma_v)


class TestLdsModel:
    def test_dimensions_and_broadcast(self):
        model = build_random_system(3, 2, 4, 5, seed=0)
        assert (model.n, model.m, model.p, model.K) == (3, 2, 4, 5)
        assert model.time_invariant
        assert np.array_equal(model.A_at(0), model.A_at(4))

    def test_time_varying_lists(self, rng):
        A = [rng.standard_normal((2, 2)) for _ in range(3)]
        model = LdsModel(A=A, B=np.ones((2, 1)), C=np.eye(2), D=np.ones((2, 1)),
                         Q=np.eye(2), R=np.eye(2), K=3)
        assert not model.time_invariant
        assert np.array_equal(model.A_at(2), A[2])

    def test_wrong_list_length(self):
        with pytest.raises(DimensionMismatch):
            LdsModel(A=[np.eye(2)] * 2, B=np.ones((2, 1)), C=np.eye(2), D=np.ones((2, 1)),
                     Q=np.eye(2), R=np.eye(2), K=3)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            LdsModel(A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2), D=np.ones((2, 1)),
                     Q=np.eye(2), R=np.eye(2), K=3)

    @pytest.mark.parametrize("bad", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, 0.5], [0.0, 1.0]])])
    def test_covariance_must_be_spd(self, bad):
        with pytest.raises(ValueError):
            LdsModel(A=np.eye(2), B=np.ones((2, 1)), C=np.eye(2), D=np.ones((2, 1)),
                     Q=bad, R=np.eye(2), K=2)

    def test_arrays_are_read_only(self):
        model = build_random_system(2, 2, 2, 2, seed=0)
        with pytest.raises(ValueError):
            model.A[0, 0, 0] = 1.0

    def test_step_out_of_range(self):
        with pytest.raises(IndexError):
            build_random_system(2, 2, 2, 2, seed=0).A_at(2)


class TestBuildRandomSystem:
    def test_study_dimensions(self):
        model = build_random_system(30, 100, 20, 30, seed=1)
        assert model.A_at(0).shape == (30, 30)
        assert model.B_at(0).shape == (30, 100)
        assert model.C_at(0).shape == (20, 30)
        assert model.D_at(0).shape == (20, 100)

    def test_minimal_dimensions(self):
        model = build_random_system(1, 1, 1, 1, seed=1)
        assert model.Q_at(0) == 1.0 and model.R_at(0) == 1.0

    def test_deterministic(self):
        a, b = build_random_system(4, 5, 3, 6, seed=9), build_random_system(4, 5, 3, 6, seed=9)
        for name in "ABCDQR":
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_noise_scale(self):
        model = build_random_system(2, 2, 3, 2, seed=0, sigma_v=0.5)
        assert np.allclose(model.R_at(0), 0.25 * np.eye(3))

    def test_larger_p_extends_rows(self):
        small, large = build_random_system(3, 4, 2, 2, seed=5), build_random_system(3, 4, 5, 2, seed=5)
        assert np.array_equal(small.A, large.A)
        assert np.array_equal(small.C_at(0), large.C_at(0)[:2])
        assert np.array_equal(small.D_at(0), large.D_at(0)[:2])

    @pytest.mark.parametrize("dims", [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
    def test_rejects_nonpositive(self, dims):
        with pytest.raises(ValueError):
            build_random_system(*dims, seed=0)


class TestSparseInputs:
    def test_sparsity_per_step(self):
        u, supports = generate_sparse_inputs(100, 30, 5, 5.0, "time_varying", seed=1)
        assert u.shape == (30, 100)
        assert all(np.count_nonzero(row) == 5 for row in u)
        assert all(np.array_equal(np.flatnonzero(row), supp) for row, supp in zip(u, supports))
        assert len({tuple(s) for s in supports}) > 1

    def test_zero_sparsity(self):
        u, supports = generate_sparse_inputs(4, 3, 0, 1.0, "time_varying", seed=1)
        assert not u.any() and all(len(s) == 0 for s in supports)

    def test_full_support_modes_coincide(self):
        _, tv = generate_sparse_inputs(4, 3, 4, 1.0, "time_varying", seed=1)
        _, jt = generate_sparse_inputs(4, 3, 4, 1.0, "joint", seed=1)
        assert all(np.array_equal(a, b) for a, b in zip(tv, jt))

    def test_joint_supports_identical(self):
        _, supports = generate_sparse_inputs(20, 6, 3, 1.0, "joint", seed=2)
        common = set(supports[0]).intersection(*map(set, supports))
        assert all(set(s) == common for s in supports)

    def test_s_larger_than_m(self):
        with pytest.raises(ValueError):
            generate_sparse_inputs(3, 2, 4, 1.0, "joint", seed=0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            generate_sparse_inputs(3, 2, 1, 1.0, "sometimes", seed=0)

    def test_amplitude_variance(self):
        u, _ = generate_sparse_inputs(50, 4000, 25, 5.0, "time_varying", seed=3)
        values = u[u != 0]
        assert values.size >= 1e5
        assert abs(values.var() / 25.0 - 1.0) < 0.05


class TestSnr:
    @pytest.mark.parametrize("snr,s,sigma_u,expected", [
        (20.0, 5, 5.0, 1.1180339887), (0.0, 1, 1.0, 1.0), (10.0, 2, 1.0, 0.4472135955)])
    def test_values(self, snr, s, sigma_u, expected):
        assert snr_to_sigma_v(snr, s, sigma_u) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("args", [(np.inf, 1, 1.0), (10.0, 0, 1.0), (10.0, 1, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            snr_to_sigma_v(*args)


class TestSimulate:
    def test_replay_reproduces(self):
        model = build_random_system(3, 4, 2, 6, seed=1, sigma_v=0.3)
        u, supports = generate_sparse_inputs(4, 6, 2, 1.0, seed=2)
        traj = simulate(model, u, seed=3, supports=supports)
        x, y = replay(model, traj.u, traj.x[0], traj.w, traj.v)
        assert np.abs(x - traj.x).max() == 0.0 and np.abs(y - traj.y).max() == 0.0
        assert traj.w.shape == (5, 3) and traj.v.shape == (6, 2)

    def test_dynamics_equations(self):
        model = build_random_system(3, 4, 2, 6, seed=1)
        traj = simulate(model, np.ones((6, 4)), seed=0)
        for k in range(5):
            assert np.allclose(traj.x[k + 1], model.A_at(k) @ traj.x[k] + model.B_at(k) @ traj.u[k] + traj.w[k])
        for k in range(6):
            assert np.allclose(traj.y[k], model.C_at(k) @ traj.x[k] + model.D_at(k) @ traj.u[k] + traj.v[k])

    def test_deterministic(self):
        model = build_random_system(3, 4, 2, 6, seed=1)
        a, b = simulate(model, np.zeros((6, 4)), seed=7), simulate(model, np.zeros((6, 4)), seed=7)
        assert np.array_equal(a.y, b.y)

    def test_noise_off(self):
        model = build_random_system(3, 4, 2, 6, seed=1)
        traj = simulate(model, np.ones((6, 4)), x1=np.ones(3), noise=False)
        assert not traj.w.any() and not traj.v.any()
        assert np.array_equal(traj.x[0], np.ones(3))

    def test_dimension_mismatch(self):
        model = build_random_system(3, 4, 2, 6, seed=1)
        with pytest.raises(DimensionMismatch):
            simulate(model, np.zeros((5, 4)))
        with pytest.raises(DimensionMismatch):
            simulate(model, np.zeros((6, 4)), x1=np.zeros(2))
