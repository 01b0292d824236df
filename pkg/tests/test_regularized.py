import numpy as np
import pytest

from sparse_rks.regularized import (augmented_model, group_l1_rks, group_soft_threshold, l1_rks,
                                    reweighted_l2_rks, ridge_rks, soft_threshold, tau_grid,
                                    weight_matrix)
from sparse_rks.rks import batch_map_oracle, rks_cost_gradient, rks_smooth

from conftest import random_instance, random_model


class TestShrinkage:
    def test_examples(self):
        out = soft_threshold([3.0, -0.5, -2.0, 1.0], 1.0)
        assert np.array_equal(out, [2.0, 0.0, -1.0, 0.0])

    def test_zero_threshold_is_identity(self, rng):
        a = rng.standard_normal(10)
        assert np.array_equal(soft_threshold(a, 0.0), a)

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold([1.0], -1.0)

    def test_nonexpansive(self, rng):
        for _ in range(100):
            a, b = rng.standard_normal(5), rng.standard_normal(5)
            t = rng.uniform(0, 2)
            assert (np.linalg.norm(soft_threshold(a, t) - soft_threshold(b, t))
                    <= np.linalg.norm(a - b) + 1e-15)

    def test_group(self):
        assert np.allclose(group_soft_threshold([3.0, 4.0], 2.5), [1.5, 2.0])
        assert not group_soft_threshold([3.0, 4.0], 5.0).any()
        assert group_soft_threshold([-2.0], 0.5)[0] == soft_threshold(-2.0, 0.5)


class TestWeights:
    def test_examples(self):
        W = weight_matrix([2.0, 0.0, -0.5], l=1)
        assert np.allclose(np.diag(W), [2.0, 1e-8, 0.5])
        assert np.allclose(np.diag(weight_matrix([2.0], l=0.5)), [2.0 ** 1.5])

    def test_exponent_range(self):
        with pytest.raises(ValueError):
            weight_matrix([1.0], l=2.0)

    def test_tau_grid(self):
        base = 0.5 * np.sqrt(2 * np.log(40))
        assert np.allclose(tau_grid(0.5, 40), [0.1 * base, base, 10 * base, 100 * base])


class TestAugmentedModel:
    def test_blocks(self):
        model = random_model(0, 2, 3, 4, 5)
        aug = augmented_model(model, 2.0 * np.eye(3))
        assert aug.p == 7
        assert np.array_equal(aug.D_at(0)[4:], np.eye(3))
        assert not aug.C_at(0)[4:].any()
        assert np.array_equal(aug.R_at(0)[4:, 4:], 2.0 * np.eye(3))
        assert not aug.R_at(0)[:4, 4:].any()

    def test_per_step_covariances(self):
        model = random_model(0, 2, 1, 2, 3)
        aug = augmented_model(model, [np.eye(1) * k for k in (1.0, 2.0, 3.0)])
        assert [aug.R_at(k)[2, 2] for k in range(3)] == [1.0, 2.0, 3.0]


def kkt_violation(model, y, report, tau):
    """Stationarity residual of f + 2 tau ||u||_1 at the ADMM output."""
    gx, gu = rks_cost_gradient(model, y, report.x, report.u)
    t = report.extra["admm"].t
    slack = np.where(t != 0, gu + 2 * tau * np.sign(t), np.maximum(np.abs(gu) - 2 * tau, 0.0))
    return max(np.abs(gx).max(), np.abs(slack).max())


class TestL1:
    @pytest.mark.parametrize("seed", range(3))
    def test_kkt(self, seed):
        model, traj = random_instance(seed, 3, 5, 3, 5)
        tau = 0.3
        report = l1_rks(model, traj.y, tau, r_max=20000, sigma_u=1e-3)
        assert report.converged
        scale = max(1.0, np.abs(rks_cost_gradient(model, traj.y, 0 * report.x, 0 * report.u)[1]).max())
        assert kkt_violation(model, traj.y, report, tau) < 1e-4 * scale
        assert np.any(report.extra["admm"].t == 0)

    def test_zero_tau_is_smoother(self):
        model, traj = random_instance(1, 3, 2, 4, 6)
        report = l1_rks(model, traj.y, 0.0, c=0.5, r_max=5000, sigma_u=1e-3)
        exact = rks_smooth(model, traj.y)
        assert np.abs(report.u - exact.u).max() < 1e-6
        assert np.abs(report.x - exact.x).max() < 1e-6

    def test_huge_tau_gives_zero(self):
        model, traj = random_instance(2, 3, 4, 3, 5)
        report = l1_rks(model, traj.y, 1e8, r_max=500)
        assert not report.extra["admm"].t.any()
        assert np.abs(report.u).max() < 1e-5

    def test_trace(self):
        model, traj = random_instance(2, 3, 4, 3, 5)
        report = l1_rks(model, traj.y, 0.5, r_max=7)
        assert report.iterations == 7 and not report.converged
        assert all(len(report.trace[k]) == 7 for k in ("primal", "dual", "delta_u"))

    def test_invalid_arguments(self):
        model, traj = random_instance(2, 3, 4, 3, 5)
        with pytest.raises(ValueError):
            l1_rks(model, traj.y, -1.0)
        with pytest.raises(ValueError):
            l1_rks(model, traj.y, 1.0, c=0.0)
        with pytest.raises(ValueError):
            l1_rks(model, traj.y, 1.0, r_max=0)

    def test_group_single_step_equals_l1(self):
        model, traj = random_instance(3, 2, 4, 3, 1)
        a = l1_rks(model, traj.y, 0.4, r_max=50)
        b = group_l1_rks(model, traj.y, 0.4, r_max=50)
        assert np.allclose(a.u, b.u, atol=1e-13, rtol=0)

    def test_group_zeroes_whole_rows(self):
        model, traj = random_instance(4, 3, 6, 4, 6)
        report = group_l1_rks(model, traj.y, 2.0, r_max=3000)
        t = report.extra["admm"].t
        for i in range(model.m):
            assert not t[:, i].any() or np.all(t[:, i] != 0)
        assert np.any(~t.any(axis=0))


class TestReweighted:
    @pytest.mark.parametrize("l", [0.5, 1.0, 1.5])
    def test_monotone(self, l):
        model, traj = random_instance(5, 3, 5, 3, 6)
        report = reweighted_l2_rks(model, traj.y, 0.5, l=l, r_max=40)
        for key in ("objective", "majorizer"):
            values = np.array(report.trace[key])
            assert np.all(np.diff(values) <= 1e-9 * np.abs(values[:-1]).max())
        assert np.all(np.array(report.trace["majorizer"]) >= np.array(report.trace["objective"]) - 1e-9)

    def test_invalid(self):
        model, traj = random_instance(5, 3, 5, 3, 6)
        with pytest.raises(ValueError):
            reweighted_l2_rks(model, traj.y, 0.0)
        with pytest.raises(ValueError):
            reweighted_l2_rks(model, traj.y, 1.0, l=2.5)


class TestRidge:
    def test_matches_oracle(self):
        model, traj = random_instance(6, 3, 5, 3, 6)
        report = ridge_rks(model, traj.y, ridge=0.1)
        oracle = batch_map_oracle(model, traj.y, ridge=0.1)
        assert np.abs(report.u - oracle.u).max() < 1e-8
        assert np.abs(report.x - oracle.x).max() < 1e-8

    def test_tiny_ridge_approaches_smoother(self):
        model, traj = random_instance(6, 3, 2, 4, 6)
        report = ridge_rks(model, traj.y, ridge=1e-9)
        assert np.abs(report.u - rks_smooth(model, traj.y).u).max() < 1e-6

    def test_positive(self):
        model, traj = random_instance(6, 3, 2, 4, 6)
        with pytest.raises(ValueError):
            ridge_rks(model, traj.y, ridge=0.0)
