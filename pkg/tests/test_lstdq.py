"""Test the LSTD-Q estimator, its pooled-statistics form and its diagnostics."""

import numpy as np
import pytest
import pytest_check as check

from lspi_lqr.errors import DimensionError, ParameterError
from lspi_lqr.harness.instances import LqrInstance
from lspi_lqr.lstdq import (
    LstdqFeatures,
    LstdqStatistics,
    bellman_operator,
    build_features,
    lstdq,
    lstdq_diagnostics,
    lstdq_from_statistics,
    oracle_features,
)
from lspi_lqr.lyapunov import policy_qfun
from lspi_lqr.sim import Continue, CostModel, Fresh, LinearSystem, RngStream, Trajectory, rollout
from lspi_lqr.symmat import is_stable, smat, svec, svec_dim
from tests.conftest import random_stable_instance

K_EVAL = np.array([[-0.2, 0.0, 0.05], [0.0, -0.1, 0.0]])


def _trajectory(instance: LqrInstance, T: int, seed: int = 0) -> Trajectory:
    return rollout(
        instance.system, instance.cost, np.zeros((2, 3)), 1.0, T, Fresh(), RngStream(seed)
    )


def test_features_of_a_single_transition() -> None:
    sys = LinearSystem(np.array([[0.5]]), np.array([[1.0]]), sigma_w=0.0)
    cost = CostModel(np.eye(1), np.eye(1))
    traj = rollout(sys, cost, np.zeros((1, 1)), 0.0, 1, Continue(np.ones(1)), RngStream(0))
    feats = build_features(traj, np.zeros((1, 1)), 0.0)
    np.testing.assert_allclose(feats.phi[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(feats.f, np.zeros(3))
    np.testing.assert_allclose(feats.psi_plus[0], [0.25, 0.0, 0.0])


def test_feature_rows_reconstruct_outer_products(offline: LqrInstance) -> None:
    traj = _trajectory(offline, 20)
    feats = build_features(traj, K_EVAL, 1.0)
    assert feats.T == 20
    assert feats.dim == svec_dim(5)
    for t in range(20):
        z = np.concatenate([traj.states[t], traj.inputs[t]])
        np.testing.assert_allclose(smat(feats.phi[t]), np.outer(z, z), atol=1e-12)
    i_k = np.vstack([np.eye(3), K_EVAL])
    np.testing.assert_allclose(feats.f, svec(i_k @ i_k.T))


def test_build_features_rejects_bad_gain(offline: LqrInstance) -> None:
    traj = _trajectory(offline, 5)
    with pytest.raises(DimensionError):
        build_features(traj, np.zeros((3, 2)), 1.0)


def test_oracle_features_recover_true_q(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    dim = svec_dim(5)
    traj = _trajectory(offline, 5 * dim, seed=3)
    estimate = lstdq(oracle_features(traj, K_EVAL, sys))
    truth = policy_qfun(sys.A, sys.B, cost.S, cost.R, K_EVAL, sys.sigma_w)
    assert not estimate.rank_deficient
    assert np.linalg.norm(estimate.q - truth.q) < 1e-6
    np.testing.assert_allclose(estimate.Q, estimate.Q.T)


def test_oracle_features_of_a_null_system_equal_f() -> None:
    sys = LinearSystem(np.zeros((2, 2)), np.zeros((2, 1)), sigma_w=0.7)
    cost = CostModel(np.eye(2), np.eye(1))
    k = np.array([[0.3, -0.4]])
    traj = rollout(sys, cost, k, 1.0, 4, Continue(np.ones(2)), RngStream(0))
    feats = oracle_features(traj, k, sys)
    for t in range(4):
        np.testing.assert_allclose(feats.psi_plus[t], feats.f, atol=1e-14)


def test_statistics_match_the_feature_path(offline: LqrInstance) -> None:
    traj = _trajectory(offline, 400, seed=4)
    direct = lstdq(build_features(traj, K_EVAL, 1.0))
    pooled = lstdq_from_statistics(LstdqStatistics.from_trajectory(traj), K_EVAL, 1.0)
    np.testing.assert_allclose(pooled.q, direct.q, rtol=1e-7, atol=1e-9)
    check.equal(pooled.rank, direct.rank)


def test_statistics_are_additive_over_segments(offline: LqrInstance) -> None:
    traj = _trajectory(offline, 300, seed=5)
    whole = LstdqStatistics.from_trajectory(traj)
    parts = LstdqStatistics.from_trajectory(traj.segment(0, 120)) + LstdqStatistics.from_trajectory(
        traj.segment(120, 300)
    )
    assert parts.T == whole.T == 300
    np.testing.assert_allclose(parts.phi_phi, whole.phi_phi, rtol=1e-12)
    np.testing.assert_allclose(parts.phi_next, whole.phi_next, rtol=1e-12)
    np.testing.assert_allclose(parts.phi_cost, whole.phi_cost, rtol=1e-12)


def test_estimate_does_not_depend_on_chunking(offline: LqrInstance) -> None:
    feats = build_features(_trajectory(offline, 500, seed=6), K_EVAL, 1.0)
    small = lstdq(feats, chunk_size=7)
    large = lstdq(feats, chunk_size=10_000)
    np.testing.assert_allclose(small.q, large.q, rtol=1e-9, atol=1e-12)
    with pytest.raises(ParameterError):
        lstdq(feats, chunk_size=0)


def test_estimate_is_invariant_to_row_permutations(offline: LqrInstance) -> None:
    feats = build_features(_trajectory(offline, 300, seed=7), K_EVAL, 1.0)
    order = np.random.default_rng(0).permutation(feats.T)
    shuffled = LstdqFeatures(
        phi=feats.phi[order], psi_plus=feats.psi_plus[order], f=feats.f, costs=feats.costs[order]
    )
    np.testing.assert_allclose(lstdq(shuffled).q, lstdq(feats).q, rtol=1e-9, atol=1e-12)


def test_short_trajectory_is_flagged_rank_deficient(offline: LqrInstance) -> None:
    estimate = lstdq(build_features(_trajectory(offline, 3), K_EVAL, 1.0))
    assert estimate.rank_deficient
    assert estimate.rank <= 3


def test_feature_concatenation(offline: LqrInstance) -> None:
    traj = _trajectory(offline, 50, seed=8)
    feats = build_features(traj, K_EVAL, 1.0)
    joined = LstdqFeatures.concat([feats.rows(0, 20), feats.rows(20, 50)])
    assert np.array_equal(joined.phi, feats.phi)
    other = build_features(traj, np.zeros((2, 3)), 1.0)
    with pytest.raises(ParameterError):
        LstdqFeatures.concat([feats, other])
    with pytest.raises(ParameterError):
        LstdqFeatures.concat([])


def test_bellman_operator_identity(offline: LqrInstance) -> None:
    sys = offline.system
    traj = _trajectory(offline, 60, seed=9)
    feats = oracle_features(traj, K_EVAL, sys)
    op = bellman_operator(K_EVAL, sys.A, sys.B)
    lhs = feats.phi - feats.psi_plus + feats.f
    assert np.abs(lhs - feats.phi @ op.T).max() < 1e-8


def test_diagnostics(offline: LqrInstance) -> None:
    sys = offline.system
    feats = build_features(_trajectory(offline, 200, seed=10), K_EVAL, 1.0)
    diag = lstdq_diagnostics(feats, K_EVAL, sys.A, sys.B)
    assert diag.sigma_min_phi > 0
    assert 0 < diag.sigma_min_bellman <= 1.0 + 1e-12

    repeated = LstdqFeatures(
        phi=np.repeat(feats.phi[:1], 30, axis=0),
        psi_plus=np.repeat(feats.psi_plus[:1], 30, axis=0),
        f=feats.f,
        costs=np.repeat(feats.costs[:1], 30),
    )
    assert lstdq_diagnostics(repeated, K_EVAL, sys.A, sys.B).sigma_min_phi == pytest.approx(
        0.0, abs=1e-9
    )
    zero = lstdq_diagnostics(feats, np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((3, 2)))
    assert zero.sigma_min_bellman == pytest.approx(1.0)


@pytest.mark.slow
def test_estimation_error_shrinks_at_root_t_rate(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    k = np.zeros((2, 3))
    q_true = policy_qfun(sys.A, sys.B, cost.S, cost.R, k, 1.0).q
    short, long = [], []
    for seed in range(20):
        traj = rollout(sys, cost, k, 1.0, 160_000, Fresh(), RngStream(seed).child("rate"))
        head = LstdqStatistics.from_trajectory(traj.segment(0, 10_000))
        whole = head + LstdqStatistics.from_trajectory(traj.segment(10_000, 160_000))
        short.append(np.linalg.norm(lstdq_from_statistics(head, k, 1.0).q - q_true))
        long.append(np.linalg.norm(lstdq_from_statistics(whole, k, 1.0).q - q_true))
    ratio = float(np.median(short) / np.median(long))
    assert 2.5 <= ratio <= 6.0


def test_oracle_features_recover_q_on_random_instances() -> None:
    rng = np.random.default_rng(14)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        d = int(rng.integers(1, 3))
        a, b, s, r = random_stable_instance(rng, n, d)
        sys = LinearSystem(a, b, sigma_w=1.0)
        cost = CostModel(s, r)
        k_eval = 0.1 * rng.standard_normal((d, n))
        if not is_stable(a + b @ k_eval):
            k_eval = np.zeros((d, n))
        traj = rollout(
            sys, cost, np.zeros((d, n)), 1.0, 5 * svec_dim(n + d), Fresh(), RngStream(int(rng.integers(1 << 30)))
        )
        estimate = lstdq(oracle_features(traj, k_eval, sys))
        truth = policy_qfun(a, b, s, r, k_eval, 1.0)
        assert np.linalg.norm(estimate.q - truth.q) < 1e-6


@pytest.mark.slow
def test_median_error_decreases_with_horizon(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    k = np.zeros((2, 3))
    q_true = policy_qfun(sys.A, sys.B, cost.S, cost.R, k, 1.0).q
    horizons = (1_000, 10_000, 100_000)
    errors: dict[int, list[float]] = {T: [] for T in horizons}
    for seed in range(20):
        traj = rollout(sys, cost, k, 1.0, horizons[-1], Fresh(), RngStream(seed).child("horizons"))
        for T in horizons:
            stats = LstdqStatistics.from_trajectory(traj.segment(0, T))
            errors[T].append(float(np.linalg.norm(lstdq_from_statistics(stats, k, 1.0).q - q_true)))
    medians = [float(np.median(errors[T])) for T in horizons]
    assert medians[0] > medians[1] > medians[2]
