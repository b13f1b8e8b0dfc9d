"""Test the Lyapunov and Riccati solvers and the closed-form value functions."""

import math

import numpy as np
import pytest
import pytest_check as check
import scipy.linalg
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lspi_lqr.errors import DimensionError, InstabilityError, NotStabilizableError, PositivityError
from lspi_lqr.harness.instances import LqrInstance, offline_paper
from lspi_lqr.lyapunov import (
    avg_cost,
    dare,
    dlyap,
    finite_horizon_cost,
    optimal_gain,
    policy_qfun,
    policy_value,
    riccati_map,
    steady_covariance,
)
from lspi_lqr.symmat import delta_inf, is_stable
from tests.conftest import random_pd, random_stable_instance


def test_dlyap_residual_on_random_stable_matrices() -> None:
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        lmat = rng.standard_normal((n, n))
        lmat *= 0.9 / np.max(np.abs(np.linalg.eigvals(lmat)))
        m = random_pd(rng, n)
        p = dlyap(lmat, m)
        residual = np.linalg.norm(p - lmat.T @ p @ lmat - m)
        assert residual < 1e-10 * max(1.0, np.linalg.norm(p))
        np.testing.assert_allclose(
            p, scipy.linalg.solve_discrete_lyapunov(lmat.T, m), rtol=1e-8, atol=1e-8
        )


def test_dlyap_errors() -> None:
    with pytest.raises(InstabilityError) as err:
        dlyap(np.diag([1.0, 0.5]), np.eye(2))
    assert err.value.spectral_radius == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        dlyap(0.5 * np.eye(2), np.eye(3))


def test_dare_scalar_root(scalar: LqrInstance) -> None:
    sys, cost = scalar.system, scalar.cost
    sol = dare(sys.A, sys.B, cost.S, cost.R)
    p = (0.81 + math.sqrt(4.6561)) / 2
    assert sol.P_star[0, 0] == pytest.approx(p, abs=1e-10)
    assert sol.K_star[0, 0] == pytest.approx(-0.537664, abs=1e-6)
    assert sol.J_star == pytest.approx(p, abs=1e-10)


def test_dare_matches_scipy_on_random_instances() -> None:
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, n + 1))
        a, b, s, r = random_stable_instance(rng, n, d, radius=1.2)
        sol = dare(a, b, s, r)
        reference = scipy.linalg.solve_discrete_are(a, b, s, r)
        residual = np.linalg.norm(riccati_map(a, b, s, r, sol.P_star) - sol.P_star)
        assert residual < 1e-8 * max(1.0, np.linalg.norm(sol.P_star))
        np.testing.assert_allclose(sol.P_star, reference, rtol=1e-7, atol=1e-7)


def test_dare_noise_level_scales_j_star(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    unit = dare(sys.A, sys.B, cost.S, cost.R)
    noisy = dare(sys.A, sys.B, cost.S, cost.R, sigma_w=2.0)
    assert noisy.J_star == pytest.approx(4.0 * unit.J_star)
    assert unit.J_star == pytest.approx(float(np.trace(unit.P_star)))


def test_dare_errors() -> None:
    with pytest.raises(PositivityError):
        dare(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    # the unstable mode is not actuated
    with pytest.raises(NotStabilizableError):
        dare(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1), max_iter=500)


def test_policy_value_and_qfun_consistency(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    k = np.array([[-0.1, 0.0, 0.0], [0.0, -0.2, 0.0]])
    vf = policy_value(sys.A, sys.B, cost.S, cost.R, k, 1.0)
    qf = policy_qfun(sys.A, sys.B, cost.S, cost.R, k, 1.0)
    i_k = np.vstack([np.eye(3), k])
    # V(K) = [I; K]^T Q [I; K]
    np.testing.assert_allclose(i_k.T @ qf.Q @ i_k, vf.V, atol=1e-10)
    check.almost_equal(qf.lam, vf.lam, rel=1e-10)
    check.almost_equal(avg_cost(sys.A, sys.B, cost.S, cost.R, k, np.eye(3)), vf.lam, rel=1e-10)
    check.equal(qf.n_states, 3)


def test_optimal_gain_of_p_star_is_k_star(dean: LqrInstance) -> None:
    sys, cost = dean.system, dean.cost
    sol = dare(sys.A, sys.B, cost.S, cost.R)
    np.testing.assert_allclose(optimal_gain(sys.A, sys.B, cost.R, sol.P_star), sol.K_star, atol=1e-10)


def test_riccati_map_contraction() -> None:
    rng = np.random.default_rng(12)
    for _ in range(500):
        n = int(rng.integers(1, 5))
        d = int(rng.integers(1, n + 1))
        a, b, s, r = random_stable_instance(rng, n, d, radius=1.1)
        x, y = random_pd(rng, n), random_pd(rng, n)
        alpha = max(
            np.linalg.eigvalsh(a.T @ x @ a)[-1], np.linalg.eigvalsh(a.T @ y @ a)[-1]
        )
        rate = alpha / (np.linalg.eigvalsh(s)[0] + alpha)
        lhs = delta_inf(riccati_map(a, b, s, r, x), riccati_map(a, b, s, r, y))
        assert lhs <= rate * delta_inf(x, y) + 1e-8


def test_general_congruence_map_contraction() -> None:
    # f(X) = A + M (B + X^-1)^-1 M^T with A PD, B PSD (possibly singular), any M
    rng = np.random.default_rng(13)
    for _ in range(500):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 5))
        a_pd = random_pd(rng, n)
        b_half = rng.standard_normal((m, int(rng.integers(1, m + 1))))
        b_psd = b_half @ b_half.T
        mmat = rng.standard_normal((n, m))
        x, y = random_pd(rng, m), random_pd(rng, m)

        def f(z: np.ndarray) -> np.ndarray:
            out = a_pd + mmat @ np.linalg.inv(b_psd + np.linalg.inv(z)) @ mmat.T
            return 0.5 * (out + out.T)

        alpha = max(
            np.linalg.eigvalsh(mmat @ x @ mmat.T)[-1], np.linalg.eigvalsh(mmat @ y @ mmat.T)[-1]
        )
        rate = alpha / (np.linalg.eigvalsh(a_pd)[0] + alpha)
        assert delta_inf(f(x), f(y)) <= rate * delta_inf(x, y) + 1e-8


def test_steady_covariance_matches_long_run_average(offline: LqrInstance) -> None:
    sys = offline.system
    k = np.zeros((2, 3))
    cov = steady_covariance(sys.A, sys.B, k, 1.0, 0.5)
    closed = sys.A + sys.B @ k
    w = np.eye(3) + 0.25 * sys.B @ sys.B.T
    np.testing.assert_allclose(closed @ cov @ closed.T + w, cov, atol=1e-9)


def test_finite_horizon_cost_tends_to_average_cost(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    k = np.zeros((2, 3))
    w = np.eye(3)
    short = finite_horizon_cost(sys.A, sys.B, cost.S, cost.R, k, w, np.zeros((3, 3)), 1)
    assert short == 0.0
    long_run = finite_horizon_cost(sys.A, sys.B, cost.S, cost.R, k, w, np.zeros((3, 3)), 20000)
    limit = avg_cost(sys.A, sys.B, cost.S, cost.R, k, w)
    assert long_run == pytest.approx(limit, rel=1e-2)


def test_steady_covariance_examples(scalar: LqrInstance, offline: LqrInstance) -> None:
    sys = scalar.system
    cov = steady_covariance(sys.A, sys.B, np.zeros((1, 1)), 1.0, 0.0)
    assert cov[0, 0] == pytest.approx(1.0 / 0.19, rel=1e-12)

    # a memoryless plant only sees the current step's noise
    b = offline.system.B
    cov = steady_covariance(np.zeros((3, 3)), b, np.zeros((2, 3)), 0.7, 0.3)
    np.testing.assert_allclose(cov, 0.49 * np.eye(3) + 0.09 * b @ b.T, atol=1e-12)


def test_steady_covariance_uses_the_closed_loop_orientation() -> None:
    # non-normal closed loop: (A + BK) P (A + BK)^T differs from the transposed recursion
    a = np.array([[0.5, 0.9], [0.0, 0.3]])
    b = np.array([[0.0], [1.0]])
    cov = steady_covariance(a, b, np.zeros((1, 2)), 1.0, 0.0)
    np.testing.assert_allclose(cov, scipy.linalg.solve_discrete_lyapunov(a, np.eye(2)), atol=1e-10)
    np.testing.assert_allclose(a @ cov @ a.T + np.eye(2), cov, atol=1e-10)


@pytest.mark.parametrize(("fixture", "gain"), [("offline", np.zeros((2, 3))), ("dean", -0.5 * np.eye(3))])
def test_qfun_satisfies_the_average_cost_bellman_equation(
    fixture: str, gain: np.ndarray, request: pytest.FixtureRequest
) -> None:
    instance: LqrInstance = request.getfixturevalue(fixture)
    sys, cost = instance.system, instance.cost
    qf = policy_qfun(sys.A, sys.B, cost.S, cost.R, gain, sys.sigma_w)
    i_k = np.vstack([np.eye(sys.n), gain])
    v = i_k.T @ qf.Q @ i_k
    rng = np.random.default_rng(15)
    for _ in range(50):
        x = rng.standard_normal(sys.n)
        u = rng.standard_normal(sys.d)
        z = np.concatenate([x, u])
        mean_next = sys.A @ x + sys.B @ u
        # E[Q(x', K x')] with x' = A x + B u + w, w ~ N(0, sigma_w^2 I)
        expected_next = mean_next @ v @ mean_next + sys.sigma_w**2 * np.trace(v)
        lhs = qf.lam + z @ qf.Q @ z
        rhs = cost.stage_cost(x, u) + expected_next
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@given(arrays(np.float64, (2, 3), elements=st.floats(-1.0, 1.0)))
@settings(max_examples=200, deadline=None)
def test_larger_value_gives_larger_qfun(direction: np.ndarray) -> None:
    inst = offline_paper()
    sys, cost = inst.system, inst.cost
    sol = dare(sys.A, sys.B, cost.S, cost.R)
    other = sol.K_star + 0.2 * direction
    assume(is_stable(sys.A + sys.B @ other))
    v_best = policy_value(sys.A, sys.B, cost.S, cost.R, sol.K_star, 1.0).V
    v_other = policy_value(sys.A, sys.B, cost.S, cost.R, other, 1.0).V
    # K_star is optimal, so V_star is below every stabilizing policy's value
    assert np.linalg.eigvalsh(v_other - v_best)[0] >= -1e-9
    q_best = policy_qfun(sys.A, sys.B, cost.S, cost.R, sol.K_star, 1.0).Q
    q_other = policy_qfun(sys.A, sys.B, cost.S, cost.R, other, 1.0).Q
    assert np.linalg.eigvalsh(q_other - q_best)[0] >= -1e-9
