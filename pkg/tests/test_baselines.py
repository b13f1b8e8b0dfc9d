"""Test the certainty-equivalent, policy-gradient and two-point DFO controllers."""

import numpy as np
import pytest

from lspi_lqr.baselines import (
    ModelEstimate,
    Simple,
    collect_nominal_data,
    dfo_gradient,
    nominal_controller,
    nominal_fit,
    optimal_controller,
    pg_gradient,
    projected_sgd_step,
    value_function_baseline,
)
from lspi_lqr.errors import (
    DegenerateExplorationError,
    DimensionError,
    IdentifiabilityError,
    ParameterError,
)
from lspi_lqr.harness.instances import LqrInstance
from lspi_lqr.lyapunov import avg_cost, dare, finite_horizon_cost
from lspi_lqr.sim import Continue, CostModel, LinearSystem, RngStream, Trajectory, rollout


def test_noise_free_fit_recovers_the_model(offline: LqrInstance) -> None:
    sys = LinearSystem(offline.system.A, offline.system.B, sigma_w=0.0)
    traj = rollout(sys, offline.cost, np.zeros((2, 3)), 1.0, 50, Continue(np.ones(3)), RngStream(0))
    est = nominal_fit(traj)
    np.testing.assert_allclose(est.A_hat, sys.A, atol=1e-10)
    np.testing.assert_allclose(est.B_hat, sys.B, atol=1e-10)
    assert est.samples == 50
    assert est.residual == pytest.approx(0.0, abs=1e-16)


def test_fit_pools_trajectories(offline: LqrInstance) -> None:
    first = collect_nominal_data(offline.system, offline.cost, 1.0, 40, RngStream(1))
    second = collect_nominal_data(offline.system, offline.cost, 1.0, 60, RngStream(2))
    pooled = nominal_fit([first, second])
    assert pooled.samples == 100
    # the pooled estimate minimizes the stacked objective: normal equations hold
    z = np.vstack([np.hstack([t.states[:-1], t.inputs]) for t in (first, second)])
    y = np.vstack([t.states[1:] for t in (first, second)])
    theta = np.hstack([pooled.A_hat, pooled.B_hat]).T
    assert np.abs(z.T @ (y - z @ theta)).max() < 1e-8


def test_fit_identifiability_errors(offline: LqrInstance) -> None:
    traj = collect_nominal_data(offline.system, offline.cost, 1.0, 1, RngStream(0))
    with pytest.raises(IdentifiabilityError):
        nominal_fit(traj)
    with pytest.raises(IdentifiabilityError):
        nominal_fit([])
    # no excitation: inputs are identically zero
    silent = collect_nominal_data(offline.system, offline.cost, 0.0, 50, RngStream(0))
    with pytest.raises(IdentifiabilityError):
        nominal_fit(silent)


def test_nominal_controller_examples(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    exact = ModelEstimate(A_hat=sys.A, B_hat=sys.B, residual=0.0, samples=0)
    k_star = dare(sys.A, sys.B, cost.S, cost.R).K_star
    np.testing.assert_allclose(nominal_controller(exact, cost.S, cost.R), k_star, atol=1e-10)
    np.testing.assert_allclose(optimal_controller(sys.A, sys.B, cost.S, cost.R), k_star)
    null = ModelEstimate(A_hat=np.zeros((3, 3)), B_hat=sys.B, residual=0.0, samples=0)
    np.testing.assert_allclose(nominal_controller(null, cost.S, cost.R), np.zeros((2, 3)), atol=1e-12)


def _handmade(costs: np.ndarray, eta: np.ndarray, sigma_eta: float) -> Trajectory:
    T = costs.shape[0]
    states = np.ones((T + 1, 2))
    return Trajectory(
        states=states,
        inputs=eta,
        noises_eta=eta,
        costs=costs,
        k_play=np.zeros((1, 2)),
        sigma_eta=sigma_eta,
    )


def test_pg_gradient_zero_cases() -> None:
    rng = np.random.default_rng(0)
    # tail costs all equal 3, so Simple(3) centers every term
    costs = np.zeros(10)
    costs[-1] = 3.0
    traj = _handmade(costs, rng.standard_normal((10, 1)), 1.0)
    assert np.array_equal(pg_gradient(traj, Simple(3.0)).g, np.zeros((1, 2)))
    quiet = _handmade(rng.random(10), np.zeros((10, 1)), 1.0)
    assert np.array_equal(pg_gradient(quiet, Simple(0.0)).g, np.zeros((1, 2)))


def test_pg_gradient_errors(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    traj = rollout(sys, cost, np.zeros((2, 3)), 0.0, 10, Continue(np.ones(3)), RngStream(0))
    with pytest.raises(DegenerateExplorationError):
        pg_gradient(traj, Simple(0.0))
    noisy = rollout(sys, cost, np.zeros((2, 3)), 1.0, 10, Continue(np.ones(3)), RngStream(0))
    eye = np.eye(2)
    wrong = value_function_baseline(0.5 * eye, eye, eye, eye, np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        pg_gradient(noisy, wrong)


def test_value_baseline_reduces_gradient_variance(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    k = np.zeros((2, 3))
    vf = value_function_baseline(sys.A, sys.B, cost.S, cost.R, k)
    pilot = rollout(sys, cost, k, 1.0, 100, Continue(np.zeros(3)), RngStream(99))
    simple = Simple(float(np.mean(pilot.costs)))
    simple_g, vf_g = [], []
    for i in range(200):
        traj = rollout(sys, cost, k, 1.0, 100, Continue(np.zeros(3)), RngStream(i).child("pg"))
        simple_g.append(pg_gradient(traj, simple).g)
        vf_g.append(pg_gradient(traj, vf).g)
    simple_var = float(np.mean(np.var(np.array(simple_g), axis=0)))
    vf_var = float(np.mean(np.var(np.array(vf_g), axis=0)))
    assert vf_var < simple_var


def test_dfo_gradient_with_zero_direction(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    g = dfo_gradient(sys, cost, np.zeros((2, 3)), 0.1, 20, RngStream(0), xi=np.zeros((2, 3)))
    assert np.array_equal(g.g, np.zeros((2, 3)))
    assert g.variance_proxy == 0.0


def test_dfo_gradient_cancels_on_a_silent_plant() -> None:
    sys = LinearSystem(np.zeros((1, 1)), np.ones((1, 1)), sigma_w=0.0)
    cost = CostModel(np.eye(1), np.eye(1))
    g = dfo_gradient(sys, cost, np.zeros((1, 1)), 0.5, 10, RngStream(0))
    assert g.g[0, 0] == 0.0


def test_dfo_gradient_errors(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    with pytest.raises(DegenerateExplorationError):
        dfo_gradient(sys, cost, np.zeros((2, 3)), 0.0, 10, RngStream(0))
    with pytest.raises(DimensionError):
        dfo_gradient(sys, cost, np.zeros((2, 3)), 0.1, 10, RngStream(0), xi=np.zeros((3, 2)))


def test_projected_step_examples() -> None:
    k = np.array([[0.3, -0.4]])
    assert np.array_equal(projected_sgd_step(k, np.zeros((1, 2)), 1.0, 1.0), k)
    far = projected_sgd_step(np.zeros((1, 2)), np.array([[-1.2, -1.6]]), 1.0, 1.0)
    assert np.linalg.norm(far) == pytest.approx(1.0)
    np.testing.assert_allclose(far, [[0.6, 0.8]])
    with pytest.raises(ParameterError):
        projected_sgd_step(k, np.zeros((1, 2)), 0.0, 1.0)
    with pytest.raises(ParameterError):
        projected_sgd_step(k, np.zeros((1, 2)), 1.0, -1.0)


def test_projection_is_non_expansive_toward_feasible_points() -> None:
    rng = np.random.default_rng(5)
    for _ in range(1000):
        radius = float(rng.uniform(0.1, 3.0))
        x = rng.standard_normal((2, 3)) * 3
        y = rng.standard_normal((2, 3))
        y *= radius * rng.uniform() / np.linalg.norm(y)
        # a unit step along -x lands on x itself before projection
        moved = projected_sgd_step(np.zeros((2, 3)), -x, 1.0, radius)
        assert np.linalg.norm(moved - y) <= np.linalg.norm(x - y) + 1e-12


def test_gradient_descent_with_exact_gradients_finds_k_star(scalar: LqrInstance) -> None:
    sys, cost = scalar.system, scalar.cost
    k_star = dare(sys.A, sys.B, cost.S, cost.R).K_star
    w = np.eye(1)
    h = 1e-6
    k = np.zeros((1, 1))
    for _ in range(10_000):
        grad = (
            avg_cost(sys.A, sys.B, cost.S, cost.R, k + h, w)
            - avg_cost(sys.A, sys.B, cost.S, cost.R, k - h, w)
        ) / (2 * h)
        k = projected_sgd_step(k, np.array([[grad]]), 1e-2, 10.0)
        if abs(k[0, 0] - k_star[0, 0]) < 1e-5:
            break
    assert abs(k[0, 0] - k_star[0, 0]) < 1e-4


@pytest.mark.slow
def test_pg_gradient_is_unbiased_for_the_finite_horizon_cost(scalar: LqrInstance) -> None:
    sys, cost = scalar.system, scalar.cost
    k = np.zeros((1, 1))
    T = 100
    vf = value_function_baseline(sys.A, sys.B, cost.S, cost.R, k)
    draws = np.array(
        [
            pg_gradient(
                rollout(sys, cost, k, 1.0, T, Continue(np.zeros(1)), RngStream(i).child("pg")), vf
            ).g[0, 0]
            for i in range(2000)
        ]
    )
    # input noise enters the state like extra process noise
    w = np.eye(1) * (sys.sigma_w**2 + 1.0)
    h = 1e-5

    def horizon_cost(gain: float) -> float:
        return finite_horizon_cost(sys.A, sys.B, cost.S, cost.R, np.array([[gain]]), w, np.zeros((1, 1)), T)

    expected = (horizon_cost(h) - horizon_cost(-h)) / (2 * h)
    stderr = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - expected) <= 3 * stderr


@pytest.mark.slow
def test_dfo_gradient_is_unbiased_without_process_noise() -> None:
    sys = LinearSystem(np.array([[0.9]]), np.array([[1.0]]), sigma_w=0.0, Sigma0=np.eye(1))
    cost = CostModel(np.eye(1), np.eye(1))
    T = 100
    s = 0.01
    draws = np.array(
        [
            dfo_gradient(sys, cost, np.zeros((1, 1)), s, T, RngStream(i).child("dfo")).g[0, 0]
            for i in range(4000)
        ]
    )

    def horizon_cost(gain: float) -> float:
        return finite_horizon_cost(
            sys.A, sys.B, cost.S, cost.R, np.array([[gain]]), np.zeros((1, 1)), np.eye(1), T
        )

    # gradient of the Gaussian-smoothed cost E[J(s xi)] by Gauss-Hermite quadrature
    h = 1e-5
    nodes, weights = np.polynomial.hermite_e.hermegauss(20)
    slopes = [(horizon_cost(s * z + h) - horizon_cost(s * z - h)) / (2 * h) for z in nodes]
    expected = float(np.dot(weights, slopes) / weights.sum())
    stderr = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - expected) <= 3 * stderr


@pytest.mark.slow
def test_nominal_fit_error_decreases_with_samples(offline: LqrInstance) -> None:
    sys, cost = offline.system, offline.cost
    sizes = (1_000, 10_000, 100_000)
    a_err: dict[int, list[float]] = {T: [] for T in sizes}
    b_err: dict[int, list[float]] = {T: [] for T in sizes}
    for seed in range(20):
        traj = collect_nominal_data(sys, cost, 1.0, sizes[-1], RngStream(seed).child("nominal"))
        for T in sizes:
            est = nominal_fit(traj.segment(0, T))
            a_err[T].append(float(np.linalg.norm(est.A_hat - sys.A, 2)))
            b_err[T].append(float(np.linalg.norm(est.B_hat - sys.B, 2)))
    for errs in (a_err, b_err):
        medians = [float(np.median(errs[T])) for T in sizes]
        assert medians[0] > medians[1] > medians[2]
