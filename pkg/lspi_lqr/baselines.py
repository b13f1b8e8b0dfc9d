"""Comparison controllers: certainty equivalence, policy gradients, two-point DFO."""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np
import numpy.typing as npt
import scipy.linalg

from lspi_lqr.errors import (
    DegenerateExplorationError,
    DimensionError,
    IdentifiabilityError,
    ParameterError,
)
from lspi_lqr.logger import setup_logger
from lspi_lqr.lyapunov import dare, policy_value
from lspi_lqr.sim import (
    CostModel,
    Fresh,
    InitialState,
    LinearSystem,
    Policy,
    RngStream,
    Trajectory,
    rollout,
)
from lspi_lqr.symmat import Matrix

# Create a default project logger
logger = setup_logger()

# Tuned offline hyperparameters: best pair on the step/exploration grid after 1e6 steps.
PG_SIGMA_ETA = 1.0
PG_STEP = 1e-5
DFO_SIGMA_ETA = 1e-3
DFO_STEP = 1e-4
ROLLOUT_HORIZON = 100
NOMINAL_SIGMA_U = 1.0
PROJECTION_SCALE = 5.0


@dataclass(frozen=True)
class ModelEstimate:
    """Least-squares estimate of the dynamics."""

    A_hat: Matrix
    B_hat: Matrix
    residual: float
    samples: int


@dataclass(frozen=True)
class GradientEstimate:
    """A stochastic gradient with its squared Frobenius norm."""

    g: Matrix
    variance_proxy: float

    @classmethod
    def of(cls, g: npt.ArrayLike) -> "GradientEstimate":
        """Wrap a gradient matrix."""
        arr = np.asarray(g, dtype=np.float64)
        return cls(g=arr, variance_proxy=float(np.sum(arr * arr)))


@dataclass(frozen=True)
class Simple:
    """Constant baseline, usually the previous iteration's average cost."""

    b: float


@dataclass(frozen=True)
class ValueFunctionBaseline:
    """State-dependent baseline ``b(x) = x^T V x``."""

    V: Matrix


Baseline = Union[Simple, ValueFunctionBaseline]


def value_function_baseline(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K: npt.ArrayLike,
) -> ValueFunctionBaseline:
    """Baseline from ``V(K) = dlyap(A + BK, S + K^T R K)``; needs the true dynamics."""
    return ValueFunctionBaseline(V=policy_value(A, B, S, R, K, 1.0).V)


def collect_nominal_data(
    sys: LinearSystem,
    cost: CostModel,
    sigma_u: float,
    T: int,
    rng: RngStream,
    start: InitialState | None = None,
) -> Trajectory:
    """Excite the plant with ``u_t ~ N(0, sigma_u^2 I)`` for ``T`` steps."""
    return rollout(
        sys, cost, np.zeros((sys.d, sys.n)), sigma_u, T, start or Fresh(), rng,
        context="nominal excitation",
    )


def nominal_fit(trajs: Trajectory | Sequence[Trajectory]) -> ModelEstimate:
    """Least squares ``min_{A,B} 1/2 sum ||x_{t+1} - A x_t - B u_t||^2`` over all transitions."""
    parts = [trajs] if isinstance(trajs, Trajectory) else list(trajs)
    if not parts:
        raise IdentifiabilityError("no transitions to fit")
    n, d = parts[0].n, parts[0].d
    if any((p.n, p.d) != (n, d) for p in parts):
        raise DimensionError("trajectories have different state or input dimensions")
    regressors = np.vstack([np.hstack([p.states[:-1], p.inputs]) for p in parts])
    targets = np.vstack([p.states[1:] for p in parts])
    if regressors.shape[0] < n + d or np.linalg.matrix_rank(regressors) < n + d:
        raise IdentifiabilityError(
            f"{regressors.shape[0]} transitions do not identify a model with {n + d} regressors"
        )
    theta, _, _, _ = scipy.linalg.lstsq(regressors, targets)
    resid = targets - regressors @ theta
    return ModelEstimate(
        A_hat=np.asarray(theta[:n].T),
        B_hat=np.asarray(theta[n:].T),
        residual=0.5 * float(np.sum(resid * resid)),
        samples=int(regressors.shape[0]),
    )


def nominal_controller(est: ModelEstimate, S: npt.ArrayLike, R: npt.ArrayLike) -> Policy:
    """Certainty-equivalent gain: the DARE gain of the estimated model."""
    return dare(est.A_hat, est.B_hat, S, R).K_star


def optimal_controller(
    A: npt.ArrayLike, B: npt.ArrayLike, S: npt.ArrayLike, R: npt.ArrayLike
) -> Policy:
    """The DARE gain of the true model."""
    return dare(A, B, S, R).K_star


def pg_gradient(traj: Trajectory, baseline: Baseline) -> GradientEstimate:
    """REINFORCE estimate ``1/T sum_t (c(tau_{t:T}) - b_t) / sigma_eta^2 eta_t x_t^T``.

    ``c(tau_{t:T})`` is the cost accumulated from step ``t`` to the end of the rollout.
    """
    if traj.sigma_eta <= 0:
        raise DegenerateExplorationError("policy gradients need sigma_eta > 0")
    states = traj.states[:-1]
    tail = np.cumsum(traj.costs[::-1])[::-1]
    if isinstance(baseline, Simple):
        offsets = np.full(traj.T, baseline.b)
    else:
        if baseline.V.shape != (traj.n, traj.n):
            raise DimensionError(f"baseline V must be {traj.n}x{traj.n}, got {baseline.V.shape}")
        offsets = np.einsum("ti,ij,tj->t", states, baseline.V, states)
    weights = (tail - offsets) / traj.sigma_eta**2
    g = (traj.noises_eta * weights[:, None]).T @ states / traj.T
    return GradientEstimate.of(g)


def dfo_gradient(
    sys: LinearSystem,
    cost: CostModel,
    K: npt.ArrayLike,
    sigma_eta: float,
    T: int,
    rng: RngStream,
    xi: npt.ArrayLike | None = None,
) -> GradientEstimate:
    """Two-point estimate ``(mean c(K + s xi) - mean c(K - s xi)) / (2 s) xi`` with ``s = sigma_eta``.

    The two rollouts use their own noise streams and no input noise. ``xi`` overrides
    the standard normal perturbation.
    """
    if sigma_eta <= 0:
        raise DegenerateExplorationError("two-point DFO needs sigma_eta > 0")
    k = np.asarray(K, dtype=np.float64)
    if xi is None:
        direction = rng.child("dfo_xi").generator().standard_normal((sys.d, sys.n))
    else:
        direction = np.asarray(xi, dtype=np.float64)
    if direction.shape != k.shape:
        raise DimensionError(f"xi has shape {direction.shape}, expected {k.shape}")
    plus = rollout(
        sys, cost, k + sigma_eta * direction, 0.0, T, Fresh(), rng.child("dfo_plus"),
        context="K + sigma*xi",
    )
    minus = rollout(
        sys, cost, k - sigma_eta * direction, 0.0, T, Fresh(), rng.child("dfo_minus"),
        context="K - sigma*xi",
    )
    diff = float(np.mean(plus.costs) - np.mean(minus.costs))
    return GradientEstimate.of(diff / (2.0 * sigma_eta) * direction)


def projected_sgd_step(
    K: npt.ArrayLike, g: GradientEstimate | npt.ArrayLike, step: float, radius: float
) -> Policy:
    """``K - step * g`` pulled back radially into the Frobenius ball of ``radius``."""
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    if radius <= 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    grad = g.g if isinstance(g, GradientEstimate) else np.asarray(g, dtype=np.float64)
    moved = np.asarray(K, dtype=np.float64) - step * grad
    norm = float(np.linalg.norm(moved))
    if norm > radius:
        moved = moved * (radius / norm)
    return moved
