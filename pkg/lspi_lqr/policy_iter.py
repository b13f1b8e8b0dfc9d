"""Exact policy and value iteration, and the least-squares policy iteration variants."""

import csv
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.linalg

from lspi_lqr.errors import ConditioningError, DivergenceError, ParameterError, PositivityError
from lspi_lqr.logger import setup_logger
from lspi_lqr.lstdq import (
    LstdqEstimate,
    LstdqStatistics,
    build_features,
    lstdq,
    lstdq_from_statistics,
    oracle_features,
)
from lspi_lqr.lyapunov import (
    DareSolution,
    QFunction,
    ValueFunction,
    check_lqr,
    dare,
    optimal_gain,
    policy_qfun,
    policy_value,
    riccati_map,
)
from lspi_lqr.sim import (
    Continue,
    CostModel,
    Fresh,
    InitialState,
    LinearSystem,
    Policy,
    RngStream,
    Trajectory,
    rollout,
)
from lspi_lqr.symmat import (
    Matrix,
    StabilityCertificate,
    delta_inf,
    is_positive_definite,
    is_stable,
    proj_psd_floor,
    stability_certificate,
)

# Create a default project logger
logger = setup_logger()


@dataclass(frozen=True)
class IterationMetrics:
    """Ground-truth quality of the gain produced at one iteration.

    ``stable`` records whether the closed loop passed ``stability_certificate``, whose
    ``(tau, rho)`` is kept in ``certificate``.
    """

    iteration: int
    stable: bool
    rel_cost_err: float
    delta_inf_to_star: float | None = None
    q_err: float | None = None
    certificate: StabilityCertificate | None = None


@dataclass
class PiTrace:
    """Gains ``K_0..K_N`` of a policy-iteration run and their metrics.

    ``values`` and ``metrics`` are only filled when the ground truth is known.
    A run that produced a destabilizing gain, or whose plant diverged, stops early
    with ``failure`` set.
    """

    gains: list[Policy] = field(default_factory=list)
    values: list[ValueFunction] = field(default_factory=list)
    metrics: list[IterationMetrics] = field(default_factory=list)
    estimates: list[LstdqEstimate] = field(default_factory=list)
    failure: str | None = None

    @property
    def final_gain(self) -> Policy:
        """Last gain of the trace."""
        return self.gains[-1]

    @property
    def failed(self) -> bool:
        """Whether the run terminated with a failure marker."""
        return self.failure is not None


@dataclass(frozen=True)
class GroundTruth:
    """True system, cost and Riccati solution, held by the harness for metrics only."""

    system: LinearSystem
    cost: CostModel
    solution: DareSolution

    @classmethod
    def from_system(cls, system: LinearSystem, cost: CostModel) -> "GroundTruth":
        """Solve the DARE of ``system`` under ``cost``."""
        sol = dare(system.A, system.B, cost.S, cost.R, sigma_w=system.sigma_w)
        return cls(system=system, cost=cost, solution=sol)

    @property
    def J_star(self) -> float:
        """Optimal average cost."""
        return self.solution.J_star

    def value(self, K: npt.ArrayLike) -> ValueFunction | None:
        """Value function of ``K``, or ``None`` when ``K`` does not stabilize the plant."""
        k = np.asarray(K, dtype=np.float64)
        if not is_stable(self.system.A + self.system.B @ k):
            return None
        return policy_value(self.system.A, self.system.B, self.cost.S, self.cost.R, k, self.system.sigma_w)

    def rel_cost_err(self, K: npt.ArrayLike) -> float:
        """``(J(K) - J_star) / J_star``; infinite for a destabilizing gain."""
        vf = self.value(K)
        if vf is None:
            return float("inf")
        p_trace = float(np.trace(self.solution.P_star))
        return (float(np.trace(vf.V)) - p_trace) / p_trace

    def q_error(self, K_eval: npt.ArrayLike, q_hat: npt.ArrayLike) -> float:
        """``||q_hat - svec(Q_K)||`` against the closed-form Q-function of ``K_eval``."""
        qf = policy_qfun(
            self.system.A, self.system.B, self.cost.S, self.cost.R, K_eval, self.system.sigma_w
        )
        return float(np.linalg.norm(np.asarray(q_hat) - qf.q))

    def evaluate(
        self, iteration: int, K: npt.ArrayLike, q_err: float | None = None
    ) -> tuple[IterationMetrics, ValueFunction | None]:
        """Metrics of the gain ``K`` produced at ``iteration``.

        The gain counts as stable only when its closed loop passes ``stability_certificate``.
        """
        k = np.asarray(K, dtype=np.float64)
        cert = stability_certificate(self.system.A + self.system.B @ k)
        vf = self.value(k) if isinstance(cert, StabilityCertificate) else None
        if vf is None or not isinstance(cert, StabilityCertificate):
            return IterationMetrics(iteration, False, float("inf"), None, q_err), None
        p_star = self.solution.P_star
        p_trace = float(np.trace(p_star))
        metrics = IterationMetrics(
            iteration=iteration,
            stable=True,
            rel_cost_err=(float(np.trace(vf.V)) - p_trace) / p_trace,
            delta_inf_to_star=delta_inf(vf.V, p_star) if is_positive_definite(vf.V) else None,
            q_err=q_err,
            certificate=cert,
        )
        return metrics, vf


def default_mu(cost: CostModel) -> float:
    """``min(lambda_min(S), lambda_min(R))``, a lower bound on every true Q matrix."""
    return float(
        min(
            scipy.linalg.eigh(cost.S, eigvals_only=True)[0],
            scipy.linalg.eigh(cost.R, eigvals_only=True)[0],
        )
    )


def greedy_improve(Q: QFunction | npt.ArrayLike, n_states: int | None = None) -> Policy:
    """Greedy gain ``-Q22^{-1} Q12^T`` of a Q matrix partitioned after ``n_states`` rows."""
    if isinstance(Q, QFunction):
        mat, n = Q.Q, Q.n_states
    else:
        if n_states is None:
            raise ParameterError("n_states is required when Q is given as a matrix")
        mat, n = np.asarray(Q, dtype=np.float64), n_states
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or not 0 < n < mat.shape[0]:
        raise ParameterError(f"cannot partition a {mat.shape} matrix after {n} states")
    q22 = mat[n:, n:]
    q12 = mat[:n, n:]
    if not np.all(np.isfinite(mat)) or np.linalg.cond(q22) > 1.0 / np.finfo(np.float64).eps:
        raise ConditioningError("the input block Q22 of the Q matrix is singular")
    return np.asarray(-scipy.linalg.solve(q22, q12.T))


def pi_contraction_rate(A: npt.ArrayLike, S: npt.ArrayLike, V0: npt.ArrayLike) -> float:
    """Contraction factor ``alpha / (lambda_min(S) + alpha)`` with ``alpha = lambda_max(A^T V0 A)``."""
    a = np.asarray(A, dtype=np.float64)
    v0 = np.asarray(V0, dtype=np.float64)
    alpha = float(scipy.linalg.eigh(a.T @ v0 @ a, eigvals_only=True)[-1])
    s_min = float(scipy.linalg.eigh(np.asarray(S, dtype=np.float64), eigvals_only=True)[0])
    return alpha / (s_min + alpha)


def exact_pi(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K0: npt.ArrayLike,
    N: int,
    sigma_w: float = 1.0,
) -> PiTrace:
    """Policy iteration with exact evaluation: ``K_{t+1} = -(R + B^T V_t B)^{-1} B^T V_t A``."""
    a, b, s, r, k0 = check_lqr(A, B, S, R, K0)
    assert k0 is not None
    if N < 0:
        raise ParameterError(f"N must be non-negative, got {N}")
    truth = GroundTruth.from_system(LinearSystem(a, b, sigma_w), CostModel(s, r))

    # raises InstabilityError for a non-stabilizing K0
    v = policy_value(a, b, s, r, k0, sigma_w)
    trace = PiTrace(gains=[k0], values=[v])
    trace.metrics.append(truth.evaluate(0, k0)[0])
    for t in range(N):
        k = optimal_gain(a, b, r, trace.values[-1].V)
        metrics, vf = truth.evaluate(t + 1, k)
        trace.gains.append(k)
        trace.metrics.append(metrics)
        if vf is None:
            trace.failure = f"iteration {t + 1}: gain does not stabilize the plant"
            break
        trace.values.append(vf)
        logger.debug(f"exact PI iteration {t + 1}: rel cost err {metrics.rel_cost_err:.3e}")
    return trace


def value_iteration(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    V0: npt.ArrayLike,
    N: int,
    tol: float = 0.0,
) -> Matrix:
    """Iterate the Riccati map ``N`` times from ``V0``, stopping once the delta_inf gap is below ``tol``."""
    a, b, s, r, _ = check_lqr(A, B, S, R)
    v = np.asarray(V0, dtype=np.float64)
    v = 0.5 * (v + v.T)
    evals = scipy.linalg.eigh(v, eigvals_only=True)
    if evals[0] < -1e-12 * max(1.0, float(abs(evals[-1]))):
        raise PositivityError("V0 must be positive semidefinite")
    for i in range(N):
        v_next = riccati_map(a, b, s, r, v)
        converged = (
            tol > 0
            and is_positive_definite(v)
            and is_positive_definite(v_next)
            and delta_inf(v, v_next) < tol
        )
        v = v_next
        if converged:
            logger.debug(f"value iteration converged after {i + 1} iterations")
            break
    return v


def _lspi_iterations(
    K0: Policy,
    N: int,
    estimate_for: Callable[[int, Policy], LstdqEstimate],
    mu: float,
    truth: GroundTruth | None,
    trace: PiTrace,
) -> PiTrace:
    n = K0.shape[1]
    k = K0
    for t in range(N):
        try:
            estimate = estimate_for(t, k)
        except DivergenceError as err:
            trace.failure = f"iteration {t}: {err}"
            logger.warning(f"LSPI stopped: {trace.failure}")
            break
        trace.estimates.append(estimate)
        q_err = truth.q_error(k, estimate.q) if truth is not None else None
        try:
            k = greedy_improve(proj_psd_floor(estimate.Q, mu), n)
        except ConditioningError as err:
            trace.failure = f"iteration {t + 1}: {err}"
            logger.warning(f"LSPI stopped: {trace.failure}")
            break
        trace.gains.append(k)
        if truth is not None:
            metrics, vf = truth.evaluate(t + 1, k, q_err)
            trace.metrics.append(metrics)
            if vf is None:
                trace.failure = f"iteration {t + 1}: gain does not stabilize the plant"
                logger.warning(f"LSPI stopped: {trace.failure}")
                break
            trace.values.append(vf)
    return trace


def _start_trace(K0: Policy, truth: GroundTruth | None) -> PiTrace:
    trace = PiTrace(gains=[K0])
    if truth is not None:
        metrics, vf = truth.evaluate(0, K0)
        trace.metrics.append(metrics)
        if vf is not None:
            trace.values.append(vf)
    return trace


def _check_lspi_args(N: int, T: int, mu: float) -> None:
    if N < 0:
        raise ParameterError(f"N must be non-negative, got {N}")
    if T < 1:
        raise ParameterError(f"T must be at least 1, got {T}")
    if mu <= 0:
        raise ParameterError(f"mu must be positive, got {mu}")


def lspi_on_data(
    data: Trajectory | Sequence[Trajectory] | LstdqStatistics,
    K0: npt.ArrayLike,
    N: int,
    sigma_w: float,
    mu: float,
    *,
    truth: GroundTruth | None = None,
) -> PiTrace:
    """Run ``N`` LSPI iterations, each evaluating the current gain on the same data.

    The data enters only through its pooled LSTD-Q sums, computed once.
    """
    if isinstance(data, LstdqStatistics):
        stats = data
    else:
        trajs = [data] if isinstance(data, Trajectory) else list(data)
        if not trajs:
            raise ParameterError("LSPI needs at least one trajectory")
        stats = LstdqStatistics.from_trajectories(trajs)
    k0 = np.asarray(K0, dtype=np.float64)
    _check_lspi_args(N, 1, mu)
    trace = _start_trace(k0, truth)

    def estimate_for(_: int, k: Policy) -> LstdqEstimate:
        return lstdq_from_statistics(stats, k, sigma_w)

    return _lspi_iterations(k0, N, estimate_for, mu, truth, trace)


def lspi_v1(
    sys: LinearSystem,
    cost: CostModel,
    K0: npt.ArrayLike,
    N: int,
    T: int,
    sigma_eta: float,
    mu: float | None = None,
    rng: RngStream | None = None,
    *,
    truth: GroundTruth | None = None,
    start: InitialState | None = None,
) -> PiTrace:
    """LSPI with all data collected up front under ``K0`` and reused at every iteration."""
    mu = default_mu(cost) if mu is None else mu
    _check_lspi_args(N, T, mu)
    k0 = np.asarray(K0, dtype=np.float64)
    if N == 0:
        return _start_trace(k0, truth)
    rng = RngStream(0) if rng is None else rng
    try:
        traj = rollout(
            sys, cost, k0, sigma_eta, T, start or Fresh(), rng.child("lspi_v1"),
            context="lspi_v1 data collection",
        )
    except DivergenceError as err:
        trace = _start_trace(k0, truth)
        trace.failure = f"iteration 0: {err}"
        logger.warning(f"LSPI stopped: {trace.failure}")
        return trace
    return lspi_on_data(traj, k0, N, sys.sigma_w, mu, truth=truth)


def lspi_v2(
    sys: LinearSystem,
    cost: CostModel,
    K0: npt.ArrayLike,
    N: int,
    T: int,
    sigma_eta: float,
    mu: float | None = None,
    rng: RngStream | None = None,
    *,
    truth: GroundTruth | None = None,
    oracle: bool = False,
    reset: bool = False,
    start: InitialState | None = None,
) -> PiTrace:
    """LSPI collecting a fresh length-``T`` rollout under ``K0`` before every evaluation.

    The plant is not reset between rollouts unless ``reset`` is set. With ``oracle``
    the successor features are replaced by their conditional expectations, which
    needs ``truth``.
    """
    mu = default_mu(cost) if mu is None else mu
    _check_lspi_args(N, T, mu)
    if oracle and truth is None:
        raise ParameterError("oracle features need the ground-truth system")
    k0 = np.asarray(K0, dtype=np.float64)
    rng = RngStream(0) if rng is None else rng
    state: list[InitialState] = [start or Fresh()]

    def estimate_for(t: int, k: Policy) -> LstdqEstimate:
        traj = rollout(
            sys, cost, k0, sigma_eta, T, state[0], rng.child("lspi_v2", t),
            context=f"lspi_v2 rollout {t}",
        )
        state[0] = Fresh() if reset else Continue(traj.final_state)
        if oracle:
            assert truth is not None
            return lstdq(oracle_features(traj, k, truth.system))
        return lstdq(build_features(traj, k, sys.sigma_w))

    return _lspi_iterations(k0, N, estimate_for, mu, truth, _start_trace(k0, truth))


def lspi_on_segments(
    segments: Sequence[Trajectory],
    K0: npt.ArrayLike,
    sigma_w: float,
    mu: float,
    *,
    truth: GroundTruth | None = None,
) -> PiTrace:
    """LSPIv2 over already collected data: iteration ``t`` evaluates on ``segments[t]``."""
    k0 = np.asarray(K0, dtype=np.float64)
    _check_lspi_args(len(segments), 1, mu)

    def estimate_for(t: int, k: Policy) -> LstdqEstimate:
        return lstdq(build_features(segments[t], k, sigma_w))

    return _lspi_iterations(k0, len(segments), estimate_for, mu, truth, _start_trace(k0, truth))


def write_pi_trace_csv(trace: PiTrace, path: str | Path) -> Path:
    """Write one row per recorded iteration: q_err, rel_cost_err, delta_inf_to_star, stable."""
    out = Path(path)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "q_err", "rel_cost_err", "delta_inf_to_star", "stable"])
        for m in trace.metrics:
            writer.writerow(
                [
                    m.iteration,
                    "" if m.q_err is None else repr(m.q_err),
                    repr(m.rel_cost_err),
                    "" if m.delta_inf_to_star is None else repr(m.delta_inf_to_star),
                    int(m.stable),
                ]
            )
    return out
