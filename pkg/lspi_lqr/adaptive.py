"""Online adaptive control: an epoch meta-loop with decaying exploration and regret accounting."""

import csv
import enum
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Union

import numpy as np
import numpy.typing as npt

from lspi_lqr.baselines import nominal_controller, nominal_fit
from lspi_lqr.errors import DivergenceError, LqrError, ParameterError
from lspi_lqr.logger import setup_logger
from lspi_lqr.lyapunov import dare
from lspi_lqr.policy_iter import default_mu, lspi_on_data, lspi_on_segments
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
from lspi_lqr.symmat import Vector

# Create a default project logger
logger = setup_logger()


@dataclass(frozen=True)
class Doubling:
    """Epoch ``i`` lasts ``t_mult * 2**i`` steps."""

    t_mult: int

    def length(self, epoch: int) -> int:
        """Number of steps in ``epoch``."""
        return self.t_mult * 2**epoch

    def growth(self, epoch: int) -> float:
        """Factor by which ``epoch`` is longer than the first one."""
        return float(2**epoch)


@dataclass(frozen=True)
class Linear:
    """Epoch ``i`` lasts ``base * (i + 1)`` steps."""

    base: int

    def length(self, epoch: int) -> int:
        """Number of steps in ``epoch``."""
        return self.base * (epoch + 1)

    def growth(self, epoch: int) -> float:
        """Factor by which ``epoch`` is longer than the first one."""
        return float(epoch + 1)


EpochKind = Union[Doubling, Linear]


class Exploration(Protocol):
    """Exploration variance per epoch."""

    def variance(self, epoch: int, kind: EpochKind) -> float:
        """Variance of the input noise during ``epoch``."""
        ...


@dataclass(frozen=True)
class PowerDecay:
    """``sigma_eta_i^2 = sigma0_sq * (1 / growth_i) ** exponent``."""

    sigma0_sq: float
    exponent: float

    def variance(self, epoch: int, kind: EpochKind) -> float:
        """Variance of the input noise during ``epoch``."""
        return float(self.sigma0_sq * (1.0 / kind.growth(epoch)) ** self.exponent)


@dataclass(frozen=True)
class ConstantExploration:
    """The same exploration variance in every epoch."""

    sigma_sq: float

    def variance(self, epoch: int, kind: EpochKind) -> float:
        """Variance of the input noise during ``epoch``."""
        return self.sigma_sq


@dataclass(frozen=True)
class StepThresholds:
    """Inner iteration count raised as the adaptive phase passes step thresholds."""

    initial: int = 3
    thresholds: tuple[tuple[int, int], ...] = ((2000, 4), (4000, 5), (6000, 6))

    def iterations(self, epoch: int, steps_done: int) -> int:
        """Inner iterations after ``steps_done`` adaptive steps."""
        n_iter = self.initial
        for step, value in self.thresholds:
            if steps_done >= step:
                n_iter = value
        return n_iter


@dataclass(frozen=True)
class LinearInEpoch:
    """``base * (i + 1)`` inner iterations in epoch ``i``."""

    base: int = 1

    def iterations(self, epoch: int, steps_done: int) -> int:
        """Inner iterations for ``epoch``."""
        return self.base * (epoch + 1)


InnerIterations = Union[StepThresholds, LinearInEpoch]


@dataclass(frozen=True)
class EpochSchedule:
    """Epoch lengths, exploration levels and inner iteration counts."""

    kind: EpochKind
    exploration: Exploration
    inner_iters: InnerIterations = field(default_factory=StepThresholds)
    epochs: int | None = None

    def __post_init__(self) -> None:
        base = self.kind.t_mult if isinstance(self.kind, Doubling) else self.kind.base
        if base < 1:
            raise ParameterError(f"epoch length multiplier must be positive, got {base}")
        if self.epochs is not None and self.epochs < 0:
            raise ParameterError(f"number of epochs must be non-negative, got {self.epochs}")

    def length(self, epoch: int) -> int:
        """Steps in ``epoch``."""
        return self.kind.length(epoch)

    def sigma_eta(self, epoch: int) -> float:
        """Exploration standard deviation in ``epoch``."""
        return float(np.sqrt(self.exploration.variance(epoch, self.kind)))

    def iterations(self, epoch: int, steps_done: int) -> int:
        """Inner iterations run on the data of ``epoch``."""
        return self.inner_iters.iterations(epoch, steps_done)


@dataclass(frozen=True)
class WarmStart:
    """Steps played with ``K0`` and unit-variance exploration before epoch 0."""

    steps: int = 2000
    sigma_eta: float = 1.0
    count_regret: bool = True


class InnerSolver(str, enum.Enum):
    """Estimator producing the next epoch's gain."""

    LSPI_V1 = "lspi_v1"
    LSPI_V2 = "lspi_v2"
    NOMINAL = "nominal"


@dataclass(frozen=True)
class EpochData:
    """What an inner estimator sees at the end of an epoch."""

    epoch: int
    gain: Policy
    current: Trajectory
    history: tuple[Trajectory, ...]
    inner_iters: int
    sigma_w: float
    mu: float
    cost: CostModel


EstimateK = Callable[[EpochData], Policy]


@dataclass(frozen=True)
class FailureRecord:
    """Why and where an adaptive run stopped."""

    epoch: int
    step: int
    message: str


@dataclass
class RegretTrace:
    """Per-step costs and regret of one adaptive run.

    ``epoch`` is ``-1`` on warm-start steps. ``gain_steps[j]`` is the step from
    which ``gains[j]`` was played.
    """

    j_star: float
    per_step_cost: Vector = field(default_factory=lambda: np.zeros(0))
    cum_regret: Vector = field(default_factory=lambda: np.zeros(0))
    sigma_eta: Vector = field(default_factory=lambda: np.zeros(0))
    epoch: npt.NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    epoch_boundaries: list[int] = field(default_factory=list)
    gains: list[Policy] = field(default_factory=list)
    gain_steps: list[int] = field(default_factory=list)
    failures: list[FailureRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        """Number of recorded steps."""
        return int(self.per_step_cost.size)

    @property
    def failed(self) -> bool:
        """Whether the run stopped on a failure."""
        return bool(self.failures)


def regret_series(costs: npt.ArrayLike, J_star: float) -> Vector:
    """``Regret(t) = sum_{s <= t} c_s - t * J_star``."""
    c = np.asarray(costs, dtype=np.float64)
    return np.asarray(np.cumsum(c) - J_star * np.arange(1, c.size + 1))


def _lspi_v1_estimate(data: EpochData, reuse_history: bool) -> Policy:
    trajs = data.history if reuse_history else (data.current,)
    trace = lspi_on_data(trajs, data.gain, data.inner_iters, data.sigma_w, data.mu)
    return trace.final_gain


def _lspi_v2_estimate(data: EpochData, reuse_history: bool) -> Policy:
    # one contiguous segment of the epoch per LSTD-Q evaluation
    n_iter = min(data.inner_iters, data.current.T)
    bounds = np.linspace(0, data.current.T, n_iter + 1).astype(int)
    segments = [data.current.segment(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:], strict=True)]
    trace = lspi_on_segments(segments, data.gain, data.sigma_w, data.mu)
    return trace.final_gain


def _nominal_estimate(data: EpochData, reuse_history: bool) -> Policy:
    trajs = data.history if reuse_history else (data.current,)
    return nominal_controller(nominal_fit(list(trajs)), data.cost.S, data.cost.R)


_ESTIMATORS: dict[InnerSolver, Callable[[EpochData, bool], Policy]] = {
    InnerSolver.LSPI_V1: _lspi_v1_estimate,
    InnerSolver.LSPI_V2: _lspi_v2_estimate,
    InnerSolver.NOMINAL: _nominal_estimate,
}


class _Recorder:
    def __init__(self) -> None:
        self.costs: list[Vector] = []
        self.sigmas: list[Vector] = []
        self.epochs: list[npt.NDArray[np.int64]] = []
        self.steps = 0

    def add(self, traj: Trajectory, epoch: int) -> None:
        self.costs.append(traj.costs)
        self.sigmas.append(np.full(traj.T, traj.sigma_eta))
        self.epochs.append(np.full(traj.T, epoch, dtype=np.int64))
        self.steps += traj.T

    def fill(self, trace: RegretTrace) -> RegretTrace:
        if self.costs:
            trace.per_step_cost = np.concatenate(self.costs)
            trace.sigma_eta = np.concatenate(self.sigmas)
            trace.epoch = np.concatenate(self.epochs)
        trace.cum_regret = regret_series(trace.per_step_cost, trace.j_star)
        return trace


def run_adaptive(
    sys: LinearSystem,
    cost: CostModel,
    K0: npt.ArrayLike,
    schedule: EpochSchedule,
    mu: float | None = None,
    rng: RngStream | None = None,
    *,
    j_star: float | None = None,
    estimator: InnerSolver | EstimateK = InnerSolver.LSPI_V2,
    warm_start: WarmStart | None = None,
    horizon: int | None = None,
    reuse_history: bool = False,
) -> RegretTrace:
    """Play ``K^(i)`` with exploration for ``T_i`` steps, then re-estimate the gain.

    The plant state carries over between epochs. The run stops after
    ``schedule.epochs`` epochs or ``horizon`` adaptive steps, whichever comes
    first, or at the first divergence or estimator failure, which is recorded.
    ``j_star`` defaults to the DARE optimum of ``sys`` and only enters the regret.
    """
    if schedule.epochs is None and horizon is None:
        raise ParameterError("an adaptive run needs a number of epochs or a horizon")
    if horizon is not None and horizon < 0:
        raise ParameterError(f"horizon must be non-negative, got {horizon}")
    mu = default_mu(cost) if mu is None else mu
    rng = RngStream(0) if rng is None else rng
    if j_star is None:
        j_star = dare(sys.A, sys.B, cost.S, cost.R, sigma_w=sys.sigma_w).J_star
    if isinstance(estimator, InnerSolver):
        builtin = _ESTIMATORS[estimator]

        def estimate(data: EpochData) -> Policy:
            return builtin(data, reuse_history)

    else:
        estimate = estimator

    gain = np.asarray(K0, dtype=np.float64)
    trace = RegretTrace(j_star=j_star, gains=[gain], gain_steps=[0])
    recorder = _Recorder()
    history: list[Trajectory] = []
    state: InitialState = Fresh()

    if warm_start is not None and warm_start.steps > 0:
        try:
            warm = rollout(
                sys, cost, gain, warm_start.sigma_eta, warm_start.steps, state,
                rng.child("warm_start"), context="warm start",
            )
        except DivergenceError as err:
            trace.failures.append(FailureRecord(-1, err.step, str(err)))
            logger.warning(f"adaptive run failed during warm start: {err}")
            return recorder.fill(trace)
        history.append(warm)
        state = Continue(warm.final_state)
        if warm_start.count_regret:
            recorder.add(warm, -1)
    adaptive_steps = 0
    epoch = 0
    while schedule.epochs is None or epoch < schedule.epochs:
        length = schedule.length(epoch)
        if horizon is not None:
            length = min(length, horizon - adaptive_steps)
            if length <= 0:
                break
        sigma_eta = schedule.sigma_eta(epoch)
        trace.epoch_boundaries.append(recorder.steps)
        try:
            traj = rollout(
                sys, cost, gain, sigma_eta, length, state, rng.child("epoch", epoch),
                context=f"epoch {epoch}",
            )
        except DivergenceError as err:
            trace.failures.append(FailureRecord(epoch, recorder.steps + err.step, str(err)))
            logger.warning(f"adaptive run failed in epoch {epoch}: {err}")
            break
        recorder.add(traj, epoch)
        history.append(traj)
        state = Continue(traj.final_state)
        adaptive_steps += length

        last = (schedule.epochs is not None and epoch + 1 >= schedule.epochs) or (
            horizon is not None and adaptive_steps >= horizon
        )
        if last:
            break
        data = EpochData(
            epoch=epoch,
            gain=gain,
            current=traj,
            history=tuple(history),
            inner_iters=schedule.iterations(epoch, adaptive_steps),
            sigma_w=sys.sigma_w,
            mu=mu,
            cost=cost,
        )
        try:
            gain = np.asarray(estimate(data), dtype=np.float64)
        except (LqrError, np.linalg.LinAlgError) as err:
            trace.failures.append(FailureRecord(epoch, recorder.steps, f"estimator failed: {err}"))
            logger.warning(f"adaptive run stopped after epoch {epoch}: {err}")
            break
        trace.gains.append(gain)
        trace.gain_steps.append(recorder.steps)
        logger.debug(f"epoch {epoch} done after {adaptive_steps} adaptive steps")
        epoch += 1

    return recorder.fill(trace)


def online_paper_schedule() -> EpochSchedule:
    """``T_i = 10(i+1)``, ``sigma_i^2 = 0.01 (1/(i+1))^{2/3}``, inner iterations 3 to 6."""
    return EpochSchedule(
        kind=Linear(10),
        exploration=PowerDecay(0.01, 2.0 / 3.0),
        inner_iters=StepThresholds(),
    )


def theory_online_schedule(sigma_w: float = 1.0, epochs: int = 8, t_mult: int = 500) -> EpochSchedule:
    """Doubling epochs with ``sigma_i^2 = sigma_w^2 (1/2^i)^{1/3}`` and ``i + 1`` inner iterations."""
    return EpochSchedule(
        kind=Doubling(t_mult),
        exploration=PowerDecay(sigma_w**2, 1.0 / 3.0),
        inner_iters=LinearInEpoch(1),
        epochs=epochs,
    )


def write_regret_trace_csv(trace: RegretTrace, path: str | Path) -> Path:
    """Write ``t, cost, cum_regret, epoch, sigma_eta`` per recorded step."""
    out = Path(path)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cost", "cum_regret", "epoch", "sigma_eta"])
        for t in range(trace.steps):
            writer.writerow(
                [
                    t + 1,
                    repr(float(trace.per_step_cost[t])),
                    repr(float(trace.cum_regret[t])),
                    int(trace.epoch[t]),
                    repr(float(trace.sigma_eta[t])),
                ]
            )
    return out
