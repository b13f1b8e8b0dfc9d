"""Multi-trial offline and online experiments emitted as metric records."""

import bisect
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from lspi_lqr.adaptive import (
    ConstantExploration,
    Doubling,
    EpochData,
    EpochSchedule,
    InnerSolver,
    Linear,
    LinearInEpoch,
    PowerDecay,
    RegretTrace,
    StepThresholds,
    WarmStart,
    run_adaptive,
)
from lspi_lqr.baselines import (
    Simple,
    collect_nominal_data,
    dfo_gradient,
    nominal_controller,
    nominal_fit,
    pg_gradient,
    projected_sgd_step,
    value_function_baseline,
)
from lspi_lqr.errors import ConfigError, IdentifiabilityError, LqrError
from lspi_lqr.harness.config import (
    OFFLINE_ALGORITHMS,
    ONLINE_ALGORITHMS,
    Algorithm,
    ExperimentConfig,
    InnerRule,
    ScheduleKind,
)
from lspi_lqr.harness.instances import LqrInstance, resolve_instance
from lspi_lqr.harness.records import Metric, MetricRecord, canonical_sort
from lspi_lqr.logger import setup_logger
from lspi_lqr.lstdq import LstdqStatistics, build_features, lstdq
from lspi_lqr.lyapunov import dare
from lspi_lqr.policy_iter import (
    GroundTruth,
    PiTrace,
    default_mu,
    exact_pi,
    lspi_on_data,
    lspi_v2,
)
from lspi_lqr.settings.harness import settings
from lspi_lqr.sim import Fresh, Policy, RngStream, Trajectory, rollout
from lspi_lqr.symmat import is_stable

# Create a default project logger
logger = setup_logger()

K0_ATTEMPTS = 100
ORACLE_ASSISTED = frozenset({Algorithm.PG_VF})

Events = Iterator[tuple[int, Policy]]
_Task = tuple[LqrInstance, ExperimentConfig, Algorithm, int]


@dataclass(frozen=True)
class InitialGain:
    """Starting gain of a trial and where it came from."""

    K0: Policy
    provenance: str


@dataclass
class ExperimentResult:
    """Canonically sorted records of a run plus its metadata document."""

    records: list[MetricRecord]
    metadata: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class _OfflineTrial:
    instance: LqrInstance
    truth: GroundTruth
    cfg: ExperimentConfig
    K0: Policy
    mu: float
    rng: RngStream
    grid: tuple[int, ...]


def checkpoint_grid(total: int, checkpoints: int, include_zero: bool = True) -> list[int]:
    """Steps ``round(total * j / checkpoints)`` for ``j = 0..checkpoints``, without duplicates."""
    first = 0 if include_zero else 1
    steps = {(total * j + checkpoints // 2) // checkpoints for j in range(first, checkpoints + 1)}
    if not include_zero:
        steps.discard(0)
    return sorted(steps)


def initial_gain(instance: LqrInstance, cfg: ExperimentConfig, trial: int = 0) -> InitialGain:
    """Configured ``k0``, else zero when the open loop is stable, else a perturbed-model DARE gain.

    The perturbed model is ``A + k0_perturbation * N(0, 1)`` drawn from the trial's
    ``k0`` stream; draws whose gain fails to stabilize the true plant are discarded.
    """
    sys, cost = instance.system, instance.cost
    if cfg.k0 is not None:
        k0 = np.asarray(cfg.k0, dtype=np.float64)
        if k0.shape != (sys.d, sys.n):
            raise ConfigError(f"k0: expected a {sys.d}x{sys.n} matrix, got shape {k0.shape}")
        return InitialGain(k0, "config")
    zero = np.zeros((sys.d, sys.n))
    if is_stable(sys.A):
        return InitialGain(zero, "zero gain, open loop is stable")
    for attempt in range(K0_ATTEMPTS):
        gen = RngStream(cfg.seed).child("k0", trial, attempt).generator()
        a_pert = sys.A + cfg.k0_perturbation * gen.standard_normal((sys.n, sys.n))
        try:
            k0 = dare(a_pert, sys.B, cost.S, cost.R).K_star
        except LqrError:
            continue
        if is_stable(sys.A + sys.B @ k0):
            return InitialGain(
                k0,
                f"dare gain of A + {cfg.k0_perturbation} * N(0, 1), stream (k0, {trial}, {attempt})",
            )
    raise ConfigError(
        f"k0: no stabilizing gain found from {K0_ATTEMPTS} perturbed models, supply k0 explicitly"
    )


def _nominal_events(ctx: _OfflineTrial) -> Events:
    sys, cost, cfg = ctx.instance.system, ctx.instance.cost, ctx.cfg
    yield 0, ctx.K0
    trajs: list[Trajectory] = []
    collected = 0
    for c in ctx.grid[1:]:
        while collected < c:
            length = min(cfg.rollout_horizon, c - collected)
            trajs.append(
                collect_nominal_data(
                    sys, cost, cfg.nominal_sigma_u, length, ctx.rng.child("nominal", len(trajs))
                )
            )
            collected += length
        try:
            est = nominal_fit(trajs)
        except IdentifiabilityError as err:
            logger.debug(f"nominal fit skipped at step {c}: {err}")
            continue
        yield c, nominal_controller(est, cost.S, cost.R)


def _pg_events(ctx: _OfflineTrial, value_baseline: bool) -> Events:
    sys, cost, cfg = ctx.instance.system, ctx.instance.cost, ctx.cfg
    horizon = cfg.rollout_horizon
    radius = cfg.projection_scale * float(np.linalg.norm(ctx.truth.solution.K_star))
    k = ctx.K0
    b = 0.0
    yield 0, k
    for it in range(cfg.budget // horizon):
        traj = rollout(
            sys, cost, k, cfg.pg_sigma_eta, horizon, Fresh(), ctx.rng.child("pg", it),
            context=f"policy gradient iteration {it}",
        )
        if value_baseline:
            g = pg_gradient(traj, value_function_baseline(sys.A, sys.B, cost.S, cost.R, k))
        else:
            # previous iteration's empirical average cost
            g = pg_gradient(traj, Simple(b))
            b = float(np.mean(traj.costs))
        k = projected_sgd_step(k, g, cfg.pg_step, radius)
        yield (it + 1) * horizon, k


def _dfo_events(ctx: _OfflineTrial) -> Events:
    sys, cost, cfg = ctx.instance.system, ctx.instance.cost, ctx.cfg
    horizon = cfg.rollout_horizon
    radius = cfg.projection_scale * float(np.linalg.norm(ctx.truth.solution.K_star))
    k = ctx.K0
    yield 0, k
    for it in range(cfg.budget // (2 * horizon)):
        g = dfo_gradient(sys, cost, k, cfg.dfo_sigma_eta, horizon, ctx.rng.child("dfo", it))
        k = projected_sgd_step(k, g, cfg.dfo_step, radius)
        yield (it + 1) * 2 * horizon, k


def _lspi_v1_events(ctx: _OfflineTrial) -> Events:
    sys, cost, cfg = ctx.instance.system, ctx.instance.cost, ctx.cfg
    yield 0, ctx.K0
    if cfg.budget == 0:
        return
    traj = rollout(
        sys, cost, ctx.K0, cfg.lspi_sigma_eta, cfg.budget, Fresh(), ctx.rng.child("lspi_v1"),
        context="lspi_v1 data collection",
    )
    # checkpoint c sees the first c transitions only
    stats: LstdqStatistics | None = None
    prev = 0
    for c in ctx.grid[1:]:
        part = LstdqStatistics.from_trajectory(traj.segment(prev, c))
        stats = part if stats is None else stats + part
        prev = c
        trace = lspi_on_data(stats, ctx.K0, cfg.lspi_v1_iters, sys.sigma_w, ctx.mu)
        yield c, trace.final_gain


def _lspi_v2_events(ctx: _OfflineTrial) -> Events:
    sys, cost, cfg = ctx.instance.system, ctx.instance.cost, ctx.cfg
    horizon = cfg.lspi_v2_rollout
    n_iter = min(cfg.lspi_v2_iters, cfg.budget // horizon)
    yield 0, ctx.K0
    if n_iter == 0:
        return
    trace = lspi_v2(sys, cost, ctx.K0, n_iter, horizon, cfg.lspi_sigma_eta, ctx.mu, ctx.rng)
    for i, k in enumerate(trace.gains[1:], start=1):
        yield i * horizon, k
    if trace.failure is not None:
        raise LqrError(trace.failure)


def _optimal_events(ctx: _OfflineTrial) -> Events:
    yield 0, ctx.truth.solution.K_star


_OFFLINE_EVENTS: dict[Algorithm, Callable[[_OfflineTrial], Events]] = {
    Algorithm.NOMINAL: _nominal_events,
    Algorithm.PG_SIMPLE: lambda ctx: _pg_events(ctx, value_baseline=False),
    Algorithm.PG_VF: lambda ctx: _pg_events(ctx, value_baseline=True),
    Algorithm.DFO: _dfo_events,
    Algorithm.LSPI_V1: _lspi_v1_events,
    Algorithm.LSPI_V2: _lspi_v2_events,
    Algorithm.OPTIMAL: _optimal_events,
}


def _offline_trial(
    instance: LqrInstance, cfg: ExperimentConfig, algorithm: Algorithm, trial: int
) -> list[MetricRecord]:
    truth = GroundTruth.from_system(instance.system, instance.cost)
    grid = checkpoint_grid(cfg.budget, cfg.checkpoints)
    ctx = _OfflineTrial(
        instance=instance,
        truth=truth,
        cfg=cfg,
        K0=initial_gain(instance, cfg, trial).K0,
        mu=default_mu(instance.cost) if cfg.mu is None else cfg.mu,
        rng=RngStream(cfg.seed).child("offline", algorithm.value, trial),
        grid=tuple(grid),
    )
    records: list[MetricRecord] = []
    idx = 0
    gain: Policy | None = None
    err: float | None = None
    last_step = 0

    def record(step: int, value: float, metric: Metric = Metric.REL_COST_ERR) -> None:
        records.append(MetricRecord(algorithm.value, trial, step, metric.value, value))

    try:
        for steps, k in _OFFLINE_EVENTS[algorithm](ctx):
            while idx < len(grid) and grid[idx] < steps:
                assert err is not None
                record(grid[idx], err)
                idx += 1
            gain, last_step = k, steps
            err = truth.rel_cost_err(gain)
    except (LqrError, np.linalg.LinAlgError) as exc:
        logger.warning(f"{algorithm.value} trial {trial} failed after {last_step} steps: {exc}")
        record(last_step, 1.0, Metric.FAILURE)
        # a learner that diverged is charged an infinite cost from here on
        err = float("inf")
    assert err is not None
    for step in grid[idx:]:
        record(step, err)
    return records


def _offline_task(args: _Task) -> list[MetricRecord]:
    return _offline_trial(*args)


def build_schedule(cfg: ExperimentConfig, sigma_w: float) -> EpochSchedule:
    """Epoch schedule described by the online keys of ``cfg``."""
    kind = Linear(cfg.epoch_base) if cfg.schedule is ScheduleKind.LINEAR else Doubling(cfg.epoch_base)
    sigma0_sq = sigma_w**2 if cfg.exploration_sigma0_sq is None else cfg.exploration_sigma0_sq
    inner = StepThresholds() if cfg.inner_rule is InnerRule.STEP_THRESHOLDS else LinearInEpoch(1)
    if cfg.epochs is None and cfg.horizon is None:
        raise ConfigError("epochs: an online run needs epochs or horizon")
    return EpochSchedule(
        kind=kind,
        exploration=PowerDecay(sigma0_sq, cfg.exploration_exponent),
        inner_iters=inner,
        epochs=cfg.epochs,
    )


def planned_steps(cfg: ExperimentConfig, schedule: EpochSchedule) -> int:
    """Recorded steps of a run that does not fail: counted warm start plus adaptive phase."""
    warm = cfg.warm_start_steps if cfg.count_warm_start_regret else 0
    if schedule.epochs is None:
        assert cfg.horizon is not None
        return warm + cfg.horizon
    adaptive = sum(schedule.length(i) for i in range(schedule.epochs))
    if cfg.horizon is not None:
        adaptive = min(adaptive, cfg.horizon)
    return warm + adaptive


def _online_run(
    instance: LqrInstance, cfg: ExperimentConfig, algorithm: Algorithm, trial: int, truth: GroundTruth
) -> RegretTrace:
    sys, cost = instance.system, instance.cost
    schedule = build_schedule(cfg, sys.sigma_w)
    rng = RngStream(cfg.seed).child("online", algorithm.value, trial)
    mu = default_mu(cost) if cfg.mu is None else cfg.mu
    if algorithm is Algorithm.OPTIMAL:
        k_star = truth.solution.K_star

        def play_optimal(_: EpochData) -> Policy:
            return k_star

        # no exploration and no warm start; the horizon covers the other runs' recorded steps
        quiet = EpochSchedule(
            kind=schedule.kind,
            exploration=ConstantExploration(0.0),
            inner_iters=schedule.inner_iters,
        )
        horizon = planned_steps(cfg, schedule)
        return run_adaptive(
            sys, cost, k_star, quiet, mu, rng, j_star=truth.J_star, estimator=play_optimal,
            horizon=horizon,
        )
    warm = None
    if cfg.warm_start_steps > 0:
        warm = WarmStart(cfg.warm_start_steps, cfg.warm_start_sigma_eta, cfg.count_warm_start_regret)
    estimator = cfg.inner_solver if algorithm is Algorithm.LSPI_ADAPTIVE else InnerSolver.NOMINAL
    return run_adaptive(
        sys, cost, initial_gain(instance, cfg, trial).K0, schedule, mu, rng,
        j_star=truth.J_star, estimator=estimator, warm_start=warm, horizon=cfg.horizon,
        reuse_history=cfg.reuse_history,
    )


def _online_trial(
    instance: LqrInstance, cfg: ExperimentConfig, algorithm: Algorithm, trial: int
) -> list[MetricRecord]:
    truth = GroundTruth.from_system(instance.system, instance.cost)
    trace = _online_run(instance, cfg, algorithm, trial, truth)
    total = planned_steps(cfg, build_schedule(cfg, instance.system.sigma_w))
    records: list[MetricRecord] = []

    def record(step: int, metric: Metric, value: float) -> None:
        records.append(MetricRecord(algorithm.value, trial, step, metric.value, value))

    errors = [truth.rel_cost_err(k) for k in trace.gains]
    for failure in trace.failures:
        record(failure.step, Metric.FAILURE, 1.0)
    for step in checkpoint_grid(total, cfg.checkpoints, include_zero=False):
        if step <= trace.steps:
            record(step, Metric.CUM_REGRET, float(trace.cum_regret[step - 1]))
            # gain in effect for the step after ``step``
            record(step, Metric.REL_COST_ERR, errors[bisect.bisect_right(trace.gain_steps, step) - 1])
        else:
            record(step, Metric.CUM_REGRET, float("inf"))
            record(step, Metric.REL_COST_ERR, float("inf"))
    return records


def _online_task(args: _Task) -> list[MetricRecord]:
    return _online_trial(*args)


def _run_tasks(
    task: Callable[[_Task], list[MetricRecord]],
    jobs_args: Sequence[_Task],
    jobs: int,
) -> list[MetricRecord]:
    records: list[MetricRecord] = []
    if jobs <= 1 or len(jobs_args) <= 1:
        for args in jobs_args:
            records.extend(task(args))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(task, jobs_args):
                records.extend(part)
    return canonical_sort(records)


def _resolve_jobs(cfg: ExperimentConfig, jobs: int | None) -> int:
    if jobs is not None:
        return jobs
    return cfg.jobs if cfg.jobs is not None else settings.jobs


def _check_algorithms(cfg: ExperimentConfig, allowed: frozenset[Algorithm], kind: str) -> None:
    bad = [a.value for a in cfg.algorithms if a not in allowed]
    if bad:
        raise ConfigError(f"algorithms: {', '.join(bad)} cannot run in an {kind} experiment")


def experiment_metadata(
    cfg: ExperimentConfig, experiment: str, instance: LqrInstance, k0: InitialGain | None = None
) -> dict[str, Any]:
    """Resolved configuration and provenance written next to the records."""
    sys, cost = instance.system, instance.cost
    truth = GroundTruth.from_system(sys, cost)
    return {
        "experiment": experiment,
        "config": cfg.model_dump(mode="json"),
        "instance": {
            "name": instance.name,
            "A": sys.A.tolist(),
            "B": sys.B.tolist(),
            "S": cost.S.tolist(),
            "R": cost.R.tolist(),
            "sigma_w": sys.sigma_w,
            "Sigma0": None if sys.Sigma0 is None else sys.Sigma0.tolist(),
        },
        "j_star": truth.J_star,
        "generator": settings.generator,
        "oracle_assisted": sorted(a.value for a in cfg.algorithms if a in ORACLE_ASSISTED),
        "k0": None if k0 is None else {"value": k0.K0.tolist(), "provenance": k0.provenance},
    }


def run_offline_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> ExperimentResult:
    """Run every configured offline algorithm for ``cfg.trials`` trials up to the step budget."""
    _check_algorithms(cfg, OFFLINE_ALGORITHMS, "offline")
    instance = resolve_instance(cfg.instance, cfg.instance_path)
    k0 = initial_gain(instance, cfg, 0)
    n_jobs = _resolve_jobs(cfg, jobs)
    logger.info(
        f"offline experiment on {instance.name}: {len(cfg.algorithms)} algorithms, "
        f"{cfg.trials} trials, budget {cfg.budget}, {n_jobs} jobs"
    )
    args = [(instance, cfg, a, t) for a in cfg.algorithms for t in range(cfg.trials)]
    records = _run_tasks(_offline_task, args, n_jobs)
    return ExperimentResult(
        records, experiment_metadata(cfg, "offline", instance, k0)
    )


def run_online_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> ExperimentResult:
    """Run the adaptive controllers for ``cfg.trials`` trials, recording regret and cost error."""
    _check_algorithms(cfg, ONLINE_ALGORITHMS, "online")
    instance = resolve_instance(cfg.instance, cfg.instance_path)
    k0 = initial_gain(instance, cfg, 0)
    n_jobs = _resolve_jobs(cfg, jobs)
    logger.info(
        f"online experiment on {instance.name}: {len(cfg.algorithms)} algorithms, "
        f"{cfg.trials} trials, horizon {cfg.horizon}, {n_jobs} jobs"
    )
    args = [(instance, cfg, a, t) for a in cfg.algorithms for t in range(cfg.trials)]
    records = _run_tasks(_online_task, args, n_jobs)
    return ExperimentResult(
        records, experiment_metadata(cfg, "online", instance, k0)
    )


def run_lstdq_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """LSTD-Q error ``||q_hat - q||`` of the initial gain at each horizon in ``lstdq_horizons``.

    Each trial plays and evaluates ``K0`` with ``lspi_sigma_eta`` exploration; the
    horizons are prefixes of one rollout.
    """
    instance = resolve_instance(cfg.instance, cfg.instance_path)
    sys, cost = instance.system, instance.cost
    truth = GroundTruth.from_system(sys, cost)
    horizons = sorted(set(cfg.lstdq_horizons))
    if horizons[0] < 1:
        raise ConfigError("lstdq_horizons: every horizon must be at least 1")
    records: list[MetricRecord] = []
    for trial in range(cfg.trials):
        k0 = initial_gain(instance, cfg, trial).K0
        rng = RngStream(cfg.seed).child("lstdq_sweep", trial)
        try:
            traj = rollout(
                sys, cost, k0, cfg.lspi_sigma_eta, horizons[-1], Fresh(), rng,
                context="lstdq sweep",
            )
        except LqrError as err:
            logger.warning(f"lstdq sweep trial {trial} failed: {err}")
            records.append(MetricRecord("lstdq", trial, 0, Metric.FAILURE.value, 1.0))
            continue
        for horizon in horizons:
            estimate = lstdq(build_features(traj.segment(0, horizon), k0, sys.sigma_w))
            records.append(
                MetricRecord(
                    "lstdq", trial, horizon, Metric.Q_ERR.value, truth.q_error(k0, estimate.q)
                )
            )
    logger.info(f"lstdq sweep: {cfg.trials} trials over horizons {horizons}")
    return ExperimentResult(
        canonical_sort(records),
        experiment_metadata(cfg, "lstdq-sweep", instance, initial_gain(instance, cfg, 0)),
    )


def run_pi_exact(cfg: ExperimentConfig) -> tuple[PiTrace, dict[str, Any]]:
    """Exact policy iteration from the initial gain for ``pi_iterations`` iterations."""
    instance = resolve_instance(cfg.instance, cfg.instance_path)
    sys, cost = instance.system, instance.cost
    k0 = initial_gain(instance, cfg, 0)
    trace = exact_pi(sys.A, sys.B, cost.S, cost.R, k0.K0, cfg.pi_iterations, sys.sigma_w)
    logger.info(
        f"exact policy iteration on {instance.name}: {len(trace.gains) - 1} iterations, "
        f"final rel cost err {trace.metrics[-1].rel_cost_err:.3e}"
    )
    return trace, experiment_metadata(cfg, "pi-exact", instance, k0)
