"""LQR plant simulation: seeded Gaussian rollouts with per-step cost accounting."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import numpy.typing as npt

from lspi_lqr.errors import DimensionError, DivergenceError, ParameterError, PositivityError
from lspi_lqr.experiment_cache import hash_string
from lspi_lqr.settings.numerics import settings
from lspi_lqr.symmat import Matrix, Vector, is_positive_definite, symmetrize_checked

Policy = Matrix


@dataclass(frozen=True)
class LinearSystem:
    """Plant ``x_{t+1} = A x_t + B u_t + w_t`` with ``w_t ~ N(0, sigma_w^2 I)``."""

    A: Matrix
    B: Matrix
    sigma_w: float = 1.0
    Sigma0: Matrix | None = None
    _x0_factor: Matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.B, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"A must be square, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise DimensionError(f"B must have {a.shape[0]} rows, got shape {b.shape}")
        if self.sigma_w < 0:
            raise ParameterError(f"sigma_w must be non-negative, got {self.sigma_w}")
        n = a.shape[0]
        sigma0 = np.zeros((n, n)) if self.Sigma0 is None else symmetrize_checked(self.Sigma0)
        if sigma0.shape != (n, n):
            raise DimensionError(f"Sigma0 must be {n}x{n}, got shape {sigma0.shape}")
        evals, evecs = np.linalg.eigh(sigma0)
        if evals.size and evals[0] < -1e-12 * max(1.0, float(evals[-1])):
            raise PositivityError("Sigma0 must be positive semidefinite")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "Sigma0", sigma0)
        object.__setattr__(self, "_x0_factor", evecs * np.sqrt(np.maximum(evals, 0.0)))

    @property
    def n(self) -> int:
        """State dimension."""
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        """Input dimension."""
        return int(self.B.shape[1])


@dataclass(frozen=True)
class CostModel:
    """Stage cost ``x^T S x + u^T R u`` with positive definite ``S`` and ``R``."""

    S: Matrix
    R: Matrix

    def __post_init__(self) -> None:
        s = symmetrize_checked(self.S)
        r = symmetrize_checked(self.R)
        if not (is_positive_definite(s) and is_positive_definite(r)):
            raise PositivityError("cost matrices S and R must be positive definite")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "R", r)

    def stage_cost(self, x: npt.ArrayLike, u: npt.ArrayLike) -> float:
        """Cost of a single state-input pair."""
        xv = np.asarray(x, dtype=np.float64)
        uv = np.asarray(u, dtype=np.float64)
        return float(xv @ self.S @ xv + uv @ self.R @ uv)

    def stage_costs(self, X: npt.ArrayLike, U: npt.ArrayLike) -> Vector:
        """Row-wise costs for stacked states ``X`` (T x n) and inputs ``U`` (T x d)."""
        xs = np.asarray(X, dtype=np.float64)
        us = np.asarray(U, dtype=np.float64)
        return np.asarray(
            np.einsum("ti,ij,tj->t", xs, self.S, xs) + np.einsum("ti,ij,tj->t", us, self.R, us)
        )


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, str):
        return int(hash_string(tag)[:8], 16)
    if tag < 0:
        raise ParameterError(f"stream tags must be non-negative, got {tag}")
    return int(tag)


@dataclass(frozen=True)
class RngStream:
    """Named random stream: the same ``(seed, stream_id)`` always yields the same draws."""

    seed: int
    stream_id: tuple[int | str, ...] = ()

    def child(self, *tags: int | str) -> "RngStream":
        """Derive an independent stream by extending the identifier."""
        return RngStream(self.seed, self.stream_id + tags)

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=tuple(_tag_to_int(t) for t in self.stream_id)
        )
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class Fresh:
    """Start a rollout from ``x_0 ~ N(0, Sigma0)``."""


@dataclass(frozen=True)
class Continue:
    """Start a rollout from a state carried over from a previous phase."""

    x: Vector


InitialState = Union[Fresh, Continue]


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T``, inputs and exploration noise ``u_0..u_{T-1}``, stage costs."""

    states: Matrix
    inputs: Matrix
    noises_eta: Matrix
    costs: Vector
    k_play: Policy
    sigma_eta: float

    @property
    def T(self) -> int:
        """Number of transitions."""
        return int(self.inputs.shape[0])

    @property
    def n(self) -> int:
        """State dimension."""
        return int(self.states.shape[1])

    @property
    def d(self) -> int:
        """Input dimension."""
        return int(self.inputs.shape[1])

    @property
    def final_state(self) -> Vector:
        """State after the last transition, for ``Continue``."""
        return np.asarray(self.states[-1].copy())

    def segment(self, start: int, stop: int) -> "Trajectory":
        """Sub-trajectory holding transitions ``start..stop-1``."""
        if not 0 <= start < stop <= self.T:
            raise ParameterError(f"invalid segment [{start}, {stop}) of a length-{self.T} trajectory")
        return Trajectory(
            states=self.states[start : stop + 1],
            inputs=self.inputs[start:stop],
            noises_eta=self.noises_eta[start:stop],
            costs=self.costs[start:stop],
            k_play=self.k_play,
            sigma_eta=self.sigma_eta,
        )


def rollout(
    sys: LinearSystem,
    cost: CostModel,
    K_play: npt.ArrayLike,
    sigma_eta: float,
    T: int,
    start: InitialState,
    rng: RngStream,
    *,
    divergence_threshold: float | None = None,
    context: str | None = None,
) -> Trajectory:
    """Roll the plant forward ``T`` steps under ``u_t = K_play x_t + eta_t``.

    Draw order: for ``Fresh`` starts, ``n`` normals for the initial state; then per
    step ``d`` normals for ``eta_t`` followed by ``n`` normals for ``w_t``.
    """
    if T < 1:
        raise ParameterError(f"rollout length must be at least 1, got {T}")
    if sigma_eta < 0:
        raise ParameterError(f"sigma_eta must be non-negative, got {sigma_eta}")
    n, d = sys.n, sys.d
    k = np.asarray(K_play, dtype=np.float64)
    if k.shape != (d, n):
        raise DimensionError(f"K_play must be {d}x{n}, got shape {k.shape}")
    threshold = settings.divergence_threshold if divergence_threshold is None else divergence_threshold

    gen = rng.generator()
    if isinstance(start, Continue):
        x = np.asarray(start.x, dtype=np.float64).copy()
        if x.shape != (n,):
            raise DimensionError(f"carried state must have shape ({n},), got {x.shape}")
    else:
        x = sys._x0_factor @ gen.standard_normal(n)
    noise = gen.standard_normal((T, d + n))
    eta = sigma_eta * noise[:, :d]
    drive = eta @ sys.B.T + sys.sigma_w * noise[:, d:]
    closed = sys.A + sys.B @ k

    states = np.empty((T + 1, n))
    states[0] = x
    bound = threshold**2
    for t in range(T):
        x = closed @ x + drive[t]
        states[t + 1] = x
        if not x @ x <= bound:
            raise DivergenceError(step=t + 1, norm=float(np.linalg.norm(x)), context=context)

    inputs = states[:-1] @ k.T + eta
    return Trajectory(
        states=states,
        inputs=inputs,
        noises_eta=eta,
        costs=cost.stage_costs(states[:-1], inputs),
        k_play=k,
        sigma_eta=float(sigma_eta),
    )


def trajectory_cost(traj: Trajectory) -> tuple[Vector, float]:
    """Per-step costs and their sum."""
    return traj.costs.copy(), float(np.sum(traj.costs))


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> Path:
    """Dump a trajectory with columns ``t, x0.., u0.., cost``."""
    out = Path(path)
    header = ["t", *(f"x{i}" for i in range(traj.n)), *(f"u{j}" for j in range(traj.d)), "cost"]
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.T):
            writer.writerow(
                [t, *map(repr, traj.states[t].tolist()), *map(repr, traj.inputs[t].tolist()), repr(float(traj.costs[t]))]
            )
    return out
