"""Off-policy LSTD-Q estimation of the relative Q-function of a linear policy."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from lspi_lqr.errors import DimensionError, ParameterError
from lspi_lqr.logger import setup_logger
from lspi_lqr.settings.numerics import settings
from lspi_lqr.sim import LinearSystem, Trajectory
from lspi_lqr.symmat import (
    Matrix,
    Vector,
    smat,
    svec,
    svec_congruence,
    svec_dim,
    svec_outer_rows,
    sym_kron,
)

# Create a default project logger
logger = setup_logger()


@dataclass(frozen=True)
class LstdqFeatures:
    """Stacked LSTD-Q regressors.

    Row ``t`` of ``phi`` is ``svec(z_t z_t^T)`` with ``z_t = [x_t; u_t]``, row ``t``
    of ``psi_plus`` is the feature of the successor state under the evaluated
    policy, and ``f = svec(sigma_w^2 [I; K][I; K]^T)``.
    """

    phi: Matrix
    psi_plus: Matrix
    f: Vector
    costs: Vector

    def __post_init__(self) -> None:
        if self.phi.ndim != 2 or self.phi.shape != self.psi_plus.shape:
            raise DimensionError(
                f"phi {self.phi.shape} and psi_plus {self.psi_plus.shape} must agree"
            )
        if self.f.shape != (self.phi.shape[1],):
            raise DimensionError(f"f has shape {self.f.shape}, expected ({self.phi.shape[1]},)")
        if self.costs.shape != (self.phi.shape[0],):
            raise DimensionError(f"costs has shape {self.costs.shape}, expected ({self.phi.shape[0]},)")

    @property
    def T(self) -> int:
        """Number of transitions."""
        return int(self.phi.shape[0])

    @property
    def dim(self) -> int:
        """Feature dimension ``(n+d)(n+d+1)/2``."""
        return int(self.phi.shape[1])

    def rows(self, start: int, stop: int) -> "LstdqFeatures":
        """Features restricted to transitions ``start..stop-1``."""
        return LstdqFeatures(
            phi=self.phi[start:stop],
            psi_plus=self.psi_plus[start:stop],
            f=self.f,
            costs=self.costs[start:stop],
        )

    @classmethod
    def concat(cls, parts: Sequence["LstdqFeatures"]) -> "LstdqFeatures":
        """Stack features built for the same evaluated policy."""
        if not parts:
            raise ParameterError("cannot concatenate an empty feature list")
        f = parts[0].f
        for part in parts[1:]:
            if part.f.shape != f.shape or not np.array_equal(part.f, f):
                raise ParameterError("feature blocks were built for different policies")
        return cls(
            phi=np.vstack([p.phi for p in parts]),
            psi_plus=np.vstack([p.psi_plus for p in parts]),
            f=f,
            costs=np.concatenate([p.costs for p in parts]),
        )


@dataclass(frozen=True)
class LstdqEstimate:
    """LSTD-Q solution with the rank of the design matrix."""

    q: Vector
    rank: int
    rank_deficient: bool

    @property
    def Q(self) -> Matrix:
        """Estimated Q matrix ``smat(q)``."""
        return smat(self.q)


@dataclass(frozen=True)
class LstdqDiagnostics:
    """Smallest singular values entering the LSTD-Q error analysis."""

    sigma_min_phi: float
    sigma_min_bellman: float


def _stacked_gain(K_eval: npt.ArrayLike, n: int, d: int) -> Matrix:
    k = np.asarray(K_eval, dtype=np.float64)
    if k.shape != (d, n):
        raise DimensionError(f"K_eval must be {d}x{n}, got shape {k.shape}")
    return np.vstack([np.eye(n), k])


def build_features(traj: Trajectory, K_eval: npt.ArrayLike, sigma_w: float) -> LstdqFeatures:
    """LSTD-Q features of a trajectory for evaluating the policy ``K_eval``."""
    n, d = traj.n, traj.d
    i_k = _stacked_gain(K_eval, n, d)
    z = np.hstack([traj.states[:-1], traj.inputs])
    z_next = traj.states[1:] @ i_k.T
    return LstdqFeatures(
        phi=svec_outer_rows(z),
        psi_plus=svec_outer_rows(z_next),
        f=svec(sigma_w**2 * (i_k @ i_k.T)),
        costs=np.asarray(traj.costs, dtype=np.float64),
    )


def oracle_features(traj: Trajectory, K_eval: npt.ArrayLike, sys: LinearSystem) -> LstdqFeatures:
    """Features whose successor rows are replaced by their conditional expectations.

    ``smat(Xi_t) = [I; K](mu_t mu_t^T + sigma_w^2 I)[I; K]^T`` with ``mu_t = A x_t + B u_t``.
    """
    if (traj.n, traj.d) != (sys.n, sys.d):
        raise DimensionError(
            f"trajectory is {traj.n}x{traj.d} but the system is {sys.n}x{sys.d}"
        )
    i_k = _stacked_gain(K_eval, sys.n, sys.d)
    z = np.hstack([traj.states[:-1], traj.inputs])
    mean_next = traj.states[:-1] @ sys.A.T + traj.inputs @ sys.B.T
    f = svec(sys.sigma_w**2 * (i_k @ i_k.T))
    return LstdqFeatures(
        phi=svec_outer_rows(z),
        psi_plus=svec_outer_rows(mean_next @ i_k.T) + f,
        f=f,
        costs=np.asarray(traj.costs, dtype=np.float64),
    )


def _solve_pinv(design: Matrix, rhs: Vector, n_rows: int) -> LstdqEstimate:
    # SVD pseudo-inverse, singular values below max(T, p) * eps * s_max are dropped
    p = design.shape[0]
    u, s, vt = np.linalg.svd(design)
    cutoff = max(n_rows, p) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    q = vt[:rank].T @ ((u[:, :rank].T @ rhs) / s[:rank])
    deficient = rank < p
    if deficient:
        logger.warning(
            f"LSTD-Q design matrix is rank deficient: rank {rank} < {p} with {n_rows} transitions"
        )
    return LstdqEstimate(q=np.asarray(q), rank=rank, rank_deficient=deficient)


def lstdq(features: LstdqFeatures, chunk_size: int | None = None) -> LstdqEstimate:
    """Solve ``q = (sum phi_t (phi_t - psi_t + f)^T)^+ sum phi_t c_t``.

    Partial sums over fixed-size chunks are reduced in extended precision, so the
    result does not depend on how the rows are scheduled.
    """
    if features.T == 0:
        raise ParameterError("LSTD-Q needs at least one transition")
    chunk = settings.lstdq_chunk_size if chunk_size is None else chunk_size
    if chunk < 1:
        raise ParameterError(f"chunk_size must be positive, got {chunk}")

    p = features.dim
    gram = np.zeros((p, p), dtype=np.longdouble)
    rhs = np.zeros(p, dtype=np.longdouble)
    for start in range(0, features.T, chunk):
        block = features.rows(start, start + chunk)
        gram += block.phi.T @ (block.phi - block.psi_plus + block.f)
        rhs += block.phi.T @ block.costs
    return _solve_pinv(np.asarray(gram, dtype=np.float64), np.asarray(rhs, dtype=np.float64), features.T)


@dataclass(frozen=True)
class LstdqStatistics:
    """Policy-independent sums from which LSTD-Q can evaluate any gain.

    With ``chi_t = svec(x_{t+1} x_{t+1}^T)`` the successor features are
    ``psi_t = C_K chi_t`` for the lifting ``C_K = svec_congruence([I; K])``, so
    ``sum phi_t psi_t^T = (sum phi_t chi_t^T) C_K^T``.
    """

    n: int
    d: int
    T: int
    phi_phi: Matrix
    phi_next: Matrix
    phi_sum: Vector
    phi_cost: Vector

    @classmethod
    def from_trajectory(cls, traj: Trajectory, chunk_size: int | None = None) -> "LstdqStatistics":
        """Accumulate the sums of one trajectory chunk by chunk in extended precision."""
        chunk = settings.lstdq_chunk_size if chunk_size is None else chunk_size
        if chunk < 1:
            raise ParameterError(f"chunk_size must be positive, got {chunk}")
        n, d = traj.n, traj.d
        p, p_n = svec_dim(n + d), svec_dim(n)
        phi_phi = np.zeros((p, p), dtype=np.longdouble)
        phi_next = np.zeros((p, p_n), dtype=np.longdouble)
        phi_sum = np.zeros(p, dtype=np.longdouble)
        phi_cost = np.zeros(p, dtype=np.longdouble)
        for start in range(0, traj.T, chunk):
            stop = min(start + chunk, traj.T)
            phi = svec_outer_rows(np.hstack([traj.states[start:stop], traj.inputs[start:stop]]))
            chi = svec_outer_rows(traj.states[start + 1 : stop + 1])
            phi_phi += phi.T @ phi
            phi_next += phi.T @ chi
            phi_sum += phi.sum(axis=0)
            phi_cost += phi.T @ traj.costs[start:stop]
        return cls(
            n=n,
            d=d,
            T=traj.T,
            phi_phi=np.asarray(phi_phi, dtype=np.float64),
            phi_next=np.asarray(phi_next, dtype=np.float64),
            phi_sum=np.asarray(phi_sum, dtype=np.float64),
            phi_cost=np.asarray(phi_cost, dtype=np.float64),
        )

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "LstdqStatistics":
        """Pooled sums of several trajectories."""
        if not trajs:
            raise ParameterError("no trajectories to accumulate")
        total = cls.from_trajectory(trajs[0])
        for traj in trajs[1:]:
            total = total + cls.from_trajectory(traj)
        return total

    def __add__(self, other: "LstdqStatistics") -> "LstdqStatistics":
        """Pool the sums of two disjoint sets of transitions."""
        if (self.n, self.d) != (other.n, other.d):
            raise DimensionError("statistics of systems with different dimensions")
        return LstdqStatistics(
            n=self.n,
            d=self.d,
            T=self.T + other.T,
            phi_phi=self.phi_phi + other.phi_phi,
            phi_next=self.phi_next + other.phi_next,
            phi_sum=self.phi_sum + other.phi_sum,
            phi_cost=self.phi_cost + other.phi_cost,
        )


def lstdq_from_statistics(
    stats: LstdqStatistics, K_eval: npt.ArrayLike, sigma_w: float
) -> LstdqEstimate:
    """LSTD-Q estimate of the Q-function of ``K_eval`` from pooled sums."""
    if stats.T == 0:
        raise ParameterError("LSTD-Q needs at least one transition")
    i_k = _stacked_gain(K_eval, stats.n, stats.d)
    f = svec(sigma_w**2 * (i_k @ i_k.T))
    design = stats.phi_phi - stats.phi_next @ svec_congruence(i_k).T + np.outer(stats.phi_sum, f)
    return _solve_pinv(design, stats.phi_cost, stats.T)


def bellman_operator(K_eval: npt.ArrayLike, A: npt.ArrayLike, B: npt.ArrayLike) -> Matrix:
    """``I - L (x)_s L`` with ``L = [I; K][A B]``, so that ``Phi - Xi + F`` equals ``Phi`` times its transpose."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    n, d = a.shape[0], b.shape[1]
    closed = _stacked_gain(K_eval, n, d) @ np.hstack([a, b])
    return np.eye(svec_dim(n + d)) - sym_kron(closed)


def lstdq_diagnostics(
    features: LstdqFeatures, K_eval: npt.ArrayLike, A: npt.ArrayLike, B: npt.ArrayLike
) -> LstdqDiagnostics:
    """Smallest singular values of the stacked ``phi`` rows and of ``I - L (x)_s L``."""
    op = bellman_operator(K_eval, A, B)
    if op.shape[0] != features.dim:
        raise DimensionError(f"features have dimension {features.dim}, operator {op.shape[0]}")
    phi_sv = np.linalg.svd(features.phi, compute_uv=False)
    # fewer rows than columns leaves a null space
    sigma_phi = 0.0 if features.T < features.dim else float(phi_sv[-1])
    sigma_bellman = float(np.linalg.svd(op, compute_uv=False)[-1])
    return LstdqDiagnostics(sigma_min_phi=sigma_phi, sigma_min_bellman=sigma_bellman)
