"""Discrete Lyapunov and Riccati solvers, closed-form value and Q-functions."""

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import scipy.linalg

from lspi_lqr.errors import DimensionError, NotStabilizableError, PositivityError
from lspi_lqr.logger import setup_logger
from lspi_lqr.settings.numerics import settings
from lspi_lqr.symmat import (
    Matrix,
    Vector,
    is_positive_definite,
    is_stable,
    require_stable,
    smat,
    svec,
    svec_dim,
    sym_kron,
    symmetrize_checked,
)

# Create a default project logger
logger = setup_logger()


@dataclass(frozen=True)
class ValueFunction:
    """Relative value function ``x^T V x`` of a policy with average-cost offset ``lam``."""

    V: Matrix
    lam: float


@dataclass(frozen=True)
class QFunction:
    """Relative Q-function ``[x;u]^T Q [x;u]`` of a policy."""

    Q: Matrix
    lam: float
    n_states: int
    q: Vector = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", svec(self.Q))


@dataclass(frozen=True)
class DareSolution:
    """Solution of the discrete algebraic Riccati equation."""

    P_star: Matrix
    K_star: Matrix
    J_star: float
    iterations: int


def check_lqr(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K: npt.ArrayLike | None = None,
) -> tuple[Matrix, Matrix, Matrix, Matrix, Matrix | None]:
    """Validate the shapes of an LQR instance and return float arrays."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"A must be square, got shape {a.shape}")
    n = a.shape[0]
    if b.ndim != 2 or b.shape[0] != n:
        raise DimensionError(f"B must have {n} rows, got shape {b.shape}")
    d = b.shape[1]
    s = symmetrize_checked(S)
    r = symmetrize_checked(R)
    if s.shape != (n, n):
        raise DimensionError(f"S must be {n}x{n}, got shape {s.shape}")
    if r.shape != (d, d):
        raise DimensionError(f"R must be {d}x{d}, got shape {r.shape}")
    k = None
    if K is not None:
        k = np.asarray(K, dtype=np.float64)
        if k.shape != (d, n):
            raise DimensionError(f"K must be {d}x{n}, got shape {k.shape}")
    return a, b, s, r, k


def dlyap(L: npt.ArrayLike, M: npt.ArrayLike) -> Matrix:
    """Solve ``P = L^T P L + M`` for a stable ``L``.

    The equation is solved as a dense linear system in svec coordinates,
    ``(I - sym_kron(L^T)) svec(P) = svec(M)``.
    """
    arr = require_stable(L, "L")
    rhs = symmetrize_checked(M)
    if rhs.shape != arr.shape:
        raise DimensionError(f"M has shape {rhs.shape}, expected {arr.shape}")
    operator = np.eye(svec_dim(arr.shape[0])) - sym_kron(arr.T)
    return smat(scipy.linalg.solve(operator, svec(rhs)))


def optimal_gain(
    A: npt.ArrayLike, B: npt.ArrayLike, R: npt.ArrayLike, V: npt.ArrayLike
) -> Matrix:
    """Greedy gain ``-(R + B^T V B)^{-1} B^T V A`` with respect to the value matrix ``V``."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    bt_v = b.T @ np.asarray(V, dtype=np.float64)
    return np.asarray(
        -scipy.linalg.solve(np.asarray(R) + bt_v @ b, bt_v @ a, assume_a="pos")
    )


def riccati_map(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    V: npt.ArrayLike,
) -> Matrix:
    """Riccati map ``S + A^T V A - A^T V B (R + B^T V B)^{-1} B^T V A``."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    v = np.asarray(V, dtype=np.float64)
    bt_v_a = b.T @ v @ a
    solved = scipy.linalg.solve(np.asarray(R) + b.T @ v @ b, bt_v_a, assume_a="pos")
    out = np.asarray(S) + a.T @ v @ a - bt_v_a.T @ solved
    return np.asarray(0.5 * (out + out.T))


def dare(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    *,
    sigma_w: float = 1.0,
    tol: float | None = None,
    max_iter: int | None = None,
) -> DareSolution:
    """Solve the DARE by iterating the Riccati map from ``V_0 = S``."""
    a, b, s, r, _ = check_lqr(A, B, S, R)
    if not (is_positive_definite(s) and is_positive_definite(r)):
        raise PositivityError("dare requires positive definite S and R")
    tol = settings.dare_tol if tol is None else tol
    max_iter = settings.dare_max_iter if max_iter is None else max_iter

    v = s
    for iteration in range(1, max_iter + 1):
        v_next = riccati_map(a, b, s, r, v)
        if not np.all(np.isfinite(v_next)):
            raise NotStabilizableError(f"Riccati iterates overflowed at iteration {iteration}")
        residual = np.linalg.norm(v_next - v) / max(1.0, float(np.linalg.norm(v_next)))
        v = v_next
        if residual < tol:
            break
    else:
        raise NotStabilizableError(
            f"Riccati iteration did not converge within {max_iter} iterations"
        )

    k = optimal_gain(a, b, r, v)
    if not is_stable(a + b @ k):
        raise NotStabilizableError("Riccati fixed point does not yield a stabilizing gain")
    logger.debug(f"dare converged after {iteration} iterations")
    return DareSolution(
        P_star=v, K_star=k, J_star=float(sigma_w**2 * np.trace(v)), iterations=iteration
    )


def policy_value(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K: npt.ArrayLike,
    sigma_w: float,
) -> ValueFunction:
    """Value matrix ``dlyap(A + BK, S + K^T R K)`` and offset ``sigma_w^2 tr(V)``."""
    a, b, s, r, k = check_lqr(A, B, S, R, K)
    assert k is not None
    v = dlyap(a + b @ k, s + k.T @ r @ k)
    return ValueFunction(V=v, lam=float(sigma_w**2 * np.trace(v)))


def policy_qfun(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K_eval: npt.ArrayLike,
    sigma_w: float,
) -> QFunction:
    """Q matrix ``blockdiag(S, R) + [A B]^T V [A B]`` of the policy ``K_eval``."""
    a, b, s, r, k = check_lqr(A, B, S, R, K_eval)
    assert k is not None
    n = a.shape[0]
    v = policy_value(a, b, s, r, k, sigma_w).V
    ab = np.hstack([a, b])
    q = scipy.linalg.block_diag(s, r) + ab.T @ v @ ab
    q = 0.5 * (q + q.T)
    i_k = np.vstack([np.eye(n), k])
    lam = float(sigma_w**2 * np.sum(q * (i_k @ i_k.T)))
    return QFunction(Q=q, lam=lam, n_states=n)


def avg_cost(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K: npt.ArrayLike,
    W: npt.ArrayLike,
) -> float:
    """Average cost ``J(K; W) = tr(W V(K))`` under process noise covariance ``W``."""
    a, b, s, r, k = check_lqr(A, B, S, R, K)
    assert k is not None
    w = symmetrize_checked(W)
    if w.shape != a.shape:
        raise DimensionError(f"W must be {a.shape}, got shape {w.shape}")
    v = dlyap(a + b @ k, s + k.T @ r @ k)
    return float(np.sum(w * v))


def steady_covariance(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    K_play: npt.ArrayLike,
    sigma_w: float,
    sigma_eta: float,
) -> Matrix:
    """Stationary state covariance under ``u = K_play x + eta``."""
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    k = np.asarray(K_play, dtype=np.float64)
    if k.shape != (b.shape[1], a.shape[0]):
        raise DimensionError(f"K_play has shape {k.shape}, expected {(b.shape[1], a.shape[0])}")
    noise = sigma_w**2 * np.eye(a.shape[0]) + sigma_eta**2 * b @ b.T
    return dlyap((a + b @ k).T, noise)


def finite_horizon_cost(
    A: npt.ArrayLike,
    B: npt.ArrayLike,
    S: npt.ArrayLike,
    R: npt.ArrayLike,
    K: npt.ArrayLike,
    W: npt.ArrayLike,
    Sigma0: npt.ArrayLike,
    T: int,
) -> float:
    """Exact mean of ``(1/T) sum_t x_t^T (S + K^T R K) x_t`` with ``x_1 ~ N(0, Sigma0)``.

    The state evolves as ``x_{t+1} = (A + BK) x_t + w_t`` with ``w_t ~ N(0, W)``;
    no stability assumption is needed over a finite horizon.
    """
    a, b, s, r, k = check_lqr(A, B, S, R, K)
    assert k is not None
    closed = a + b @ k
    stage = s + k.T @ r @ k
    w = np.asarray(W, dtype=np.float64)
    cov = np.asarray(Sigma0, dtype=np.float64)
    total = 0.0
    for _ in range(T):
        total += float(np.sum(stage * cov))
        cov = closed @ cov @ closed.T + w
    return total / T
