"""Tools for solving and evaluating LQR problems."""

from dataclasses import dataclass
from typing import Annotated

import numpy as np
from mcp.shared.exceptions import McpError
from mcp.types import INTERNAL_ERROR, ErrorData, ToolAnnotations
from pydantic import Field

from lspi_lqr.logger import setup_logger
from lspi_lqr.lstdq import build_features, lstdq
from lspi_lqr.lyapunov import dare, policy_qfun, policy_value
from lspi_lqr.policy_iter import exact_pi
from lspi_lqr.shared import mcp
from lspi_lqr.sim import CostModel, Fresh, LinearSystem, RngStream, rollout
from lspi_lqr.symmat import is_stable, spectral_radius

# Create a default project logger
logger = setup_logger()

MatrixArg = list[list[float]]

_A = Annotated[MatrixArg, Field(description="State transition matrix A (n x n).")]
_B = Annotated[MatrixArg, Field(description="Input matrix B (n x d).")]
_S = Annotated[MatrixArg, Field(description="Positive definite state cost S (n x n).")]
_R = Annotated[MatrixArg, Field(description="Positive definite input cost R (d x d).")]
_SIGMA_W = Annotated[
    float, Field(description="Standard deviation of the process noise.", ge=0.0)
]


def _tool_error(what: str, err: Exception) -> McpError:
    logger.exception(f"Error {what}")
    return McpError(ErrorData(code=INTERNAL_ERROR, message=f"Unexpected error: {err!s}"))


@dataclass
class RiccatiOutput:
    """Output of the solve_riccati_equation tool."""

    P_star: Annotated[
        MatrixArg, Field(description="Stabilizing solution of the Riccati equation.")
    ]
    K_star: Annotated[MatrixArg, Field(description="Optimal feedback gain, u = K x.")]
    J_star: Annotated[float, Field(description="Optimal average cost per step.")]
    iterations: Annotated[int, Field(description="Riccati iterations until convergence.")]


@mcp.tool(
    title="Solve the discrete algebraic Riccati equation",
    annotations=ToolAnnotations(readOnlyHint=True, destructiveHint=False),
)
def solve_riccati_equation(
    A: _A, B: _B, S: _S, R: _R, sigma_w: _SIGMA_W = 1.0
) -> RiccatiOutput:
    """Compute the optimal LQR gain and average cost of the system (A, B) under cost (S, R)."""
    try:
        sol = dare(A, B, S, R, sigma_w=sigma_w)
        return RiccatiOutput(sol.P_star.tolist(), sol.K_star.tolist(), sol.J_star, sol.iterations)
    except Exception as e:
        raise _tool_error("solving the Riccati equation", e) from e


@dataclass
class PolicyEvaluationOutput:
    """Output of the evaluate_linear_policy tool."""

    stable: Annotated[bool, Field(description="Whether A + B K is stable.")]
    spectral_radius: Annotated[float, Field(description="Spectral radius of A + B K.")]
    V: Annotated[
        MatrixArg | None,
        Field(description="Value matrix of the policy, null when the policy is unstable."),
    ]
    Q: Annotated[
        MatrixArg | None,
        Field(description="Q matrix of the policy, null when the policy is unstable."),
    ]
    average_cost: Annotated[
        float | None, Field(description="Average cost per step, null when unstable.")
    ]
    relative_cost_error: Annotated[
        float | None,
        Field(description="(J(K) - J_star) / J_star, null when unstable."),
    ]


@mcp.tool(
    title="Evaluate a linear policy",
    annotations=ToolAnnotations(readOnlyHint=True, destructiveHint=False),
)
def evaluate_linear_policy(
    A: _A,
    B: _B,
    S: _S,
    R: _R,
    K: Annotated[MatrixArg, Field(description="Feedback gain K (d x n), u = K x.")],
    sigma_w: _SIGMA_W = 1.0,
) -> PolicyEvaluationOutput:
    """Closed-form value function, Q-function and average cost of the policy u = K x."""
    try:
        a, b, k = np.asarray(A), np.asarray(B), np.asarray(K)
        rho = spectral_radius(a + b @ k)
        if not is_stable(a + b @ k):
            return PolicyEvaluationOutput(False, rho, None, None, None, None)
        vf = policy_value(A, B, S, R, K, sigma_w)
        qf = policy_qfun(A, B, S, R, K, sigma_w)
        j_star = dare(A, B, S, R, sigma_w=sigma_w).J_star
        return PolicyEvaluationOutput(
            stable=True,
            spectral_radius=rho,
            V=vf.V.tolist(),
            Q=qf.Q.tolist(),
            average_cost=vf.lam,
            relative_cost_error=(vf.lam - j_star) / j_star if j_star > 0 else None,
        )
    except Exception as e:
        raise _tool_error("evaluating the policy", e) from e


@dataclass
class ExactPolicyIterationOutput:
    """Output of the run_exact_policy_iteration tool."""

    gains: Annotated[list[MatrixArg], Field(description="Gains K_0..K_N of the iteration.")]
    relative_cost_errors: Annotated[
        list[float], Field(description="(J(K_t) - J_star) / J_star for every gain.")
    ]
    failure: Annotated[
        str | None, Field(description="Why the iteration stopped early, if it did.")
    ]


@mcp.tool(
    title="Run exact policy iteration",
    annotations=ToolAnnotations(readOnlyHint=True, destructiveHint=False),
)
def run_exact_policy_iteration(
    A: _A,
    B: _B,
    S: _S,
    R: _R,
    K0: Annotated[MatrixArg, Field(description="Stabilizing initial gain (d x n).")],
    iterations: Annotated[int, Field(description="Number of iterations.", ge=0, le=1000)] = 10,
    sigma_w: _SIGMA_W = 1.0,
) -> ExactPolicyIterationOutput:
    """Policy iteration with exact evaluation, starting from a stabilizing gain K0."""
    try:
        trace = exact_pi(A, B, S, R, K0, iterations, sigma_w)
        return ExactPolicyIterationOutput(
            gains=[k.tolist() for k in trace.gains],
            relative_cost_errors=[m.rel_cost_err for m in trace.metrics],
            failure=trace.failure,
        )
    except Exception as e:
        raise _tool_error("running exact policy iteration", e) from e


@dataclass
class QFunctionEstimateOutput:
    """Output of the estimate_q_function tool."""

    Q_hat: Annotated[MatrixArg, Field(description="LSTD-Q estimate of the Q matrix.")]
    Q_true: Annotated[MatrixArg, Field(description="Closed-form Q matrix of K_eval.")]
    error: Annotated[float, Field(description="Euclidean norm of svec(Q_hat - Q_true).")]
    rank: Annotated[int, Field(description="Numerical rank of the LSTD-Q design matrix.")]
    rank_deficient: Annotated[
        bool, Field(description="Whether the design matrix was rank deficient.")
    ]


@mcp.tool(
    title="Estimate a Q-function with LSTD-Q",
    annotations=ToolAnnotations(readOnlyHint=True, destructiveHint=False),
)
def estimate_q_function(
    A: _A,
    B: _B,
    S: _S,
    R: _R,
    K_play: Annotated[MatrixArg, Field(description="Gain played while collecting data.")],
    K_eval: Annotated[MatrixArg, Field(description="Gain whose Q-function is estimated.")],
    steps: Annotated[int, Field(description="Length of the rollout.", ge=1, le=1_000_000)],
    sigma_eta: Annotated[
        float, Field(description="Standard deviation of the exploration noise.", ge=0.0)
    ] = 1.0,
    sigma_w: _SIGMA_W = 1.0,
    seed: Annotated[int, Field(description="Seed of the rollout noise.", ge=0)] = 0,
) -> QFunctionEstimateOutput:
    """Simulate one rollout under K_play and estimate the Q-function of K_eval from it."""
    try:
        sys = LinearSystem(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64), sigma_w)
        cost = CostModel(np.asarray(S, dtype=np.float64), np.asarray(R, dtype=np.float64))
        traj = rollout(
            sys, cost, K_play, sigma_eta, steps, Fresh(), RngStream(seed).child("tool"),
            context="estimate_q_function",
        )
        estimate = lstdq(build_features(traj, K_eval, sigma_w))
        truth = policy_qfun(A, B, S, R, K_eval, sigma_w)
        return QFunctionEstimateOutput(
            Q_hat=estimate.Q.tolist(),
            Q_true=truth.Q.tolist(),
            error=float(np.linalg.norm(estimate.q - truth.q)),
            rank=estimate.rank,
            rank_deficient=estimate.rank_deficient,
        )
    except Exception as e:
        raise _tool_error("estimating the Q-function", e) from e
