"""Symmetric-matrix toolkit: svec/smat, symmetric Kronecker operator, PSD floor.

The svec ordering is row-major over the upper triangle. Diagonal entries are kept
as they are and off-diagonal entries are scaled by sqrt(2), so that
``svec(M) @ svec(N) == trace(M @ N)`` for symmetric ``M`` and ``N``.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt
import scipy.linalg

from lspi_lqr.errors import DimensionError, InstabilityError, ParameterError, PositivityError, SymmetryError
from lspi_lqr.settings.numerics import settings

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class StabilityCertificate:
    """Witness that ``||L^k|| <= tau * rho**k`` for ``k = 0..k_max``."""

    tau: float
    rho: float
    k_max: int


@dataclass(frozen=True)
class Unstable:
    """Returned by ``stability_certificate`` when the spectral radius is at least one."""

    spectral_radius: float


def as_square(M: npt.ArrayLike, name: str = "matrix") -> Matrix:
    """Return ``M`` as a float64 square array or raise ``DimensionError``."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def symmetrize_checked(M: npt.ArrayLike, tol: float | None = None) -> Matrix:
    """Return ``(M + M.T) / 2`` after checking ``M`` is symmetric to relative ``tol``."""
    arr = as_square(M)
    tol = settings.symmetry_tol if tol is None else tol
    if arr.size == 0:
        return arr.copy()
    scale = float(np.max(np.abs(arr)))
    asym = float(np.max(np.abs(arr - arr.T)))
    if asym > tol * scale:
        raise SymmetryError(
            f"matrix is not symmetric: max asymmetry {asym:.3e} exceeds {tol:.1e} relative to {scale:.3e}"
        )
    return 0.5 * (arr + arr.T)


def svec_dim(n: int) -> int:
    """Length of the svec of an ``n x n`` symmetric matrix."""
    return n * (n + 1) // 2


def smat_side(m: int) -> int:
    """Side of the symmetric matrix encoded by a vector of length ``m``."""
    n = (math.isqrt(8 * m + 1) - 1) // 2
    if n * (n + 1) // 2 != m:
        raise DimensionError(f"length {m} is not a triangular number")
    return n


@lru_cache(maxsize=64)
def _triu(n: int) -> tuple[npt.NDArray[np.intp], npt.NDArray[np.intp], Vector]:
    rows, cols = np.triu_indices(n)
    weights = np.where(rows == cols, 1.0, _SQRT2)
    for arr in (rows, cols, weights):
        arr.setflags(write=False)
    return rows, cols, weights


def svec(M: npt.ArrayLike) -> Vector:
    """Norm-preserving vectorization of a symmetric matrix."""
    sym = symmetrize_checked(M)
    rows, cols, weights = _triu(sym.shape[0])
    return sym[rows, cols] * weights


def smat(v: npt.ArrayLike) -> Matrix:
    """Inverse of ``svec``."""
    vec = np.asarray(v, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"svec coordinates must be one-dimensional, got shape {vec.shape}")
    n = smat_side(vec.size)
    rows, cols, weights = _triu(n)
    values = vec / weights
    out = np.zeros((n, n))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


def svec_outer_rows(Z: npt.ArrayLike) -> Matrix:
    """Row ``t`` of the result is ``svec(z_t z_t^T)`` for row ``z_t`` of ``Z``."""
    arr = np.asarray(Z, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array of row vectors, got shape {arr.shape}")
    rows, cols, weights = _triu(arr.shape[1])
    return arr[:, rows] * arr[:, cols] * weights


@lru_cache(maxsize=32)
def _svec_basis(m: int) -> Matrix:
    # U @ vec(M) == svec(M) and U.T @ svec(M) == vec(M) for symmetric M (row-major vec)
    rows, cols, _ = _triu(m)
    p = rows.size
    basis = np.zeros((p, m * m))
    idx = np.arange(p)
    diag = rows == cols
    off = ~diag
    basis[idx[diag], rows[diag] * m + cols[diag]] = 1.0
    basis[idx[off], rows[off] * m + cols[off]] = 1.0 / _SQRT2
    basis[idx[off], cols[off] * m + rows[off]] = 1.0 / _SQRT2
    basis.setflags(write=False)
    return basis


def sym_kron(L: npt.ArrayLike) -> Matrix:
    """Symmetric Kronecker operator: ``sym_kron(L) @ svec(M) == svec(L @ M @ L.T)``."""
    return svec_congruence(as_square(L, "L"))


def svec_congruence(M: npt.ArrayLike) -> Matrix:
    """Operator with ``svec_congruence(M) @ svec(X) == svec(M @ X @ M.T)`` for an ``m x k`` ``M``."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    return np.asarray(_svec_basis(rows) @ np.kron(arr, arr) @ _svec_basis(cols).T)


def proj_psd_floor(M: npt.ArrayLike, mu: float) -> Matrix:
    """Frobenius projection of ``M`` onto the symmetric matrices ``X >= mu * I``."""
    if mu <= 0:
        raise ParameterError(f"mu must be positive, got {mu}")
    sym = symmetrize_checked(M)
    evals, evecs = scipy.linalg.eigh(sym)
    if evals.size == 0 or evals[0] >= mu:
        return sym
    clipped = np.maximum(evals, mu)
    out = (evecs * clipped) @ evecs.T
    return np.asarray(0.5 * (out + out.T))


def is_positive_definite(M: npt.ArrayLike, rel_tol: float = 1e-12) -> bool:
    """Whether ``lambda_min(M) > rel_tol * lambda_max(M) > 0``."""
    evals = scipy.linalg.eigh(symmetrize_checked(M), eigvals_only=True)
    return bool(evals.size and evals[-1] > 0 and evals[0] > rel_tol * evals[-1])


def _require_pd(M: npt.ArrayLike, name: str) -> Matrix:
    sym = symmetrize_checked(M)
    if not is_positive_definite(sym):
        raise PositivityError(f"{name} is not positive definite")
    return sym


def delta_inf(A: npt.ArrayLike, B: npt.ArrayLike) -> float:
    """Invariant metric ``||log(A^{-1/2} B A^{-1/2})||`` on positive definite matrices."""
    a = _require_pd(A, "A")
    b = _require_pd(B, "B")
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    a_vals, a_vecs = scipy.linalg.eigh(a)
    inv_sqrt = (a_vecs / np.sqrt(a_vals)) @ a_vecs.T
    congruence = inv_sqrt @ b @ inv_sqrt
    evals = scipy.linalg.eigh(0.5 * (congruence + congruence.T), eigvals_only=True)
    evals = np.maximum(evals, np.finfo(np.float64).tiny)
    return float(np.max(np.abs(np.log(evals))))


def spectral_radius(L: npt.ArrayLike) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    arr = as_square(L)
    if arr.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(arr))))


def is_stable(L: npt.ArrayLike, margin: float | None = None) -> bool:
    """Whether the spectral radius of ``L`` is below ``1 - margin``."""
    margin = settings.stability_margin if margin is None else margin
    return spectral_radius(L) < 1.0 - margin


def require_stable(L: npt.ArrayLike, what: str = "closed-loop matrix") -> Matrix:
    """Return ``L`` as an array, raising ``InstabilityError`` unless it is stable."""
    arr = as_square(L, what)
    radius = spectral_radius(arr)
    if radius >= 1.0 - settings.stability_margin:
        raise InstabilityError(f"{what} is not stable: spectral radius {radius:.6f}", radius)
    return arr


def stability_certificate(
    L: npt.ArrayLike, k_max: int | None = None
) -> StabilityCertificate | Unstable:
    """Find ``(tau, rho)`` with ``||L^k|| <= tau * rho**k`` over ``k = 0..k_max``.

    ``rho`` is the midpoint between the spectral radius and one, and ``tau`` is the
    largest ratio ``||L^k|| / rho**k`` on the checked horizon.
    """
    arr = as_square(L, "L")
    k_max = settings.certificate_horizon if k_max is None else k_max
    if k_max < 1:
        raise ParameterError(f"k_max must be at least 1, got {k_max}")
    radius = spectral_radius(arr)
    if radius >= 1.0:
        return Unstable(radius)
    rho = 0.5 * (radius + 1.0)
    tau = 1.0
    power = np.eye(arr.shape[0])
    for k in range(1, k_max + 1):
        power = power @ arr
        tau = max(tau, float(np.linalg.norm(power, 2)) / rho**k)
    return StabilityCertificate(tau=tau, rho=rho, k_max=k_max)
