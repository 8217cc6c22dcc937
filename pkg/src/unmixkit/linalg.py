"""Dense float64 kernel used by the solvers.

Matrices and vectors are plain numpy arrays (row-major). Every routine is a
pure function of its inputs.
"""
import numpy as np
import scipy.linalg

from .errors import DimensionError, NotSPDError

DEFAULT_RCOND = 1e-10
SPD_PIVOT_TOL = 1e-12


def _as_matrix(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {A.shape}")
    return A


def _as_vector(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {x.shape}")
    return x


def mat_vec(A, x):
    """Return ``A @ x`` after checking that the inner dimensions agree."""
    A = _as_matrix(A)
    x = _as_vector(x)
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"matrix has {A.shape[1]} columns but vector has length {x.shape[0]}")
    return A @ x


def gram(A):
    """Return ``A.T @ A``, symmetrized so it is bit-for-bit symmetric."""
    A = _as_matrix(A)
    G = A.T @ A
    # x + y == y + x exactly in IEEE arithmetic, and halving is exact
    return (G + G.T) * 0.5


def cholesky(A, pivot_tol=SPD_PIVOT_TOL):
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Raises NotSPDError when LAPACK meets a non-positive pivot or any pivot
    ``L[j, j]**2`` is at most ``pivot_tol * max(diag(A))``.
    """
    A = _as_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionError(f"Cholesky needs a square matrix, got {A.shape}")
    if n == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(A)):
        raise NotSPDError("matrix has non-finite entries")
    try:
        L = scipy.linalg.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"matrix is not SPD: {exc}") from None
    scale = float(np.max(np.abs(np.diag(A))))
    pivots = np.diag(L) ** 2
    bad = np.flatnonzero(~(pivots > pivot_tol * scale))
    if bad.size:
        j = int(bad[0])
        raise NotSPDError(f"pivot {pivots[j]:.3e} at column {j} is below tolerance; matrix is not SPD")
    return L


def spd_solve(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky."""
    A = _as_matrix(A)
    b = _as_vector(b)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"spd_solve needs a square matrix, got {A.shape}")
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"matrix has {A.shape[0]} rows but right-hand side has length {b.shape[0]}")
    L = cholesky(A)
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)


def lstsq_min_norm(A, b, rcond=DEFAULT_RCOND):
    """Minimum-norm least-squares solution of ``A x ~= b`` via the SVD.

    Singular values at or below ``rcond * sigma_max`` are treated as zero, so
    rank-deficient and underdetermined systems get the pseudo-inverse answer.
    """
    A = _as_matrix(A)
    b = _as_vector(b)
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"matrix has {A.shape[0]} rows but right-hand side has length {b.shape[0]}")
    if rcond < 0:
        raise ValueError("rcond must be non-negative")
    m, n = A.shape
    if m == 0 or n == 0:
        return np.zeros(n)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(n)
    keep = s > rcond * s[0]
    coeffs = (U[:, keep].T @ b) / s[keep]
    return Vt[keep].T @ coeffs


def numerical_rank(A, rcond=DEFAULT_RCOND):
    A = _as_matrix(A)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rcond * s[0]))
