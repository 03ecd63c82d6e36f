"""Dense linear algebra helpers shared across the workbench."""

import numpy as np
from scipy.optimize import linear_sum_assignment

COND_LIMIT = 1e12  # double-precision sanity boundary for any explicit inverse


class IllConditionedError(RuntimeError):
    """Raised when a solve or inverse exceeds the configured condition limit."""


def as_complex_matrix(a):
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    return m


def op_norm(a):
    """Spectral norm (largest singular value)."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def cond2(a):
    s = np.linalg.svd(as_complex_matrix(a), compute_uv=False)
    if s[-1] == 0.0:
        return np.inf
    return float(s[0] / s[-1])


def inv_norm(a):
    """Norm of the inverse, via the smallest singular value."""
    s = np.linalg.svd(as_complex_matrix(a), compute_uv=False)
    smin = s[-1]
    if smin == 0.0:
        return np.inf
    return float(1.0 / smin)


def solve_checked(a, b, cond_limit=COND_LIMIT, what="linear system"):
    """Solve a x = b, raising IllConditionedError past the condition limit."""
    a = as_complex_matrix(a)
    c = cond2(a)
    if not np.isfinite(c) or c > cond_limit:
        raise IllConditionedError(f"{what}: condition number {c:.3e} exceeds {cond_limit:.1e}")
    return np.linalg.solve(a, b)


def residual(x, a, b):
    """Intertwining residual ||X A - B X||."""
    x = as_complex_matrix(x)
    return op_norm(x @ as_complex_matrix(a) - as_complex_matrix(b) @ x)


def is_triangular(a, lower=True, tol=1e-10):
    a = as_complex_matrix(a)
    off = np.triu(a, 1) if lower else np.tril(a, -1)
    scale = max(1.0, float(np.abs(a).max()))
    return float(np.abs(off).max(initial=0.0)) <= tol * scale


def spectrum(a, tol=1e-9):
    """Eigenvalues; read off the diagonal when the matrix is numerically triangular.

    Defective clusters make dense eigensolvers lose ~eps^(1/m) digits, while the
    matrices built here are triangular by construction, so the diagonal is the
    accurate answer whenever triangularity holds.
    """
    a = as_complex_matrix(a)
    if is_triangular(a, lower=True, tol=tol) or is_triangular(a, lower=False, tol=tol):
        return np.diag(a).copy()
    return np.linalg.eigvals(a)


def multiset_distance(u, v):
    """Optimal-matching distance between two eigenvalue multisets."""
    u = np.asarray(u, dtype=complex).ravel()
    v = np.asarray(v, dtype=complex).ravel()
    if u.size != v.size:
        return np.inf
    if u.size == 0:
        return 0.0
    cost = np.abs(u[:, None] - v[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def kron_all(mats):
    out = np.array([[1.0]], dtype=mats[0].dtype if mats else float)
    for m in mats:
        out = np.kron(out, m)
    return out
