"""Jordan cells, truncated shifts, and explicit similarity certificates.

The explicit intertwiner between a Jordan cell and the compressed shift on
K_{b_lambda^{N+1}}, its norm calibration in the cell parameter, the
block-diagonal version, and the triangular-to-diagonal similarity with a
model-space assembly at the end of the chain.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .diskfn import BlaschkeProduct
from .linalg import (
    IllConditionedError,
    as_complex_matrix,
    cond2,
    inv_norm,
    op_norm,
    residual,
)
from .modelspace import build_model_space, inclusion_map, _circle


@dataclass(frozen=True)
class JordanCell:
    """T e_0 = lambda e_0, T e_n = lambda e_n + e_{n-1}: upper bidiagonal."""

    n: int
    lam: complex

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if abs(self.lam) >= 1:
            raise ValueError("lambda must be in the open disk")

    @property
    def matrix(self):
        m = np.eye(self.n + 1, dtype=complex) * self.lam
        m += np.diag(np.ones(self.n, dtype=complex), 1)
        return m


@dataclass(frozen=True)
class TruncatedShift:
    """S on the (N+1)-fold sum of a d-dimensional space: block superdiagonal identities."""

    block_dim: int
    n: int

    @property
    def matrix(self):
        d, n = self.block_dim, self.n
        m = np.zeros(((n + 1) * d, (n + 1) * d), dtype=complex)
        for k in range(n):
            m[k * d : (k + 1) * d, (k + 1) * d : (k + 2) * d] = np.eye(d)
        return m


@dataclass(frozen=True)
class IntertwinerCertificate:
    """A transformation X with X A = B X, its norms, and the verified residual."""

    x: np.ndarray
    norm_x: float
    norm_x_inv: float
    residual: float
    relation: str               # similarity | quasiaffinity-block | unitary
    source: str = ""
    target: str = ""
    note: str = ""

    def to_json_dict(self):
        return {
            "relation": self.relation,
            "normX": self.norm_x,
            "normXinv": self.norm_x_inv,
            "residual": self.residual,
            "dims": list(self.x.shape),
            "source": self.source,
            "target": self.target,
            "note": self.note,
        }


def certify(x, a, b, relation, source="", target="", note="", norm_x_inv=None):
    x = as_complex_matrix(x)
    r = residual(x, a, b)
    nx = op_norm(x)
    nxi = norm_x_inv if norm_x_inv is not None else (inv_norm(x) if x.shape[0] == x.shape[1] else np.inf)
    return IntertwinerCertificate(x, nx, float(nxi), r, relation, source, target, note)


# ---------------------------------------------------------------------------
# The explicit Jordan-cell intertwiner

def _h_basis_values(n_jordan, lam, z):
    """The orthonormal basis h_0..h_N of K_{b_lambda^{N+1}} on a grid."""
    z = np.asarray(z, dtype=complex)
    n = n_jordan
    lam = complex(lam)
    out = np.empty((n + 1, z.size), dtype=complex)
    if lam == 0:
        for k in range(n + 1):
            out[k] = z ** (n - k)
        return out
    c = (abs(lam) / lam) ** (n + 1)
    root = math.sqrt(1.0 - abs(lam) ** 2)
    for k in range(n + 1):
        out[k] = (
            c
            * (-1.0) ** (k + 1)
            * (lam - z) ** (n - k)
            * root
            / (1.0 - lam.conjugate() * z) ** (n + 1 - k)
        )
    return out


def _lemma41_coefficient_matrix(n_jordan, lam):
    """Upper-triangular C with X e_n = sum_k C[k, n] h_k."""
    n = n_jordan
    lam = complex(lam)
    lb = lam.conjugate()
    c = np.zeros((n + 1, n + 1), dtype=complex)
    for nn in range(n + 1):
        for k in range(nn + 1):
            c[k, nn] = math.comb(nn, k) * lb ** (nn - k) / (1.0 - abs(lam) ** 2) ** nn
    return c


def _neumann_inverse_upper(c):
    """Inverse of an upper-triangular matrix via the nilpotent Neumann series."""
    d = np.diag(np.diag(c))
    a = c - d
    dinv = np.diag(1.0 / np.diag(c))
    term = dinv.copy()
    out = dinv.copy()
    m = dinv @ a
    power = np.eye(c.shape[0], dtype=complex)
    for k in range(1, c.shape[0]):
        power = -power @ m
        out = out + power @ dinv
    return out


def lemma41_intertwiner(n_jordan, lam, ms=None):
    """Certificate X from the Jordan cell T_{N,lambda} to T on K_{b_lambda^{N+1}}.

    X is assembled from the explicit rational basis h_n and binomial
    coefficients; both norms tend to 1 as lambda -> 0.  Returns the
    certificate and the model space carrying the target matrix.
    """
    lam = complex(lam)
    if lam == 0:
        b = BlaschkeProduct(((0.0, n_jordan + 1),))
    else:
        b = BlaschkeProduct(((lam, n_jordan + 1),))
    ms = ms or build_model_space(b)
    c = _lemma41_coefficient_matrix(n_jordan, lam)
    # change of basis h -> TM, unitary; computed on the model-space grid
    z = _circle(ms.nodes)
    tm = ms.basis_on(z)
    h = _h_basis_values(n_jordan, lam, z)
    m = (h @ tm.conj().T / ms.nodes).T       # m[i, k] = <h_k, tm_i>
    x = m @ c
    c_inv = _neumann_inverse_upper(c)
    x_inv = c_inv @ m.conj().T
    jordan = JordanCell(n_jordan, lam).matrix
    cert = certify(
        x,
        jordan,
        ms.shift_matrix,
        "similarity",
        source=f"jordan({n_jordan},{lam:.6g})",
        target=f"T_b^{n_jordan + 1}",
        norm_x_inv=op_norm(x_inv),
    )
    return cert, ms, x_inv


@dataclass(frozen=True)
class DeltaCalibration:
    """Empirically calibrated radius: both intertwiner norms stay within 1+eps below it."""

    delta: float
    epsilon: float
    n_jordan: int
    grid: tuple
    worst_norm: float

    def __float__(self):
        return self.delta


def _lemma41_norms(n_jordan, r):
    c = _lemma41_coefficient_matrix(n_jordan, r)
    return op_norm(c), op_norm(_neumann_inverse_upper(c))


def delta_for_epsilon(n_jordan, epsilon, r_max=0.95, grid_points=17):
    """Largest radius below which the Lemma-4.1 norms stay within 1+epsilon.

    The norms depend on |lambda| only (rotation conjugation), so the search is
    radial: bisection for the threshold, then a verification grid below it.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    target = 1.0 + epsilon

    def ok(r):
        if r <= 0:
            return True
        a, b = _lemma41_norms(n_jordan, r)
        return a <= target and b <= target

    lo, hi = 0.0, r_max
    if ok(r_max):
        lo = r_max
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
    delta = 0.98 * lo if lo < r_max else lo
    grid = tuple(delta * (k + 1) / grid_points for k in range(grid_points))
    worst = 1.0
    for r in grid:
        a, b = _lemma41_norms(n_jordan, r)
        worst = max(worst, a, b)
    if worst > target:
        raise RuntimeError("calibration grid violates the target; bisection failed")
    return DeltaCalibration(float(delta), float(epsilon), n_jordan, grid, float(worst))


# ---------------------------------------------------------------------------
# Block version and the triangular-to-diagonal similarity

def _regroup_to_cells(d, n_jordan):
    """Permutation P with (P x)[(j,(N+1)) order] = x[(n,d) order]: cell j gets rows j(N+1)..."""
    size = (n_jordan + 1) * d
    p = np.zeros((size, size), dtype=complex)
    for n in range(n_jordan + 1):
        for j in range(d):
            p[j * (n_jordan + 1) + n, n * d + j] = 1.0
    return p


def cor42_block(lams, n_jordan, adjoint_cells=False):
    """Certificate from (+)_n D + S_HN to the direct sum of compressed shifts.

    With adjoint_cells=True the source is (+)_n D + S_HN^* (cells are flipped
    Jordan cells); the per-cell flip is folded into the intertwiner.
    """
    lams = [complex(x) for x in lams]
    d = len(lams)
    n = n_jordan
    cells = []
    for lam in lams:
        cert, ms, x_inv = lemma41_intertwiner(n, lam)
        cells.append((cert, ms, x_inv))
    size = (n + 1) * d
    x = np.zeros((size, size), dtype=complex)
    x_inv = np.zeros((size, size), dtype=complex)
    flip = np.eye(n + 1)[::-1].astype(complex)
    for j, (cert, ms, xi) in enumerate(cells):
        blk = cert.x @ flip if adjoint_cells else cert.x
        blk_inv = flip @ xi if adjoint_cells else xi
        rows = slice(j * (n + 1), (j + 1) * (n + 1))
        for nn in range(n + 1):
            x[rows, nn * d + j] = blk[:, nn]
            x_inv[nn * d + j, rows] = blk_inv[nn, :]
    diag = np.diag(np.repeat([lams], n + 1, axis=0).ravel())
    shift = TruncatedShift(d, n).matrix
    source = diag + (shift.conj().T if adjoint_cells else shift)
    target = scipy.linalg.block_diag(*[ms.shift_matrix for _, ms, _ in cells])
    cert = certify(
        x,
        source,
        target,
        "similarity",
        source=f"sum_d{d}_jordan{n}{'_adj' if adjoint_cells else ''}",
        target="sum of T_b^{N+1}",
        norm_x_inv=op_norm(x_inv),
    )
    spaces = [ms for _, ms, _ in cells]
    return cert, spaces, x_inv


@dataclass(frozen=True)
class Lemma43Chain:
    """Full similarity chain T ~ T_1 (+) T_0 ~ T_B with the composed certificate."""

    t: np.ndarray
    b: BlaschkeProduct
    cert_y: IntertwinerCertificate
    cert_blocks: IntertwinerCertificate
    cert_w: IntertwinerCertificate
    composed: IntertwinerCertificate   # direction K_B -> space of T, normalized
    model_space: object
    route: str
    cert_x1: IntertwinerCertificate = None   # nu part (adjoint cells)
    cert_x0: IntertwinerCertificate = None   # lambda part

    @property
    def certificates(self):
        return [self.cert_y, self.cert_blocks, self.cert_w, self.composed]


def lemma43_similarity(lams, nus, a_coupling, n_jordan, cond_limit=1e12, model_space=None,
                       min_zero_gap=1e-8):
    """Similarity chain for T = [[T_1, A], [0, T_0]] with diagonal data.

    T_0 = (+)_n D + S, T_1 = (+)_n D_star + S^*; hypotheses: the lambda_j are
    pairwise distinct, the nu_j are pairwise distinct, and no lambda equals a
    nu.  Y_0 comes from the corner of p(T) when p(T_1) is invertible at
    double precision, otherwise from the equivalent Sylvester solve (the
    corner route underflows once the eigenvalue products leave the
    double-precision range).
    """
    lams = [complex(x) for x in lams]
    nus = [complex(x) for x in nus]
    d = len(lams)
    if len(nus) != d:
        raise ValueError("need as many nu as lambda")
    n = n_jordan
    for i in range(d):
        for j in range(i + 1, d):
            if lams[i] == lams[j] or nus[i] == nus[j]:
                raise ValueError("eigenvalue collision violates the hypotheses")
    if set(lams) & set(nus):
        raise ValueError("lambda and nu families must be disjoint")

    size = (n + 1) * d
    shift = TruncatedShift(d, n).matrix
    d0 = np.diag(np.repeat([lams], n + 1, axis=0).ravel())
    d1 = np.diag(np.repeat([nus], n + 1, axis=0).ravel())
    t0 = d0 + shift
    t1 = d1 + shift.conj().T
    a = as_complex_matrix(a_coupling)
    if a.shape != (size, size):
        raise ValueError(f"coupling block must be {size}x{size}")
    t = np.block([[t1, a], [np.zeros_like(a), t0]])

    # corner route: p(z) = prod (z - lambda_j)^{N+1} annihilates T_0
    route = "corner"
    y0 = None
    pt = np.eye(2 * size, dtype=complex)
    for lam in lams:
        factor = t - lam * np.eye(2 * size)
        for _ in range(n + 1):
            pt = pt @ factor
    p_t1 = pt[:size, :size]
    a0 = pt[:size, size:]
    c = cond2(p_t1)
    if np.isfinite(c) and c <= cond_limit and np.abs(np.diag(p_t1)).min() > 0:
        y0 = np.linalg.solve(p_t1, a0)
        if _sylvester_defect(t1, t0, a, y0) > 1e-10:
            y0 = None
    if y0 is None:
        route = "sylvester"
        y0 = scipy.linalg.solve_sylvester(t1, -t0, a)
        defect = _sylvester_defect(t1, t0, a, y0)
        if not np.isfinite(defect) or defect > 1e-6:
            raise IllConditionedError(f"Sylvester solve defect {defect:.2e}")

    y = np.block([[np.eye(size), y0], [np.zeros((size, size)), np.eye(size)]])
    y_inv = np.block([[np.eye(size), -y0], [np.zeros((size, size)), np.eye(size)]])
    t1_plus_t0 = scipy.linalg.block_diag(t1, t0)
    cert_y = certify(y, t, t1_plus_t0, "similarity", source="T", target="T1+T0",
                     norm_x_inv=op_norm(y_inv), note=f"route={route}")

    cert_nu, spaces_nu, xinv_nu = cor42_block(nus, n, adjoint_cells=True)
    cert_lam, spaces_lam, xinv_lam = cor42_block(lams, n, adjoint_cells=False)
    z_block = scipy.linalg.block_diag(cert_nu.x, cert_lam.x)
    z_inv = scipy.linalg.block_diag(xinv_nu, xinv_lam)
    target_blocks = scipy.linalg.block_diag(
        *[ms.shift_matrix for ms in spaces_nu + spaces_lam]
    )
    cert_blocks = certify(z_block, t1_plus_t0, target_blocks, "similarity",
                          source="T1+T0", target="sum of shifts",
                          norm_x_inv=op_norm(z_inv))

    zeros = tuple((nu, n + 1) for nu in nus) + tuple((lam, n + 1) for lam in lams)
    b = BlaschkeProduct(zeros)
    ms_b = model_space or build_model_space(b, min_zero_gap=min_zero_gap)
    w_rows = []
    for ms in spaces_nu + spaces_lam:
        e = inclusion_map(ms, ms_b)
        w_rows.append(e.conj().T)
    w = np.vstack(w_rows)
    cert_w = certify(w, ms_b.shift_matrix, target_blocks, "similarity",
                     source="T_B", target="sum of shifts",
                     norm_x_inv=inv_norm(w))

    # stable composition: K_B -> space of T through explicit inverses
    x_rev = y_inv @ (z_inv @ w)
    s = op_norm(x_rev)
    composed = certify(x_rev / s, ms_b.shift_matrix, t, "similarity",
                       source="T_B", target="T",
                       note="normalized to unit norm")
    return Lemma43Chain(t, b, cert_y, cert_blocks, cert_w, composed, ms_b, route,
                        cert_x1=cert_nu, cert_x0=cert_lam)


def _sylvester_defect(t1, t0, a, y0):
    num = op_norm(t1 @ y0 - y0 @ t0 - a)
    return num / max(1.0, op_norm(y0))
