"""Finite-section shift embeddings and the outer-product quasiaffinity assembly.

Exact-in-section realizations of the unilateral- and bilateral-shift
embeddings (upper-triangular assemblies around compressed shifts), plus the
per-block and truncated-global certificates for the final construction where
the product of the two intertwiners is an outer function of the model
operator.
"""

import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
import scipy.linalg

from .diskfn import (
    BlaschkeProduct,
    ComposedWithMobius,
    ConjugateReflection,
    DiskPolynomial,
    blaschke_compose,
    blaschke_eval,
    mobius_eval,
    mobius_of_operator,
    MobiusMap,
)
from .linalg import as_complex_matrix, cond2, inv_norm, op_norm
from .modelspace import build_model_space, calculus
from .mpmat import (
    mp_block,
    mp_blockdiag,
    mp_hermitian_transpose,
    mp_inverse,
    mp_norm2,
    to_mp,
    to_np,
)

# ---------------------------------------------------------------------------
# Taylor data for the outer function and inner products on sections

def g_taylor(g, m, dps=120):
    """Taylor coefficients of g through degree m-1, with a sampled tail bound.

    The coefficients come from exact series arithmetic in mpmath; the reported
    tail is the maximum of |g - p| on the circle of radius 0.999.
    """
    from .series import ser_div, ser_exp, ser_pow, ser_scale
    with mp.workdps(dps):
        one = mp.mpc(1)
        zero = mp.mpc(0)
        num = [one, one] + [zero] * (m - 2)
        den = [one, -one] + [zero] * (m - 2)
        u = ser_div(num, den, m)
        s = ser_pow(u, mp.mpf(g.alpha), m)
        series = ser_exp(ser_scale(s, -1), m)
        coeffs = np.array([complex(c) for c in series])
    p = DiskPolynomial(coeffs)
    zs = 0.999 * np.exp(2j * np.pi * np.arange(4096) / 4096)
    tail = float(np.abs(g(zs) - p(zs)).max())
    return coeffs, tail


def _fft_taylor(values_on_circle, m):
    n = len(values_on_circle)
    return (np.fft.fft(values_on_circle) / n)[:m]


@dataclass(frozen=True)
class PaddedIdentityCheck:
    """A section identity asserted away from the truncation edge."""

    name: str
    budget: int
    max_residual: float
    columns_checked: int

    def ok(self, tol):
        return self.max_residual <= tol


def padded_residual(name, lhs, rhs, budget, col_blocks=None):
    """Column-wise residual excluding the last `budget` columns of each block.

    col_blocks lists the (start, stop) column ranges whose trailing columns
    are truncation artifacts; None means a single block spanning everything.
    """
    lhs = as_complex_matrix(lhs)
    rhs = as_complex_matrix(rhs)
    diff = np.abs(lhs - rhs)
    n = lhs.shape[1]
    blocks = col_blocks or [(0, n)]
    cols = []
    for start, stop in blocks:
        cols.extend(range(start, max(start, stop - budget)))
    if not cols:
        return PaddedIdentityCheck(name, budget, 0.0, 0)
    worst = float(diff[:, cols].max())
    return PaddedIdentityCheck(name, budget, worst, len(cols))


# ---------------------------------------------------------------------------
# Proposition-level assemblies

def prop22_assemble(v, k, t0, r0, y0, z, tol=1e-10):
    """T, R, Y with Y T = R Y from the block recipe A = V Z - Z T0 + K Y0.

    Pure finite algebra: the only analytic input is the intertwining of Y0.
    """
    v, k, t0, r0, y0 = map(as_complex_matrix, (v, k, t0, r0, y0))
    z = as_complex_matrix(z) if z is not None else np.zeros((v.shape[0], t0.shape[0]))
    pre = op_norm(y0 @ t0 - r0 @ y0)
    if pre > tol * max(1.0, op_norm(y0)):
        raise ValueError(f"Y0 does not intertwine T0 with R0: residual {pre:.2e}")
    a = v @ z - z @ t0 + k @ y0
    t = np.block([[v, a], [np.zeros((t0.shape[0], v.shape[1])), t0]])
    r = np.block([[v, k], [np.zeros((r0.shape[0], v.shape[1])), r0]])
    y = np.block([[np.eye(v.shape[0]), z], [np.zeros((y0.shape[0], v.shape[1])), y0]])
    return t, r, y


def corner_of(p, x, top):
    """P_top p(X) restricted to the complementary columns (corner calculus)."""
    from .perturb import corner_extract
    return corner_extract(x, p, top)


@dataclass(frozen=True)
class ThetaSection:
    """Monomial-coefficient realization of H^2 = theta H^2 (+) K_theta at degree M."""

    theta: BlaschkeProduct
    m: int
    e: np.ndarray            # M x dim coefficients of the K_theta basis
    theta_cols: np.ndarray   # M x (M - reserve) coefficients of theta z^j
    shift: np.ndarray        # S_M on monomials
    t_theta: np.ndarray      # compressed shift in the K_theta basis
    k_theta: np.ndarray      # P_{theta H^2} S|_{K_theta} in the two bases
    defect: float            # orthonormality/orthogonality defect of the frame

    @property
    def dim_model(self):
        return self.e.shape[1]

    @property
    def dim_theta(self):
        return self.theta_cols.shape[1]


def build_theta_section(b, m, ms=None, reserve=None, fft_nodes=1 << 14):
    """Coefficient-space frame for theta = B: K_theta from the model-space basis,
    theta z^j columns from the FFT Taylor expansion of theta."""
    ms = ms or build_model_space(b, min_zero_gap=0.0)
    d = ms.dim
    if m <= d:
        raise ValueError("section degree must exceed the model dimension")
    z = np.exp(2j * np.pi * np.arange(fft_nodes) / fft_nodes)
    basis_vals = ms.basis_on(z)
    e = np.stack([_fft_taylor(basis_vals[i], m) for i in range(d)], axis=1)
    theta_taylor = _fft_taylor(blaschke_eval(b, z), m)
    reserve = reserve if reserve is not None else d
    k_cols = m - reserve
    theta_cols = np.zeros((m, k_cols), dtype=complex)
    for j in range(k_cols):
        theta_cols[j:, j] = theta_taylor[: m - j]
    shift = np.zeros((m, m), dtype=complex)
    shift[np.arange(1, m), np.arange(m - 1)] = 1.0
    frame = np.hstack([theta_cols, e])
    gram = frame.conj().T @ frame
    defect = float(np.abs(gram - np.eye(gram.shape[0])).max())
    t_theta = e.conj().T @ shift @ e
    k_theta = theta_cols.conj().T @ shift @ e
    return ThetaSection(b, m, e, theta_cols, shift, t_theta, k_theta, defect)


@dataclass(frozen=True)
class Cor23Result:
    t: np.ndarray
    y: np.ndarray
    algebra_check: PaddedIdentityCheck      # Y T = R Y, exact given the Y0 relation
    section_check: PaddedIdentityCheck      # R matches the compressed S_M frame
    y_min_singular: float                   # numerical injectivity at section scale
    section: ThetaSection


def cor23_assemble(section, t0, y0, z=None, budget=1, tol=1e-9):
    """Unilateral-shift embedding over theta H^2 (+) K_theta.

    Y0 must intertwine T0 with the compressed shift; the assembled Y satisfies
    Y T = S Y with S realized on the section frame, checked on padded columns.
    """
    sec = section
    t0 = as_complex_matrix(t0)
    y0 = as_complex_matrix(y0)
    kdim, mdim, hdim = sec.dim_theta, sec.dim_model, t0.shape[0]
    pre = op_norm(y0 @ t0 - sec.t_theta @ y0)
    if pre > tol * max(1.0, op_norm(y0)):
        raise ValueError(f"Y0 intertwining residual {pre:.2e} above {tol:.1e}")
    z = as_complex_matrix(z) if z is not None else np.zeros((kdim, hdim))
    v = np.zeros((kdim, kdim), dtype=complex)
    v[np.arange(1, kdim), np.arange(kdim - 1)] = 1.0     # shift on theta z^j
    a = v @ z - z @ t0 + sec.k_theta @ y0
    t = np.block([[v, a], [np.zeros((hdim, kdim)), t0]])
    r = np.block([[v, sec.k_theta], [np.zeros((mdim, kdim)), sec.t_theta]])
    y = np.block([[np.eye(kdim), z], [np.zeros((y0.shape[0], kdim)), y0]])
    algebra = padded_residual("YT = RY", y @ t, r @ y, 0)
    # the frame realization of S_M against the assembled R
    frame = np.hstack([sec.theta_cols, sec.e])
    s_in_frame = frame.conj().T @ sec.shift @ frame
    section_check = padded_residual(
        "R = frame^* S_M frame", r, s_in_frame, budget,
        col_blocks=[(0, kdim), (kdim, kdim + mdim)],
    )
    smin = float(np.linalg.svd(y, compute_uv=False)[-1])
    return Cor23Result(t, y, algebra, section_check, smin, sec)


@dataclass(frozen=True)
class Prop24Result:
    x: np.ndarray
    identity_21: PaddedIdentityCheck
    intertwine_check: PaddedIdentityCheck   # X S = T X on the section frame
    g_tail: float
    outer_product_residual: float           # Y0 X0 - g(T_theta), mp-verified


def prop24_assemble(g, x0, z, section, t0, y0, cor23, budget=1, dps=80):
    """Quasisimilarity upgrade: X with X S = T X given the outer-product pair.

    The hypotheses T0 X0 = X0 T_theta and Y0 X0 = g(T_theta) are verified (the
    latter in working precision: the pair is built from an ill-conditioned
    similarity, so its float product is meaningless); the section identity
    (2.1) and X S = T X are then checked on padded columns.
    """
    sec = section
    x0 = x0 if isinstance(x0, mp.matrix) else to_mp(x0)
    y0_mp = y0 if isinstance(y0, mp.matrix) else to_mp(y0)
    t0 = as_complex_matrix(t0)
    kdim, mdim, hdim = sec.dim_theta, sec.dim_model, t0.shape[0]
    z = as_complex_matrix(z) if z is not None else np.zeros((kdim, hdim))
    with mp.workdps(dps):
        x0_np = to_np(x0)
        inter = op_norm(t0 @ x0_np - x0_np @ sec.t_theta)
        gt = calculus(build_model_space(sec.theta, min_zero_gap=0.0), g)
        prod = to_np(y0_mp * x0)
        outer_res = op_norm(prod - gt)
    if inter > 1e-8 * max(1.0, op_norm(x0_np)):
        raise ValueError(f"X0 intertwining residual {inter:.2e}")
    gcoef, gtail = g_taylor(g, sec.m)
    g_toeplitz = np.zeros((sec.m, sec.m), dtype=complex)
    for d, c in enumerate(gcoef):
        if c != 0:
            g_toeplitz[np.arange(d, sec.m), np.arange(sec.m - d)] = c
    # g(S) on the theta columns and the compression to theta H^2
    frame_theta = sec.theta_cols
    g_on_theta = frame_theta.conj().T @ g_toeplitz @ frame_theta
    k_g = frame_theta.conj().T @ g_toeplitz @ sec.e
    w = k_g - z @ x0_np
    # identity (2.1): g(S)|K_theta-compression + W T_theta = V W + A X0
    v = np.zeros((kdim, kdim), dtype=complex)
    v[np.arange(1, kdim), np.arange(kdim - 1)] = 1.0
    a = v @ z - z @ t0 + sec.k_theta @ to_np(y0_mp)
    lhs = g_on_theta @ sec.k_theta + w @ sec.t_theta
    rhs = v @ w + a @ x0_np
    identity_21 = padded_residual("(2.1)", lhs, rhs, budget)
    x = np.block([[g_on_theta, w], [np.zeros((hdim, kdim)), x0_np]])
    t = cor23.t
    frame = np.hstack([sec.theta_cols, sec.e])
    s_in_frame = frame.conj().T @ sec.shift @ frame
    intertwine = padded_residual(
        "X S = T X", x @ s_in_frame, t @ x, budget,
        col_blocks=[(0, kdim), (kdim, kdim + mdim)],
    )
    return Prop24Result(x, identity_21, intertwine, gtail, outer_res)


@dataclass(frozen=True)
class Prop2627Result:
    checks: tuple                 # PaddedIdentityChecks: YU=TY, XT=UX, XY=g(U), (2.3)
    u_dim: int

    def worst(self):
        return max(c.max_residual for c in self.checks)


def prop2627_assemble(t1, y1, x1, g, m_laurent, budget=1, tol_pre=1e-7):
    """Bilateral-shift embedding on the Laurent section chi^-M .. chi^M.

    t1 acts on a space H1; y1: H^2-section -> H1 with Y1 S = T1 Y1;
    x1: H1 -> H^2-section with X1 T1 = S X1 and X1 Y1 = g(S) at section
    tolerance.  Builds U, T, X, Y and checks the displayed identities.
    """
    t1 = as_complex_matrix(t1)
    y1 = as_complex_matrix(y1)
    x1 = as_complex_matrix(x1)
    ml = m_laurent
    h2 = y1.shape[1]             # H^2-section dimension used by y1/x1
    gcoef, gtail = g_taylor(g, h2 + ml + 1)
    # section shift on H^2 coordinates
    s = np.zeros((h2, h2), dtype=complex)
    s[np.arange(1, h2), np.arange(h2 - 1)] = 1.0
    pre1 = op_norm(y1 @ s - t1 @ y1)
    pre2 = op_norm(x1 @ t1 - s @ x1)
    g_s = np.zeros((h2, h2), dtype=complex)
    for d, c in enumerate(gcoef[:h2]):
        if c != 0:
            g_s[np.arange(d, h2), np.arange(h2 - d)] = c
    pre3 = op_norm(x1 @ y1 - g_s)
    scale = max(1.0, op_norm(y1), op_norm(x1))
    if max(pre1, pre2) > tol_pre * scale:
        raise ValueError(f"bilateral preconditions fail: {pre1:.2e}, {pre2:.2e}")
    # Laurent machinery: negative part chi^-1 .. chi^-M
    s_star = np.zeros((ml, ml), dtype=complex)       # chi^-n -> chi^-(n-1)
    s_star[np.arange(ml - 1), np.arange(1, ml)] = 1.0
    k = np.zeros((h2, ml), dtype=complex)
    k[0, 0] = 1.0                                    # K chi^-1 = chi^0
    u = np.block([[s, k], [np.zeros((ml, h2)), s_star]])
    x0_vec = y1[:, 0]                                # Y1 chi^0
    a = np.zeros((t1.shape[0], ml), dtype=complex)
    a[:, 0] = x0_vec
    t = np.block([[t1, a], [np.zeros((ml, t1.shape[0])), s_star]])
    y = np.block([[y1, np.zeros((y1.shape[0], ml))],
                  [np.zeros((ml, h2)), np.eye(ml)]])
    # K_(g) = P_{H^2} g(U)|_{H^2_-}: Hankel of Taylor coefficients
    k_g = np.zeros((h2, ml), dtype=complex)
    for i in range(h2):
        for j in range(ml):
            idx = i + j + 1
            if idx < len(gcoef):
                k_g[i, j] = gcoef[idx]
    g_sstar = np.zeros((ml, ml), dtype=complex)
    for d, c in enumerate(gcoef[:ml]):
        if c != 0:
            g_sstar[np.arange(ml - d), np.arange(d, ml)] = c
    x = np.block([[x1, k_g], [np.zeros((ml, t1.shape[0])), g_sstar]])
    g_u = np.zeros((h2 + ml, h2 + ml), dtype=complex)
    # bilateral g(U): chi^j -> sum g_hat(n) chi^{j+n} on the Laurent range
    # coordinates ordered (chi^0..chi^{h2-1}; chi^-1..chi^-M)
    def laurent_index(p):
        if p >= 0:
            return p if p < h2 else None
        return h2 + (-p) - 1 if -p <= ml else None
    for j in range(-ml, h2):
        col = laurent_index(j)
        for d, c in enumerate(gcoef):
            row = laurent_index(j + d)
            if row is not None and c != 0:
                g_u[row, col] = c
    checks = (
        padded_residual("YU = TY", y @ u, t @ y, budget,
                        col_blocks=[(0, h2), (h2, h2 + ml)]),
        padded_residual("XT = UX", x @ t, u @ x, budget,
                        col_blocks=[(0, t1.shape[0]), (t1.shape[0], t1.shape[0] + ml)]),
        padded_residual("XY = g(U)", x @ y, g_u, budget,
                        col_blocks=[(0, h2), (h2, h2 + ml)]),
        padded_residual("(2.3)", x1 @ a + k_g @ s_star, s @ k_g + k @ g_sstar, budget),
    )
    return Prop2627Result(checks, h2 + ml)


# ---------------------------------------------------------------------------
# Working-precision reconstruction of the block similarity pairs

def _mp_circle(m, dps):
    with mp.workdps(dps):
        return [mp.expjpi(mp.mpf(2 * k) / m) for k in range(m)]


def _mp_tm_values(zeros, nodes, dps):
    """Takenaka-Malmquist basis on quadrature nodes, in working precision."""
    with mp.workdps(dps):
        d = len(zeros)
        out = [[mp.mpc(0)] * len(nodes) for _ in range(d)]
        for col, z in enumerate(nodes):
            prefix = mp.mpc(1)
            for k, x in enumerate(zeros):
                xm = mp.mpc(x)
                xb = mp.conj(xm)
                out[k][col] = mp.sqrt(1 - abs(xm) ** 2) / (1 - xb * z) * prefix
                prefix = prefix * (xm - z) / (1 - xb * z)
        return out


def _mp_inner_rows(rows_a, rows_b, dps):
    """Gram-type pairings (1/m) sum a_i conj(b_j) -> mp matrix [j_b, i_a]-ordered."""
    with mp.workdps(dps):
        m = len(rows_a[0])
        out = mp.zeros(len(rows_b), len(rows_a))
        for i, a in enumerate(rows_a):
            for j, b in enumerate(rows_b):
                s = mp.fsum([a[t] * mp.conj(b[t]) for t in range(m)])
                out[j, i] = s / m
        return out


def _mp_h_values(n_jordan, lam, nodes, dps):
    with mp.workdps(dps):
        n = n_jordan
        lam = mp.mpc(lam)
        out = []
        if lam == 0:
            for k in range(n + 1):
                out.append([z ** (n - k) for z in nodes])
            return out
        c = (mp.fabs(lam) / lam) ** (n + 1)
        root = mp.sqrt(1 - abs(lam) ** 2)
        for k in range(n + 1):
            row = []
            for z in nodes:
                row.append(
                    c * (-1) ** (k + 1) * (lam - z) ** (n - k) * root
                    / (1 - mp.conj(lam) * z) ** (n + 1 - k)
                )
            out.append(row)
        return out


def _mp_lemma41_cell(n_jordan, lam, zeros_order, nodes, dps):
    """X-cell and inverse in the TM basis of K_{b_lam^{N+1}}, working precision."""
    with mp.workdps(dps):
        n = n_jordan
        lam_c = mp.mpc(lam)
        lb = mp.conj(lam_c)
        c = mp.zeros(n + 1, n + 1)
        for nn in range(n + 1):
            for k in range(nn + 1):
                c[k, nn] = mp.binomial(nn, k) * lb ** (nn - k) / (1 - abs(lam_c) ** 2) ** nn
        # Neumann inverse of the upper-triangular C
        dinv = mp.zeros(n + 1, n + 1)
        for i in range(n + 1):
            dinv[i, i] = 1 / c[i, i]
        a = c - mp.diag([c[i, i] for i in range(n + 1)])
        m_nilp = dinv * a
        cinv = mp.zeros(n + 1, n + 1)
        power = mp.eye(n + 1)
        cinv += dinv
        for _ in range(1, n + 1):
            power = (-1) * power * m_nilp
            cinv += power * dinv
        tm = _mp_tm_values(zeros_order, nodes, dps)
        h = _mp_h_values(n_jordan, lam, nodes, dps)
        mmat = _mp_inner_rows(h, tm, dps)      # mmat[i_tm, k_h] = <h_k, tm_i>
        x = mmat * c
        x_inv = cinv * mp_hermitian_transpose(mmat)
        return x, x_inv


def _mp_cor42(lams, n_jordan, adjoint, nodes, dps):
    """Block intertwiner (+)D + S -> sum of compressed shifts, working precision."""
    n = n_jordan
    d = len(lams)
    size = (n + 1) * d
    with mp.workdps(dps):
        x = mp.zeros(size, size)
        x_inv = mp.zeros(size, size)
        for j, lam in enumerate(lams):
            zeros_order = [complex(lam)] * (n + 1)
            cell, cell_inv = _mp_lemma41_cell(n, lam, zeros_order, nodes, dps)
            if adjoint:
                flipped = mp.zeros(n + 1, n + 1)
                flipped_inv = mp.zeros(n + 1, n + 1)
                for r in range(n + 1):
                    for s in range(n + 1):
                        flipped[r, s] = cell[r, n - s]
                        flipped_inv[r, s] = cell_inv[n - r, s]
                cell, cell_inv = flipped, flipped_inv
            for nn in range(n + 1):
                for k in range(n + 1):
                    x[j * (n + 1) + k, nn * d + j] = cell[k, nn]
                    x_inv[nn * d + j, j * (n + 1) + k] = cell_inv[nn, k]
        return x, x_inv


def _mp_y0(res, dps):
    """Sylvester corner Y0 for the pipeline operator, solved per coupled cell."""
    n = res.n
    dh = res.pack.dim
    size = (n + 1) * dh
    lams = res.pack.d_entries()
    nus = np.asarray(res.pack.nu_list, dtype=float)
    gamma = np.asarray(res.t[:size, size:], dtype=complex)
    with mp.workdps(dps):
        y0 = mp.zeros(size, size)
        k = n + 1
        eye_k2 = mp.eye(k * k)
        jt_kron_i = mp.zeros(k * k, k * k)
        i_kron_jt = mp.zeros(k * k, k * k)
        for r in range(1, k):
            for s in range(k):
                # (J^T (x) I): J^T[r, r-1] = 1
                jt_kron_i[r * k + s, (r - 1) * k + s] = 1
                i_kron_jt[s * k + r, s * k + r - 1] = 1
        for l in range(dh):
            for m_idx in range(dh):
                block = gamma[l::dh, m_idx::dh]
                if not np.any(block):
                    continue
                sysm = (mp.mpf(nus[l]) - mp.mpf(lams[m_idx])) * eye_k2 \
                    + jt_kron_i - i_kron_jt
                rhs = mp.matrix([mp.mpc(block[r // k, r % k]) for r in range(k * k)])
                sol = mp.lu_solve(sysm, rhs)
                for r in range(k):
                    for s in range(k):
                        y0[r * dh + l, s * dh + m_idx] = sol[r * k + s]
        return y0


def block_pair_mp(res, dps=80, nodes=192, tol=1e-10):
    """Balanced intertwiner pair (X_N, Y_N) with X_N Y_N = I in working precision.

    X_N : H_N -> K_{B_N} and Y_N : K_{B_N} -> H_N re-assemble the similarity
    chain legs at the given precision; the condition number of the similarity
    exceeds double precision by many orders, so both are kept as mp matrices.
    Precision doubles until the pair verifies.
    """
    n = res.n
    dh = res.pack.dim
    size = (n + 1) * dh
    lams = [complex(x) for x in res.pack.d_entries()]
    nus = [complex(x) for x in res.pack.nu_list]
    ms_b = res.chain.model_space
    while True:
        with mp.workdps(dps):
            nodes_mp = _mp_circle(nodes, dps)
            y0 = _mp_y0(res, dps)
            y_inv = mp_block([[mp.eye(size), -1 * y0], [mp.zeros(size, size), mp.eye(size)]])
            y_fwd = mp_block([[mp.eye(size), y0], [mp.zeros(size, size), mp.eye(size)]])
            x_nu, x_nu_inv = _mp_cor42(nus, n, True, nodes_mp, dps)
            x_lam, x_lam_inv = _mp_cor42(lams, n, False, nodes_mp, dps)
            z_fwd = mp_blockdiag([x_nu, x_lam])
            z_inv = mp_blockdiag([x_nu_inv, x_lam_inv])
            # W: K_B -> sum of cell spaces, rows are inclusion adjoints
            big = _mp_tm_values(ms_b.basis_params, nodes_mp, dps)
            w_rows = []
            for nu in nus:
                small = _mp_tm_values([complex(nu)] * (n + 1), nodes_mp, dps)
                w_rows.append(_mp_inner_rows(big, small, dps))
            for lam in lams:
                small = _mp_tm_values([complex(lam)] * (n + 1), nodes_mp, dps)
                w_rows.append(_mp_inner_rows(big, small, dps))
            w = mp.zeros(2 * size, 2 * size)
            r0 = 0
            for blockrow in w_rows:
                for i in range(blockrow.rows):
                    for j in range(blockrow.cols):
                        w[r0 + i, j] = blockrow[i, j]
                r0 += blockrow.rows
            y_n = y_inv * (z_inv * w)           # K_B -> H_N
            x_n = mp_inverse(w) * (z_fwd * y_fwd)   # H_N -> K_B
            pair_err = mp_norm2(x_n * y_n - mp.eye(2 * size))
        if pair_err <= tol:
            break
        dps *= 2
        if dps > 1600:
            raise RuntimeError(f"pair reconstruction stuck at error {pair_err:.2e}")
    # balance the norms
    nx, ny = mp_norm2(x_n), mp_norm2(y_n)
    t = math.sqrt(ny / nx)
    with mp.workdps(dps):
        x_n = x_n * mp.mpf(t)
        y_n = y_n * (1 / mp.mpf(t))
    sigma = math.sqrt(nx * ny)
    t_n = res.t
    t_b = ms_b.shift_matrix
    rx = mp_norm2(x_n * to_mp(t_n) - to_mp(t_b) * x_n) / sigma
    ry = mp_norm2(y_n * to_mp(t_b) - to_mp(t_n) * y_n) / sigma
    return x_n, y_n, sigma, dps, max(rx, ry), pair_err


# ---------------------------------------------------------------------------
# Theorem 7.1: per-block certificates and the truncated global assembly

@dataclass(frozen=True)
class Thm71Block:
    n: int
    w: float
    sigma: float
    dist: float
    norm_x1: float
    norm_y1: float
    residual_xy: float          # X_1N Y_1N - g(T') in working precision
    residual_intertwine: float
    pair_dps: int

    def to_json_dict(self):
        return {
            "N": self.n,
            "w": self.w,
            "sigma": self.sigma,
            "achievedDist": self.dist,
            "normX1": self.norm_x1,
            "normY1": self.norm_y1,
            "residualXY": self.residual_xy,
            "residualIntertwine": self.residual_intertwine,
            "dps": self.pair_dps,
        }


@dataclass(frozen=True)
class Thm71Report:
    blocks: tuple
    c_budget: float
    cond_j: float
    residual_zw: float
    residual_j: float
    residual_z_intertwine: float
    residual_w_intertwine: float
    global_dim: int
    carleson: object

    def to_json_dict(self):
        return {
            "blocks": [b.to_json_dict() for b in self.blocks],
            "budgetC": self.c_budget,
            "condJ": self.cond_j,
            "residualZW": self.residual_zw,
            "residualJIntertwine": self.residual_j,
            "residualZIntertwine": self.residual_z_intertwine,
            "residualWIntertwine": self.residual_w_intertwine,
            "globalDim": self.global_dim,
        }


def _u_transformed_values(ms, w, z):
    """(U_w e_i)(z) for the TM basis of ms: factor times composed evaluation."""
    z = np.asarray(z, dtype=complex)
    inner = (w - z) / (1.0 - np.conj(w) * z)
    vals = ms.basis_on(inner)
    factor = np.sqrt(1.0 - abs(w) ** 2) / (1.0 - np.conj(w) * z)
    return vals * factor


def thm71_blocks(k_count, seed=0, c_budget=None, dps=80, perturbed=None,
                 carleson_seq=None, w_ceiling=1.0 - 1e-14, nodes_global=1 << 13):
    """Per-block outer-product certificates and the truncated global assembly.

    The global synthesis is implemented for k_count <= 2: the coupling
    integrals between deeper blocks live at the pseudohyperbolic scale of the
    later Mobius parameters, far below any workable quadrature density.
    """
    from .carleson import build_carleson
    from .diskfn import OuterG
    from .perturb import thm63_build

    if k_count < 1:
        raise ValueError("k_count >= 1 required")
    if k_count > 2:
        raise NotImplementedError(
            "global assembly beyond two blocks needs coupling integrals below "
            "any workable quadrature scale; per-block data is available via "
            "thm63_build + build_carleson"
        )
    g = OuterG(0.5)
    perturbed = perturbed or [thm63_build(n, seed=seed, with_certificates=True)
                              for n in range(1, k_count + 1)]
    phi = DiskPolynomial([1.0])
    carleson_seq = carleson_seq or build_carleson(
        max(c_budget or 0.0, 8.0), g, [(res.b, phi) for res in perturbed], k_count,
        w_ceiling=w_ceiling,
    )
    blocks = []
    pairs = []
    for res, cblk in zip(perturbed, carleson_seq.blocks):
        ms = res.chain.model_space
        w = cblk.w
        dps_start = max(dps, {1: 80, 2: 320}.get(res.n, 800))
        x_n, y_n, sigma, used_dps, pair_res, pair_err = block_pair_mp(res, dps=dps_start)
        t_prime = mobius_of_operator(ms.shift_matrix, w)
        f_mat = cblk.f.eval_matrix(ms.shift_matrix)
        gw_mat = calculus(ms, ComposedWithMobius(g, w))
        with mp.workdps(used_dps):
            x1 = to_mp(f_mat) * x_n
            y1 = y_n
            resid_xy = mp_norm2(x1 * y1 - to_mp(gw_mat))
            t_pushed = mobius_of_operator(res.t, w)
            resid_int = mp_norm2(x1 * to_mp(t_pushed) - to_mp(t_prime) * x1)
        dist = float(op_norm(f_mat))
        blocks.append(Thm71Block(res.n, float(w), float(sigma), dist,
                                 mp_norm2(x1), mp_norm2(y1),
                                 float(resid_xy), float(resid_int), used_dps))
        pairs.append((res, cblk, ms, x_n, y_n, x1, y1, t_prime, gw_mat))

    budget = c_budget or max(max(b.sigma for b in blocks), 1.0) * (1.0 + 1e-9)

    if k_count == 1:
        res, cblk, ms, x_n, y_n, x1, y1, t_prime, gw_mat = pairs[0]
        # J is the identity on a single block; ZW = g_*(T_B*) is the
        # per-block identity conjugated
        with mp.workdps(blocks[0].pair_dps):
            z_map = mp_hermitian_transpose(y1)
            w_map = mp_hermitian_transpose(x1)
            resid_zw = mp_norm2(z_map * w_map - mp_hermitian_transpose(to_mp(gw_mat)))
            t_pushed = mobius_of_operator(res.t, cblk.w)
            rz = mp_norm2(z_map * mp_hermitian_transpose(to_mp(t_pushed))
                          - mp_hermitian_transpose(to_mp(t_prime)) * z_map)
            rw = mp_norm2(w_map * mp_hermitian_transpose(to_mp(t_prime))
                          - mp_hermitian_transpose(to_mp(t_pushed)) * w_map)
        return Thm71Report(tuple(blocks), float(budget), 1.0, float(resid_zw),
                           0.0, float(rz), float(rw), pairs[0][2].dim, carleson_seq)

    # ----- two-block truncated global assembly -----
    (res1, cb1, ms1, xn1, yn1, x11, y11, tp1, gw1) = pairs[0]
    (res2, cb2, ms2, xn2, yn2, x12, y12, tp2, gw2) = pairs[1]
    w1, w2 = cb1.w, cb2.w
    theta1 = blaschke_compose(res1.b, w1)
    d1, d2 = ms1.dim, ms2.dim
    m = nodes_global
    zg = np.exp(2j * np.pi * np.arange(m) / m)

    # V: coordinates of the two block bases in the orthonormal global basis
    # {U_w1 e^(1)} u {theta1 * U_w2 e^(2)}
    e2_native = ms2.basis_on(zg)                       # e^(2) on the circle
    beta2 = (w2 - zg) / (1.0 - w2 * zg)
    u21_vals = _u_transformed_values(ms1, w1, beta2)   # (U_w1 e^(1))(beta_w2(.))
    q2 = np.sqrt(1.0 - w2 ** 2) / (1.0 - w2 * zg)
    u2_of_u1 = u21_vals * q2                           # U_w2(U_w1 e^(1)) on the circle
    p_block = (e2_native @ u2_of_u1.conj().T / m).T    # p[i, j] = <f_j, e_i^(1g)>
    sym = blaschke_eval(theta1, beta2)
    q_block = (e2_native @ (sym[None, :] * e2_native).conj().T / m).T
    v = np.block([[np.eye(d1), p_block], [np.zeros((d2, d1)), q_block]])

    # T_global: rank-one coupling from the K_A edge into A K_B
    u1_vals = _u_transformed_values(ms1, w1, zg)
    th1_vals = blaschke_eval(theta1, zg)
    alpha = (zg * u1_vals) @ np.conj(th1_vals) / m     # <z e_i^(1g), theta1>
    f0 = np.sqrt(1.0 - w2 ** 2) * ms2.basis_on(np.array([w2]))[:, 0]
    coupling = np.outer(np.conj(f0), alpha)
    t_global = np.block([[tp1, np.zeros((d1, d2))], [coupling, tp2]])

    # g(T_global) through the block calculus and the divided-difference corner
    rhs = coupling @ gw1 - gw2 @ coupling
    g_corner = scipy.linalg.solve_sylvester(-tp2, tp1, rhs)
    g_global = np.block([[gw1, np.zeros((d1, d2))], [g_corner, gw2]])

    resid_j = op_norm(t_global.conj().T @ v
                      - v @ scipy.linalg.block_diag(tp1, tp2).conj().T)
    cond_j = cond2(v)
    dps_g = max(blocks[0].pair_dps, blocks[1].pair_dps)
    with mp.workdps(dps_g):
        v_mp = to_mp(v)
        z_map = v_mp * mp_blockdiag([mp_hermitian_transpose(y11),
                                     mp_hermitian_transpose(y12)])
        w_map = mp_blockdiag([mp_hermitian_transpose(x11),
                              mp_hermitian_transpose(x12)]) * mp_inverse(v_mp)
        resid_zw = mp_norm2(z_map * w_map - mp_hermitian_transpose(to_mp(g_global)))
        t_pushed = scipy.linalg.block_diag(
            mobius_of_operator(res1.t, w1), mobius_of_operator(res2.t, w2)
        )
        rz = mp_norm2(z_map * mp_hermitian_transpose(to_mp(t_pushed))
                      - mp_hermitian_transpose(to_mp(t_global)) * z_map)
        rw = mp_norm2(w_map * mp_hermitian_transpose(to_mp(t_global))
                      - mp_hermitian_transpose(to_mp(t_pushed)) * w_map)
    return Thm71Report(tuple(blocks), float(budget), float(cond_j),
                       float(resid_zw), float(resid_j), float(rz), float(rw),
                       d1 + d2, carleson_seq)
