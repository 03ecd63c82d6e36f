"""Numerical lower bounds for polynomial and complete polynomial bounds.

Family-maximization estimators for M_pb and M_cpb, the CAR-transpose matrix
polynomial witness whose ratios grow with N, corner-map variants, and the
Mobius-invariance and direct-sum propagation checks.
"""

from dataclasses import dataclass

import numpy as np

from .diskfn import DiskPolynomial, MatrixPolynomial, mobius_of_operator, sup_norm
from .foguel import build_car
from .linalg import as_complex_matrix, op_norm
from .perturb import corner_extract


@dataclass(frozen=True)
class BoundEstimate:
    kind: str                 # pb_lower | cpb_lower | pb_upper_analytic
    value: float
    witness: str
    family_size: int
    witness_obj: object = None

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "value": self.value,
            "witness": self.witness,
            "familySize": self.family_size,
        }


def standard_family(n_jordan, seed=0, n_random=200):
    """Seeded scalar family: normalized random polynomials, monomials, Fejer peaks."""
    rng = np.random.default_rng(seed)
    deg = 4 * (n_jordan + 2)
    fam = []
    for i in range(n_random):
        c = rng.standard_normal(deg + 1) + 1j * rng.standard_normal(deg + 1)
        p = DiskPolynomial(c)
        fam.append((f"random#{i}", p * (1.0 / sup_norm(p))))
    for k in range(1, deg + 1):
        fam.append((f"monomial#{k}", DiskPolynomial.monomial(k)))
    for m in range(2, deg + 1, 3):
        c = np.array([1.0 - k / (m + 1.0) for k in range(m + 1)])
        p = DiskPolynomial(c)
        fam.append((f"fejer#{m}", p * (1.0 / sup_norm(p))))
    return fam


def _matrix_powers(t, deg):
    t = as_complex_matrix(t)
    powers = [np.eye(t.shape[0], dtype=complex)]
    for _ in range(deg):
        powers.append(powers[-1] @ t)
    return np.stack(powers)


def pb_lower(t, family):
    """max over the family of ||p(T)|| / ||p||_inf, a certified M_pb lower bound."""
    if not family:
        raise ValueError("empty family")
    named = [f if isinstance(f, tuple) else (f"p#{i}", f) for i, f in enumerate(family)]
    deg = max(p.degree for _, p in named)
    powers = _matrix_powers(t, deg)
    best, best_name, best_poly = -1.0, "", None
    for name, p in named:
        pt = np.tensordot(p.coeffs, powers[: len(p.coeffs)], axes=1)
        ratio = op_norm(pt) / sup_norm(p)
        if ratio > best:
            best, best_name, best_poly = ratio, name, p
    return BoundEstimate("pb_lower", float(best), best_name, len(named), best_poly)


def _coeff_mats(mp_obj):
    """P_m with (P_m)_{ij} = m-th coefficient of p_ij, for m = 0..deg."""
    n = mp_obj.size
    deg = mp_obj.degree
    mats = np.zeros((deg + 1, n, n), dtype=complex)
    for i, row in enumerate(mp_obj.entries):
        for j, p in enumerate(row):
            mats[: len(p.coeffs), i, j] = p.coeffs
    return mats


def _structured_norm(coeff_mats, base_mats, seed=0, tol=1e-11, max_iter=400):
    """Largest singular value of sum_m P_m (x) base[m] by power iteration.

    The operator maps X (n, d2) -> sum_m (P_m @ X) @ base[m]^T of shape (n, d1)
    without assembling the n*d dense matrix.
    """
    n = coeff_mats.shape[1]
    d1, d2 = base_mats[0].shape

    def apply(x):
        y = np.zeros((n, d1), dtype=complex)
        for m in range(coeff_mats.shape[0]):
            y += (coeff_mats[m] @ x) @ base_mats[m].T
        return y

    def apply_h(y):
        x = np.zeros((n, d2), dtype=complex)
        for m in range(coeff_mats.shape[0]):
            x += (coeff_mats[m].conj().T @ y) @ base_mats[m].conj()
        return x

    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(2):
        v = rng.standard_normal((n, d2)) + 1j * rng.standard_normal((n, d2))
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(max_iter):
            w = apply(v)
            s_new = np.linalg.norm(w)
            v = apply_h(w)
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            v /= nv
            if abs(s_new - sigma) <= tol * max(1.0, s_new):
                sigma = s_new
                break
            sigma = s_new
        best = max(best, sigma)
    return float(best)


def cpb_lower(t, mfamily):
    """max of ||[p_ij(T)]|| / ||[p_ij]||_{H-inf(l^2)}, a certified M_cpb lower bound."""
    if not mfamily:
        raise ValueError("empty family")
    named = [f if isinstance(f, tuple) else (f"mp#{i}", f) for i, f in enumerate(mfamily)]
    deg = max(m.degree for _, m in named)
    powers = _matrix_powers(t, deg)
    best, best_name, best_obj = -1.0, "", None
    for name, mobj in named:
        cm = _coeff_mats(mobj)
        num = _structured_norm(cm, powers[: cm.shape[0]])
        ratio = num / sup_norm(mobj)
        if ratio > best:
            best, best_name, best_obj = ratio, name, mobj
    return BoundEstimate("cpb_lower", float(best), best_name, len(named), best_obj)


def dp_witness(n_jordan):
    """The CAR-transpose matrix polynomial W(z) = sum_j z^(j+1) C_Nj^*.

    Its H-infinity norm is at most sqrt(N+1) (CAR row orthogonality) while the
    corner ratios it extracts from R_N grow with N; the measured growth is a
    regression fact of this default, not a theorem.
    """
    car = build_car(n_jordan)
    n = car.dim
    entries = []
    for a in range(n):
        row = []
        for b in range(n):
            coeffs = np.zeros(n_jordan + 2, dtype=complex)
            for j, c in enumerate(car.matrices):
                coeffs[j + 1] = c[b, a]  # adjoint of a real matrix: transpose
            row.append(DiskPolynomial(coeffs))
        entries.append(tuple(row))
    return MatrixPolynomial(tuple(entries))


def corner_cpb(t, mfamily, top=None):
    """Ratio maximization for the corner map [T_{(p_ij)}] over matrix polynomials."""
    t = as_complex_matrix(t)
    size = t.shape[0]
    top = top if top is not None else size // 2
    named = [f if isinstance(f, tuple) else (f"mp#{i}", f) for i, f in enumerate(mfamily)]
    deg = max(m.degree for _, m in named)
    corners = []
    for m in range(deg + 1):
        corners.append(corner_extract(t, DiskPolynomial.monomial(m), top))
    corners = np.stack(corners)
    best, best_name, best_obj = -1.0, "", None
    for name, mobj in named:
        cm = _coeff_mats(mobj)
        num = _structured_norm(cm, corners[: cm.shape[0]])
        ratio = num / sup_norm(mobj)
        if ratio > best:
            best, best_name, best_obj = ratio, name, mobj
    return BoundEstimate("cpb_lower", float(best), best_name, len(named), best_obj)


@dataclass(frozen=True)
class InvarianceReport:
    max_ratio_discrepancy: float
    family_size: int
    ok: bool


def mobius_bound_invariance_check(t, w, family, tol=1e-8):
    """pb ratios computed through beta_w match the direct ones polynomial by polynomial."""
    named = [f if isinstance(f, tuple) else (f"p#{i}", f) for i, f in enumerate(family)]
    s = mobius_of_operator(t, w)
    back = mobius_of_operator(s, w)
    deg = max(p.degree for _, p in named)
    powers_t = _matrix_powers(t, deg)
    powers_back = _matrix_powers(back, deg)
    worst = 0.0
    for _, p in named:
        denom = sup_norm(p)
        r1 = op_norm(np.tensordot(p.coeffs, powers_t[: len(p.coeffs)], axes=1)) / denom
        r2 = op_norm(np.tensordot(p.coeffs, powers_back[: len(p.coeffs)], axes=1)) / denom
        worst = max(worst, abs(r1 - r2))
    return InvarianceReport(float(worst), len(named), bool(worst <= tol))


@dataclass(frozen=True)
class DirectSumReport:
    max_norm_discrepancy: float
    pb_sum: float
    pb_max_parts: float
    ok: bool


def direct_sum_bounds(ts, family, tol=1e-10):
    """||p((+)T_k)|| equals max_k ||p(T_k)|| exactly; family-wise pb agrees with the max."""
    import scipy.linalg
    named = [f if isinstance(f, tuple) else (f"p#{i}", f) for i, f in enumerate(family)]
    big = scipy.linalg.block_diag(*[as_complex_matrix(t) for t in ts])
    deg = max(p.degree for _, p in named)
    powers_big = _matrix_powers(big, deg)
    powers_parts = [_matrix_powers(t, deg) for t in ts]
    worst = 0.0
    best_sum, best_parts = -1.0, -1.0
    for _, p in named:
        denom = sup_norm(p)
        nb = op_norm(np.tensordot(p.coeffs, powers_big[: len(p.coeffs)], axes=1))
        parts = max(
            op_norm(np.tensordot(p.coeffs, pw[: len(p.coeffs)], axes=1)) for pw in powers_parts
        )
        worst = max(worst, abs(nb - parts))
        best_sum = max(best_sum, nb / denom)
        best_parts = max(best_parts, parts / denom)
    return DirectSumReport(float(worst), float(best_sum), float(best_parts), bool(worst <= tol))
