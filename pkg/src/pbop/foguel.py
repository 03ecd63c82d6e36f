"""Truncated Foguel-Hankel operators and the CAR tensor machinery behind them.

Builds the anticommuting tensor families C_Nj, the commuting diagonal packs
they intertwine, block Hankel layouts with their shift identities, the
operators Q_N and R_N, the printed polynomial-bound formulas, and the
inductive diagonal selector.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import kron_all, op_norm

SIZE_CAP_N = 7  # dimension 2^(N+1) = 256 for the tensor factors

V2 = np.array([[1, 0], [0, -1]], dtype=np.int64)
C2 = np.array([[0, 0], [1, 0]], dtype=np.int64)
I2 = np.eye(2, dtype=np.int64)


class SizeCapError(ValueError):
    """Requested N beyond the desk-scale cap."""


def _check_cap(n, cap=SIZE_CAP_N):
    if n < 1:
        raise ValueError("N must be >= 1")
    if n > cap:
        raise SizeCapError(f"N={n} exceeds the size cap {cap}")


@dataclass(frozen=True)
class CarFamily:
    """The matrices C_Nj = V^(tensor j) x C x I2^(tensor N-j), all 2^(N+1)-square."""

    n: int
    matrices: tuple  # integer ndarrays

    @property
    def dim(self):
        return 2 ** (self.n + 1)


def build_car(n):
    """Assemble the CAR family and verify its relations exactly (integer arithmetic)."""
    _check_cap(n)
    mats = []
    for j in range(n + 1):
        mats.append(kron_all([V2] * j + [C2] + [I2] * (n - j)))
    fam = CarFamily(n, tuple(mats))
    _verify_car(fam)
    return fam


def _verify_car(fam):
    mats = fam.matrices
    dim = fam.dim
    eye = np.eye(dim, dtype=np.int64)
    for i, ci in enumerate(mats):
        if np.any(ci @ ci != 0):
            raise AssertionError(f"C_{i}^2 != 0")
        for j, cj in enumerate(mats):
            if i != j and np.any(ci @ cj + cj @ ci != 0):
                raise AssertionError(f"anticommutation fails at ({i},{j})")
            want = eye if i == j else 0 * eye
            if np.any(ci @ cj.T + cj.T @ ci != want):
                raise AssertionError(f"CAR adjoint relation fails at ({i},{j})")


@dataclass(frozen=True)
class DiagonalPack:
    """Tensor diagonals D, the slot-swapped D_j, and the separate diagonal D_star."""

    n: int
    a_list: tuple
    c_list: tuple
    nu_list: tuple = ()

    def __post_init__(self):
        if len(self.a_list) != self.n + 1 or len(self.c_list) != self.n + 1:
            raise ValueError("need N+1 values of a and c")

    @property
    def dim(self):
        return 2 ** (self.n + 1)

    def d_entries(self):
        out = np.array([1.0])
        for a, c in zip(self.a_list, self.c_list):
            out = np.kron(out, [a, c])
        return out

    def d_matrix(self):
        return np.diag(self.d_entries())

    def dj_entries(self, j):
        out = np.array([1.0])
        for l, (a, c) in enumerate(zip(self.a_list, self.c_list)):
            pair = [c, a] if l == j else [a, c]
            out = np.kron(out, pair)
        return out

    def dj_matrix(self, j):
        return np.diag(self.dj_entries(j))

    def dstar_matrix(self):
        if len(self.nu_list) != self.dim:
            raise ValueError("nu_list not populated")
        return np.diag(np.asarray(self.nu_list, dtype=float))

    def to_json_dict(self):
        return {
            "N": self.n,
            "a": list(map(float, self.a_list)),
            "c": list(map(float, self.c_list)),
            "nu": list(map(float, self.nu_list)),
        }


def intertwine_54_check(n, pack, car=None):
    """Max residual of C_Nj D = D_j C_Nj over j (zero in exact arithmetic)."""
    car = car or build_car(n)
    d = pack.d_matrix()
    worst = 0.0
    for j, cj in enumerate(car.matrices):
        dj = pack.dj_matrix(j)
        worst = max(worst, float(np.abs(cj @ d - dj @ cj).max()))
    return worst


def lemma51_diagonals(n, delta, tighten=0.9, retries=8):
    """Families a_l, c_l in (0, delta^(1/(N+1))) with pairwise distinct tensor products.

    Follows the inductive choice of the proof: each new c is below the new a
    times the smallest current product.  Relative collisions below 1e-13
    trigger a retry with an adjusted contraction.
    """
    _check_cap(n)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0,1)")
    u = delta ** (1.0 / (n + 1))
    factor = tighten
    for _ in range(retries):
        a_list = [0.95 * u]
        c_list = [0.95 * u * factor]
        entries = np.array([a_list[0], c_list[0]])
        ok = True
        for _l in range(1, n + 1):
            a = 0.95 * u
            c = min(0.95 * u, a * entries.min() * factor)
            a_list.append(a)
            c_list.append(c)
            entries = np.kron(entries, [a, c])
        s = np.sort(entries)
        rel_gap = np.min((s[1:] - s[:-1]) / s[1:]) if len(s) > 1 else 1.0
        if rel_gap <= 1e-13:
            factor *= 0.7
            ok = False
        if ok:
            return tuple(a_list), tuple(c_list)
    raise RuntimeError("could not separate the diagonal entries")


def dstar_midpoints(d_entries, delta):
    """Distinct nu values interleaved between the sorted diagonal entries."""
    s = np.sort(np.asarray(d_entries, dtype=float))
    mids = 0.5 * (s[:-1] + s[1:])
    out = np.concatenate([[0.5 * s[0]], mids])
    if out.max() >= delta or len(set(out.tolist()) & set(s.tolist())):
        raise RuntimeError("midpoint policy failed to separate")
    return tuple(out.tolist())


def make_pack(n, delta, tighten=0.9):
    a_list, c_list = lemma51_diagonals(n, delta, tighten=tighten)
    pack = DiagonalPack(n, a_list, c_list)
    nus = dstar_midpoints(pack.d_entries(), delta)
    return DiagonalPack(n, a_list, c_list, nus)


# ---------------------------------------------------------------------------
# Hankel blocks and the Foguel-Hankel operators

def hankel_block(ajs):
    """Gamma({A_j}): block (i, k) carries A_{2N-i-k} when i + k >= N, else zero."""
    ajs = [np.asarray(a) for a in ajs]
    d = ajs[0].shape[0]
    for a in ajs:
        if a.shape != (d, d):
            raise ValueError("all blocks must be square of equal size")
    n = len(ajs) - 1
    dtype = np.result_type(*[a.dtype for a in ajs])
    out = np.zeros(((n + 1) * d, (n + 1) * d), dtype=dtype)
    for i in range(n + 1):
        for k in range(n + 1):
            idx = 2 * n - i - k
            if 0 <= idx <= n:
                out[i * d : (i + 1) * d, k * d : (k + 1) * d] = ajs[idx]
    return out


def hankel_block_k(k, ajs):
    """Gamma(k, {A_j}) = Gamma(A_k, ..., A_N, 0, ..., 0)."""
    n = len(ajs) - 1
    if not 0 <= k <= n:
        raise ValueError("shift index out of range")
    zero = np.zeros_like(np.asarray(ajs[0]))
    shifted = list(ajs[k:]) + [zero] * k
    return hankel_block(shifted)


def truncated_shift_matrix(d, n):
    m = np.zeros(((n + 1) * d, (n + 1) * d), dtype=float)
    for k in range(n):
        m[k * d : (k + 1) * d, (k + 1) * d : (k + 2) * d] = np.eye(d)
    return m


def build_q(ajs):
    """Q_N({A_j}) = [[S*, Gamma], [0, S]] on the doubled truncated space."""
    ajs = [np.asarray(a, dtype=complex) for a in ajs]
    n = len(ajs) - 1
    d = ajs[0].shape[0]
    s = truncated_shift_matrix(d, n).astype(complex)
    gamma = hankel_block(ajs)
    size = (n + 1) * d
    out = np.zeros((2 * size, 2 * size), dtype=complex)
    out[:size, :size] = s.conj().T
    out[:size, size:] = gamma
    out[size:, size:] = s
    return out


@dataclass(frozen=True)
class AlphaSequence:
    """Hankel symbol weights alpha_{N,0..N}."""

    n: int
    values: tuple

    def __post_init__(self):
        if len(self.values) != self.n + 1:
            raise ValueError("need N+1 weights")


def alpha_default(n):
    """The printed family alpha_j = (j+1)^(-3/2)."""
    return AlphaSequence(n, tuple((j + 1) ** -1.5 for j in range(n + 1)))


def build_r(n, alpha=None, car=None):
    """R_N({alpha_j}) = Q_N({alpha_j C_Nj}), a 2(N+1)2^(N+1)-dimensional matrix."""
    _check_cap(n)
    alpha = alpha or alpha_default(n)
    car = car or build_car(n)
    ajs = [alpha.values[j] * car.matrices[j].astype(complex) for j in range(n + 1)]
    return build_q(ajs)


def pb_upper_formula(n, alpha=None):
    """sqrt(3 (4 sup_{1<=m<=N+1} m^2 sum_{j>=m-1} |alpha_j|^2 + 1))."""
    alpha = alpha or alpha_default(n)
    a2 = [abs(v) ** 2 for v in alpha.values]
    sup = max((m * m) * sum(a2[m - 1 :]) for m in range(1, n + 2))
    return math.sqrt(3.0 * (4.0 * sup + 1.0))


def cpb_lower_formula(n, alpha=None):
    """sqrt(1/4 sum_{j=1}^{N+1} j^2 |alpha_{j-1}|^2)."""
    alpha = alpha or alpha_default(n)
    return math.sqrt(0.25 * sum((j * j) * abs(alpha.values[j - 1]) ** 2 for j in range(1, n + 2)))


def alpha_sup_proxy(n, alpha=None):
    """sup_{1<=m<=N+1} m^2 sum_{j>=m-1} |alpha_j|^2 (the uniform-boundedness proxy)."""
    alpha = alpha or alpha_default(n)
    a2 = [abs(v) ** 2 for v in alpha.values]
    return max((m * m) * sum(a2[m - 1 :]) for m in range(1, n + 2))


def kernel_dim_lower_bound(r, tol=1e-9):
    """dim ker R* by numerical rank (the multiplicity proxy mu >= dim H)."""
    s = np.linalg.svd(np.asarray(r, dtype=complex), compute_uv=False)
    return int(np.sum(s <= tol * max(1.0, s[0])))
