"""Scalar function theory on the unit disk.

Mobius maps, Blaschke factors and finite products, the outer function
g(z) = exp(-((1+z)/(1-z))^alpha), chain-rule coefficients for composition
with a Mobius map, Hermite/Newton interpolants, and H-infinity sup-norm
estimation for scalar and matrix polynomials.
"""

import cmath
import math
import os
import warnings
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .linalg import IllConditionedError, as_complex_matrix, cond2
from .series import (
    jets_from_series,
    mobius_series,
    ser_div,
    ser_exp,
    ser_mul,
    ser_pow,
    ser_scale,
)

DOMAIN_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an evaluation point leaves the closed unit disk."""


class SingularResolventError(IllConditionedError):
    """Raised when I - conj(w) T is numerically singular."""


class CirclePlacementError(RuntimeError):
    """Raised when Cauchy-integral differentiation cannot meet the accuracy target."""


def grid_scale():
    """Global multiplier for grid densities (env var PBOP_GRID_SCALE)."""
    try:
        return max(1.0, float(os.environ.get("PBOP_GRID_SCALE", "1")))
    except ValueError:
        return 1.0


def _check_disk(z, tol=DOMAIN_TOL):
    if np.any(np.abs(np.asarray(z)) > 1.0 + tol):
        raise DomainError("evaluation point outside the closed unit disk")


# ---------------------------------------------------------------------------
# Mobius maps

@dataclass(frozen=True)
class MobiusMap:
    """beta_w(z) = (w - z) / (1 - conj(w) z), an involution of the disk."""

    w: complex

    def __post_init__(self):
        if abs(self.w) >= 1.0:
            raise ValueError(f"|w| = {abs(self.w):.6f} must be < 1")

    def __call__(self, z):
        return mobius_eval(self, z)


def mobius_eval(m, z):
    """Evaluate beta_w at z (scalar or array), |z| <= 1."""
    _check_disk(z)
    w = m.w if isinstance(m, MobiusMap) else complex(m)
    z = np.asarray(z, dtype=complex)
    out = (w - z) / (1.0 - np.conj(w) * z)
    return complex(out) if out.ndim == 0 else out


def mobius_of_operator(t, w, cond_limit=1e12):
    """beta_w(T) = (wI - T)(I - conj(w) T)^{-1} for a square matrix T."""
    t = as_complex_matrix(t)
    if abs(w) >= 1.0:
        raise ValueError("|w| must be < 1")
    n = t.shape[0]
    eye = np.eye(n, dtype=complex)
    denom = eye - np.conj(w) * t
    c = cond2(denom)
    if not np.isfinite(c) or c > cond_limit:
        raise SingularResolventError(f"I - conj(w)T has condition number {c:.3e}")
    # Right division: X = (wI - T) (I - conj(w)T)^{-1}
    return np.linalg.solve(denom.T, (w * eye - t).T).T


# ---------------------------------------------------------------------------
# Blaschke products

@dataclass(frozen=True)
class BlaschkeProduct:
    """Finite Blaschke product: unimodular prefactor times product of b_lambda^k.

    The factor convention is b_lambda(z) = (|lambda|/lambda)(lambda-z)/(1-conj(lambda) z)
    with b_0(z) = z (continuous limit normalization).
    """

    zeros: tuple = ()          # tuple of (lambda, multiplicity)
    prefactor: complex = 1.0

    def __post_init__(self):
        zs = tuple((complex(lam), int(k)) for lam, k in self.zeros)
        for lam, k in zs:
            if abs(lam) >= 1.0:
                raise ValueError(f"zero {lam} not in the open disk")
            if k < 1:
                raise ValueError("multiplicities must be >= 1")
        if abs(abs(complex(self.prefactor)) - 1.0) > 1e-12:
            raise ValueError("prefactor must be unimodular")
        object.__setattr__(self, "zeros", zs)
        object.__setattr__(self, "prefactor", complex(self.prefactor))

    @property
    def degree(self):
        return sum(k for _, k in self.zeros)

    def zeros_expanded(self):
        out = []
        for lam, k in self.zeros:
            out.extend([lam] * k)
        return out

    def __call__(self, z):
        return blaschke_eval(self, z)

    def jets(self, z, n):
        """Derivatives B^(0..n)(z), exact up to rounding."""
        return jets_from_series(self._series(complex(z), n, use_mp=False))

    def jets_mp(self, z, n, dps=60):
        with mp.workdps(dps):
            return jets_from_series(self._series(mp.mpc(z), n, use_mp=True))

    def _series(self, z0, n, use_mp):
        one = mp.mpc(1) if use_mp else 1.0 + 0j
        acc = [one * self.prefactor] + [one * 0] * n
        for lam, k in self.zeros:
            fac = _factor_series(lam, z0, n, use_mp)
            for _ in range(k):
                acc = ser_mul(acc, fac, n + 1)
        return acc

    def taylor(self, n, nodes=None):
        """Taylor coefficients at 0 up to degree n, via FFT of boundary samples."""
        m = nodes or 1 << max(8, (n + 1).bit_length() + 1)
        theta = 2.0 * np.pi * np.arange(m) / m
        vals = blaschke_eval(self, np.exp(1j * theta))
        coeffs = np.fft.fft(vals) / m
        return coeffs[: n + 1]

    def to_json_dict(self):
        return {
            "zeros": [{"re": lam.real, "im": lam.imag, "mult": k} for lam, k in self.zeros],
            "prefactor": {"re": self.prefactor.real, "im": self.prefactor.imag},
        }

    @staticmethod
    def from_json_dict(d):
        zeros = tuple((complex(z["re"], z["im"]), int(z["mult"])) for z in d["zeros"])
        pf = complex(d["prefactor"]["re"], d["prefactor"]["im"])
        return BlaschkeProduct(zeros, pf)


def _factor_series(lam, z0, n, use_mp):
    """Taylor series of b_lambda at z0, length n+1."""
    if use_mp:
        lam = mp.mpc(lam)
        one, zero = mp.mpc(1), mp.mpc(0)
        lb = mp.conj(lam)
        alam = mp.fabs(lam)
    else:
        lam = complex(lam)
        one, zero = 1.0 + 0j, 0.0 + 0j
        lb = lam.conjugate()
        alam = abs(lam)
    if alam == 0:
        return [z0 * one, one] + [zero] * (n - 1) if n >= 1 else [z0 * one]
    c = alam / lam
    num = [c * (lam - z0), -c] + [zero] * (n - 1)
    den = [one - lb * z0, -lb] + [zero] * (n - 1)
    return ser_div(num[: n + 1], den[: n + 1], n + 1)


def _factor_eval(lam, z):
    if lam == 0:
        return np.asarray(z, dtype=complex)
    return (abs(lam) / lam) * (lam - z) / (1.0 - lam.conjugate() * z)


def blaschke_eval(b, z):
    """Evaluate a finite Blaschke product at z (scalar or array), |z| <= 1."""
    _check_disk(z)
    z = np.asarray(z, dtype=complex)
    out = np.full(z.shape, b.prefactor, dtype=complex)
    for lam, k in b.zeros:
        out = out * _factor_eval(lam, z) ** k
    return complex(out) if out.ndim == 0 else out


def compose_factor(lam, w):
    """Unimodular zeta and lam' = beta_w(lam) with b_lam(beta_w(z)) = zeta * b_lam'(z).

    zeta is extracted by evaluating both sides at a point where b_lam' is not small.
    """
    lam, w = complex(lam), complex(w)
    if abs(lam) >= 1 or abs(w) >= 1:
        raise ValueError("lam and w must be in the open disk")
    lam2 = complex(mobius_eval(MobiusMap(w), lam))
    if abs(lam2) < 1e-14:
        lam2 = 0.0
    # safe evaluation point: origin unless b_{lam'} is small there
    if lam2 == 0.0:
        z0 = 0.5 + 0j
    elif abs(_factor_eval(lam2, 0.0)) < 0.1:
        z0 = -lam2 / abs(lam2) * 0.5
    else:
        z0 = 0.0 + 0j
    lhs = complex(_factor_eval(lam, complex(mobius_eval(MobiusMap(w), z0))))
    rhs = complex(_factor_eval(lam2, z0))
    zeta = lhs / rhs
    zeta /= abs(zeta)
    return zeta, lam2


def blaschke_compose(b, w):
    """B o beta_w as a BlaschkeProduct, applying compose_factor zero by zero."""
    pref = b.prefactor
    zeros = []
    for lam, k in b.zeros:
        zeta, lam2 = compose_factor(lam, w)
        pref *= zeta ** k
        zeros.append((lam2, k))
    pref /= abs(pref)
    return BlaschkeProduct(tuple(zeros), pref)


# ---------------------------------------------------------------------------
# The outer function g

@dataclass(frozen=True)
class OuterG:
    """g(z) = exp(-((1+z)/(1-z))^alpha), outer in H-infinity, 0 < alpha < 1."""

    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0,1)")

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        u = (1.0 + z) / (1.0 - z)
        out = np.exp(-np.power(u, self.alpha))
        return complex(out) if out.ndim == 0 else out

    def jets(self, z, n):
        return outer_g_derivs(self, z, n)

    def jets_mp(self, z, n, dps=60):
        with mp.workdps(dps):
            z0 = mp.mpc(z)
            one = mp.mpc(1)
            num = [one + z0, one] + [mp.mpc(0)] * (n - 1)
            den = [one - z0, -one] + [mp.mpc(0)] * (n - 1)
            u = ser_div(num[: n + 1], den[: n + 1], n + 1)
            s = ser_pow(u, mp.mpf(self.alpha), n + 1)
            g = ser_exp(ser_scale(s, -1), n + 1)
            return jets_from_series(g)


@dataclass(frozen=True)
class ConjugateReflection:
    """g_*(z) = conj(g(conj z)), the reflection used for adjoint identities."""

    fn: object

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.conj(self.fn(np.conj(z)))
        return complex(out) if out.ndim == 0 else out

    def jets(self, z, n):
        return [complex(d).conjugate() for d in self.fn.jets(complex(z).conjugate(), n)]

    def jets_mp(self, z, n, dps=60):
        vals = self.fn.jets_mp(mp.conj(mp.mpc(z)), n, dps)
        return [mp.conj(v) for v in vals]


def outer_g_derivs(g, z, n, nodes=512, tol=1e-9):
    """g^(0..n)(z) by Cauchy-integral trapezoid quadrature on a safe circle.

    The circle radius is min(0.5 (1-|z|), 0.25).  Accuracy is certified by
    doubling the node count; disagreement raises CirclePlacementError rather
    than silently degrading.
    """
    z = complex(z)
    if abs(z) >= 1.0:
        raise DomainError("z must be in the open disk")
    r = min(0.5 * (1.0 - abs(z)), 0.25)
    if r <= 0:
        raise CirclePlacementError("no room for a quadrature circle")

    def attempt(m):
        theta = 2.0 * np.pi * np.arange(m) / m
        samples = g(z + r * np.exp(1j * theta))
        coeffs = np.fft.fft(samples) / m
        fact = np.array([math.factorial(k) for k in range(n + 1)])
        return coeffs[: n + 1] * fact / r ** np.arange(n + 1)

    first = attempt(nodes)
    second = attempt(2 * nodes)
    scale = max(1.0, float(np.abs(second).max()))
    if float(np.abs(first - second).max()) > tol * scale:
        raise CirclePlacementError(
            f"Cauchy quadrature did not stabilize near z={z}: increase nodes or move z"
        )
    return [complex(c) for c in second]


# ---------------------------------------------------------------------------
# Polynomials

def _trim(coeffs):
    c = np.atleast_1d(np.asarray(coeffs, dtype=complex))
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1].copy()


@dataclass(frozen=True)
class DiskPolynomial:
    """Analytic polynomial given by its coefficient list (index = power)."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=complex))

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _trim(self.coeffs))

    @property
    def degree(self):
        c = self.coeffs
        return 0 if (len(c) == 1 and c[0] == 0) else len(c) - 1

    def is_zero(self):
        return len(self.coeffs) == 1 and self.coeffs[0] == 0

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.polynomial.polynomial.polyval(z, self.coeffs)
        return complex(out) if out.ndim == 0 else np.asarray(out, dtype=complex)

    def derivative(self):
        c = self.coeffs
        if len(c) == 1:
            return DiskPolynomial(np.zeros(1))
        return DiskPolynomial(c[1:] * np.arange(1, len(c)))

    def jets(self, z, n):
        out, p = [], self
        for _ in range(n + 1):
            out.append(complex(p(complex(z))))
            p = p.derivative()
        return out

    def jets_mp(self, z, n, dps=60):
        with mp.workdps(dps):
            z0 = mp.mpc(z)
            cs = [mp.mpc(c) for c in self.coeffs]
            out = []
            for k in range(n + 1):
                acc = mp.mpc(0)
                for m in range(len(cs) - 1, k - 1, -1):
                    acc = acc * z0 + cs[m] * mp.ff(m, k)
                out.append(acc)
            return out

    def eval_matrix(self, t):
        """p(T) by Horner."""
        t = as_complex_matrix(t)
        n = t.shape[0]
        acc = np.zeros_like(t)
        for c in self.coeffs[::-1]:
            acc = acc @ t
            acc[np.diag_indices(n)] += c
        return acc

    def __add__(self, other):
        o = other.coeffs if isinstance(other, DiskPolynomial) else np.atleast_1d(np.asarray(other, complex))
        n = max(len(self.coeffs), len(o))
        a = np.zeros(n, dtype=complex)
        a[: len(self.coeffs)] += self.coeffs
        a[: len(o)] += o
        return DiskPolynomial(a)

    def __mul__(self, other):
        if isinstance(other, DiskPolynomial):
            return DiskPolynomial(np.convolve(self.coeffs, other.coeffs))
        return DiskPolynomial(self.coeffs * complex(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (other * (-1.0) if isinstance(other, DiskPolynomial) else -other)

    def compose(self, inner):
        """self(inner(z)) for polynomial inner."""
        acc = DiskPolynomial([0.0])
        for c in self.coeffs[::-1]:
            acc = acc * inner + DiskPolynomial([c])
        return acc

    def to_json_dict(self):
        return {"coeffs": [{"re": c.real, "im": c.imag} for c in self.coeffs]}

    @staticmethod
    def from_json_dict(d):
        return DiskPolynomial([complex(c["re"], c["im"]) for c in d["coeffs"]])

    @staticmethod
    def monomial(k, coeff=1.0):
        c = np.zeros(k + 1, dtype=complex)
        c[k] = coeff
        return DiskPolynomial(c)


@dataclass(frozen=True)
class MatrixPolynomial:
    """Square grid of DiskPolynomial entries, an element of H-infinity(l^2_n)."""

    entries: tuple  # tuple of tuples of DiskPolynomial

    def __post_init__(self):
        rows = tuple(tuple(e) for e in self.entries)
        n = len(rows)
        for r in rows:
            if len(r) != n:
                raise ValueError("matrix polynomial must be square")
            for p in r:
                if not isinstance(p, DiskPolynomial):
                    raise TypeError("entries must be DiskPolynomial")
        object.__setattr__(self, "entries", rows)

    @property
    def size(self):
        return len(self.entries)

    @property
    def degree(self):
        return max(p.degree for row in self.entries for p in row)

    def eval_stack(self, z):
        """Values over a 1-d grid of points: shape (len(z), n, n)."""
        z = np.asarray(z, dtype=complex).ravel()
        n = self.size
        out = np.empty((z.size, n, n), dtype=complex)
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                out[:, i, j] = p(z)
        return out

    def eval_operator(self, t):
        """[p_ij(T)] as a dense block matrix of size n * dim(T)."""
        t = as_complex_matrix(t)
        d = t.shape[0]
        n = self.size
        deg = self.degree
        powers = [np.eye(d, dtype=complex)]
        for _ in range(deg):
            powers.append(powers[-1] @ t)
        out = np.zeros((n * d, n * d), dtype=complex)
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                blk = sum((c * powers[k] for k, c in enumerate(p.coeffs)), np.zeros((d, d), complex))
                out[i * d : (i + 1) * d, j * d : (j + 1) * d] = blk
        return out

    @staticmethod
    def from_scalar(p):
        return MatrixPolynomial(((p,),))


# ---------------------------------------------------------------------------
# Newton-form Hermite interpolants

@dataclass(frozen=True)
class NewtonPoly:
    """Polynomial in Newton form on an expanded node list (repetitions allowed)."""

    nodes: tuple
    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(complex(x) for x in self.nodes))
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))
        if len(self.nodes) != len(self.coeffs):
            raise ValueError("need as many coefficients as nodes")

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        acc = np.full(z.shape, self.coeffs[-1], dtype=complex)
        for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
            acc = acc * (z - x) + c
        return complex(acc) if acc.ndim == 0 else acc

    def eval_matrix(self, t):
        t = as_complex_matrix(t)
        n = t.shape[0]
        eye = np.eye(n, dtype=complex)
        acc = self.coeffs[-1] * eye
        for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
            acc = acc @ (t - x * eye) + c * eye
        return acc

    def jets(self, z, n):
        z0 = complex(z)
        zero = 0.0 + 0j
        acc = [zero] * (n + 1)
        acc[0] = self.coeffs[-1]
        for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
            lin = [z0 - x, 1.0 + 0j] + [zero] * (n - 1)
            acc = ser_mul(acc, lin[: n + 1], n + 1)
            acc[0] += c
        return jets_from_series(acc)

    def jets_mp(self, z, n, dps=60):
        with mp.workdps(dps):
            z0 = mp.mpc(z)
            zero, one = mp.mpc(0), mp.mpc(1)
            acc = [zero] * (n + 1)
            acc[0] = mp.mpc(self.coeffs[-1])
            for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
                lin = [z0 - mp.mpc(x), one] + [zero] * max(0, n - 1)
                acc = ser_mul(acc, lin[: n + 1], n + 1)
                acc[0] += mp.mpc(c)
            return jets_from_series(acc)

    def to_diskpoly(self):
        acc = DiskPolynomial([self.coeffs[-1]])
        for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
            acc = acc * DiskPolynomial([-x, 1.0]) + DiskPolynomial([c])
        return acc

    def to_json_dict(self):
        return {
            "nodes": [{"re": x.real, "im": x.imag} for x in self.nodes],
            "coeffs": [{"re": c.real, "im": c.imag} for c in self.coeffs],
        }


def adaptive_dps(nodes_with_mult):
    """Working precision for divided-difference tables on the given nodes.

    Clustered nodes amplify table cancellation by roughly the spread-to-gap
    ratio per level, so the precision scales with the degree times the decade
    spread of the pairwise gaps.
    """
    xs = []
    d = 0
    for x, m in nodes_with_mult:
        xs.append(complex(x))
        d += m
    if len(xs) <= 1:
        return max(40, 20 + 3 * d)
    gaps = [abs(xs[i] - xs[j]) for i in range(len(xs)) for j in range(i + 1, len(xs))]
    g = min(gaps)
    s = max(max(gaps), 1e-30)
    if g <= 0:
        raise ValueError("repeated node passed as distinct")
    decades = max(1.0, math.log10(s / g))
    return int(40 + d * min(14, math.ceil(decades) + 1))


@dataclass(frozen=True)
class MpNewtonPoly:
    """Newton-form interpolant with mpmath nodes and coefficients.

    Needed when nodes are too close for float64 to resolve their gaps (the
    Mobius-transported clusters near the boundary); keeps full jet fidelity.
    """

    nodes: tuple    # mpc
    coeffs: tuple   # mpc
    dps: int

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, z):
        with mp.workdps(self.dps):
            zs = np.atleast_1d(np.asarray(z, dtype=complex))
            out = np.empty(zs.shape, dtype=complex)
            for i, zz in enumerate(zs.ravel()):
                acc = self.coeffs[-1]
                z0 = mp.mpc(zz)
                for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
                    acc = acc * (z0 - x) + c
                out.ravel()[i] = complex(acc)
        return complex(out) if np.asarray(z).ndim == 0 else out

    def jets_mp(self, z, n, dps=None):
        with mp.workdps(max(dps or 0, self.dps)):
            z0 = mp.mpc(z)
            zero, one = mp.mpc(0), mp.mpc(1)
            acc = [zero] * (n + 1)
            acc[0] = self.coeffs[-1]
            for x, c in zip(self.nodes[-2::-1], self.coeffs[-2::-1]):
                lin = [z0 - x, one] + [zero] * max(0, n - 1)
                acc = ser_mul(acc, lin[: n + 1], n + 1)
                acc[0] += c
            return jets_from_series(acc)

    def jets(self, z, n):
        return [complex(v) for v in self.jets_mp(z, n)]

    def to_newton_float(self):
        return NewtonPoly(tuple(complex(x) for x in self.nodes),
                          tuple(complex(c) for c in self.coeffs))

    def to_json_dict(self, digits=30):
        return {
            "nodes": [mp.nstr(x, digits) for x in self.nodes],
            "coeffs": [mp.nstr(c, digits) for c in self.coeffs],
            "dps": self.dps,
        }


def hermite_newton_mp(nodes_with_mult, jets_per_node, dps=None):
    """Hermite interpolant with mpmath nodes and divided differences.

    nodes_with_mult may carry mpmath node values; jets_per_node may hold mpc
    entries.  Returns an MpNewtonPoly at the working precision.
    """
    float_nodes = [(complex(x), m) for x, m in nodes_with_mult]
    if dps is None:
        dps = adaptive_dps(float_nodes)
    with mp.workdps(dps):
        expanded, owner = [], []
        for i, (x, m) in enumerate(nodes_with_mult):
            expanded.extend([mp.mpc(x)] * m)
            owner.extend([i] * m)
        d = len(expanded)
        col = [mp.mpc(jets_per_node[owner[i]][0]) for i in range(d)]
        table = [col]
        fact = mp.mpf(1)
        for j in range(1, d):
            fact *= j
            prev = table[-1]
            cur = []
            for i in range(d - j):
                if owner[i + j] == owner[i]:
                    cur.append(mp.mpc(jets_per_node[owner[i]][j]) / fact)
                else:
                    cur.append((prev[i + 1] - prev[i]) / (expanded[i + j] - expanded[i]))
            table.append(cur)
        coeffs = tuple(table[j][0] for j in range(d))
        return MpNewtonPoly(tuple(expanded), coeffs, dps)


def hermite_newton(nodes_with_mult, jets_per_node, dps=None):
    """Hermite interpolant in Newton form from jet data at each node.

    nodes_with_mult: list of (node, multiplicity); jets_per_node[i] holds the
    derivatives f^(0..m_i-1) at node i.  The divided-difference table is built
    in mpmath (clustered nodes wreck the table in double precision) and the
    coefficients are returned rounded to complex.
    """
    expanded, owner = [], []
    for i, (x, m) in enumerate(nodes_with_mult):
        expanded.extend([complex(x)] * m)
        owner.extend([i] * m)
    d = len(expanded)
    if d == 0:
        raise ValueError("empty interpolation data")
    if dps is None:
        dps = adaptive_dps([(complex(x), m) for x, m in nodes_with_mult])
    with mp.workdps(dps):
        xs = [mp.mpc(x) for x in expanded]
        col = []
        for idx in range(d):
            col.append(mp.mpc(jets_per_node[owner[idx]][0]))
        table = [col]
        # position index of the first repetition run member for confluent entries
        start = list(range(d))
        for idx in range(1, d):
            if expanded[idx] == expanded[idx - 1] and owner[idx] == owner[idx - 1]:
                start[idx] = start[idx - 1]
        fact = mp.mpf(1)
        for j in range(1, d):
            fact *= j
            prev = table[-1]
            cur = []
            for i in range(d - j):
                if xs[i + j] == xs[i] and owner[i + j] == owner[i]:
                    # confluent entry: f^(j)(x_i)/j!
                    cur.append(mp.mpc(jets_per_node[owner[i]][j]) / fact)
                else:
                    cur.append((prev[i + 1] - prev[i]) / (xs[i + j] - xs[i]))
            table.append(cur)
        coeffs = [complex(table[j][0]) for j in range(d)]
    return NewtonPoly(tuple(expanded), tuple(coeffs))


# ---------------------------------------------------------------------------
# Composition with Mobius maps; jet combinators

def faa_coefficients(n, w):
    """Chain-rule coefficients c_{n,0..n-1} for (g o beta_w)^{(n)}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = complex(w)
    wb = w.conjugate()
    a = abs(w) ** 2 - 1.0
    row = [a]
    for m in range(1, n):
        new = [a * row[0]]
        for k in range(1, m):
            new.append(a * row[k] + (2 * m - k + 1) * wb * row[k - 1])
        new.append((m + 1) * wb * row[m - 1])
        row = new
    return row


def faa_coefficients_mp(n, w):
    w = mp.mpc(w)
    wb = mp.conj(w)
    a = abs(w) ** 2 - 1
    row = [a]
    for m in range(1, n):
        new = [a * row[0]]
        for k in range(1, m):
            new.append(a * row[k] + (2 * m - k + 1) * wb * row[k - 1])
        new.append((m + 1) * wb * row[m - 1])
        row = new
    return row


def compose_mobius_jets(fn_jets, w, z, n, use_mp=False):
    """Jets of f o beta_w at z from the jets of f at beta_w(z), via Lemma-style
    chain-rule coefficients.  fn_jets must have length >= n+1."""
    if use_mp:
        w, z = mp.mpc(w), mp.mpc(z)
        wb = mp.conj(w)
        out = [fn_jets[0]]
        for m in range(1, n + 1):
            cs = faa_coefficients_mp(m, w)
            s = mp.mpc(0)
            for k in range(m):
                s += fn_jets[m - k] * cs[k] / (1 - wb * z) ** (2 * m - k)
            out.append(s)
        return out
    w, z = complex(w), complex(z)
    wb = w.conjugate()
    out = [fn_jets[0]]
    for m in range(1, n + 1):
        cs = faa_coefficients(m, w)
        s = 0j
        for k in range(m):
            s += fn_jets[m - k] * cs[k] / (1.0 - wb * z) ** (2 * m - k)
        out.append(s)
    return out


@dataclass(frozen=True)
class ComposedWithMobius:
    """f o beta_w as an evaluatable function with exact jets."""

    fn: object
    w: complex

    def __call__(self, z):
        return self.fn(mobius_eval(MobiusMap(self.w), z))

    def jets(self, z, n):
        inner = complex(mobius_eval(MobiusMap(self.w), complex(z)))
        return compose_mobius_jets(self.fn.jets(inner, n), self.w, z, n)

    def jets_mp(self, z, n, dps=60):
        with mp.workdps(dps):
            w, z0 = mp.mpc(self.w), mp.mpc(z)
            inner = (w - z0) / (1 - mp.conj(w) * z0)
            base = self.fn.jets_mp(inner, n, dps)
            return compose_mobius_jets(base, w, z0, n, use_mp=True)


@dataclass(frozen=True)
class FnProduct:
    """Pointwise product with Leibniz-rule jets."""

    left: object
    right: object

    def __call__(self, z):
        return self.left(z) * self.right(z)

    def jets(self, z, n):
        a = self.left.jets(z, n)
        b = self.right.jets(z, n)
        return [sum(math.comb(m, k) * a[k] * b[m - k] for k in range(m + 1)) for m in range(n + 1)]

    def jets_mp(self, z, n, dps=60):
        a = self.left.jets_mp(z, n, dps)
        b = self.right.jets_mp(z, n, dps)
        with mp.workdps(dps):
            return [
                mp.fsum([mp.binomial(m, k) * a[k] * b[m - k] for k in range(m + 1)])
                for m in range(n + 1)
            ]


@dataclass(frozen=True)
class ConstantFn:
    value: complex

    def __call__(self, z):
        z = np.asarray(z)
        out = np.full(z.shape, complex(self.value))
        return complex(self.value) if out.ndim == 0 else out

    def jets(self, z, n):
        return [complex(self.value)] + [0j] * n

    def jets_mp(self, z, n, dps=60):
        return [mp.mpc(self.value)] + [mp.mpc(0)] * n


# ---------------------------------------------------------------------------
# Sup norms on the circle

@dataclass(frozen=True)
class SupNormResult:
    value: float
    nodes: int
    converged: bool


def _circle(m):
    return np.exp(2j * np.pi * np.arange(m) / m)


def sup_norm_result(p, rel_tol=1e-8, start=1024, cap=1 << 16):
    """Boundary-grid sup norm with refinement until stable (maximum modulus)."""
    scale = grid_scale()
    m = int(start * scale)
    cap = int(cap * scale)

    def grid_max(m):
        z = _circle(m)
        if isinstance(p, MatrixPolynomial):
            vals = p.eval_stack(z)
            return float(np.linalg.norm(vals, 2, axis=(1, 2)).max())
        return float(np.abs(p(z)).max())

    prev = grid_max(m)
    while m < cap:
        m *= 2
        cur = grid_max(m)
        if abs(cur - prev) <= rel_tol * max(1.0, cur):
            return SupNormResult(cur, m, True)
        prev = cur
    warnings.warn(f"sup_norm grid capped at {m} nodes without convergence")
    return SupNormResult(prev, m, False)


def sup_norm(p, rel_tol=1e-8, start=1024, cap=1 << 16):
    return sup_norm_result(p, rel_tol, start, cap).value


def tail_truncate(p, n):
    """Exact split p = p1 + p2 with p1 carrying coefficients of degree <= n+1."""
    c = p.coeffs
    cut = n + 2
    p1 = DiskPolynomial(c[:cut]) if len(c) else DiskPolynomial([0.0])
    if len(c) > cut:
        tail = np.zeros(len(c), dtype=complex)
        tail[cut:] = c[cut:]
        p2 = DiskPolynomial(tail)
    else:
        p2 = DiskPolynomial([0.0])
    return p1, p2
