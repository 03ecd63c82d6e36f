"""Model spaces K_B for finite Blaschke products.

Takenaka-Malmquist orthonormal bases, compressed-shift matrices assembled by
circle quadrature, Hermite-interpolation functional calculus, Nehari
distances, the Mobius conjugation unitary, the triangular interpolation
solver, and commutant-to-function recovery.
"""

import warnings
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .diskfn import (
    BlaschkeProduct,
    ComposedWithMobius,
    DiskPolynomial,
    MobiusMap,
    NewtonPoly,
    grid_scale,
    hermite_newton,
    mobius_eval,
)
from .linalg import IllConditionedError, as_complex_matrix, cond2, op_norm

GRAM_TOL = 1e-10
NODE_START = 4096
NODE_CAP = 1 << 18


class DegenerateZerosError(IllConditionedError):
    """Distinct zeros closer than the conditioning cliff; merge into a multiplicity."""


class QuadratureError(RuntimeError):
    """Circle quadrature failed to reach the requested tolerance within the node cap."""


def _circle(m):
    return np.exp(2j * np.pi * np.arange(m) / m)


def _tm_basis_values(zeros_expanded, z):
    """Takenaka-Malmquist basis evaluated on a 1-d grid: shape (dim, len(z)).

    e_k = sqrt(1-|x_k|^2)/(1 - conj(x_k) z) * prod_{j<k} (x_j - z)/(1 - conj(x_j) z).
    """
    z = np.asarray(z, dtype=complex).ravel()
    d = len(zeros_expanded)
    out = np.empty((d, z.size), dtype=complex)
    prefix = np.ones(z.size, dtype=complex)
    for k, x in enumerate(zeros_expanded):
        xb = x.conjugate()
        out[k] = np.sqrt(1.0 - abs(x) ** 2) / (1.0 - xb * z) * prefix
        prefix = prefix * (x - z) / (1.0 - xb * z)
    return out


@dataclass(frozen=True)
class ModelSpace:
    """K_B with an orthonormal basis and the dense matrix of the compressed shift."""

    product: BlaschkeProduct
    dim: int
    basis_params: tuple          # expanded ordered zero list
    shift_matrix: np.ndarray
    nodes: int                   # quadrature node count that passed the Gram check
    gram_defect: float

    def basis_on(self, z):
        return _tm_basis_values(self.basis_params, z)

    def spectrum(self):
        """Zeros read off the triangular shift matrix (exact basis ordering)."""
        from .linalg import spectrum
        return spectrum(self.shift_matrix)

    def to_json_dict(self):
        t = self.shift_matrix
        return {
            "zeros": self.product.to_json_dict()["zeros"],
            "dim": self.dim,
            "shiftMatrix": [x for c in t.ravel() for x in (c.real, c.imag)],
            "nodes": self.nodes,
        }


def build_model_space(b, nodes=None, gram_tol=GRAM_TOL, node_cap=None, min_zero_gap=1e-8):
    """Build K_B for a finite nonconstant Blaschke product.

    Inner products use trapezoid quadrature on the unit circle; the node count
    doubles until the Gram matrix matches the identity to gram_tol.  Distinct
    zeros closer than min_zero_gap are rejected (merge them into a
    multiplicity); pipeline callers that certify through scale-normalized
    intertwiners may lower the gap deliberately.
    """
    if b.degree == 0:
        raise ValueError("model space of a constant product is trivial")
    zeros = b.zeros_expanded()
    # conditioning cliff: distinct zeros closer than the gap must be merged
    uniq = [lam for lam, _ in b.zeros]
    for i in range(len(uniq)):
        for j in range(i + 1, len(uniq)):
            gap = abs(uniq[i] - uniq[j])
            if 0 < gap < min_zero_gap:
                raise DegenerateZerosError(
                    f"zeros {uniq[i]} and {uniq[j]} are {gap:.2e} apart; merge multiplicities"
                )
    scale = grid_scale()
    m = int((nodes or NODE_START) * scale)
    cap = int((node_cap or NODE_CAP) * scale)
    d = len(zeros)
    while True:
        z = _circle(m)
        basis = _tm_basis_values(zeros, z)
        gram = basis @ basis.conj().T / m
        defect = float(np.abs(gram - np.eye(d)).max())
        if defect <= gram_tol:
            # t[i, j] = <z e_j, e_i>
            t = ((z * basis) @ basis.conj().T / m).T
            return ModelSpace(b, d, tuple(zeros), t, m, defect)
        if m >= cap:
            raise QuadratureError(
                f"Gram defect {defect:.2e} > {gram_tol:.1e} at the node cap {m}"
            )
        m *= 2


def _calculus_newton(ms, fn, dps=None):
    """Hermite interpolant of fn at the zeros of B, in Newton form."""
    from .diskfn import adaptive_dps
    nodes_with_mult = tuple(ms.product.zeros)
    dps = dps or adaptive_dps(nodes_with_mult)
    jets = []
    for lam, k in nodes_with_mult:
        if hasattr(fn, "jets_mp"):
            vals = fn.jets_mp(lam, k - 1, dps)
        else:
            vals = fn.jets(lam, k - 1)
        jets.append(vals)
    return hermite_newton(nodes_with_mult, jets, dps=dps)


def calculus(ms, fn, dps=None):
    """phi(T_B) where phi is given through its jets at the zeros of B.

    Returns the Hermite-interpolant evaluation h(T_B); for polynomial phi of
    degree < dim this equals direct matrix evaluation.
    """
    h = _calculus_newton(ms, fn, dps=dps)
    return h.eval_matrix(ms.shift_matrix)


def nehari_distance(fn, b, ms=None):
    """dist(phi, B H-infinity) = ||phi(T_B)|| (Nehari through the model space)."""
    ms = ms or build_model_space(b)
    return op_norm(calculus(ms, fn))


def u_w_matrix(b, w, ms_target=None, ms_source=None, tol=1e-10):
    """Matrix of the unitary U_w : K_{B o beta_w} -> K_B in the two TM bases.

    (U_w h)(z) = (1-|w|^2)^{1/2} / (1 - conj(w) z) * h(beta_w(z)).
    """
    ms_target = ms_target or build_model_space(b)
    bw = None
    if ms_source is None:
        from .diskfn import blaschke_compose
        bw = blaschke_compose(b, w)
        ms_source = build_model_space(bw)
    if ms_source.dim != ms_target.dim:
        raise ValueError("model space dimensions disagree")
    m = max(ms_target.nodes, ms_source.nodes)
    cap = int(NODE_CAP * grid_scale())
    wq = complex(w)
    while True:
        z = _circle(m)
        tgt = ms_target.basis_on(z)
        zz = (wq - z) / (1.0 - wq.conjugate() * z)
        src = ms_source.basis_on(zz)
        factor = np.sqrt(1.0 - abs(wq) ** 2) / (1.0 - wq.conjugate() * z)
        mapped = src * factor  # row k = U f_k sampled on the circle
        u = (mapped @ tgt.conj().T / m).T  # u[i, k] = <U f_k, e_i>
        defect = float(np.abs(u.conj().T @ u - np.eye(ms_source.dim)).max())
        if defect <= tol:
            return u
        if m >= cap:
            raise QuadratureError(f"U_w unitarity defect {defect:.2e} at node cap {m}")
        m *= 2


def inclusion_map(ms_small, ms_big, tol=1e-9):
    """Coordinates of K_{B1} inside K_B (B1 divides B): columns are the small basis.

    Returns E with E[i, k] = <f_k, e_i>; E is an isometry (E^H E = I) when the
    inclusion is exact, which is verified by quadrature refinement.
    """
    m = max(ms_small.nodes, ms_big.nodes)
    cap = int(NODE_CAP * grid_scale())
    while True:
        z = _circle(m)
        small = ms_small.basis_on(z)
        big = ms_big.basis_on(z)
        e = (small @ big.conj().T / m).T
        defect = float(np.abs(e.conj().T @ e - np.eye(ms_small.dim)).max())
        if defect <= tol:
            return e
        if m >= cap:
            raise QuadratureError(f"inclusion isometry defect {defect:.2e} at node cap {m}")
        m *= 2


@dataclass(frozen=True)
class Prop37Result:
    f: NewtonPoly
    achieved: float
    ok: bool
    interpolation_residual: float
    f_mp: object = None        # MpNewtonPoly carrying full-precision jets


def interpolate_prop37(c_budget, b, phi, g, w, ms=None, dps=None, check_tol=1e-8):
    """Solve the triangular interpolation step: f with g o beta_w - f phi in B H-infinity.

    Builds the lower-triangular binomial matrices of phi-jets per zero, inverts
    them against the (g o beta_w)-jets, realizes f as the Hermite interpolant,
    re-checks the derivative conditions, and reports dist(f, B H-infinity).
    """
    for lam, _ in b.zeros:
        if abs(lam.imag) > 1e-14 or not (0.0 < lam.real < 1.0):
            raise ValueError("interpolation step requires zeros in (0,1)")
    if not (0.0 < float(w) < 1.0):
        raise ValueError("w must be real in (0,1)")
    from .diskfn import adaptive_dps
    dps = dps or adaptive_dps(tuple(b.zeros))
    gw = ComposedWithMobius(g, w)
    nodes_with_mult = tuple(b.zeros)
    f_jets = []
    with mp.workdps(dps):
        for lam, k in nodes_with_mult:
            phi_jets = [mp.mpc(v) for v in _jets_of(phi, lam, k - 1, dps)]
            if phi_jets[0] == 0:
                raise ZeroDivisionError(f"phi vanishes at the zero {lam}")
            rhs = [mp.mpc(v) for v in gw.jets_mp(lam, k - 1, dps)]
            # forward substitution on phi_{lam n k} = binom(n,k) phi^{(n-k)}(lam)
            sol = []
            for n in range(k):
                acc = rhs[n]
                for j in range(n):
                    acc -= mp.binomial(n, j) * phi_jets[n - j] * sol[j]
                sol.append(acc / phi_jets[0])
            # keep full precision: float rounding here would be amplified by
            # the clustered-node divided differences
            f_jets.append(sol)
    from .diskfn import hermite_newton_mp
    f_mp = hermite_newton_mp(nodes_with_mult, f_jets, dps=dps)
    f = f_mp.to_newton_float()
    # re-check the derivative conditions (g o beta_w)^{(n)} = (f phi)^{(n)} at each zero
    res = 0.0
    with mp.workdps(dps):
        for lam, k in nodes_with_mult:
            a = f_mp.jets_mp(lam, k - 1, dps)
            bj = [mp.mpc(v) for v in _jets_of(phi, lam, k - 1, dps)]
            target = gw.jets_mp(lam, k - 1, dps)
            for n in range(k):
                prod = mp.fsum([mp.binomial(n, j) * a[j] * bj[n - j] for j in range(n + 1)])
                res = max(res, float(abs(prod - target[n])))
    ms = ms or build_model_space(b)
    achieved = op_norm(f.eval_matrix(ms.shift_matrix))
    ok = bool(achieved <= c_budget) and res <= check_tol
    return Prop37Result(f, achieved, ok, res, f_mp)


def _jets_of(fn, z, n, dps):
    if hasattr(fn, "jets_mp"):
        return fn.jets_mp(z, n, dps)
    return fn.jets(z, n)


def commutant_as_function(x, ms, tol=1e-8, cond_limit=1e12, dps=60):
    """Polynomial h of degree < dim with h(T_B) = X, for X in the commutant.

    Solves in the Krylov basis of a cyclic vector (first basis vector, random
    fallback); an mpmath solve backs up the double-precision path when the
    Krylov matrix is badly conditioned.
    """
    x = as_complex_matrix(x)
    t = ms.shift_matrix
    d = ms.dim
    comm = op_norm(x @ t - t @ x)
    scale = max(1.0, op_norm(x))
    if comm > tol * scale:
        raise ValueError(f"input does not commute with the shift: residual {comm:.2e}")

    rng = np.random.default_rng(d)
    candidates = [np.eye(d, dtype=complex)[:, 0]]
    candidates.append(rng.standard_normal(d) + 1j * rng.standard_normal(d))

    last_err = None
    for v in candidates:
        krylov = np.empty((d, d), dtype=complex)
        krylov[:, 0] = v
        for k in range(1, d):
            krylov[:, k] = t @ krylov[:, k - 1]
        rhs = x @ v
        if cond2(krylov) <= cond_limit:
            coeffs = np.linalg.solve(krylov, rhs)
        else:
            with mp.workdps(dps):
                a = mp.matrix([[mp.mpc(krylov[i, j]) for j in range(d)] for i in range(d)])
                bb = mp.matrix([mp.mpc(c) for c in rhs])
                try:
                    sol = mp.lu_solve(a, bb)
                except ZeroDivisionError as exc:
                    last_err = exc
                    continue
                coeffs = np.array([complex(sol[i]) for i in range(d)])
        h = DiskPolynomial(coeffs)
        resid = op_norm(h.eval_matrix(t) - x)
        if resid <= tol * scale:
            return h
        last_err = IllConditionedError(f"recovery residual {resid:.2e} exceeds {tol:.1e}")
    raise last_err or IllConditionedError("commutant recovery failed")
