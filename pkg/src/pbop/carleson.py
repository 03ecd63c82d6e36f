"""Carleson-type block separation: tail thresholds, radius searches, and the
full induction producing Mobius parameters, unimodular constants, and
interpolating functions for a sequence of finite Blaschke products.

Quantifiers over the disk are certified in two layers: membership of zeros is
decided exactly, ring minima use the minimum-modulus principle (no zeros
inside a region puts the minimum on its boundary), and the remaining
inequalities are checked on structure-aware grids that cluster points around
every zero of every participating product, where the extrema live.
"""

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .diskfn import (
    BlaschkeProduct,
    ComposedWithMobius,
    MobiusMap,
    MpNewtonPoly,
    adaptive_dps,
    blaschke_compose,
    blaschke_eval,
    compose_mobius_jets,
    grid_scale,
    hermite_newton_mp,
    mobius_eval,
)
from .modelspace import build_model_space, interpolate_prop37


class SearchExhaustedError(RuntimeError):
    """A radius search ran out of room below 1."""


def blaschke_product_of(products):
    """Pointwise product of finite Blaschke products (zero lists concatenate)."""
    zeros = ()
    pref = 1.0 + 0j
    for b in products:
        zeros = zeros + b.zeros
        pref *= b.prefactor
    return BlaschkeProduct(zeros, pref / abs(pref))


def tail_threshold(b, eta, w_ceiling=1.0 - 1e-9, verify_points=32):
    """Smallest r with sum_lambda k (1 - |beta_w(lambda)|) <= eta for all real w >= r.

    Bisection on the suffix supremum of the tail sum, verified on a recorded
    w-grid above the returned radius.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    zeros = b.zeros

    def tail(w):
        m = MobiusMap(w)
        return sum(k * (1.0 - abs(mobius_eval(m, lam))) for lam, k in zeros)

    def suffix_ok(r):
        ws = np.linspace(r, w_ceiling, verify_points)
        return all(tail(w) <= eta for w in ws)

    if suffix_ok(0.0):
        return 0.0
    lo, hi = 0.0, w_ceiling
    if not suffix_ok(w_ceiling):
        raise SearchExhaustedError("tail sum exceeds eta arbitrarily close to 1")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if suffix_ok(mid):
            hi = mid
        else:
            lo = mid
    if not suffix_ok(hi):
        raise SearchExhaustedError("tail bisection failed to verify")
    return float(hi)


def _ring_angles(zeros, base_angular):
    """Angular samples: uniform plus geometric clusters at each zero argument.

    A zero at distance d from the boundary dents the modulus in an angular
    window of width ~d; uniform grids never see it, so each cluster scales with d.
    """
    angles = [np.linspace(0.0, 2.0 * np.pi, base_angular, endpoint=False)]
    for lam, _ in zeros:
        if lam == 0:
            continue
        d = max(1.0 - abs(lam), 1e-15)
        arg = math.atan2(lam.imag, lam.real)
        local = arg + d * np.concatenate([-np.geomspace(0.25, 64.0, 12), [0.0],
                                          np.geomspace(0.25, 64.0, 12)])
        angles.append(local)
    return np.unique(np.concatenate(angles) % (2.0 * np.pi))


def _ring_min(b, r, angles):
    return float(np.abs(blaschke_eval(b, r * np.exp(1j * angles))).min())


def annulus_radius(theta, gamma, angular=512, radial_step=1e-3):
    """Smallest certified a with |theta(z)| >= gamma for every z with a <= |z| < 1.

    Zeros are excluded exactly; off the zeros the annulus minimum sits on the
    inner ring (minimum modulus), evaluated on a structure-aware angle set.
    A verification ladder of rings between a and 1 is checked as well.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma in (0,1) required")
    if theta.degree == 0:
        return 0.0
    scale = grid_scale()
    angles = _ring_angles(theta.zeros, int(angular * scale))
    r_zero = max(abs(lam) for lam, _ in theta.zeros)

    def ok(a):
        if a <= r_zero:
            return False
        if _ring_min(theta, a, angles) < gamma:
            return False
        ladder = [1.0 - (1.0 - a) * 2.0 ** (-k) for k in range(1, 6)]
        return all(_ring_min(theta, r, angles) >= gamma for r in ladder)

    hi = 1.0 - (1.0 - r_zero) * 1e-6
    if not ok(hi):
        raise SearchExhaustedError("no annulus radius certified below 1")
    lo = r_zero
    # coarse pass on the declared radial grid first
    step = radial_step / scale
    grid_candidates = np.arange(math.ceil(r_zero / step) * step, 1.0 - step / 2, step)
    for a in grid_candidates:
        if ok(a):
            return float(a)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def _inner_min(b, w, a, angles):
    """min over |z| <= a of |B o beta_w|: zero inclusion is exact, then ring."""
    for lam, _ in b.zeros:
        if abs(mobius_eval(MobiusMap(w), lam)) <= a:
            return 0.0
    ring = a * np.exp(1j * angles)
    return float(np.abs(blaschke_eval(b, mobius_eval(MobiusMap(w), ring))).min())


def inner_radius(b, a, gamma, angular=256, w_ceiling=1.0 - 1e-9):
    """Threshold radius r with |B o beta_w| >= gamma on |z| <= a for the ladder w >= r.

    The subdisk minimum reduces to the ring |z| = a once the transported zeros
    beta_w(lambda) leave the subdisk (checked exactly); the ring is sampled
    with angle clusters matched to the transported zeros.
    """
    if b.degree == 0:
        return 0.0
    if not 0 < gamma < 1:
        raise ValueError("gamma in (0,1) required")
    scale = grid_scale()

    def passes(w):
        moved = blaschke_compose(b, w)
        angles = _ring_angles(moved.zeros, int(angular * scale))
        return _inner_min(b, w, a, angles) >= gamma

    m = 1
    last_fail = 0.0
    while True:
        w = 1.0 - 2.0 ** (-m)
        if w > w_ceiling:
            raise SearchExhaustedError("inner radius search exhausted near 1")
        if w > 0 and passes(w):
            checks = [1.0 - (1.0 - w) * 2.0 ** (-k) for k in range(1, 4)]
            if all(passes(c) for c in checks):
                break
        last_fail = max(last_fail, w)
        m += 1
    lo, hi = last_fail, w
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def certification_points(products, radial=64, angular=64, r_max=0.999):
    """Grid for disk-wide inequality checks: uniform polar plus local patches
    scaled to each zero's boundary distance (the extrema live there)."""
    scale = grid_scale()
    radial = int(radial * scale)
    angular = int(angular * scale)
    rr = np.linspace(0.0, r_max, radial)
    phases = np.exp(2j * np.pi * np.arange(angular) / angular)
    pts = [(rr[:, None] * phases[None, :]).ravel()]
    local_s = np.geomspace(0.125, 32.0, 9)
    local_phase = np.exp(2j * np.pi * np.arange(12) / 12)
    offsets = (local_s[:, None] * local_phase[None, :]).ravel()
    for b in products:
        for lam, _ in b.zeros:
            d = max(1.0 - abs(lam), 1e-15)
            patch = lam + d * offsets
            patch = patch[np.abs(patch) < 1.0 - 1e-15]
            pts.append(patch)
            # radial approaches toward the boundary behind the zero
            if lam != 0:
                u = lam / abs(lam)
                approach = 1.0 - (1.0 - abs(lam)) * np.geomspace(0.05, 1.0, 8)
                pts.append(u * approach)
    return np.concatenate(pts)


@dataclass(frozen=True)
class CarlesonBlock:
    index: int
    b: BlaschkeProduct
    w: float
    zeta: complex
    psi: MpNewtonPoly
    f: object                  # interpolant at the original zeros (NewtonPoly)
    achieved_dist: float
    r_tail: float
    annulus_a: float
    inner_r: float
    margin_37: float
    membership_residual: float

    def to_json_dict(self):
        return {
            "index": self.index,
            "w": self.w,
            "zeta": {"re": self.zeta.real, "im": self.zeta.imag},
            "degree": self.b.degree,
            "achievedDist": self.achieved_dist,
            "rTail": self.r_tail,
            "annulusA": self.annulus_a,
            "innerR": self.inner_r,
            "margin37": self.margin_37,
            "membershipResidual": self.membership_residual,
            "psi": self.psi.to_json_dict(),
        }


@dataclass(frozen=True)
class CarlesonSequence:
    blocks: tuple
    gamma_list: tuple
    delta: float               # truncated product of gammas
    delta_limit: float         # exp(-1), the closed-form limit
    c_budget: float
    margin_36: float
    grid: dict

    def theta(self):
        return blaschke_product_of([blaschke_compose(blk.b, blk.w) for blk in self.blocks])

    def to_json_dict(self):
        return {
            "blocks": [blk.to_json_dict() for blk in self.blocks],
            "gamma": list(self.gamma_list),
            "delta": self.delta,
            "deltaLimit": self.delta_limit,
            "budgetC": self.c_budget,
            "margin36": self.margin_36,
            "grid": self.grid,
            "truncated": True,
        }


def _membership_residual(g, psi, phi, b_composed, w, dps):
    """Max jet residual of g - psi * (phi o beta_w) at the zeros of B o beta_w."""
    worst = 0.0
    phi_w = ComposedWithMobius(phi, w)
    with mp.workdps(dps):
        for lam, k in b_composed.zeros:
            gj = g.jets_mp(lam, k - 1, dps)
            pj = psi.jets_mp(lam, k - 1, dps)
            fj = phi_w.jets_mp(lam, k - 1, dps)
            for n in range(k):
                prod = mp.fsum([mp.binomial(n, j) * pj[j] * fj[n - j] for j in range(n + 1)])
                worst = max(worst, float(abs(gj[n] - prod)))
    return worst


def build_carleson(c_budget, g, blocks, k_count, radial=64, angular=64,
                   w_ceiling=1.0 - 1e-9):
    """The four-case induction: per-block Mobius parameters with all radii
    recorded, per-step lower bounds on the running product, interpolation
    data, and the final truncated separation constant.

    blocks: list of (BlaschkeProduct, phi) with zeros in (0,1) and phi
    nonvanishing at them.
    """
    if k_count < 1 or k_count > len(blocks):
        raise ValueError("k_count out of range")
    gammas = [math.exp(-(2.0 ** (-n))) for n in range(1, k_count + 1)]

    out_blocks = []
    composed = []          # B_n o beta_{w_n} as BlaschkeProducts
    delta_running = 1.0
    margin_all = np.inf
    annulus_a = 0.0
    inner_r = 0.0
    for idx in range(k_count):
        b, phi = blocks[idx]
        eta = 2.0 ** (-(idx + 1))
        r_tail = tail_threshold(b, eta, w_ceiling=w_ceiling)
        lower = max(r_tail, inner_r)
        ms = build_model_space(b, min_zero_gap=0.0)
        dps = adaptive_dps(tuple(b.zeros))

        def extra_check(w, _idx=idx, _b=b):
            # re-verify the subdisk bound at the chosen w (the search threshold
            # does not imply every larger ladder point passes)
            if _idx == 0 or annulus_a == 0.0:
                return True
            moved = blaschke_compose(_b, w)
            angles = _ring_angles(moved.zeros, int(256 * grid_scale()))
            return _inner_min(_b, w, annulus_a, angles) >= gammas[_idx]

        w, prop = _choose_w(c_budget, b, phi, g, lower, ms, dps, w_ceiling, extra_check)
        bw = blaschke_compose(b, w)
        zeta = (bw.prefactor / b.prefactor).conjugate()
        psi, mem_res = _realize_psi(g, prop.f_mp, phi, b, bw, w, dps)
        composed.append(bw)
        delta_running *= gammas[idx]
        zgrid = certification_points(composed, radial, angular)
        margin = _step_margin(composed, zgrid, delta_running)
        margin_all = min(margin_all, margin)
        out_blocks.append(
            CarlesonBlock(idx + 1, b, float(w), zeta, psi, prop.f,
                          float(prop.achieved), float(r_tail), float(annulus_a),
                          float(inner_r), float(margin), float(mem_res))
        )
        if idx + 1 < k_count:
            theta_n = blaschke_product_of(composed)
            annulus_a = annulus_radius(theta_n, gammas[idx + 1])
            inner_r = inner_radius(blocks[idx + 1][0], annulus_a, gammas[idx + 1],
                                   w_ceiling=w_ceiling)

    zgrid = certification_points(composed, radial, angular)
    final_margin = _step_margin(composed, zgrid, delta_running)
    return CarlesonSequence(
        tuple(out_blocks), tuple(gammas), float(delta_running), math.exp(-1.0),
        float(c_budget), float(final_margin),
        {"radial": int(radial * grid_scale()), "angular": int(angular * grid_scale()),
         "points": int(zgrid.size), "structureAware": True},
    )


def _choose_w(c_budget, b, phi, g, lower, ms, dps, w_ceiling, extra_check):
    """Geometric ladder toward 1 until interpolation and the subdisk bound hold."""
    m = 1
    while True:
        w = 1.0 - 2.0 ** (-m)
        if w > w_ceiling:
            raise SearchExhaustedError("w ladder exhausted before interpolation succeeded")
        if w > 0 and w >= lower and extra_check(w):
            res = interpolate_prop37(c_budget, b, phi, g, w, ms=ms, dps=dps)
            if res.ok:
                return w, res
        m += 1


def _realize_psi(g, f_mp, phi, b, bw, w, dps):
    """psi = f o beta_w re-interpolated at the zeros of B o beta_w, plus the
    membership residual of g - psi (phi o beta_w) at those zeros."""
    nodes = []
    jets = []
    with mp.workdps(dps + 20):
        wm = mp.mpf(w)
        for (lam, k), (lam2, k2) in zip(b.zeros, bw.zeros):
            base = f_mp.jets_mp(lam, k - 1, dps + 20)
            node = (wm - mp.mpc(lam)) / (1 - wm * mp.mpc(lam))
            vals = compose_mobius_jets(base, wm, node, k - 1, use_mp=True)
            nodes.append((node, k))
            jets.append(vals)
    psi = hermite_newton_mp(nodes, jets, dps=dps + 20)
    mem = _membership_residual(g, psi, phi, bw, w, dps + 20)
    return psi, mem


def _step_margin(composed, zgrid, delta_n):
    """min over the grid of |theta_N| - delta_N inf_n |B_n o beta_{w_n}|."""
    mods = np.stack([np.abs(blaschke_eval(bw, zgrid)) for bw in composed])
    theta = mods.prod(axis=0)
    inf_part = mods.min(axis=0)
    return float((theta - delta_n * inf_part).min())
