"""Truncated Taylor-series arithmetic, generic over complex and mpmath scalars.

Series are plain lists [c0, c1, ..., cn] meaning f(z0 + h) = sum c_k h^k + O(h^{n+1}).
"""

import cmath

import mpmath as mp


def _is_mp(x):
    return isinstance(x, (mp.mpf, mp.mpc))


def _exp(x):
    return mp.exp(x) if _is_mp(x) else cmath.exp(x)


def _log(x):
    return mp.log(x) if _is_mp(x) else cmath.log(x)


def _conj(x):
    return mp.conj(x) if _is_mp(x) else complex(x).conjugate()


def _zero_like(x):
    return x * 0


def _pad(a, n, like=None):
    if len(a) >= n:
        return a[:n]
    zero = _zero_like(a[0] if a else like)
    return a + [zero] * (n - len(a))


def ser_add(a, b):
    n = max(len(a), len(b))
    a, b = _pad(a, n), _pad(b, n)
    return [x + y for x, y in zip(a, b)]


def ser_scale(a, c):
    return [c * x for x in a]


def ser_mul(a, b, n=None):
    if n is None:
        n = min(len(a), len(b))
    out = []
    for k in range(n):
        s = _zero_like(a[0] * b[0])
        for i in range(max(0, k - len(b) + 1), min(k + 1, len(a))):
            s = s + a[i] * b[k - i]
        out.append(s)
    return out


def ser_inv(a, n=None):
    """Reciprocal series; a[0] must be nonzero."""
    if n is None:
        n = len(a)
    inv0 = 1 / a[0]
    out = [inv0]
    for k in range(1, n):
        s = _zero_like(a[0])
        for i in range(1, min(k, len(a) - 1) + 1):
            s = s + a[i] * out[k - i]
        out.append(-inv0 * s)
    return out


def ser_div(a, b, n=None):
    if n is None:
        n = min(len(a), len(b))
    return ser_mul(_pad(a, n), ser_inv(_pad(b, n), n), n)


def ser_diff(a):
    return [a[k] * k for k in range(1, len(a))]


def ser_exp(a, n=None):
    """exp of a series, via E' = a' E."""
    if n is None:
        n = len(a)
    out = [_exp(a[0])]
    for k in range(1, n):
        s = _zero_like(a[0])
        for i in range(1, min(k, len(a) - 1) + 1):
            s = s + i * a[i] * out[k - i]
        out.append(s / k)
    return out


def ser_log(a, n=None):
    """Principal log of a series; a[0] must avoid the branch cut."""
    if n is None:
        n = len(a)
    out = [_log(a[0])]
    if n == 1:
        return out
    ap = _pad(ser_diff(a), n, like=a[0])
    quotient = ser_div(ap, _pad(a, n), n)
    for k in range(1, n):
        out.append(quotient[k - 1] / k)
    return out


def ser_pow(a, alpha, n=None):
    """Principal a^alpha via exp(alpha log a)."""
    if n is None:
        n = len(a)
    return ser_exp(ser_scale(ser_log(a, n), alpha), n)


def ser_compose(outer, inner, n=None):
    """outer(inner(h)); requires inner[0] == 0 (absorb the base point in outer)."""
    if n is None:
        n = min(len(outer), len(inner))
    if abs(complex(inner[0])) != 0.0:
        raise ValueError("ser_compose requires inner constant term 0")
    inner = _pad(inner, n)
    acc = [_zero_like(outer[0] + inner[0])] * n
    for c in reversed(_pad(outer, n)):
        acc = ser_mul(acc, inner, n)
        acc[0] = acc[0] + c
    return acc


def mobius_series(w, z0, n):
    """Taylor series of beta_w at z0, to order n (length n+1)."""
    wb = _conj(w)
    one = w * 0 + 1
    num = _pad([w - z0, -one], n + 1)
    den = _pad([one - wb * z0, -wb], n + 1)
    return ser_div(num, den, n + 1)


def jets_from_series(series):
    """Derivative values f^(k) = k! c_k from Taylor coefficients."""
    out, fact = [], 1
    for k, c in enumerate(series):
        out.append(c * fact)
        fact *= k + 1
    return out


def series_from_jets(jets):
    out, fact = [], 1
    for k, d in enumerate(jets):
        out.append(d / fact)
        fact *= k + 1
    return out
