"""mpmath dense-matrix helpers for the ill-conditioned pipeline legs.

The similarity chains at pipeline scale have condition numbers far beyond
double precision; the legs are re-assembled here in working precision so the
forward-direction intertwiners and their products are meaningful.
"""

import mpmath as mp
import numpy as np


def to_mp(a, dps=None):
    a = np.asarray(a, dtype=complex)
    if a.ndim == 1:
        a = a[:, None]
    return mp.matrix([[mp.mpc(a[i, j]) for j in range(a.shape[1])] for i in range(a.shape[0])])


def to_np(a):
    out = np.empty((a.rows, a.cols), dtype=complex)
    for i in range(a.rows):
        for j in range(a.cols):
            out[i, j] = complex(a[i, j])
    return out


def mp_eye(n):
    return mp.eye(n)


def mp_zeros(r, c):
    return mp.zeros(r, c)


def mp_norm2(a):
    """Spectral norm via float conversion after safe scaling."""
    x = to_np(a)
    scale = np.abs(x).max()
    if scale == 0 or not np.isfinite(scale):
        return float(scale) if scale == 0 else np.inf
    return float(np.linalg.norm(x / scale, 2) * scale)


def mp_inverse(a):
    return a ** -1


def mp_block(blocks):
    """Assemble a block matrix from a 2-d list of mp matrices."""
    rows = []
    total_c = sum(b.cols for b in blocks[0])
    for row in blocks:
        r = row[0].rows
        m = mp.zeros(r, total_c)
        c0 = 0
        for b in row:
            if b.rows != r:
                raise ValueError("ragged block row")
            for i in range(r):
                for j in range(b.cols):
                    m[i, c0 + j] = b[i, j]
            c0 += b.cols
        rows.append(m)
    out = mp.zeros(sum(r.rows for r in rows), total_c)
    r0 = 0
    for m in rows:
        for i in range(m.rows):
            for j in range(m.cols):
                out[r0 + i, j] = m[i, j]
        r0 += m.rows
    return out


def mp_blockdiag(blocks):
    n = sum(b.rows for b in blocks)
    c = sum(b.cols for b in blocks)
    out = mp.zeros(n, c)
    r0 = c0 = 0
    for b in blocks:
        for i in range(b.rows):
            for j in range(b.cols):
                out[r0 + i, c0 + j] = b[i, j]
        r0 += b.rows
        c0 += b.cols
    return out


def mp_hermitian_transpose(a):
    out = mp.zeros(a.cols, a.rows)
    for i in range(a.rows):
        for j in range(a.cols):
            out[j, i] = mp.conj(a[i, j])
    return out
