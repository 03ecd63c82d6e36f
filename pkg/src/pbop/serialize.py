"""Portable JSON encodings for operators and workbench records.

Matrices serialize as {rows, cols, data} with data an interleaved
[re, im, re, im, ...] float64 list in row-major order; any binary sidecar
written from these arrays is little-endian float64.
"""

import json

import numpy as np


def matrix_to_json(m):
    m = np.asarray(m, dtype=complex)
    inter = np.empty(2 * m.size, dtype=float)
    inter[0::2] = m.real.ravel()
    inter[1::2] = m.imag.ravel()
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": inter.tolist()}


def matrix_from_json(d):
    data = np.asarray(d["data"], dtype=float)
    m = data[0::2] + 1j * data[1::2]
    return m.reshape(d["rows"], d["cols"])


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def dumps_canonical(obj):
    """Deterministic JSON bytes: sorted keys, fixed separators, repr floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
