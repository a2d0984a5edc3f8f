"""Hot loops for policy training: numba-jitted with a pure-numpy fallback.

Backend selection happens once at import. Set QSTEER_NO_NUMBA=1 to force the
numpy path (useful on hosts where the JIT is unavailable or for comparing the
two, see benchmarks/bench_kernels.py). Both variants stay importable so they
can be benchmarked against each other regardless of the active choice.
"""

from __future__ import annotations

import os

import numpy as np

_EPS = 1e-8


def _truthy(value: str | None) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes", "on")


def sgd_epoch_numpy(weights, g2, idx, val, indptr, rewards, sweights, order, lr, l2):
    """One AdaGrad epoch over CSR rows in the given order, in place."""
    for i in order:
        s, e = indptr[i], indptr[i + 1]
        ii = idx[s:e]
        vv = val[s:e]
        pred = float(weights[ii] @ vv)
        g = sweights[i] * (pred - rewards[i])
        gj = g * vv + l2 * weights[ii]
        np.add.at(g2, ii, gj * gj)
        np.subtract.at(weights, ii, lr * gj / np.sqrt(g2[ii] + _EPS))


def dot_rows_numpy(weights, idx, val, indptr):
    """Per-row dot products of a CSR matrix against a dense weight vector."""
    n = len(indptr) - 1
    out = np.zeros(n, dtype=np.float64)
    contrib = weights[idx] * val
    nonempty = indptr[:-1] < indptr[1:]
    if contrib.size:
        sums = np.add.reduceat(contrib, indptr[:-1][nonempty])
        out[nonempty] = sums
    return out


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

if HAS_NUMBA:

    @numba.njit(cache=True)
    def sgd_epoch_numba(weights, g2, idx, val, indptr, rewards, sweights, order, lr, l2):
        for k in range(order.shape[0]):
            i = order[k]
            s = indptr[i]
            e = indptr[i + 1]
            pred = 0.0
            for j in range(s, e):
                pred += weights[idx[j]] * val[j]
            g = sweights[i] * (pred - rewards[i])
            for j in range(s, e):
                c = idx[j]
                gj = g * val[j] + l2 * weights[c]
                g2[c] += gj * gj
                weights[c] -= lr * gj / np.sqrt(g2[c] + _EPS)

    @numba.njit(cache=True)
    def dot_rows_numba(weights, idx, val, indptr):
        n = indptr.shape[0] - 1
        out = np.zeros(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for j in range(indptr[i], indptr[i + 1]):
                acc += weights[idx[j]] * val[j]
            out[i] = acc
        return out

else:  # pragma: no cover
    sgd_epoch_numba = None
    dot_rows_numba = None

USE_NUMBA = HAS_NUMBA and not _truthy(os.environ.get("QSTEER_NO_NUMBA"))

if USE_NUMBA:
    sgd_epoch = sgd_epoch_numba
    dot_rows = dot_rows_numba
else:
    sgd_epoch = sgd_epoch_numpy
    dot_rows = dot_rows_numpy


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
