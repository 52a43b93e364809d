"""Hot numeric kernels: Matern-5/2 ARD cross-covariance and batched EI.

Both exist in a numba @njit flavor and a pure-numpy flavor. The njit path is
used when numba imports cleanly unless CORRATTACK_NUMBA is set to 0/false/off,
in which case the numpy path is selected. benchmarks/bench_kernels.py times
the two against each other.
"""

import math
import os

import numpy as np
from scipy.special import ndtr

SQRT5 = math.sqrt(5.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
INV_SQRT_2 = 1.0 / math.sqrt(2.0)


def _numba_requested():
    flag = os.environ.get("CORRATTACK_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_requested()


def matern52_cross_numpy(za, zb, lengthscales, outputscale):
    """Cross-covariance matrix between feature rows za (n,d) and zb (m,d)."""
    da = za[:, None, :] / lengthscales
    db = zb[None, :, :] / lengthscales
    sq = np.sum((da - db) ** 2, axis=2)
    r = np.sqrt(sq)
    sr5 = SQRT5 * r
    return outputscale * (1.0 + sr5 + (5.0 / 3.0) * sq) * np.exp(-sr5)


def ei_batch_numpy(mean, variance, best):
    """Expected decrease below `best` for Normal(mean, variance), elementwise."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    sigma = np.sqrt(variance)
    out = np.maximum(best - mean, 0.0)
    pos = sigma > 0.0
    if np.any(pos):
        gamma = (best - mean[pos]) / sigma[pos]
        phi = INV_SQRT_2PI * np.exp(-0.5 * gamma * gamma)
        out[pos] = sigma[pos] * (gamma * ndtr(gamma) + phi)
    return np.maximum(out, 0.0)


if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True)
    def _matern52_cross_jit(za, zb, inv_ls, outputscale, out):
        n, d = za.shape
        m = zb.shape[0]
        for i in range(n):
            for j in range(m):
                sq = 0.0
                for t in range(d):
                    diff = (za[i, t] - zb[j, t]) * inv_ls[t]
                    sq += diff * diff
                r = math.sqrt(sq)
                sr5 = SQRT5 * r
                out[i, j] = outputscale * (1.0 + sr5 + (5.0 / 3.0) * sq) * math.exp(-sr5)

    def matern52_cross_numba(za, zb, lengthscales, outputscale):
        za = np.ascontiguousarray(za, dtype=np.float64)
        zb = np.ascontiguousarray(zb, dtype=np.float64)
        inv_ls = np.ascontiguousarray(1.0 / lengthscales, dtype=np.float64)
        out = np.empty((za.shape[0], zb.shape[0]), dtype=np.float64)
        _matern52_cross_jit(za, zb, inv_ls, float(outputscale), out)
        return out

    @njit(cache=True)
    def _ei_batch_jit(mean, variance, best, out):
        for i in range(mean.shape[0]):
            sigma = math.sqrt(variance[i])
            if sigma <= 0.0:
                v = best - mean[i]
                out[i] = v if v > 0.0 else 0.0
            else:
                gamma = (best - mean[i]) / sigma
                cdf = 0.5 * (1.0 + math.erf(gamma * INV_SQRT_2))
                pdf = INV_SQRT_2PI * math.exp(-0.5 * gamma * gamma)
                v = sigma * (gamma * cdf + pdf)
                out[i] = v if v > 0.0 else 0.0

    def ei_batch_numba(mean, variance, best):
        mean = np.ascontiguousarray(mean, dtype=np.float64)
        variance = np.ascontiguousarray(variance, dtype=np.float64)
        out = np.empty(mean.shape[0], dtype=np.float64)
        _ei_batch_jit(mean, variance, float(best), out)
        return out

    matern52_cross = matern52_cross_numba
    ei_batch = ei_batch_numba
else:
    matern52_cross_numba = None
    ei_batch_numba = None
    matern52_cross = matern52_cross_numpy
    ei_batch = ei_batch_numpy
