"""Extended-precision reference implementations shared by the test modules."""

import mpmath
import numpy as np


def mp_filter(x, k, dps=50):
    """Straight transcription of the two recursions in extended precision."""
    with mpmath.workdps(dps):
        k = mpmath.mpf(k)
        xs = [mpmath.mpf(v) for v in x]
        p, q = xs[0], 1 - xs[0]
        for v in xs[1:]:
            p = (1 + k * (v - 1)) * p + v
            q = (1 + k * (-v)) * q + (1 - v)
        return p - q


def mp_central_difference(x, k, step=1e-6, dps=50):
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        gx = []
        for i in range(len(x)):
            up = [mpmath.mpf(v) for v in x]
            dn = list(up)
            up[i] += h
            dn[i] -= h
            gx.append((mp_filter(up, k, dps) - mp_filter(dn, k, dps)) / (2 * h))
        kk = mpmath.mpf(k)
        gk = (mp_filter(x, kk + h, dps) - mp_filter(x, kk - h, dps)) / (2 * h)
        return np.array([float(g) for g in gx]), float(gk)


def rel_err(a, b, floor=1e-12):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
