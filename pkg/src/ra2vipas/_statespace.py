"""O(n) log marginal likelihood of a 1-D Matern-5/2 GP via Kalman filtering.

A Matern-5/2 process on the real line is the first component of a linear
SDE with a 3-dimensional state, so the evidence of sorted scalar inputs can
be accumulated one observation at a time. The result is exact (no
approximation beyond floating point) and is used to make hyperparameter
search on large 1-D datasets affordable.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _matern52_lml(x, y, noise, signal_var, lengthscale):
    lam = math.sqrt(5.0) / lengthscale
    kappa = signal_var * lam * lam / 3.0
    pinf = np.zeros((3, 3))
    pinf[0, 0] = signal_var
    pinf[1, 1] = kappa
    pinf[0, 2] = -kappa
    pinf[2, 0] = -kappa
    pinf[2, 2] = signal_var * lam**4

    # F + lam*I is nilpotent of order 3
    nil = np.zeros((3, 3))
    nil[0, 0] = lam
    nil[0, 1] = 1.0
    nil[1, 1] = lam
    nil[1, 2] = 1.0
    nil[2, 0] = -(lam**3)
    nil[2, 1] = -3.0 * lam * lam
    nil[2, 2] = -2.0 * lam
    nil2 = nil @ nil
    eye = np.eye(3)

    m = np.zeros(3)
    p = pinf.copy()
    total = 0.0
    log2pi = math.log(2.0 * math.pi)
    for j in range(x.shape[0]):
        if j > 0:
            dt = x[j] - x[j - 1]
            if dt > 0.0:
                a = math.exp(-lam * dt) * (eye + nil * dt + nil2 * (0.5 * dt * dt))
                m = a @ m
                p = a @ p @ a.T + (pinf - a @ pinf @ a.T)
        s = p[0, 0] + noise[j]
        v = y[j] - m[0]
        gain = p[:, 0] / s
        m = m + gain * v
        p = p - np.outer(gain, p[0, :])
        p = 0.5 * (p + p.T)
        total -= 0.5 * (log2pi + math.log(s) + v * v / s)
    return total


def matern52_lml_1d(x, y, noise, signal_var, lengthscale) -> float:
    """Evidence of ``y`` at scalar inputs ``x`` under a zero-mean Matern-5/2 GP.

    ``noise`` is the per-point noise variance (already including any floor).
    Inputs need not be sorted.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    order = np.argsort(x, kind="stable")
    noise = np.broadcast_to(np.asarray(noise, dtype=float), x.shape)
    return float(
        _matern52_lml(
            x[order],
            np.asarray(y, dtype=float).reshape(-1)[order],
            np.ascontiguousarray(noise[order]),
            float(signal_var),
            float(lengthscale),
        )
    )
