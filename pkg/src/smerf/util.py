"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np

# Bound on the logit used when feeding exposure-shifted features to the
# deferred network; keeps saturated accumulations finite.
LOGIT_CLAMP = 15.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y):
    """Derivative of sigmoid expressed in terms of its output y."""
    return y * (1.0 - y)


def logit_clamped(x, clamp=LOGIT_CLAMP):
    """Inverse sigmoid with the output clamped to [-clamp, clamp].

    Returns (value, grad) where grad is d(value)/dx, zero wherever the
    clamp is active.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = sigmoid(np.array(-clamp))
    hi = sigmoid(np.array(clamp))
    xc = np.clip(x, lo, hi)
    y = np.log(xc) - np.log1p(-xc)
    inside = (x > lo) & (x < hi)
    grad = np.where(inside, 1.0 / (xc * (1.0 - xc)), 0.0)
    return y, grad


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def psnr(a, b):
    """Peak signal-to-noise ratio of two [0, 1] images (dB)."""
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse <= 0:
        return float("inf")
    return -10.0 * np.log10(mse)


def scatter_rows(buf, idx, vals):
    """buf[idx[n]] += vals[n] for 2-D buf, duplicate indices accumulated."""
    n = buf.shape[0]
    for c in range(buf.shape[1]):
        buf[:, c] += np.bincount(idx, weights=vals[:, c], minlength=n)
