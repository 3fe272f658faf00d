"""Pure-Python (numpy) implementations of the numerical kernels.

These are the reference versions; ``_kernels_c`` must agree with them to
rounding error. Every function takes and returns float64 C-contiguous arrays.
"""

from __future__ import annotations

import math

import numpy as np

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_SIGMOID = 2


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dense_forward(x, w, b, act):
    z = x @ w + b
    if act == ACT_RELU:
        return np.maximum(z, 0.0)
    if act == ACT_SIGMOID:
        return _sigmoid(z)
    return z


def dense_backward(x, w, out, gout, act):
    """Returns (dx, dw, db) for ``out = act(x @ w + b)``."""
    if act == ACT_RELU:
        gz = gout * (out > 0.0)
    elif act == ACT_SIGMOID:
        gz = gout * out * (1.0 - out)
    else:
        gz = gout
    return gz @ w.T, x.T @ gz, gz.sum(axis=0)


def softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def clip_rows(v, c):
    """Scale each row to L2 norm at most ``c``; returns (clipped, scales)."""
    norms = np.sqrt((v * v).sum(axis=1))
    scales = np.ones_like(norms)
    over = norms > c
    scales[over] = c / norms[over]
    return v * scales[:, None], scales


def log_a_int(q, sigma, alpha):
    """log of sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2-k)/(2 sigma^2)), integer a."""
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    lg_a = math.lgamma(alpha + 1)
    denom = 2.0 * sigma * sigma
    terms = [
        lg_a - math.lgamma(k + 1) - math.lgamma(alpha - k + 1)
        + k * log_q + (alpha - k) * log_1mq + (k * k - k) / denom
        for k in range(alpha + 1)
    ]
    top = max(terms)
    return top + math.log(math.fsum(math.exp(t - top) for t in terms))
