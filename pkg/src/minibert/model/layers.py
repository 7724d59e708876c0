"""Forward/backward pairs for the encoder's building blocks.

Every ``*_forward`` returns its output and whatever the matching
``*_backward`` needs. Scalars stay Python floats so float32 arrays are not
promoted to float64.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd)


def layer_norm_backward(dy: np.ndarray, cache, gain: np.ndarray):
    xhat, rstd = cache
    h = dy.shape[-1]
    dgain = (dy * xhat).reshape(-1, h).sum(axis=0)
    dbias = dy.reshape(-1, h).sum(axis=0)
    dxhat = dy * gain
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_forward(x: np.ndarray) -> np.ndarray:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (cdf + x * pdf)


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


def dropout_mask(rng: np.random.Generator | None, shape, rate: float, dtype) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is inactive."""
    if rng is None or rate == 0.0:
        return None
    keep = rng.random(shape, dtype=np.float64) >= rate
    return keep.astype(dtype) * (1.0 / (1.0 - rate))


def apply_mask(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return x if mask is None else x * mask


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over rows; returns (loss, d_logits, probabilities)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsumexp
    loss = float(-logp[np.arange(n), labels].mean())
    probs = np.exp(logp)
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return loss, d * (1.0 / n), probs
