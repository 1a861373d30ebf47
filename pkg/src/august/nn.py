"""Small float64 building blocks with explicit backward passes.

Row-vector convention throughout: features are rows, ``y = x @ W``.
"""

import numpy as np

FLOAT = np.float64


def sigmoid(x):
    x = np.asarray(x, dtype=FLOAT)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


def softmax(z, mask=None):
    """Row softmax; ``mask`` (bool, True = keep) zeroes excluded entries."""
    z = np.asarray(z, dtype=FLOAT)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, dp):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def attention(xq, xkv, wq, wk, wv, wo, mask=None):
    """Single-head scaled dot-product attention with output projection.

    Returns ``(out, cache)``; ``mask[i, j]`` True lets query i see key j.
    """
    q, k, v = xq @ wq, xkv @ wk, xkv @ wv
    scale = 1.0 / np.sqrt(q.shape[1])
    a = softmax((q @ k.T) * scale, mask)
    c = a @ v
    return c @ wo, (xq, xkv, q, k, v, a, c, scale)


def attention_backward(dout, cache, wq, wk, wv, wo):
    """Gradients ``(dxq, dxkv, dwq, dwk, dwv, dwo)`` of :func:`attention`."""
    xq, xkv, q, k, v, a, c, scale = cache
    dwo = c.T @ dout
    dc = dout @ wo.T
    da = dc @ v.T
    dv = a.T @ dc
    ds = softmax_backward(a, da) * scale
    dq = ds @ k
    dk = ds.T @ q
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv, xq.T @ dq, xkv.T @ dk, xkv.T @ dv, dwo


def uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape).astype(FLOAT)


def glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return uniform(rng, shape or (fan_in, fan_out), lim)
