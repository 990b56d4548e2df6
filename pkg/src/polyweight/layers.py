"""Forward/backward pairs for the handful of ops the model uses.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
consumes the upstream gradient and that cache. Shapes broadcast over any
number of leading batch dimensions.
"""

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))  # python float: keeps float32 arrays float32


def truncated_normal(rng, shape, std, bound=2.0):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def layer_norm_forward(x, gamma, beta, eps=1e-12):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layer_norm_backward(dy, cache):
    xhat, rstd, gamma = cache
    d = xhat.shape[-1]
    dxhat = dy * gamma
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    dy2 = dy.reshape(-1, d)
    return dx, (dy2 * xhat.reshape(-1, d)).sum(axis=0), dy2.sum(axis=0)


def gelu_forward(x):
    # tanh approximation
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def dropout_forward(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def softmax(z, axis=-1):
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    """Log-softmax tolerant of -inf entries (as long as one entry is finite)."""
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_sigmoid(x):
    # log(sigmoid(x)) = -softplus(-x), stable for large |x|
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def _split_heads(x, num_heads):
    B, T, d = x.shape
    return x.reshape(B, T, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attention_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, num_heads, attn_bias=None):
    """Multi-head scaled dot-product self-attention on x of shape (B, T, d).

    ``attn_bias`` is added to the scores and broadcasts to (B, H, T, T);
    -inf entries exclude keys (padding).
    """
    d = x.shape[-1]
    scale = x.dtype.type(1.0 / np.sqrt(d // num_heads))
    q = _split_heads(x @ wq + bq, num_heads)
    k = _split_heads(x @ wk + bk, num_heads)
    v = _split_heads(x @ wv + bv, num_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if attn_bias is not None:
        scores = scores + attn_bias
    p = softmax(scores)
    ctx = _merge_heads(p @ v)
    out = ctx @ wo + bo
    return out, (x, q, k, v, p, ctx, scale, num_heads, wq, wk, wv, wo)


def attention_backward(dout, cache):
    x, q, k, v, p, ctx, scale, num_heads, wq, wk, wv, wo = cache
    d = x.shape[-1]
    dout2 = dout.reshape(-1, d)
    dwo = ctx.reshape(-1, d).T @ dout2
    dbo = dout2.sum(axis=0)
    dctx = _split_heads(dout @ wo.T, num_heads)
    dp = dctx @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ dctx
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    x2 = x.reshape(-1, d)
    grads = []
    dx = np.zeros_like(x)
    for dproj, w in ((dq, wq), (dk, wk), (dv, wv)):
        dm = _merge_heads(dproj)
        dx += dm @ w.T
        dm2 = dm.reshape(-1, d)
        grads += [x2.T @ dm2, dm2.sum(axis=0)]
    return dx, (*grads, dwo, dbo)
