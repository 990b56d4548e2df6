"""Phoneme/POS prediction heads and the conditional weight layer.

The phoneme distribution is a weighted softmax

    p_i = w_i exp(z_i) / sum_j w_j exp(z_j),   w = mask * sigmoid(s)

where ``z`` are the phoneme logits, ``mask`` the candidate mask of the
target character and ``s`` the soft weights looked up from the target
character, its POS tag and their product. Everything here is evaluated
in log space so that masked entries are exactly -inf (probability 0).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .errors import SupportError

NUM_POS = 11
MASK_MODES = ("hard_mask", "no_mask")


@dataclass(frozen=True)
class HeadConfig:
    n: int
    d: int
    alpha_cross: int = 1
    alpha_char: int = 1
    alpha_pos: int = 0
    beta: float = 0.1
    num_pos: int = NUM_POS
    mask_mode: str = "hard_mask"
    soft_weights: bool = True  # False: w_c = w_h, the conditional layer is bypassed
    depth: int = 1

    def __post_init__(self):
        for a in (self.alpha_cross, self.alpha_char, self.alpha_pos):
            if a not in (0, 1):
                raise ValueError("alphas must be 0 or 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.num_pos != NUM_POS:
            raise ValueError("num_pos is fixed at 11")
        if self.n < 1 or self.d < 1 or self.depth < 1:
            raise ValueError("n, d and depth must be positive")

    @property
    def alphas(self):
        return (self.alpha_cross, self.alpha_char, self.alpha_pos)

    @property
    def needs_pos(self):
        return self.beta > 0 or (self.soft_weights and (self.alpha_cross or self.alpha_pos))

    def to_dict(self):
        return asdict(self)


def init_head(config: HeadConfig, num_chars: int, rng: np.random.Generator, dtype=np.float32):
    """Projections get truncated-normal init; the conditional tables start at zero,
    so the initial conditional weights are 0.5 on every candidate."""
    d, n, k = config.d, config.n, config.num_pos
    params = {}
    for prefix, out in (("ph", n), ("pos", k)):
        for j in range(config.depth - 1):
            params[f"head.{prefix}_hidden{j}.w"] = layers.truncated_normal(rng, (d, d), 0.02).astype(dtype)
            params[f"head.{prefix}_hidden{j}.b"] = np.zeros(d, dtype)
        params[f"head.w_{prefix}"] = layers.truncated_normal(rng, (d, out), 0.02).astype(dtype)
        params[f"head.b_{prefix}"] = np.zeros(out, dtype)
    params["head.e_cross"] = np.zeros((num_chars * k, n), dtype)
    params["head.e_char"] = np.zeros((num_chars, n), dtype)
    params["head.e_pos"] = np.zeros((k, n), dtype)
    params["head.bias"] = np.zeros(n, dtype)
    return params


def cross_index(char_id, pos_id, num_pos=NUM_POS):
    return np.asarray(char_id) * num_pos + np.asarray(pos_id)


def soft_weights(params, config: HeadConfig, char_id, pos_id):
    """Soft weight vector(s) for the given target context(s).

    ``char_id`` / ``pos_id`` may be scalars or equal-length arrays. Terms
    with a zero alpha are skipped entirely, so their ids may be -1.
    """
    w = np.broadcast_to(params["head.bias"], np.broadcast(np.asarray(char_id), np.asarray(pos_id)).shape
                        + params["head.bias"].shape).copy()
    if config.alpha_cross:
        w += params["head.e_cross"][cross_index(char_id, pos_id, config.num_pos)]
    if config.alpha_char:
        w += params["head.e_char"][char_id]
    if config.alpha_pos:
        w += params["head.e_pos"][pos_id]
    return w


def conditional_weights(w_s, w_h):
    w_s = np.asarray(w_s)
    w_h = np.asarray(w_h)
    if w_s.shape != w_h.shape:
        raise ValueError(f"length mismatch: soft weights {w_s.shape} vs mask {w_h.shape}")
    return w_h * layers.sigmoid(w_s)


def weighted_log_softmax(logits, log_weights):
    z = logits + log_weights
    if np.any(np.all(np.isneginf(z), axis=-1)):
        raise SupportError("empty candidate support")
    return layers.log_softmax(z)


def weighted_softmax(logits, w_c):
    w_c = np.asarray(w_c, dtype=np.result_type(logits, np.float32))
    if np.any(np.all(w_c <= 0, axis=-1)):
        raise SupportError("empty candidate support")
    with np.errstate(divide="ignore"):
        log_w = np.where(w_c > 0, np.log(np.where(w_c > 0, w_c, 1)), -np.inf)
    return np.exp(weighted_log_softmax(logits, log_w))


def phoneme_loss(log_probs, gold):
    """Cross-entropy from log-probabilities; gold outside the support is an error."""
    log_probs = np.asarray(log_probs)
    gold = np.asarray(gold)
    picked = np.take_along_axis(log_probs, gold[..., None], axis=-1)[..., 0] if log_probs.ndim > 1 \
        else log_probs[gold]
    if np.any(np.isneginf(picked)):
        raise SupportError("gold phoneme outside candidate support")
    return -picked


def pos_logits(params, e_t, depth=1):
    return _mlp_forward(params, "pos", e_t, depth)[0]


def pos_loss(pos_probs, gold):
    pos_probs = np.asarray(pos_probs)
    return -np.log(np.take_along_axis(pos_probs, np.asarray(gold)[..., None], axis=-1)[..., 0]
                   if pos_probs.ndim > 1 else pos_probs[gold])


def total_loss(l_ph, l_pos, beta):
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return l_ph + beta * l_pos


def _mlp_forward(params, prefix, x, depth):
    caches = []
    for j in range(depth - 1):
        u, c_lin = layers.linear_forward(x, params[f"head.{prefix}_hidden{j}.w"], params[f"head.{prefix}_hidden{j}.b"])
        x, c_act = layers.gelu_forward(u)
        caches.append((c_lin, c_act))
    out, c_out = layers.linear_forward(x, params[f"head.w_{prefix}"], params[f"head.b_{prefix}"])
    return out, (caches, c_out)


def _mlp_backward(dout, cache, prefix, grads):
    caches, c_out = cache
    dx, grads[f"head.w_{prefix}"], grads[f"head.b_{prefix}"] = layers.linear_backward(dout, c_out)
    for j in reversed(range(len(caches))):
        c_lin, c_act = caches[j]
        du = layers.gelu_backward(dx, c_act)
        dx, grads[f"head.{prefix}_hidden{j}.w"], grads[f"head.{prefix}_hidden{j}.b"] = \
            layers.linear_backward(du, c_lin)
    return dx


def log_conditional_weights(params, config: HeadConfig, char_id, pos_id, candidate_mask):
    """log w_c for a batch; -inf off the support. Also returns w_s (None when bypassed)."""
    mask = np.ones_like(candidate_mask) if config.mask_mode == "no_mask" else candidate_mask
    with np.errstate(divide="ignore"):
        log_mask = np.log(mask).astype(params["head.bias"].dtype)
    char_id = np.asarray(char_id)
    fallback = char_id < 0
    if not config.soft_weights:
        return log_mask, None
    w_s = soft_weights(params, config, np.where(fallback, 0, char_id), np.where(np.asarray(pos_id) < 0, 0, pos_id))
    log_w = log_mask + layers.log_sigmoid(w_s)
    if fallback.any():
        # unrestricted fallback for characters the layer has never seen
        log_w[fallback] = 0.0
    return log_w, w_s


def head_forward(params, config: HeadConfig, e_t, char_id, pos_id, candidate_mask):
    """Batched head evaluation. Returns (log_p_ph, pos_logits, cache)."""
    ph_logits, c_ph = _mlp_forward(params, "ph", e_t, config.depth)
    p_logits, c_pos = _mlp_forward(params, "pos", e_t, config.depth)
    log_w, w_s = log_conditional_weights(params, config, char_id, pos_id, candidate_mask)
    log_p = weighted_log_softmax(ph_logits, log_w)
    return log_p, p_logits, (c_ph, c_pos, w_s, log_w, np.asarray(char_id), np.asarray(pos_id))


def head_loss_backward(params, config: HeadConfig, log_p, p_logits, cache, phoneme_id, pos_id):
    """Mean total loss over the batch and gradients w.r.t. head params and e_t."""
    c_ph, c_pos, w_s, log_w, char_id, ctx_pos = cache
    B = log_p.shape[0]
    rows = np.arange(B)
    l_ph = phoneme_loss(log_p, phoneme_id)
    grads = {}
    dz = np.exp(log_p)
    dz[rows, phoneme_id] -= 1.0
    dz /= B
    de = _mlp_backward(dz, c_ph, "ph", grads)

    if config.beta > 0:
        log_q = layers.log_softmax(p_logits)
        l_pos = -log_q[rows, pos_id]
        dq = np.exp(log_q)
        dq[rows, pos_id] -= 1.0
        dq *= config.beta / B
    else:
        l_pos = np.zeros(B, dtype=log_p.dtype)
        if np.all(pos_id >= 0):
            l_pos = -layers.log_softmax(p_logits)[rows, pos_id]
        dq = np.zeros_like(p_logits)
    de = de + _mlp_backward(dq, c_pos, "pos", grads)

    for name in ("head.e_cross", "head.e_char", "head.e_pos", "head.bias"):
        grads[name] = np.zeros_like(params[name])
    if w_s is not None:
        # d log sigmoid(s) / ds = 1 - sigmoid(s), and only where log w_c is finite
        ds = dz * (1.0 - layers.sigmoid(w_s))
        ds[~np.isfinite(log_w)] = 0.0
        keep = char_id >= 0
        ds = ds * keep[:, None]
        grads["head.bias"] = ds.sum(axis=0)
        cid = np.where(keep, char_id, 0)
        pid = np.where(ctx_pos < 0, 0, ctx_pos)
        if config.alpha_cross:
            np.add.at(grads["head.e_cross"], cross_index(cid, pid, config.num_pos), ds)
        if config.alpha_char:
            np.add.at(grads["head.e_char"], cid, ds)
        if config.alpha_pos:
            np.add.at(grads["head.e_pos"], pid, ds)
    loss = total_loss(l_ph, l_pos, config.beta)
    return float(loss.mean()), l_ph, l_pos, grads, de
