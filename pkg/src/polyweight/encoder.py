"""Character vocabulary and a small pre-LN transformer encoder.

Parameters live in a flat ``dict[str, np.ndarray]``. ``encode`` runs the
forward pass and returns a cache; ``encode_backward`` turns the gradient
of the hidden states into gradients for every encoder tensor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import layers
from .errors import PolyweightError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)


class Vocab:
    """Token to id map. Specials take ids 0-3, characters follow in sorted order."""

    def __init__(self, chars: Iterable[str]):
        chars = sorted(set(chars) - set(SPECIALS))
        if any(len(c) != 1 for c in chars):
            raise ValueError("vocab entries must be single characters")
        self.tokens = list(SPECIALS) + chars
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __contains__(self, ch):
        return ch in self.index

    def id(self, ch: str) -> int:
        return self.index.get(ch, UNK_ID)

    def ids(self, text: str) -> list[int]:
        return [self.index.get(ch, UNK_ID) for ch in text]

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


def build_vocab(samples) -> Vocab:
    chars = set()
    count = 0
    for s in samples:
        chars.update(s.sentence)
        count += 1
    if count == 0:
        raise PolyweightError("empty corpus")
    return Vocab(chars)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 2
    ff_size: int = 128
    max_positions: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError("hidden_size must be divisible by num_heads")
        if min(self.num_layers, self.hidden_size, self.num_heads, self.ff_size, self.max_positions) < 1:
            raise ValueError("encoder sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def layer_names(i: int) -> list[str]:
    p = f"enc.layer{i}."
    return [p + k for k in (
        "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
        "attn.wv", "attn.bv", "attn.wo", "attn.bo",
        "ln2.g", "ln2.b", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
    )]


def init_encoder(config: EncoderConfig, vocab_size: int, rng: np.random.Generator,
                 dtype=np.float32) -> dict[str, np.ndarray]:
    d, f = config.hidden_size, config.ff_size

    def tn(*shape):
        return layers.truncated_normal(rng, shape, 0.02).astype(dtype)

    params = {"enc.tok_emb": tn(vocab_size, d), "enc.pos_emb": tn(config.max_positions, d)}
    for i in range(config.num_layers):
        p = f"enc.layer{i}."
        params[p + "ln1.g"] = np.ones(d, dtype)
        params[p + "ln1.b"] = np.zeros(d, dtype)
        for k in "qkvo":
            params[p + f"attn.w{k}"] = tn(d, d)
            params[p + f"attn.b{k}"] = np.zeros(d, dtype)
        params[p + "ln2.g"] = np.ones(d, dtype)
        params[p + "ln2.b"] = np.zeros(d, dtype)
        params[p + "ff.w1"] = tn(d, f)
        params[p + "ff.b1"] = np.zeros(f, dtype)
        params[p + "ff.w2"] = tn(f, d)
        params[p + "ff.b2"] = np.zeros(d, dtype)
    return params


def encode(params, config: EncoderConfig, token_ids, key_mask=None, *,
           dropout_rng: np.random.Generator | None = None):
    """Run the encoder on a batch of token ids.

    ``token_ids`` is (B, T) or (T,); ``key_mask`` marks real (non-PAD)
    positions and defaults to all true. Dropout is applied only when a
    generator is passed. Returns ``(hidden, cache)`` with hidden (B, T, d).
    """
    ids = np.asarray(token_ids)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    B, T = ids.shape
    if T > config.max_positions:
        raise PolyweightError(f"sequence length {T} exceeds max_positions {config.max_positions}")
    vocab_size = params["enc.tok_emb"].shape[0]
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise PolyweightError("token id out of range")
    if key_mask is None:
        key_mask = np.ones((B, T), dtype=bool)
    else:
        key_mask = np.asarray(key_mask, dtype=bool).reshape(B, T)
    dtype = params["enc.tok_emb"].dtype
    attn_bias = np.where(key_mask, 0.0, -np.inf).astype(dtype)[:, None, None, :]
    rate = config.dropout_rate if dropout_rng is not None else 0.0

    x = params["enc.tok_emb"][ids] + params["enc.pos_emb"][:T][None]
    x, drop0 = layers.dropout_forward(x, rate, dropout_rng)
    caches = []
    for i in range(config.num_layers):
        p = f"enc.layer{i}."
        h1, c_ln1 = layers.layer_norm_forward(x, params[p + "ln1.g"], params[p + "ln1.b"])
        a, c_attn = layers.attention_forward(
            h1, *(params[p + f"attn.{k}"] for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")),
            num_heads=config.num_heads, attn_bias=attn_bias)
        a, drop_a = layers.dropout_forward(a, rate, dropout_rng)
        x = x + a
        h2, c_ln2 = layers.layer_norm_forward(x, params[p + "ln2.g"], params[p + "ln2.b"])
        u, c_fc1 = layers.linear_forward(h2, params[p + "ff.w1"], params[p + "ff.b1"])
        g, c_gelu = layers.gelu_forward(u)
        v, c_fc2 = layers.linear_forward(g, params[p + "ff.w2"], params[p + "ff.b2"])
        v, drop_v = layers.dropout_forward(v, rate, dropout_rng)
        x = x + v
        caches.append((c_ln1, c_attn, drop_a, c_ln2, c_fc1, c_gelu, c_fc2, drop_v))
    cache = (ids, drop0, caches, squeeze)
    return (x[0] if squeeze else x), cache


def encode_backward(dhidden, cache, params, config: EncoderConfig) -> dict[str, np.ndarray]:
    ids, drop0, caches, squeeze = cache
    dx = dhidden[None] if squeeze else dhidden
    grads = {}
    for i in reversed(range(config.num_layers)):
        p = f"enc.layer{i}."
        c_ln1, c_attn, drop_a, c_ln2, c_fc1, c_gelu, c_fc2, drop_v = caches[i]
        dv = layers.dropout_backward(dx, drop_v)
        dg, grads[p + "ff.w2"], grads[p + "ff.b2"] = layers.linear_backward(dv, c_fc2)
        du = layers.gelu_backward(dg, c_gelu)
        dh2, grads[p + "ff.w1"], grads[p + "ff.b1"] = layers.linear_backward(du, c_fc1)
        dln, grads[p + "ln2.g"], grads[p + "ln2.b"] = layers.layer_norm_backward(dh2, c_ln2)
        dx = dx + dln
        da = layers.dropout_backward(dx, drop_a)
        dh1, attn_grads = layers.attention_backward(da, c_attn)
        for k, gk in zip(("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"), attn_grads):
            grads[p + f"attn.{k}"] = gk
        dln, grads[p + "ln1.g"], grads[p + "ln1.b"] = layers.layer_norm_backward(dh1, c_ln1)
        dx = dx + dln
    dx = layers.dropout_backward(dx, drop0)
    T = ids.shape[1]
    vocab_size = params["enc.tok_emb"].shape[0]
    onehot = np.zeros((ids.size, vocab_size), dtype=dx.dtype)
    onehot[np.arange(ids.size), ids.reshape(-1)] = 1.0
    grads["enc.tok_emb"] = onehot.T @ dx.reshape(-1, dx.shape[-1])
    pos = np.zeros_like(params["enc.pos_emb"])
    pos[:T] = dx.sum(axis=0)
    grads["enc.pos_emb"] = pos
    return grads


def extract_target(hidden, target_position):
    """Hidden state of the target token. Positions 0 (CLS) and the last (SEP) are rejected."""
    length = hidden.shape[-2]
    if hidden.ndim == 2:
        if not 1 <= target_position < length - 1:
            raise PolyweightError(f"target position {target_position} out of range for length {length}")
        return hidden[target_position]
    pos = np.asarray(target_position)
    if pos.min() < 1 or pos.max() >= length - 1:
        raise PolyweightError("target position out of range")
    return hidden[np.arange(hidden.shape[0]), pos]


def extract_target_backward(de_t, target_position, hidden_shape, dtype):
    dh = np.zeros(hidden_shape, dtype=dtype)
    if len(hidden_shape) == 2:
        dh[target_position] = de_t
    else:
        dh[np.arange(hidden_shape[0]), np.asarray(target_position)] = de_t
    return dh
