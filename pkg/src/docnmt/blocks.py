"""Transformer building blocks shared by every architecture.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted names
(``"enc.layer0.self_attn.wq"``).  Each forward helper receives that dict and
the prefix of the block it should read.  Dropout is active only when a numpy
``Generator`` is passed as ``rng``.

Activations are batched: token arrays are ``[B, L]`` and hidden states
``[B, L, d_model]``.  Attention masks are boolean ``[B, Lq, Lk]`` arrays with
``True`` marking attendable keys.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PAD_ID = 0


class SequenceLengthError(ValueError):
    pass


@dataclass
class BlockConfig:
    vocab_size: int
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    d_ffn: int = 256
    dropout: float = 0.1
    max_positions: int = 160
    share_embeddings: bool = True
    tie_output: bool = False
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def full_scale(cls, vocab_size=32000):
        return cls(vocab_size=vocab_size, num_layers=6, d_model=512, num_heads=8, d_ffn=2048, dropout=0.1)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# masks


def padding_mask(tokens):
    """``[B, L]`` boolean array, true for real (non-pad) tokens."""
    return np.asarray(tokens) != PAD_ID


def attention_mask(query_tokens, key_tokens, causal=False):
    """Build a ``[B, Lq, Lk]`` mask from key padding and optional causality."""
    keys = padding_mask(key_tokens)
    B, Lq = np.asarray(query_tokens).shape
    mask = np.broadcast_to(keys[:, None, :], (B, Lq, keys.shape[1]))
    if causal:
        mask = mask & np.tril(np.ones((Lq, keys.shape[1]), dtype=bool))
    return np.ascontiguousarray(mask)


# ---------------------------------------------------------------------------
# initialisation


def _normal(rng, shape, std):
    return ad.parameter(rng.normal(0.0, std, size=shape))


def _zeros(shape):
    return ad.parameter(np.zeros(shape))


def init_linear(params, prefix, d_in, d_out, rng, std):
    params[f"{prefix}.w"] = _normal(rng, (d_in, d_out), std)
    params[f"{prefix}.b"] = _zeros((d_out,))


def init_layer_norm(params, prefix, d):
    params[f"{prefix}.gain"] = ad.parameter(np.ones(d))
    params[f"{prefix}.bias"] = _zeros((d,))


def init_attention(params, prefix, cfg, rng):
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{proj}", cfg.d_model, cfg.d_model, rng, cfg.init_std)


def init_feed_forward(params, prefix, cfg, rng):
    init_linear(params, f"{prefix}.fc1", cfg.d_model, cfg.d_ffn, rng, cfg.init_std)
    init_linear(params, f"{prefix}.fc2", cfg.d_ffn, cfg.d_model, rng, cfg.init_std)


def init_embeddings(params, prefix, cfg, rng, token_table=True):
    if token_table:
        params[f"{prefix}.tok"] = _normal(rng, (cfg.vocab_size, cfg.d_model), cfg.init_std)
    params[f"{prefix}.pos"] = _normal(rng, (cfg.max_positions, cfg.d_model), cfg.init_std)


def init_encoder(params, prefix, cfg, rng):
    init_embeddings(params, prefix, cfg, rng, token_table=not cfg.share_embeddings)
    for i in range(cfg.num_layers):
        lp = f"{prefix}.layer{i}"
        init_attention(params, f"{lp}.self_attn", cfg, rng)
        init_layer_norm(params, f"{lp}.ln1", cfg.d_model)
        init_feed_forward(params, f"{lp}.ffn", cfg, rng)
        init_layer_norm(params, f"{lp}.ln2", cfg.d_model)


def init_decoder(params, prefix, cfg, rng, cross=("cross",)):
    """Decoder stack with one cross-attention sublayer per name in ``cross``."""
    init_embeddings(params, prefix, cfg, rng, token_table=not cfg.share_embeddings)
    for i in range(cfg.num_layers):
        lp = f"{prefix}.layer{i}"
        init_attention(params, f"{lp}.self_attn", cfg, rng)
        init_layer_norm(params, f"{lp}.ln1", cfg.d_model)
        for name in cross:
            init_attention(params, f"{lp}.{name}", cfg, rng)
        init_layer_norm(params, f"{lp}.ln2", cfg.d_model)
        init_feed_forward(params, f"{lp}.ffn", cfg, rng)
        init_layer_norm(params, f"{lp}.ln3", cfg.d_model)


# ---------------------------------------------------------------------------
# forward pieces


def linear(x, params, prefix):
    return x @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


def token_table(params, prefix, cfg):
    return params["shared.tok"] if cfg.share_embeddings else params[f"{prefix}.tok"]


def embed(tokens, params, prefix, cfg, rng=None):
    """Token embedding plus learned positional embedding, then dropout."""
    tokens = np.asarray(tokens, dtype=np.int64)
    L = tokens.shape[-1]
    if L > cfg.max_positions:
        raise SequenceLengthError(f"sequence length {L} exceeds max_positions {cfg.max_positions}")
    pos = params[f"{prefix}.pos"]
    x = ad.embedding(token_table(params, prefix, cfg), tokens) + ad.embedding(pos, np.arange(L))
    return ad.dropout(x, cfg.dropout, rng)


def multi_head_attention(q, kv, mask, params, prefix, cfg, rng=None, return_weights=False):
    """Scaled dot-product attention over ``cfg.num_heads`` heads.

    ``q`` is ``[B, Lq, d]``, ``kv`` is ``[B, Lk, d]`` and ``mask`` a boolean
    ``[B, Lq, Lk]`` array (true = attendable).
    """
    mask = np.asarray(mask, dtype=bool)
    B, Lq, d = q.shape
    Lk = kv.shape[1]
    if kv.shape[-1] != d or d != cfg.d_model:
        raise ad.ShapeError(f"attention feature sizes {q.shape} / {kv.shape} do not match d_model {cfg.d_model}")
    if mask.shape != (B, Lq, Lk):
        raise ad.ShapeError(f"mask shape {mask.shape} does not match ({B}, {Lq}, {Lk})")
    if not mask.any(axis=-1).all():
        raise ValueError("no attendable keys")
    h = cfg.num_heads
    dk = d // h

    def split(x, L):
        return x.reshape(B, L, h, dk).transpose(0, 2, 1, 3)

    Q = split(linear(q, params, f"{prefix}.q"), Lq)
    K = split(linear(kv, params, f"{prefix}.k"), Lk)
    V = split(linear(kv, params, f"{prefix}.v"), Lk)
    scores = (Q @ K.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    scores = ad.masked_fill(scores, ~mask[:, None, :, :], -np.inf)
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.dropout(weights, cfg.dropout, rng) @ V
    out = linear(ctx.transpose(0, 2, 1, 3).reshape(B, Lq, d), params, f"{prefix}.o")
    if return_weights:
        return out, weights
    return out


def feed_forward(x, params, prefix):
    return linear(ad.relu(linear(x, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")


def _sublayer(x, y, params, ln, cfg, rng):
    # post-norm: LayerNorm(x + Dropout(y))
    return ad.layer_norm(x + ad.dropout(y, cfg.dropout, rng), params[f"{ln}.gain"], params[f"{ln}.bias"], cfg.ln_eps)


def encoder_layer(x, mask, params, prefix, cfg, rng=None):
    x = _sublayer(x, multi_head_attention(x, x, mask, params, f"{prefix}.self_attn", cfg, rng), params, f"{prefix}.ln1", cfg, rng)
    return _sublayer(x, feed_forward(x, params, f"{prefix}.ffn"), params, f"{prefix}.ln2", cfg, rng)


def decoder_layer(x, self_mask, memories, params, prefix, cfg, rng=None):
    """Causal self-attention, then cross-attention, then FFN.

    ``memories`` is a sequence of ``(name, memory, mask)``; with more than one
    entry the cross-attention outputs are summed element-wise before the
    shared residual + layer-norm.
    """
    x = _sublayer(x, multi_head_attention(x, x, self_mask, params, f"{prefix}.self_attn", cfg, rng), params, f"{prefix}.ln1", cfg, rng)
    cross = None
    for name, memory, mask in memories:
        y = multi_head_attention(x, memory, mask, params, f"{prefix}.{name}", cfg, rng)
        cross = y if cross is None else cross + y
    x = _sublayer(x, cross, params, f"{prefix}.ln2", cfg, rng)
    return _sublayer(x, feed_forward(x, params, f"{prefix}.ffn"), params, f"{prefix}.ln3", cfg, rng)


def encoder_stack(tokens, params, prefix, cfg, rng=None):
    tokens = np.asarray(tokens)
    mask = attention_mask(tokens, tokens)
    x = embed(tokens, params, prefix, cfg, rng)
    for i in range(cfg.num_layers):
        x = encoder_layer(x, mask, params, f"{prefix}.layer{i}", cfg, rng)
    return x


def decoder_stack(tokens, memories, params, prefix, cfg, rng=None):
    """Decoder over ``tokens`` (right-shifted, ``[B, T]``).

    ``memories`` holds ``(name, memory, key_valid)`` triples where
    ``key_valid`` is the ``[B, Lk]`` boolean padding mask of that memory.
    """
    tokens = np.asarray(tokens)
    B, T = tokens.shape
    self_mask = attention_mask(tokens, tokens, causal=True)
    expanded = []
    for name, memory, key_valid in memories:
        key_valid = np.asarray(key_valid, dtype=bool)
        expanded.append((name, memory, np.ascontiguousarray(np.broadcast_to(key_valid[:, None, :], (B, T, key_valid.shape[1])))))
    x = embed(tokens, params, prefix, cfg, rng)
    for i in range(cfg.num_layers):
        x = decoder_layer(x, self_mask, expanded, params, f"{prefix}.layer{i}", cfg, rng)
    return x
