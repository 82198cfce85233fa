"""Multi-head self-attention, GeLU MLP, and pre-norm residual encoder layers.

Both modality branches and the fusion block are assembled from these.
Layer normalization comes before each sublayer with residual connections
around it; attention is scaled dot-product over h parallel subspaces of
dimension d/h. Q/K/V/O projections carry no bias; the MLP does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import (
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    matmul,
    narrow,
    ones,
    randn,
    scale,
    softmax,
    transpose,
    zeros,
)

MASKED_LOGIT = -1e9


@dataclass
class AttentionParams:
    """Projection weights for one multi-head self-attention block."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    num_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k),
                        ("w_v", self.w_v), ("w_o", self.w_o)):
            if w.shape != (d, d):
                raise ConfigError(f"{name} must be {d}x{d}, got {w.shape}")
        if self.num_heads < 1 or d % self.num_heads != 0:
            raise ConfigError(
                f"model dim {d} not divisible by {self.num_heads} heads")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads


@dataclass
class EncoderLayerParams:
    """One pre-norm encoder layer: attention + MLP with their norms."""

    attn: AttentionParams
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def __post_init__(self):
        d = self.attn.dim
        d_ff = self.mlp_w1.shape[1]
        if d_ff < d:
            raise ConfigError(f"mlp hidden dim {d_ff} smaller than model dim {d}")
        if self.mlp_w1.shape != (d, d_ff) or self.mlp_w2.shape != (d_ff, d):
            raise ConfigError("mlp weight shapes inconsistent with model dim")


def key_mask_tensor(key_valid: np.ndarray) -> Tensor:
    """Additive logits mask: 0 on valid key positions, MASKED_LOGIT on the
    rest. Broadcasts per-key over every query row."""
    return Tensor(np.where(np.asarray(key_valid, dtype=bool), 0.0, MASKED_LOGIT))


def multi_head_self_attention(x: Tensor, p: AttentionParams,
                              key_valid: np.ndarray | None = None,
                              return_weights: bool = False):
    """softmax(QKᵀ/√d_h)V per head, heads concatenated and projected.

    ``key_valid``, when given, marks positions no query may attend to
    (their logits get MASKED_LOGIT before the softmax).
    """
    q = matmul(x, p.w_q)
    k = matmul(x, p.w_k)
    v = matmul(x, p.w_v)
    dh = p.head_dim
    inv_sqrt = 1.0 / math.sqrt(dh)
    mask = key_mask_tensor(key_valid) if key_valid is not None else None

    heads = []
    weights = []
    for h in range(p.num_heads):
        qh = narrow(q, 1, h * dh, dh)
        kh = narrow(k, 1, h * dh, dh)
        vh = narrow(v, 1, h * dh, dh)
        logits = scale(matmul(qh, transpose(kh)), inv_sqrt)
        if mask is not None:
            logits = add(logits, mask)
        attn = softmax(logits, axis=1)
        weights.append(attn)
        heads.append(matmul(attn, vh))
    cat = heads[0] if len(heads) == 1 else concat(heads, axis=1)
    out = matmul(cat, p.w_o)
    return (out, weights) if return_weights else out


def mlp_block(x: Tensor, p: EncoderLayerParams) -> Tensor:
    """Position-wise feed-forward: one hidden GeLU layer, one output layer."""
    hidden = gelu(add(matmul(x, p.mlp_w1), p.mlp_b1))
    return add(matmul(hidden, p.mlp_w2), p.mlp_b2)


def encoder_layer(x: Tensor, p: EncoderLayerParams,
                  key_valid: np.ndarray | None = None,
                  return_weights: bool = False):
    """Pre-norm residual layer: x + MSA(LN(x)), then x + MLP(LN(x))."""
    attn_out = multi_head_self_attention(
        layer_norm(x, p.ln1_gain, p.ln1_bias), p.attn,
        key_valid=key_valid, return_weights=return_weights)
    if return_weights:
        attn_out, weights = attn_out
    x = add(x, attn_out)
    x = add(x, mlp_block(layer_norm(x, p.ln2_gain, p.ln2_bias), p))
    return (x, weights) if return_weights else x


def encoder_stack(x: Tensor, layers: list[EncoderLayerParams],
                  key_valid: np.ndarray | None = None) -> Tensor:
    if not layers:
        raise ConfigError("encoder_stack needs at least one layer")
    for layer in layers:
        x = encoder_layer(x, layer, key_valid=key_valid)
    return x


def init_attention_params(d: int, num_heads: int, rng: np.random.Generator,
                          std: float = 0.02) -> AttentionParams:
    return AttentionParams(
        w_q=randn((d, d), rng, std, requires_grad=True),
        w_k=randn((d, d), rng, std, requires_grad=True),
        w_v=randn((d, d), rng, std, requires_grad=True),
        w_o=randn((d, d), rng, std, requires_grad=True),
        num_heads=num_heads,
    )


def init_encoder_layer(d: int, d_ff: int, num_heads: int,
                       rng: np.random.Generator, std: float = 0.02) -> EncoderLayerParams:
    return EncoderLayerParams(
        attn=init_attention_params(d, num_heads, rng, std),
        mlp_w1=randn((d, d_ff), rng, std, requires_grad=True),
        mlp_b1=zeros((d_ff,), requires_grad=True),
        mlp_w2=randn((d_ff, d), rng, std, requires_grad=True),
        mlp_b2=zeros((d,), requires_grad=True),
        ln1_gain=ones((d,), requires_grad=True),
        ln1_bias=zeros((d,), requires_grad=True),
        ln2_gain=ones((d,), requires_grad=True),
        ln2_bias=zeros((d,), requires_grad=True),
    )


def zero_encoder_layer(d: int, d_ff: int, num_heads: int) -> EncoderLayerParams:
    """All-zero weights: the residual path makes this layer the identity."""
    rng = np.random.default_rng(0)
    layer = init_encoder_layer(d, d_ff, num_heads, rng, std=0.0)
    return layer


def attention_param_table(prefix: str, p: AttentionParams) -> dict[str, Tensor]:
    return {
        f"{prefix}.w_q": p.w_q,
        f"{prefix}.w_k": p.w_k,
        f"{prefix}.w_v": p.w_v,
        f"{prefix}.w_o": p.w_o,
    }


def encoder_layer_param_table(prefix: str, p: EncoderLayerParams) -> dict[str, Tensor]:
    table = attention_param_table(f"{prefix}.attn", p.attn)
    table.update({
        f"{prefix}.mlp.w1": p.mlp_w1,
        f"{prefix}.mlp.b1": p.mlp_b1,
        f"{prefix}.mlp.w2": p.mlp_w2,
        f"{prefix}.mlp.b2": p.mlp_b2,
        f"{prefix}.ln1.gain": p.ln1_gain,
        f"{prefix}.ln1.bias": p.ln1_bias,
        f"{prefix}.ln2.gain": p.ln2_gain,
        f"{prefix}.ln2.bias": p.ln2_bias,
    })
    return table
