"""Combined attention fusion: visual-semantic gating, multimodal
self-attention, and the softmax head.

The caption sequence is pooled to a single d-vector, projected, and used
to gate every image token by element-wise multiplication. One encoder
layer then reweights the fused sequence before mean-pooled classification
into [P(no-hate), P(hate)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import EncoderLayerParams, encoder_layer
from .errors import ConfigError
from .tensor import Tensor, add, matmul, mul, narrow, randn, reshape, softmax, zeros


@dataclass
class FusionParams:
    text_pool_mode: str
    fusion_proj: Tensor           # (d, d)
    self_attn_layer: EncoderLayerParams
    cls_w: Tensor                 # (d, 2)
    cls_b: Tensor                 # (2,)

    def __post_init__(self):
        if self.text_pool_mode not in ("cls", "mean"):
            raise ConfigError(f"unknown text_pool_mode {self.text_pool_mode!r}")
        if self.cls_w.shape[1] != 2 or self.cls_b.shape != (2,):
            raise ConfigError("classifier head must produce exactly 2 logits")


def mean_pool(x: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Mean over rows as a (1, d) tensor; ``valid`` excludes rows (PAD)."""
    n = x.shape[0]
    if valid is None:
        w = np.full((1, n), 1.0 / n)
    else:
        valid = np.asarray(valid, dtype=bool)
        k = int(valid.sum())
        if k == 0:
            raise ConfigError("mean_pool with no valid rows")
        w = (valid.astype(np.float64) / k).reshape(1, n)
    return matmul(Tensor(w), x)


def pool_text(txt_feats: Tensor, mode: str,
              text_valid: np.ndarray | None = None) -> Tensor:
    """Summarize the caption sequence to (1, d): its CLS row, or the
    PAD-excluded row mean."""
    if mode == "cls":
        return narrow(txt_feats, 0, 0, 1)
    return mean_pool(txt_feats, valid=text_valid)


def visual_semantic_attention(img_feats: Tensor, txt_feats: Tensor,
                              p: FusionParams,
                              text_valid: np.ndarray | None = None) -> Tensor:
    """Gate every image token by the projected caption summary."""
    t = pool_text(txt_feats, p.text_pool_mode, text_valid)
    gate = reshape(matmul(t, p.fusion_proj), (p.fusion_proj.shape[1],))
    return mul(img_feats, gate)


def self_attention_fusion(fused: Tensor, p: FusionParams,
                          key_valid: np.ndarray | None = None,
                          return_weights: bool = False):
    """One encoder layer over the fused sequence."""
    return encoder_layer(fused, p.self_attn_layer, key_valid=key_valid,
                         return_weights=return_weights)


def classify_logits(features: Tensor, p: FusionParams,
                    valid: np.ndarray | None = None) -> Tensor:
    """Mean-pool the sequence and project to the two class logits (1, 2)."""
    pooled = mean_pool(features, valid=valid)
    return add(matmul(pooled, p.cls_w), p.cls_b)


def classify(features: Tensor, p: FusionParams,
             valid: np.ndarray | None = None) -> Tensor:
    """[P(no-hate), P(hate)]; the predicted label is the argmax."""
    logits = reshape(classify_logits(features, p, valid), (2,))
    return softmax(logits, axis=0)


def init_fusion_params(d: int, d_ff: int, num_heads: int,
                       rng: np.random.Generator, text_pool_mode: str = "cls",
                       std: float = 0.02) -> FusionParams:
    from .blocks import init_encoder_layer

    return FusionParams(
        text_pool_mode=text_pool_mode,
        fusion_proj=randn((d, d), rng, std, requires_grad=True),
        self_attn_layer=init_encoder_layer(d, d_ff, num_heads, rng, std),
        cls_w=randn((d, 2), rng, std, requires_grad=True),
        cls_b=zeros((2,), requires_grad=True),
    )


def fusion_param_table(p: FusionParams) -> dict[str, Tensor]:
    from .blocks import encoder_layer_param_table

    table = {"fusion.proj": p.fusion_proj}
    table.update(encoder_layer_param_table("fusion.layer", p.self_attn_layer))
    table["head.w"] = p.cls_w
    table["head.b"] = p.cls_b
    return table
