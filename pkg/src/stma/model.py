"""Full-model parameter container, initialization, and forward pass.

The forward honors the ablation switches on ModelConfig: either branch
can be dropped, either encoder stack bypassed (embeddings then flow
straight to fusion through the branch norm), the visual-semantic gate
replaced by concatenated branch poolings, and the fusion self-attention
skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .caption import CaptionParams, caption_encode, caption_param_table, init_caption_params, pad_mask
from .config import ModelConfig
from .errors import ConfigError
from .fusion import (
    FusionParams,
    classify_logits,
    fusion_param_table,
    init_fusion_params,
    mean_pool,
    pool_text,
    self_attention_fusion,
    visual_semantic_attention,
)
from .tensor import Tensor, concat, reshape, softmax
from .vision import VisionParams, init_vision_params, vision_encode, vision_param_table


@dataclass
class STMAParams:
    """All learnable parameters, grouped by component."""

    vision: VisionParams
    caption: CaptionParams
    fusion: FusionParams


def init_params(cfg: ModelConfig, seed: int) -> STMAParams:
    """Fresh parameters: N(0, 0.02) weights, unit norm gains, zero biases.

    One seeded stream consumed in a fixed group order keeps init
    bit-reproducible.
    """
    if cfg.vocab_size < 3:
        raise ConfigError("vocab_size must be set before initializing params")
    rng = np.random.default_rng(seed)
    d, d_ff = cfg.embed_dim, cfg.d_ff
    return STMAParams(
        vision=init_vision_params(cfg.image_hw, d, d_ff, cfg.num_heads,
                                  cfg.num_layers, rng, patch=cfg.patch_size,
                                  channels=cfg.channels),
        caption=init_caption_params(cfg.vocab_size, cfg.max_len, d, d_ff,
                                    cfg.num_heads, cfg.num_layers, rng),
        fusion=init_fusion_params(d, d_ff, cfg.num_heads, rng,
                                  text_pool_mode=cfg.text_pool_mode),
    )


def param_table(params: STMAParams) -> dict[str, Tensor]:
    """Stable name -> tensor map over every parameter (checkpoint schema)."""
    table = vision_param_table(params.vision)
    table.update(caption_param_table(params.caption))
    table.update(fusion_param_table(params.fusion))
    return table


def trainable_parameters(params: STMAParams, cfg: ModelConfig) -> dict[str, Tensor]:
    """The subset of the table actually engaged by cfg's switches (the
    optimizer must see gradients on everything it registers)."""
    table = param_table(params)
    engaged = {}
    for name, t in table.items():
        if name.startswith("vision."):
            if not cfg.use_vision_branch:
                continue
            if name.startswith("vision.layers.") and not cfg.use_vision_encoder:
                continue
        elif name.startswith("caption."):
            if not cfg.use_caption_branch:
                continue
            if name.startswith("caption.layers.") and not cfg.use_caption_encoder:
                continue
        elif name == "fusion.proj":
            if not cfg.use_visual_semantic:
                continue
        elif name.startswith("fusion.layer."):
            if not cfg.use_self_attention:
                continue
        engaged[name] = t
    return engaged


def forward_trace(image: Tensor | None, token_ids: list[int] | None,
                  cfg: ModelConfig, params: STMAParams):
    """Forward pass returning (probs, trace); trace exposes the tensors
    heatmap export and tests need (vision tokens, logits)."""
    if not (cfg.use_vision_branch or cfg.use_caption_branch):
        raise ConfigError("ablation removed both modality branches")
    eps = cfg.layer_norm_eps
    trace: dict[str, object] = {}

    img_feats = None
    if cfg.use_vision_branch:
        if image is None:
            raise ConfigError("vision branch enabled but sample has no image")
        img_feats = vision_encode(image, params.vision,
                                  use_encoder=cfg.use_vision_encoder, eps=eps)
        trace["vision_tokens"] = img_feats

    txt_feats = None
    text_valid = None
    if cfg.use_caption_branch:
        if token_ids is None:
            raise ConfigError("caption branch enabled but sample has no tokens")
        txt_feats = caption_encode(token_ids, params.caption,
                                   use_encoder=cfg.use_caption_encoder, eps=eps)
        text_valid = pad_mask(token_ids)
        trace["text_tokens"] = txt_feats

    fp = params.fusion
    pooled_valid = None
    if img_feats is not None and txt_feats is not None:
        if cfg.use_visual_semantic:
            fused = visual_semantic_attention(img_feats, txt_feats, fp,
                                              text_valid=text_valid)
        else:
            fused = concat([mean_pool(img_feats),
                            pool_text(txt_feats, fp.text_pool_mode, text_valid)],
                           axis=0)
    elif img_feats is not None:
        fused = img_feats
    else:
        fused = txt_feats
        pooled_valid = text_valid

    if cfg.use_self_attention:
        fused = self_attention_fusion(fused, fp, key_valid=pooled_valid)
    trace["fused"] = fused

    logits = reshape(classify_logits(fused, fp, valid=pooled_valid), (2,))
    probs = softmax(logits, axis=0)
    trace["logits"] = logits
    trace["probs"] = probs
    return probs, trace


def stma_forward(sample, cfg: ModelConfig, params: STMAParams) -> Tensor:
    """End-to-end forward on one sample -> [P(no-hate), P(hate)]."""
    probs, _ = forward_trace(getattr(sample, "image", None),
                             getattr(sample, "token_ids", None), cfg, params)
    return probs


def predict_label(sample, cfg: ModelConfig, params: STMAParams) -> int:
    return int(np.argmax(stma_forward(sample, cfg, params).data))
