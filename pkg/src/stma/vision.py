"""Patch extraction, patch embedding, and the vision attention encoder.

An image is cut into non-overlapping PxP patches in row-major grid order,
each flattened channel-major and linearly projected (equivalent to a
stride-P convolution). A learnable summary token is prepended and
learnable positional embeddings are added before the encoder stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .blocks import EncoderLayerParams, encoder_stack
from .errors import ConfigError, DimensionError
from .tensor import Tensor, add, concat, gather_flat, layer_norm, matmul, ones, randn, zeros


@lru_cache(maxsize=32)
def _patch_indices(channels: int, height: int, width: int, patch: int) -> np.ndarray:
    """Flat gather indices: row p of the result holds patch p's pixels,
    channel-major within the patch."""
    idx = np.arange(channels * height * width, dtype=np.int64)
    idx = idx.reshape(channels, height // patch, patch, width // patch, patch)
    idx = idx.transpose(1, 3, 0, 2, 4)  # (gh, gw, c, p, p)
    n = (height // patch) * (width // patch)
    return np.ascontiguousarray(idx.reshape(n, channels * patch * patch))


def extract_patches(img: Tensor, patch: int = 16) -> Tensor:
    """(C, H, W) image -> (N, P²·C) patch matrix, N = (H/P)(W/P)."""
    if img.ndim != 3:
        raise DimensionError(f"expected a CxHxW image, got {img.shape}")
    c, h, w = img.shape
    if h % patch or w % patch:
        raise DimensionError(
            f"image extents {h}x{w} not divisible by patch size {patch}")
    idx = _patch_indices(c, h, w, patch)
    return gather_flat(img, idx, idx.shape)


def reassemble_patches(patches: np.ndarray, channels: int, height: int,
                       width: int, patch: int = 16) -> np.ndarray:
    """Inverse of extract_patches on raw arrays (pixel-exact)."""
    idx = _patch_indices(channels, height, width, patch).reshape(-1)
    out = np.empty(channels * height * width, dtype=patches.dtype)
    out[idx] = np.asarray(patches).reshape(-1)
    return out.reshape(channels, height, width)


@dataclass
class PatchEmbedParams:
    proj: Tensor        # (P²·C, d)
    cls_token: Tensor   # (1, d)
    pos_embed: Tensor   # (N+1, d)
    patch_size: int = 16
    channels: int = 3

    def __post_init__(self):
        if self.pos_embed.shape[0] < 2:
            raise ConfigError("positional table must cover CLS plus patches")


@dataclass
class VisionParams:
    patch: PatchEmbedParams
    layers: list[EncoderLayerParams]
    norm_gain: Tensor
    norm_bias: Tensor


def embed_patches(patches: Tensor, p: PatchEmbedParams) -> Tensor:
    """Project patches, prepend the summary token, add positions."""
    x = matmul(patches, p.proj)
    seq = concat([p.cls_token, x], axis=0)
    if p.pos_embed.shape[0] != seq.shape[0]:
        raise DimensionError(
            f"positional table rows {p.pos_embed.shape[0]} != "
            f"sequence length {seq.shape[0]}")
    return add(seq, p.pos_embed)


def vision_encode(img: Tensor, p: VisionParams, use_encoder: bool = True,
                  eps: float = 1e-5) -> Tensor:
    """Full vision branch; returns the (N+1, d) token sequence."""
    x = extract_patches(img, p.patch.patch_size)
    x = embed_patches(x, p.patch)
    if use_encoder:
        x = encoder_stack(x, p.layers)
    return layer_norm(x, p.norm_gain, p.norm_bias, eps=eps)


def init_vision_params(image_hw: tuple[int, int], d: int, d_ff: int,
                       num_heads: int, num_layers: int,
                       rng: np.random.Generator, patch: int = 16,
                       channels: int = 3, std: float = 0.02) -> VisionParams:
    from .blocks import init_encoder_layer

    h, w = image_hw
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    n = (h // patch) * (w // patch)
    return VisionParams(
        patch=PatchEmbedParams(
            proj=randn((patch * patch * channels, d), rng, std, requires_grad=True),
            cls_token=randn((1, d), rng, std, requires_grad=True),
            pos_embed=randn((n + 1, d), rng, std, requires_grad=True),
            patch_size=patch,
            channels=channels,
        ),
        layers=[init_encoder_layer(d, d_ff, num_heads, rng, std)
                for _ in range(num_layers)],
        norm_gain=ones((d,), requires_grad=True),
        norm_bias=zeros((d,), requires_grad=True),
    )


def vision_param_table(p: VisionParams) -> dict[str, Tensor]:
    from .blocks import encoder_layer_param_table

    table = {
        "vision.patch.proj": p.patch.proj,
        "vision.patch.cls": p.patch.cls_token,
        "vision.patch.pos": p.patch.pos_embed,
    }
    for i, layer in enumerate(p.layers):
        table.update(encoder_layer_param_table(f"vision.layers.{i}", layer))
    table["vision.norm.gain"] = p.norm_gain
    table["vision.norm.bias"] = p.norm_bias
    return table
