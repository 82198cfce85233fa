"""Gradient-weighted activation heatmaps over the vision token grid.

The target layer is the vision encoder's output tokens (rows 1..N).
Backward runs from the predicted-class logit; per-channel weights are the
token-averaged gradients, the map is relu of the weighted feature sum per
token, min-max normalized and nearest-neighbor upsampled to image size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, StmaError
from .images import resize_nearest, write_pgm, write_ppm
from .model import STMAParams, forward_trace
from .tensor import GradGraph, narrow, sum_all


@dataclass
class HeatmapResult:
    heat: np.ndarray          # (H, W) in [0, 1]
    grid: np.ndarray          # (g, g) token-level map in [0, 1]
    predicted: int
    probs: np.ndarray


def gradcam_heatmap(sample, cfg: ModelConfig, params: STMAParams) -> HeatmapResult:
    if not cfg.use_vision_branch:
        raise StmaError("heatmaps need the vision branch enabled")
    with GradGraph() as graph:
        probs, trace = forward_trace(sample.image, sample.token_ids, cfg, params)
        predicted = int(np.argmax(probs.data))
        target = sum_all(narrow(trace["logits"], 0, predicted, 1))
        graph.backward(target)

    feats = trace["vision_tokens"]
    if feats.grad is None:
        raise StmaError("no gradient reached the vision tokens")
    token_feats = feats.data[1:]     # drop the summary token
    token_grads = feats.grad[1:]
    weights = token_grads.mean(axis=0)                   # (d,)
    cam = np.maximum(token_feats @ weights, 0.0)         # (N,)

    n = cam.shape[0]
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise DimensionError(f"token count {n} does not form a square grid")
    grid = cam.reshape(side, side)
    span = grid.max() - grid.min()
    grid = (grid - grid.min()) / span if span > 0 else np.zeros_like(grid)

    h, w = sample.image.shape[1:]
    heat = resize_nearest(grid[None, :, :], (h, w))[0]
    return HeatmapResult(heat=heat, grid=grid, predicted=predicted,
                         probs=probs.data.copy())


def write_heatmap_files(result: HeatmapResult, image_01: np.ndarray,
                        out_path) -> tuple[str, str]:
    """Write the grayscale PGM heatmap plus a side-by-side original/overlay
    PPM next to it. ``image_01`` is the (3, H, W) image in [0, 1]."""
    out_path = str(out_path)
    heat8 = np.round(result.heat * 255.0).astype(np.uint8)
    write_pgm(out_path, heat8)

    base = np.clip(image_01, 0.0, 1.0)
    overlay = base.copy()
    overlay[0] = np.clip(0.5 * base[0] + 0.5 * result.heat, 0.0, 1.0)
    overlay[1] = 0.5 * base[1]
    overlay[2] = 0.5 * base[2]
    side_by_side = np.concatenate([base, overlay], axis=2)
    overlay_path = out_path.rsplit(".", 1)[0] + ".overlay.ppm"
    write_ppm(overlay_path, np.round(side_by_side * 255.0).astype(np.uint8))
    return out_path, overlay_path
