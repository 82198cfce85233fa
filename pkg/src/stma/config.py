"""Model configuration and ablation switches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum

from .errors import ConfigError


class AblationMode(str, Enum):
    """The seven trained variants of the ablation protocol."""

    FULL = "full"
    TEXTUAL_ONLY = "textual_only"
    VISUAL_ONLY = "visual_only"
    NO_VISUAL_SEMANTIC = "no_visual_semantic"
    NO_SELF_ATTENTION = "no_self_attention"
    NO_VISION_ENCODER = "no_vision_encoder"
    NO_CAPTION_ENCODER = "no_caption_encoder"


# Table order for the emitted ablation report: unimodal rows first,
# component removals, proposed (full) model last.
ABLATION_TABLE_ORDER = [
    AblationMode.TEXTUAL_ONLY,
    AblationMode.VISUAL_ONLY,
    AblationMode.NO_VISUAL_SEMANTIC,
    AblationMode.NO_SELF_ATTENTION,
    AblationMode.NO_VISION_ENCODER,
    AblationMode.NO_CAPTION_ENCODER,
    AblationMode.FULL,
]


@dataclass
class ModelConfig:
    """Every architectural dimension plus the ablation switches.

    The boolean switches are what the forward pass consults; an
    AblationMode is just a named combination of them (see for_mode).
    """

    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 4
    mlp_ratio: int = 4
    patch_size: int = 16
    channels: int = 3
    image_hw: tuple[int, int] = (256, 256)
    vocab_size: int = 0
    max_len: int = 32
    text_pool_mode: str = "cls"
    layer_norm_eps: float = 1e-5

    use_vision_branch: bool = True
    use_caption_branch: bool = True
    use_vision_encoder: bool = True
    use_caption_encoder: bool = True
    use_visual_semantic: bool = True
    use_self_attention: bool = True

    def __post_init__(self):
        self.image_hw = tuple(self.image_hw)
        if self.embed_dim < 1 or self.num_layers < 1 or self.num_heads < 1:
            raise ConfigError("model dimensions must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by "
                f"{self.num_heads} heads")
        h, w = self.image_hw
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(
                f"image {h}x{w} not divisible by patch size {self.patch_size}")
        if self.text_pool_mode not in ("cls", "mean"):
            raise ConfigError(f"unknown text_pool_mode {self.text_pool_mode!r}")
        if not (self.use_vision_branch or self.use_caption_branch):
            raise ConfigError("ablation removed both modality branches")
        if self.use_visual_semantic and not (
                self.use_vision_branch and self.use_caption_branch):
            raise ConfigError(
                "visual-semantic fusion needs both branches present")

    @property
    def d_ff(self) -> int:
        return self.mlp_ratio * self.embed_dim

    @property
    def num_patches(self) -> int:
        h, w = self.image_hw
        return (h // self.patch_size) * (w // self.patch_size)

    def for_mode(self, mode: AblationMode) -> "ModelConfig":
        """A copy of this config with the switches of one ablation mode."""
        switches = {
            AblationMode.FULL: {},
            AblationMode.TEXTUAL_ONLY: dict(
                use_vision_branch=False, use_visual_semantic=False),
            AblationMode.VISUAL_ONLY: dict(
                use_caption_branch=False, use_visual_semantic=False),
            AblationMode.NO_VISUAL_SEMANTIC: dict(use_visual_semantic=False),
            AblationMode.NO_SELF_ATTENTION: dict(use_self_attention=False),
            AblationMode.NO_VISION_ENCODER: dict(use_vision_encoder=False),
            AblationMode.NO_CAPTION_ENCODER: dict(use_caption_encoder=False),
        }[AblationMode(mode)]
        base = dict(
            use_vision_branch=True, use_caption_branch=True,
            use_vision_encoder=True, use_caption_encoder=True,
            use_visual_semantic=True, use_self_attention=True)
        base.update(switches)
        return replace(self, **base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_hw"] = list(self.image_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["image_hw"] = tuple(d["image_hw"])
        return cls(**d)
