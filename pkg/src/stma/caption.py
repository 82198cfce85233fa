"""Caption preprocessing, vocabulary, and the caption attention encoder.

The text pipeline is lowercase -> strip punctuation -> whitespace split ->
drop stopwords -> suffix-stripping stem. Encoded sequences are CLS-first,
fixed length, PAD-filled; attention ignores PAD positions through masked
logits. Per-position embeddings are the sum of token, segment, and
position tables (single-sentence input keeps the segment index at 0).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .blocks import EncoderLayerParams, encoder_stack
from .errors import ConfigError, ContractError
from .porter import stem
from .tensor import Tensor, add, layer_norm, randn, take_rows, zeros, ones

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
_RESERVED = 3

# Bundled default; override by loading a one-token-per-line file.
DEFAULT_STOPWORDS = frozenset("""
a an and are as at be but by for from had has have he her his i if in into
is it its me my no not of on or our she so that the their them they this to
was we were what when which who will with you your
""".split())


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)


def preprocess_text(raw: str, stopwords: Iterable[str] = DEFAULT_STOPWORDS) -> list[str]:
    """Deterministic preprocessing chain ending in stemmed tokens."""
    stopwords = set(stopwords)
    cleaned = _PUNCT.sub(" ", raw.lower())
    return [stem(tok) for tok in cleaned.split() if tok not in stopwords]


@dataclass
class Vocabulary:
    """Token-to-id map built from training-split captions only.

    Ids are dense; 0/1/2 are PAD/UNK/CLS and never reassigned.
    """

    token_to_id: dict[str, int]
    max_len: int

    def __post_init__(self):
        if self.max_len < 1:
            raise ConfigError("max_len must be positive")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(_RESERVED, _RESERVED + len(ids))):
            raise ConfigError("vocabulary ids must be dense above the reserved range")

    @classmethod
    def build(cls, token_lists: Iterable[list[str]], max_len: int) -> "Vocabulary":
        counts: dict[str, int] = {}
        for tokens in token_lists:
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls({tok: _RESERVED + i for i, tok in enumerate(ordered)}, max_len)

    @property
    def size(self) -> int:
        return _RESERVED + len(self.token_to_id)

    def to_dict(self) -> dict:
        return {"tokens": self.token_to_id, "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls({str(k): int(v) for k, v in d["tokens"].items()},
                   int(d["max_len"]))


def encode_ids(tokens: list[str], vocab: Vocabulary) -> list[int]:
    """CLS, then token ids (UNK for unknown words), truncated or PAD-filled
    to exactly max_len."""
    ids = [CLS_ID]
    for tok in tokens[:vocab.max_len - 1]:
        ids.append(vocab.token_to_id.get(tok, UNK_ID))
    ids.extend([PAD_ID] * (vocab.max_len - len(ids)))
    return ids


@dataclass
class CaptionEmbedParams:
    tok_embed: Tensor            # (|V|, d)
    seg_embed: Tensor            # (2, d)
    pos_embed_txt: Tensor        # (max_len, d)

    def __post_init__(self):
        if self.seg_embed.shape[0] != 2:
            raise ConfigError("segment table must have exactly 2 rows")


@dataclass
class CaptionParams:
    embed: CaptionEmbedParams
    layers: list[EncoderLayerParams]
    norm_gain: Tensor
    norm_bias: Tensor


def pad_mask(ids: list[int]) -> np.ndarray:
    return np.asarray([i != PAD_ID for i in ids], dtype=bool)


def embed_caption(ids: list[int], p: CaptionEmbedParams) -> Tensor:
    """Per-position sum of token + segment + position embeddings."""
    tok = take_rows(p.tok_embed, ids)
    seg = take_rows(p.seg_embed, [0] * len(ids))
    return add(add(tok, seg), p.pos_embed_txt)


def caption_encode(ids: list[int], p: CaptionParams,
                   use_encoder: bool = True, eps: float = 1e-5) -> Tensor:
    """Embed, run the masked encoder stack, and apply the final norm.

    PAD positions are masked out as attention keys, so their (learned)
    embeddings cannot leak into other rows.
    """
    max_len = p.embed.pos_embed_txt.shape[0]
    if len(ids) != max_len:
        raise ContractError(
            f"expected {max_len} ids, got {len(ids)}")
    x = embed_caption(ids, p.embed)
    if use_encoder:
        x = encoder_stack(x, p.layers, key_valid=pad_mask(ids))
    return layer_norm(x, p.norm_gain, p.norm_bias, eps=eps)


def init_caption_params(vocab_size: int, max_len: int, d: int, d_ff: int,
                        num_heads: int, num_layers: int,
                        rng: np.random.Generator,
                        std: float = 0.02) -> CaptionParams:
    from .blocks import init_encoder_layer

    return CaptionParams(
        embed=CaptionEmbedParams(
            tok_embed=randn((vocab_size, d), rng, std, requires_grad=True),
            seg_embed=randn((2, d), rng, std, requires_grad=True),
            pos_embed_txt=randn((max_len, d), rng, std, requires_grad=True),
        ),
        layers=[init_encoder_layer(d, d_ff, num_heads, rng, std)
                for _ in range(num_layers)],
        norm_gain=ones((d,), requires_grad=True),
        norm_bias=zeros((d,), requires_grad=True),
    )


def caption_param_table(p: CaptionParams) -> dict[str, Tensor]:
    from .blocks import encoder_layer_param_table

    table = {
        "caption.embed.tok": p.embed.tok_embed,
        "caption.embed.seg": p.embed.seg_embed,
        "caption.embed.pos": p.embed.pos_embed_txt,
    }
    for i, layer in enumerate(p.layers):
        table.update(encoder_layer_param_table(f"caption.layers.{i}", layer))
    table["caption.norm.gain"] = p.norm_gain
    table["caption.norm.bias"] = p.norm_bias
    return table
