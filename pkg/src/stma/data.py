"""Dataset manifests, image loading/normalization, sample assembly, and
the synthetic confounder dataset.

Manifests are JSON lines with fields id/image_path/caption/label; entries
missing a caption or a readable image are dropped (both modalities must
be present). The toy generator crosses an image motif {striped, checker}
with a caption keyword set {trigger, benign}; the label is 1 only for
striped-plus-trigger, so either modality alone tops out at 75% accuracy
while the pair separates perfectly.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .caption import Vocabulary, encode_ids, preprocess_text
from .config import ModelConfig
from .errors import ContractError, EmptyDatasetError, ParseError
from .images import read_image, resize_nearest, write_ppm
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class ManifestEntry:
    id: str
    image_path: str
    caption: str
    label: int


@dataclass
class Sample:
    """One encoded multimodal instance ready for the model."""

    image: Tensor
    token_ids: list[int]
    label: int
    id: str


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a JSONL manifest, dropping entries with an empty caption or
    unreadable image (the modality-completeness filter). Order preserved."""
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: bad record ({exc})") from exc
            try:
                rid = str(rec["id"])
                image_path = str(rec["image_path"])
                caption = str(rec["caption"])
                label = rec["label"]
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc}") from exc
            if label not in (0, 1):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, "
                                 f"got {label!r}")
            if rid in seen_ids:
                raise ParseError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen_ids.add(rid)
            resolved = image_path if os.path.isabs(image_path) \
                else str(base / image_path)
            if not caption.strip() or not os.path.isfile(resolved):
                dropped += 1
                continue
            entries.append(ManifestEntry(id=rid, image_path=resolved,
                                         caption=caption, label=int(label)))
    if dropped:
        log.info("dropped %d incomplete entries from %s", dropped, path)
    if not entries:
        raise EmptyDatasetError(f"no usable entries in {path}")
    return entries


def load_image(path, target_hw: tuple[int, int],
               channel_mean: np.ndarray | None = None) -> Tensor:
    """Decode, nearest-neighbor resize, scale to [0,1], and subtract the
    per-channel training-set mean when given."""
    arr = read_image(path)
    arr = resize_nearest(arr, target_hw)
    scaled = arr.astype(np.float32) / 255.0
    if channel_mean is not None:
        scaled = scaled - np.asarray(channel_mean,
                                     dtype=np.float32).reshape(3, 1, 1)
    return Tensor(scaled)


def compute_channel_mean(entries: list[ManifestEntry],
                         target_hw: tuple[int, int]) -> np.ndarray:
    """Per-channel mean of [0,1]-scaled pixels, accumulated in 64-bit in
    entry order (deterministic)."""
    if not entries:
        raise ContractError("channel mean over an empty split")
    totals = np.zeros(3, dtype=np.float64)
    count = 0
    for e in entries:
        arr = resize_nearest(read_image(e.image_path), target_hw)
        totals += arr.reshape(3, -1).mean(axis=1, dtype=np.float64) / 255.0
        count += 1
    return totals / count


def build_samples(entries: list[ManifestEntry], vocab: Vocabulary,
                  cfg: ModelConfig, channel_mean: np.ndarray | None,
                  stopwords=None) -> list[Sample]:
    from .caption import DEFAULT_STOPWORDS

    stopwords = DEFAULT_STOPWORDS if stopwords is None else stopwords
    samples = []
    for e in entries:
        tokens = preprocess_text(e.caption, stopwords)
        samples.append(Sample(
            image=load_image(e.image_path, cfg.image_hw, channel_mean),
            token_ids=encode_ids(tokens, vocab),
            label=e.label,
            id=e.id,
        ))
    return samples


# --- synthetic confounder dataset ------------------------------------------

TRIGGER_WORDS = ["zarnak", "grimble", "voxul", "drekkan"]
BENIGN_WORDS = ["lumina", "petal", "breeze", "meadow"]
DISTRACTOR_WORDS = ["photo", "image", "with", "a", "of", "bright", "small",
                    "day", "scene", "near", "old", "round"]

_CELLS = [  # (motif, word_kind, label); label=1 only for striped+trigger
    ("striped", "trigger", 1),
    ("striped", "benign", 0),
    ("checker", "trigger", 0),
    ("checker", "benign", 0),
]

TOY_IMAGE_HW = (64, 64)
_MOTIF_SIZE = 32          # pixels; patch-grid aligned
_MOTIF_ORIGINS = [0, 16, 32]


def _draw_motif(img: np.ndarray, motif: str, origin: tuple[int, int],
                rng: np.random.Generator) -> None:
    r0, c0 = origin
    bright = rng.integers(200, 256, size=3)
    dark = rng.integers(0, 56, size=3)
    phase = int(rng.integers(0, 8))
    yy, xx = np.mgrid[0:_MOTIF_SIZE, 0:_MOTIF_SIZE]
    if motif == "striped":
        pattern = ((yy + phase) // 8) % 2
    else:
        pattern = (((yy + phase) // 8) + ((xx + phase) // 8)) % 2
    block = np.where(pattern[None, :, :] == 0,
                     bright[:, None, None], dark[:, None, None])
    img[:, r0:r0 + _MOTIF_SIZE, c0:c0 + _MOTIF_SIZE] = block


def _toy_caption(word_kind: str, rng: np.random.Generator) -> str:
    pool = TRIGGER_WORDS if word_kind == "trigger" else BENIGN_WORDS
    keyword = pool[int(rng.integers(0, len(pool)))]
    k = int(rng.integers(2, 6))  # 2..5 distractors -> 3..6 words
    distractors = [DISTRACTOR_WORDS[int(rng.integers(0, len(DISTRACTOR_WORDS)))]
                   for _ in range(k)]
    words = distractors + [keyword]
    perm = rng.permutation(len(words))
    return " ".join(words[i] for i in perm)


def generate_toy_dataset(n: int, seed: int, out_dir) -> Path:
    """Write n images + manifest.jsonl + meta.jsonl under out_dir; returns
    the manifest path. Deterministic per seed, bit-identical files."""
    if n < 40 or n % 4:
        raise ContractError("toy dataset needs n >= 40 and divisible by 4")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest_lines = []
    meta_lines = []
    for i in range(n):
        motif, word_kind, label = _CELLS[i % 4]
        rid = f"toy-{i:04d}"
        bg = rng.integers(90, 167, size=3)
        img = np.broadcast_to(bg[:, None, None], (3,) + TOY_IMAGE_HW).copy()
        origin = (
            _MOTIF_ORIGINS[int(rng.integers(0, len(_MOTIF_ORIGINS)))],
            _MOTIF_ORIGINS[int(rng.integers(0, len(_MOTIF_ORIGINS)))],
        )
        _draw_motif(img, motif, origin, rng)
        rel_path = f"images/{rid}.ppm"
        write_ppm(img_dir / f"{rid}.ppm", img.astype(np.uint8))
        caption = _toy_caption(word_kind, rng)
        manifest_lines.append(json.dumps(
            {"id": rid, "image_path": rel_path, "caption": caption,
             "label": label}))
        meta_lines.append(json.dumps(
            {"id": rid, "motif": motif, "word_kind": word_kind,
             "motif_origin": list(origin), "label": label}))
    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    (out_dir / "meta.jsonl").write_text("\n".join(meta_lines) + "\n",
                                        encoding="utf-8")
    return manifest_path


def load_toy_meta(out_dir) -> dict[str, dict]:
    meta = {}
    with open(Path(out_dir) / "meta.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            meta[rec["id"]] = rec
    return meta
