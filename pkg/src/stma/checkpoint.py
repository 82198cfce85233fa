"""Versioned checkpoint persistence.

File layout: one line of JSON header, the little-endian float32 parameter
payload in header order, then a 32-byte SHA-256 trailer over everything
before it. Loads are all-or-nothing: a version mismatch or checksum/shape
inconsistency raises before any state is returned.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .caption import Vocabulary
from .config import ModelConfig
from .errors import IntegrityError, VersionError
from .model import STMAParams, init_params, param_table
from .tensor import Tensor

FORMAT_VERSION = 1
_CHECKSUM_BYTES = 32


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    params: dict[str, Tensor]
    meta: dict = field(default_factory=dict)
    channel_mean: list[float] | None = None


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "params": [{"name": name, "shape": list(t.shape)}
                   for name, t in ckpt.params.items()],
        "meta": ckpt.meta,
        "channel_mean": ckpt.channel_mean,
    }
    blob = bytearray()
    blob += (json.dumps(header, separators=(",", ":"),
                        sort_keys=True) + "\n").encode("utf-8")
    for t in ckpt.params.values():
        blob += t.data.astype("<f4", copy=False).tobytes()
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _CHECKSUM_BYTES + 2:
        raise IntegrityError(f"{path}: file too short to be a checkpoint")
    body, trailer = raw[:-_CHECKSUM_BYTES], raw[-_CHECKSUM_BYTES:]
    if hashlib.sha256(body).digest() != trailer:
        raise IntegrityError(f"{path}: checksum mismatch")
    newline = body.find(b"\n")
    if newline < 0:
        raise IntegrityError(f"{path}: missing header")
    try:
        header = json.loads(body[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version}, supported {FORMAT_VERSION}")

    payload = body[newline + 1:]
    params: dict[str, Tensor] = {}
    offset = 0
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise IntegrityError(
                f"{path}: payload ends inside parameter {spec['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        params[spec["name"]] = Tensor(arr.copy(), requires_grad=True)
        offset += nbytes
    if offset != len(payload):
        raise IntegrityError(
            f"{path}: {len(payload) - offset} trailing payload bytes")

    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        vocab=Vocabulary.from_dict(header["vocab"]),
        params=params,
        meta=header.get("meta", {}),
        channel_mean=header.get("channel_mean"),
    )


def params_to_checkpoint(cfg: ModelConfig, vocab: Vocabulary,
                         params: STMAParams, meta: dict,
                         channel_mean=None) -> Checkpoint:
    mean = None if channel_mean is None else [float(x) for x in channel_mean]
    return Checkpoint(config=cfg, vocab=vocab, params=param_table(params),
                      meta=meta, channel_mean=mean)


def restore_params(ckpt: Checkpoint) -> STMAParams:
    """Rebuild the structured parameter tree from a checkpoint table."""
    params = init_params(ckpt.config, seed=0)
    table = param_table(params)
    if set(table) != set(ckpt.params):
        missing = set(table) ^ set(ckpt.params)
        raise IntegrityError(f"parameter names do not match config: {missing}")
    for name, t in table.items():
        saved = ckpt.params[name]
        if saved.shape != t.shape:
            raise IntegrityError(
                f"parameter {name} shape {saved.shape} != expected {t.shape}")
        t.data[:] = saved.data
    return params
