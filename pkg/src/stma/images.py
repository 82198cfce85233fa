"""Image file IO (binary PPM/PGM, 8-bit RGB PNG) and nearest-neighbor
resizing. PPM/PGM are parsed and written directly; PNG decoding goes
through Pillow."""

from __future__ import annotations

import numpy as np

from .errors import ChannelError, DecodeError, DimensionError


def resize_nearest(img: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of a (C, H, W) array; index map is
    src = floor(dst * src_extent / dst_extent)."""
    c, h, w = img.shape
    th, tw = target_hw
    if th < 1 or tw < 1:
        raise DimensionError(f"bad resize target {target_hw}")
    rows = np.minimum((np.arange(th) * h) // th, h - 1)
    cols = np.minimum((np.arange(tw) * w) // tw, w - 1)
    return img[:, rows[:, None], cols[None, :]]


def _read_ppm_tokens(data: bytes, count: int, start: int):
    """Read ``count`` whitespace/comment-separated header tokens."""
    tokens = []
    i = start
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise DecodeError("truncated header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # single whitespace after maxval


def read_ppm(path) -> np.ndarray:
    """Binary P6 PPM -> (3, H, W) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise DecodeError(f"{path}: not a binary PPM (P6) file")
    try:
        (w_tok, h_tok, maxval_tok), offset = _read_ppm_tokens(data, 3, 2)
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (ValueError, DecodeError) as exc:
        raise DecodeError(f"{path}: malformed PPM header ({exc})") from exc
    if maxval != 255:
        raise DecodeError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    expected = w * h * 3
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise DecodeError(
            f"{path}: truncated pixel data ({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_ppm(path, img: np.ndarray) -> None:
    """(3, H, W) uint8 -> binary P6 PPM."""
    c, h, w = img.shape
    if c != 3:
        raise ChannelError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(
            img.astype(np.uint8).transpose(1, 2, 0)).tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """(H, W) uint8 -> binary P5 PGM."""
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img.astype(np.uint8)).tobytes())


def read_png(path) -> np.ndarray:
    """8-bit RGB PNG -> (3, H, W) uint8; any other mode is a channel error."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise ChannelError(f"{path}: PNG mode {im.mode}, need RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: not a decodable image") from exc
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_image(path) -> np.ndarray:
    """Dispatch on magic bytes; returns (3, H, W) uint8."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P6":
        return read_ppm(path)
    if magic[:8] == b"\x89PNG\r\n\x1a\n":
        return read_png(path)
    raise DecodeError(f"{path}: unsupported image format")
