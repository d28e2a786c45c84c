"""Binary PPM (P6, 8-bit) reading and writing."""

from __future__ import annotations

import numpy as np


class PpmFormatError(ValueError):
    """The file is not an 8-bit binary PPM."""


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    ends the header.
    """
    out = []
    pos = 0
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos] in b" \t\r\n":
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise PpmFormatError(f"header truncated at byte {pos}")
        start = pos
        while pos < n and data[pos] not in b" \t\r\n#":
            pos += 1
        out.append((data[start:pos], start))
    return out, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes to a ``(height, width, 3)`` float image in [0, 1]."""
    if data[:2] != b"P6":
        if data[:2] == b"P3":
            raise PpmFormatError("ASCII PPM (P3) is not supported, expected binary P6 at byte 0")
        raise PpmFormatError(f"bad magic number {data[:2]!r} at byte 0, expected b'P6'")
    toks, pos = _tokens(data[2:], 3)
    pos += 2
    values = []
    for (tok, start), name in zip(toks, ("width", "height", "maxval")):
        if not tok.isdigit():
            raise PpmFormatError(f"invalid {name} {tok!r} at byte {start + 2}")
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PpmFormatError(f"image dimensions must be positive, got {width}x{height}")
    if maxval != 255:
        raise PpmFormatError(f"maxval {maxval} is not supported, only 8-bit (255) images")
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise PpmFormatError(f"missing whitespace after header at byte {pos}")
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PpmFormatError(
            f"payload truncated: expected {need} bytes from byte {pos}, found {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return raw.astype(float) / 255.0


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def to_bytes(image) -> np.ndarray:
    """Clamp a [0, 1] float image and round it to 8-bit."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must have shape (height, width, 3), got {img.shape}")
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    raw = to_bytes(image)
    h, w = raw.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def write_ppm(image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


def label_image(labels, means) -> np.ndarray:
    """Paint every pixel with the mean colour of its label."""
    return np.asarray(means, dtype=float)[np.asarray(labels)]
