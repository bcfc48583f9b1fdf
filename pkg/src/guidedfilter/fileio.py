"""Image files and the raw named-tensor container.

Images: binary PPM (P6, maxval 255) is always available; P5 covers the
single-channel case.  PNG works through the same load/save interface
when Pillow is installed.  Bytes map to reals as v/255 on load; on save
values are clamped to [0, 1] and rounded back, so an 8-bit round trip
is byte exact.

Tensor container (extension-agnostic, magic "DGFT"): little-endian
throughout -- magic, version u8, count u16, then per tensor a u16 name
length, UTF-8 name, u32 dims (h, w, c), and the float64 row-major
payload.  Round trips are bitwise identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor, validate

MAGIC = b"DGFT"
VERSION = 1

try:
    from PIL import Image as _PILImage
except ImportError:
    _PILImage = None


class ImageFormatError(ValueError):
    """Malformed or unsupported image/container file."""


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named (h, w, c) float64 tensors; dict order is preserved."""
    if len(tensors) > 0xFFFF:
        raise ValueError(f"too many tensors: {len(tensors)}")
    parts = [MAGIC, struct.pack("<BH", VERSION, len(tensors))]
    for name, t in tensors.items():
        validate(t, name)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:32]}...")
        h, w, c = t.shape
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<III", h, w, c))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ImageFormatError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<BH", data, 4)
    if version != VERSION:
        raise ImageFormatError(f"{path}: unsupported version {version}")
    pos = 7
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            h, w, c = struct.unpack_from("<III", data, pos)
            pos += 12
            n_bytes = h * w * c * 8
            payload = data[pos:pos + n_bytes]
            if len(payload) != n_bytes:
                raise ImageFormatError(f"{path}: truncated payload for {name!r}")
            pos += n_bytes
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(h, w, c).astype(np.float64)
    except struct.error as exc:
        raise ImageFormatError(f"{path}: truncated container ({exc})") from exc
    if pos != len(data):
        raise ImageFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def _read_ppm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments between header fields.
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return data[start:pos], pos


def load_ppm(path) -> Tensor:
    """Binary PPM/PGM to a float64 tensor in [0, 1]."""
    data = Path(path).read_bytes()
    try:
        magic, pos = _read_ppm_token(data, 0)
        if magic not in (b"P6", b"P5"):
            raise ImageFormatError(f"{path}: expected P6 or P5, got {magic!r}")
        channels = 3 if magic == b"P6" else 1
        fields = []
        for _ in range(3):
            token, pos = _read_ppm_token(data, pos)
            fields.append(int(token))
        width, height, maxval = fields
    except (ValueError, ImageFormatError) as exc:
        raise ImageFormatError(f"{path}: bad header ({exc})") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace after maxval
    n_bytes = width * height * channels
    raw = data[pos:pos + n_bytes]
    if len(raw) != n_bytes:
        raise ImageFormatError(f"{path}: expected {n_bytes} pixel bytes, got {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return pixels.astype(np.float64) / 255.0


def save_ppm(path, image: Tensor) -> None:
    """Float tensor (clamped to [0, 1]) to binary PPM (3ch) or PGM (1ch)."""
    validate(image, "image")
    h, w, c = image.shape
    if c not in (1, 3):
        raise ValueError(f"PPM/PGM supports 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    bytes_img = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + bytes_img.tobytes())


def load_png(path) -> Tensor:
    if _PILImage is None:
        raise ImageFormatError("PNG support requires Pillow (install the 'png' extra)")
    try:
        with _PILImage.open(path) as img:
            if img.mode not in ("RGB", "L"):
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.uint8)
    except Exception as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def save_png(path, image: Tensor) -> None:
    if _PILImage is None:
        raise ImageFormatError("PNG support requires Pillow (install the 'png' extra)")
    validate(image, "image")
    c = image.shape[2]
    if c not in (1, 3):
        raise ValueError(f"PNG save supports 1 or 3 channels, got {c}")
    bytes_img = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "RGB" if c == 3 else "L"
    _PILImage.fromarray(bytes_img.squeeze(axis=2) if c == 1 else bytes_img, mode).save(path)


def load_image(path) -> Tensor:
    """Dispatch on extension: .png via Pillow, everything else as PPM/PGM."""
    if str(path).lower().endswith(".png"):
        return load_png(path)
    return load_ppm(path)


def save_image(path, image: Tensor) -> None:
    if str(path).lower().endswith(".png"):
        save_png(path, image)
    else:
        save_ppm(path, image)
