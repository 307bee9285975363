"""PNG, PFM and key=value sidecar I/O."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .errors import FormatError


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 (H, W) or (H, W, 3) array (top row first)."""
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    # whitespace-separated header tokens: tag, width, height, scale
    for _ in range(4):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError(f"{path}: truncated PFM header")
        parts.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    tag = parts[0]
    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise FormatError(f"{path}: not a PFM file (tag {tag!r})")
    try:
        width, height = int(parts[1]), int(parts[2])
        scale = float(parts[3])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PFM header") from exc
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError(f"{path}: invalid PFM dimensions or scale")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(data) - pos < 4 * count:
        raise FormatError(f"{path}: truncated PFM payload ({len(data) - pos} of {4 * count} bytes)")
    img = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float32)
    img = img.reshape(height, width, channels) if channels == 3 else img.reshape(height, width)
    return np.ascontiguousarray(np.flipud(img))


def write_pfm(path, img: np.ndarray, little_endian: bool = True) -> None:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 3:
        tag = "PF"
    elif img.ndim == 2:
        tag = "Pf"
    else:
        raise FormatError(f"PFM needs HxW or HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    scale = -1.0 if little_endian else 1.0
    raster = np.flipud(img).astype("<f4" if little_endian else ">f4")
    with open(path, "wb") as fh:
        fh.write(f"{tag}\n{w} {h}\n{scale}\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_png(path) -> np.ndarray:
    """Read an 8/16-bit PNG as uint8/uint16, RGB channel order."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"{path}: unreadable PNG")
    if img.dtype not in (np.uint8, np.uint16):
        raise FormatError(f"{path}: unsupported PNG bit depth {img.dtype}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        img = img[:, :, ::-1]
    return np.ascontiguousarray(img)


def write_png(path, img: np.ndarray, bits: int | None = None) -> None:
    """Write integer codes as an 8- or 16-bit grayscale/RGB PNG."""
    img = np.asarray(img)
    if bits is None:
        bits = 8 if img.dtype == np.uint8 or (img.size and img.max() < 256) else 16
    if bits <= 8:
        dtype, top = np.uint8, 255
    elif bits <= 16:
        dtype, top = np.uint16, 65535
    else:
        raise FormatError(f"unsupported PNG bit depth {bits}")
    if img.size and (img.min() < 0 or img.max() > top):
        raise FormatError(f"values out of range for {bits}-bit PNG")
    out = img.astype(dtype)
    if out.ndim == 3:
        out = np.ascontiguousarray(out[:, :, ::-1])
    if not cv2.imwrite(str(path), out):
        raise FormatError(f"{path}: PNG write failed")


def read_image(path) -> np.ndarray:
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        return read_pfm(path)
    if ext == ".png":
        return read_png(path)
    raise FormatError(f"unsupported image extension {ext!r}")


def write_image(path, img: np.ndarray, bits: int | None = None) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        write_pfm(path, img)
    elif ext == ".png":
        write_png(path, img, bits)
    else:
        raise FormatError(f"unsupported image extension {ext!r}")


def image_io(path, mode: str = "read", image: np.ndarray | None = None, bits: int | None = None):
    """Read or write an image, format chosen by extension."""
    if mode == "read":
        return read_image(path)
    if mode == "write":
        return write_image(path, image, bits)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


def read_kv(path) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_kv(items: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in items.items())


def write_kv(path, items: dict) -> None:
    Path(path).write_text(format_kv(items))

