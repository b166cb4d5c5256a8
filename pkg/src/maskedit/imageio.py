"""Frame and mask directories in binary PPM/PGM (mandatory) or PNG (optional).

Frames are ``frame_%05d.ppm|png`` (8-bit RGB), masks ``mask_%05d.pgm|png``
(8-bit grayscale), with contiguous indices starting at 0.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

try:
    from PIL import Image
except ImportError:  # PNG support is optional
    Image = None

HAS_PNG = Image is not None
DIVISOR = 8

_FRAME_RE = re.compile(r"^frame_(\d{5})\.(ppm|png)$")
_MASK_RE = re.compile(r"^mask_(\d{5})\.(pgm|png)$")


class LoadError(ValueError):
    pass


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def decode_pnm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode binary P6 (returns H x W x 3) or P5 (returns H x W), maxval 255."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise LoadError(f"{source}: unsupported magic {magic!r} (need P5 or P6)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise LoadError(f"{source}: malformed header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise LoadError(f"{source}: maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace byte before the raster
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise LoadError(f"{source}: expected {size} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(height, width, 3).copy() if channels == 3 else arr.reshape(height, width).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape} as PNM")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not HAS_PNG:
            raise LoadError(f"{path}: PNG support requires Pillow")
        with Image.open(path) as im:
            return np.asarray(im.convert("L" if path.name.startswith("mask_") else "RGB"))
    return decode_pnm(path.read_bytes(), str(path))


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not HAS_PNG:
            raise LoadError(f"{path}: PNG support requires Pillow")
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
        return
    path.write_bytes(encode_pnm(img))


def _indexed_files(directory: Path, pattern: re.Pattern, kind: str) -> list[Path]:
    if not directory.is_dir():
        raise LoadError(f"{directory}: not a directory")
    found: dict[int, Path] = {}
    for p in sorted(directory.iterdir()):
        m = pattern.match(p.name)
        if not m:
            continue
        idx = int(m.group(1))
        if idx in found:
            raise LoadError(f"{p}: duplicate {kind} index {idx} (also {found[idx].name})")
        found[idx] = p
    if not found:
        raise LoadError(f"{directory}: no {kind} files found")
    for expected, idx in enumerate(sorted(found)):
        if idx != expected:
            raise LoadError(f"{directory}: gap in {kind} indices, missing {kind}_{expected:05d}")
    return [found[i] for i in sorted(found)]


def load_frames(directory) -> list[np.ndarray]:
    frames = []
    for p in _indexed_files(Path(directory), _FRAME_RE, "frame"):
        img = read_image(p)
        if img.ndim != 3 or img.shape[2] != 3:
            raise LoadError(f"{p}: expected an RGB image, got shape {img.shape}")
        if img.shape[0] % DIVISOR or img.shape[1] % DIVISOR:
            raise LoadError(f"{p}: size {img.shape[1]}x{img.shape[0]} not divisible by {DIVISOR}")
        if frames and img.shape != frames[0].shape:
            raise LoadError(f"{p}: size {img.shape[1]}x{img.shape[0]} differs from first frame "
                            f"{frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(img)
    return frames


def load_masks(directory, n: int, size: tuple[int, int] | None = None) -> list[np.ndarray]:
    """Load ``n`` masks scaled to [0, 1] (float32, H x W). ``size`` is (H, W)."""
    paths = _indexed_files(Path(directory), _MASK_RE, "mask")
    if len(paths) != n:
        raise LoadError(f"mask count {len(paths)} != frame count {n}")
    masks = []
    for p in paths:
        img = read_image(p)
        if img.ndim != 2:
            raise LoadError(f"{p}: expected a grayscale mask, got shape {img.shape}")
        if size is not None and img.shape != tuple(size):
            raise LoadError(f"{p}: mask size {img.shape[1]}x{img.shape[0]} != frame size {size[1]}x{size[0]}")
        masks.append(img.astype(np.float32) / 255.0)
    return masks


def write_frames(directory, frames, fmt: str = "ppm") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = directory / f"frame_{i:05d}.{fmt}"
        write_image(p, f)
        paths.append(p)
    return paths


def write_masks(directory, masks, fmt: str = "pgm") -> list[Path]:
    """Write masks given in [0, 1] (or uint8) as 8-bit grayscale."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(masks):
        m = np.asarray(m)
        if m.dtype != np.uint8:
            m = np.floor(np.clip(m, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        p = directory / f"mask_{i:05d}.{fmt}"
        write_image(p, m)
        paths.append(p)
    return paths
