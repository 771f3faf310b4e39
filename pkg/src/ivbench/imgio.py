"""Binary image I/O: PPM (P6) for 8-bit color, PFM for float planes, PGM (P5) for masks."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ParseError


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Float [0,1] -> uint8, round half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 -> float64 [0,1]; float passes through."""
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return np.asarray(img, dtype=np.float64)


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = quantize_u8(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = quantize_u8(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs an (H, W) image, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _read_netpbm(path: str | Path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"^(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None or m.group(1) != magic:
        raise ParseError(f"{path}: not a {magic.decode()} file")
    w, h, maxval = (int(m.group(i)) for i in (2, 3, 4))
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit netpbm supported, maxval={maxval}")
    off = m.end()
    need = w * h * channels
    if len(data) - off < need:
        raise ParseError(f"{path}: truncated pixel data, need {need} bytes, have {len(data) - off}")
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=off)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def write_pfm(path: str | Path, plane: np.ndarray) -> None:
    """Single-channel little-endian PFM, rows bottom-up per convention."""
    plane = np.asarray(plane, dtype=np.float32)
    if plane.ndim != 2:
        raise ValueError(f"PFM writer handles single planes, got {plane.shape}")
    h, w = plane.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(plane[::-1].tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"^(Pf)\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+]+)\s", data)
    if m is None:
        raise ParseError(f"{path}: not a grayscale PFM file")
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    off = m.end()
    need = w * h * 4
    if len(data) - off < need:
        raise ParseError(f"{path}: truncated PFM data, need {need} bytes, have {len(data) - off}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return arr[::-1].astype(np.float32)
