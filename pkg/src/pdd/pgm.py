"""Binary PGM (P5) images and raw float32 maps."""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

RAW_MAGIC = b"PDDM"


def quantize(img):
    """Map [0, 1] floats to 8-bit levels (round half to even, then clip)."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img, comments=()):
    """Write a 2-D array as P5. Floats are taken to be in [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    h, w = arr.shape
    head = b"P5\n" + b"".join(b"# " + c.encode("ascii") + b"\n" for c in comments)
    head += f"{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(head + arr.tobytes())


def _tokens(buf, n):
    """Pull ``n`` whitespace-separated header tokens, skipping comments.

    Returns the tokens, the comment texts and the offset of the raster.
    """
    pos, toks, comments = 0, [], []
    while len(toks) < n:
        if pos >= len(buf):
            raise FormatError(f"PGM header truncated at byte {pos}")
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise FormatError(f"unterminated PGM comment at byte {pos}")
            comments.append(buf[pos + 1:end].decode("ascii", "replace").strip())
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            toks.append((buf[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"missing whitespace before PGM raster at byte {pos}")
    return toks, comments, pos + 1


def read_pgm(path, with_comments=False):
    """Read a P5 file; returns a uint8 (maxval < 256) or uint16 array."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: bad PGM magic {buf[:2]!r} at byte 0")
    toks, comments, off = _tokens(buf[2:], 3)
    off += 2
    vals = []
    for tok, at in toks:
        try:
            vals.append(int(tok))
        except ValueError:
            raise FormatError(f"{path}: non-integer PGM header field {tok!r} at byte {at + 2}") from None
    w, h, maxval = vals
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM header (w={w}, h={h}, maxval={maxval})")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(buf) - off < need:
        raise FormatError(f"{path}: raster truncated at byte {len(buf)}, expected {off + need}")
    arr = np.frombuffer(buf, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    arr = arr.astype(np.uint16) if maxval >= 256 else arr.copy()
    if arr.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    return (arr, maxval, comments) if with_comments else (arr, maxval)


def read_pgm_float(path):
    arr, maxval = read_pgm(path)
    return arr.astype(np.float64) / maxval


def write_raw_map(path, arr):
    """16-byte header (magic, u32 H, u32 W, u32 reserved) + LE float32 raster."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("raw map must be 2-D")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC + struct.pack("<III", h, w, 0) + arr.tobytes())


def read_raw_map(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != RAW_MAGIC:
        raise FormatError(f"{path}: bad raw-map magic {buf[:4]!r} at byte 0")
    if len(buf) < 16:
        raise FormatError(f"{path}: header truncated at byte {len(buf)}")
    h, w, _ = struct.unpack("<III", buf[4:16])
    if len(buf) != 16 + 4 * h * w:
        raise FormatError(f"{path}: expected {16 + 4 * h * w} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)
