"""Binary Netpbm (P5/P6) and encoded-mask (SPE1) file I/O.

Images are exchanged as channel-first arrays: ``(3, h, w)`` for PPM and
``(h, w)`` for PGM. 16-bit PGM samples are big-endian, as Netpbm requires.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

SPE_MAGIC = b"SPE1"
_SPE_HEADER = struct.Struct("<4sIII")


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated Netpbm header")
    return buf[start:pos], pos


def read_netpbm(path) -> np.ndarray:
    """Read a binary PGM or PPM file.

    Returns ``(h, w)`` for P5 and ``(3, h, w)`` for P6, with dtype uint8 when
    maxval < 256 and uint16 otherwise.
    """
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported Netpbm magic {magic!r}")
    w_tok, pos = _read_token(buf, pos)
    h_tok, pos = _read_token(buf, pos)
    m_tok, pos = _read_token(buf, pos)
    w, h, maxval = int(w_tok), int(h_tok), int(m_tok)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    if len(buf) - pos < count * dtype.itemsize:
        raise ValueError(f"{path}: raster is truncated")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    data = data.astype(np.uint16 if maxval > 255 else np.uint8)
    if channels == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_netpbm(path, img: np.ndarray, maxval: int | None = None) -> None:
    """Write ``(h, w)`` / ``(1, h, w)`` arrays as P5 and ``(3, h, w)`` as P6."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, raster = b"P5", img
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, raster = b"P6", img.transpose(1, 2, 0)
    else:
        raise ValueError(f"cannot write array of shape {img.shape} as Netpbm")
    if maxval is None:
        maxval = 65535 if img.dtype == np.uint16 else 255
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise ValueError(f"sample values outside 0..{maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = raster.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    Path(path).write_bytes(header + np.ascontiguousarray(raster, dtype=dtype).tobytes())


def read_label_map(path) -> np.ndarray:
    labels = read_netpbm(path)
    if labels.ndim != 2:
        raise ValueError(f"{path}: label maps must be single-channel PGM")
    return labels.astype(np.uint16)


def write_label_map(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("label values must fit in 16 bits")
    write_netpbm(path, labels.astype(np.uint16), maxval=65535)


def write_spe(path, values: np.ndarray) -> None:
    """Write an encoded mask: 16-byte header then little-endian float32 rows."""
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[0]
    h, w = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(_SPE_HEADER.pack(SPE_MAGIC, h, w, 0) + payload)


def read_spe(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _SPE_HEADER.size:
        raise ValueError(f"{path}: file too short for SPE header")
    magic, h, w, _ = _SPE_HEADER.unpack_from(buf)
    if magic != SPE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    data = np.frombuffer(buf, dtype="<f4", count=h * w, offset=_SPE_HEADER.size)
    return data.astype(np.float32).reshape(1, h, w)
