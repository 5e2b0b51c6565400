"""Dependency-free PPM/PGM and PNG reading and writing.

Images are returned as ``uint8`` (or ``uint16`` for 16-bit sources) arrays
of shape ``(H, W, C)`` with C in {1, 2, 3, 4}. PNG support covers
non-interlaced images of every colour type at bit depth 8 or 16, plus
palette images; that is enough for typical dataset dumps.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    pass


# -- PNM ---------------------------------------------------------------------

def _pnm_tokens(data: bytes, count: int, pos: int):
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PNM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos


def decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    (width, height, maxval), pos = _pnm_tokens(data, 3, 2)
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"bad PNM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(data) - pos < count * dtype.itemsize:
        raise ImageFormatError("truncated PNM pixel data")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    pixels = pixels.reshape(height, width, channels)
    if maxval not in (255, 65535):
        target = 255 if maxval < 256 else 65535
        pixels = (pixels.astype(np.float64) * (target / maxval)).round()
        return pixels.astype(np.uint8 if target == 255 else np.uint16)
    return pixels.astype(np.uint8 if maxval == 255 else np.uint16)


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.dtype != np.uint8:
        raise ValueError("PPM encoder expects uint8 pixels")
    h, w, c = image.shape
    if c == 1:
        return f"P5\n{w} {h}\n255\n".encode() + image.tobytes()
    if c != 3:
        raise ValueError("PPM encoder expects 1 or 3 channels")
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image).tobytes()


# -- PNG ---------------------------------------------------------------------

_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


def _paeth(a, b, c):
    p = a + b - c
    pa = abs(p - a)
    pb = abs(p - b)
    pc = abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(height * stride)
    prev = bytearray(stride)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        line = bytearray(raw[pos + 1:pos + 1 + stride])
        pos += 1 + stride
        if ftype == 1:
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:
            line = bytearray((a + b) & 0xFF for a, b in zip(line, prev))
        elif ftype == 3:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                upleft = prev[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + _paeth(left, prev[i], upleft)) & 0xFF
        elif ftype != 0:
            raise ImageFormatError(f"bad PNG filter type {ftype}")
        out[y * stride:(y + 1) * stride] = line
        prev = line
    return out


def decode_png(data: bytes) -> np.ndarray:
    if not data.startswith(PNG_SIGNATURE):
        raise ImageFormatError("not a PNG file")
    pos = len(PNG_SIGNATURE)
    header = None
    palette = None
    idat = []
    while pos < len(data):
        if pos + 8 > len(data):
            raise ImageFormatError("truncated PNG chunk")
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        if pos + 12 + length > len(data):
            raise ImageFormatError(f"truncated {ctype!r} chunk")
        body = data[pos + 8:pos + 8 + length]
        crc = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])[0]
        if zlib.crc32(body, zlib.crc32(ctype)) & 0xFFFFFFFF != crc:
            raise ImageFormatError(f"CRC mismatch in {ctype!r} chunk")
        pos += 12 + length
        if ctype == b"IHDR":
            if length != 13:
                raise ImageFormatError("bad IHDR length")
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise ImageFormatError("PNG without IHDR")
    width, height, depth, ctype, _comp, _filt, interlace = header
    if interlace:
        raise ImageFormatError("interlaced PNG is not supported")
    if ctype not in _CHANNELS:
        raise ImageFormatError(f"bad PNG colour type {ctype}")
    channels = _CHANNELS[ctype]
    if ctype == 3:
        if depth not in (1, 2, 4, 8) or palette is None:
            raise ImageFormatError("unsupported palette PNG")
    elif depth not in (8, 16):
        raise ImageFormatError(f"unsupported PNG bit depth {depth}")
    bits = depth * channels
    stride = (width * bits + 7) // 8
    bpp = max(1, bits // 8)
    raw = zlib.decompress(b"".join(idat))
    if len(raw) < height * (stride + 1):
        raise ImageFormatError("truncated PNG image data")
    buf = np.frombuffer(bytes(_unfilter(raw, height, stride, bpp)), dtype=np.uint8)
    buf = buf.reshape(height, stride)
    if ctype == 3:
        if depth < 8:
            idx = np.unpackbits(buf, axis=1)[:, :width * depth]
            idx = idx.reshape(height, width, depth)
            idx = idx.dot(1 << np.arange(depth - 1, -1, -1))
        else:
            idx = buf[:, :width]
        return palette[idx]
    if depth == 16:
        return buf.view(">u2").reshape(height, width, channels).astype(np.uint16)
    return buf.reshape(height, width, channels).copy()


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return (struct.pack(">I", len(body)) + ctype + body
            + struct.pack(">I", zlib.crc32(body, zlib.crc32(ctype)) & 0xFFFFFFFF))


def encode_png(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.dtype != np.uint8:
        raise ValueError("PNG encoder expects uint8 pixels")
    h, w, c = image.shape
    ctype = {1: 0, 2: 4, 3: 2, 4: 6}[c]
    rows = np.ascontiguousarray(image).reshape(h, w * c)
    raw = np.concatenate([np.zeros((h, 1), dtype=np.uint8), rows], axis=1).tobytes()
    return (PNG_SIGNATURE
            + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, ctype, 0, 0, 0))
            + _chunk(b"IDAT", zlib.compress(raw, 9))
            + _chunk(b"IEND", b""))


# -- dispatch ----------------------------------------------------------------

def read_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data.startswith(PNG_SIGNATURE):
        return decode_png(data)
    if data[:2] in (b"P5", b"P6"):
        return decode_pnm(data)
    raise ImageFormatError(f"{path}: unrecognised image format")


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        payload = encode_png(image)
    elif suffix in (".ppm", ".pgm", ".pnm"):
        payload = encode_ppm(image)
    else:
        raise ValueError(f"unsupported image extension {suffix!r}")
    path.write_bytes(payload)


def to_unit_float(image: np.ndarray) -> np.ndarray:
    """Scale integer pixels to [0, 1] and drop alpha; returns (H, W, C) float64."""
    scale = 65535.0 if image.dtype == np.uint16 else 255.0
    out = image.astype(np.float64) / scale
    if out.shape[2] in (2, 4):
        out = out[:, :, :-1]
    return out


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
