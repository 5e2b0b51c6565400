"""Binary checkpoint of (ArchSpec, parameters, mask).

Layout, all little-endian::

    6s   magic "MSINR1"
    B    kind code (0 siren, 1 ffn, 2 linear)
    B    bits per stored value (32 or 64)
    B    prune_biases flag
    B    reserved (0)
    I    in_dim, out_dim, width, hidden_layers, fourier_dim
    d    omega0, first_omega0 (NaN when unset), sigma
    Q    seed
    Q    d  (number of stored values)
    Q    n  (number of mask bits)
    d x f4|f8   parameter values
    ceil(n/8) bytes  mask bits, packed LSB-first
    Q    footer: byte length of everything before it

Parameters default to 32-bit storage; 64-bit storage is available so that
double-precision runs can be resumed exactly.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .models import KINDS, ArchSpec, Mask, layout

MAGIC = b"MSINR1"
_HEADER = struct.Struct("<6sBBBB5I3d3Q")
_FOOTER = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def dumps(arch: ArchSpec, params: np.ndarray, mask: Mask, bits: int = 32) -> bytes:
    if bits not in (32, 64):
        raise ValueError("bits must be 32 or 64")
    lay = layout(arch)
    if params.shape != (lay.d,) or mask.bits.size != lay.prunable.size:
        raise CheckpointError("params/mask do not match the architecture")
    first = float("nan") if arch.first_omega0 is None else float(arch.first_omega0)
    fourier_dim = arch.fourier_dim if arch.kind == "ffn" else 0
    header = _HEADER.pack(
        MAGIC, KINDS.index(arch.kind), bits, int(arch.prune_biases), 0,
        arch.in_dim, arch.out_dim, arch.width, arch.hidden_layers, fourier_dim,
        float(arch.omega0), first, float(arch.sigma),
        arch.seed, lay.d, mask.bits.size)
    values = np.asarray(params, dtype="<f4" if bits == 32 else "<f8").tobytes()
    packed = np.packbits(mask.bits.astype(np.uint8), bitorder="little").tobytes()
    body = header + values + packed
    return body + _FOOTER.pack(len(body))


def loads(data: bytes):
    """Inverse of :func:`dumps`; returns ``(arch, params, mask)``.

    Parameters come back as float64 (exactly representing the stored
    values) for 64-bit files and float32 otherwise.
    """
    if len(data) < _HEADER.size + _FOOTER.size:
        raise CheckpointError("file too short")
    (magic, kind, bits, prune_biases, _reserved, in_dim, out_dim, width, hidden, fourier_dim,
     omega0, first, sigma, seed, d, n) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if bits not in (32, 64) or kind >= len(KINDS):
        raise CheckpointError("corrupt header")
    (length,) = _FOOTER.unpack_from(data, len(data) - _FOOTER.size)
    if length != len(data) - _FOOTER.size:
        raise CheckpointError(f"length footer says {length}, file body has "
                              f"{len(data) - _FOOTER.size} bytes")
    n_bytes = (n + 7) // 8
    expected = _HEADER.size + d * (bits // 8) + n_bytes
    if expected != length:
        raise CheckpointError("payload size does not match header")
    arch = ArchSpec(kind=KINDS[kind], in_dim=in_dim, out_dim=out_dim, width=width,
                    hidden_layers=hidden, omega0=omega0,
                    first_omega0=None if math.isnan(first) else first,
                    sigma=sigma, fourier_dim=fourier_dim, seed=seed,
                    prune_biases=bool(prune_biases))
    lay = layout(arch)
    if lay.d != d or lay.prunable.size != n:
        raise CheckpointError("stored sizes do not match the architecture")
    offset = _HEADER.size
    dtype = np.dtype("<f4" if bits == 32 else "<f8")
    params = np.frombuffer(data, dtype=dtype, count=d, offset=offset)
    params = params.astype(np.float32 if bits == 32 else np.float64)
    offset += d * dtype.itemsize
    packed = np.frombuffer(data, dtype=np.uint8, count=n_bytes, offset=offset)
    bits_arr = np.unpackbits(packed, count=n, bitorder="little").astype(bool)
    return arch, params, Mask(bits_arr, lay.prunable, lay.d)


def save(path, arch: ArchSpec, params: np.ndarray, mask: Mask, bits: int = 32) -> None:
    Path(path).write_bytes(dumps(arch, params, mask, bits))


def load(path):
    return loads(Path(path).read_bytes())
