"""SIREN / Fourier-feature MLPs over a flat parameter vector.

Parameters live in one contiguous 1-D array. A :class:`Layout` maps that
array onto per-layer weight matrices (stored ``(out, in)``) and bias
vectors, and records which entries may be pruned and which are trained.

Three architectures are supported:

``siren``
    hidden layers compute ``sin(omega0 * (W x + b))``, last layer is affine.
``ffn``
    a fixed Gaussian Fourier encoding ``[sin(2 pi B x), cos(2 pi B x)]``
    followed by ReLU layers and an affine output layer. ``B`` is neither
    trained nor pruned.
``linear``
    a single bias-free map ``y = W x``. Only used for hand-checkable tests.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

KINDS = ("siren", "ffn", "linear")


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "siren"
    in_dim: int = 2
    out_dim: int = 3
    width: int = 256
    hidden_layers: int = 4
    omega0: float = 30.0
    # None: the first sine layer uses omega0 like every other layer
    first_omega0: float | None = None
    sigma: float = 20.0
    # 0 resolves to width // 2 so the encoding emits `width` features
    fourier_dim: int = 0
    seed: int = 0
    prune_biases: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.kind == "linear":
            return
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if self.kind == "siren":
            if not self.omega0 > 0:
                raise ValueError("omega0 must be > 0 for siren")
            if self.first_omega0 is not None and not self.first_omega0 > 0:
                raise ValueError("first_omega0 must be > 0")
        if self.kind == "ffn":
            if not self.sigma > 0:
                raise ValueError("sigma must be > 0 for ffn")
            if self.fourier_dim == 0:
                object.__setattr__(self, "fourier_dim", max(1, self.width // 2))
            if self.fourier_dim < 1:
                raise ValueError("fourier_dim must be >= 1 for ffn")

    def replace(self, **changes) -> "ArchSpec":
        if "width" in changes and self.kind == "ffn" and "fourier_dim" not in changes:
            changes["fourier_dim"] = 0
        return dataclasses.replace(self, **changes)

    def layer_omegas(self) -> list[float]:
        """Frequency factor of every sine layer, first to last."""
        first = self.omega0 if self.first_omega0 is None else self.first_omega0
        return [first] + [self.omega0] * (self.hidden_layers - 1)


class Layer(NamedTuple):
    w_offset: int
    rows: int
    cols: int
    b_offset: int | None


@dataclass(frozen=True)
class Layout:
    """Offset table for one architecture.

    ``fourier`` is the fixed encoding matrix (FFN only); ``dense`` are the
    trained affine layers in forward order.
    """

    d: int
    fourier: Layer | None
    dense: tuple[Layer, ...]
    prunable: np.ndarray
    trainable: np.ndarray

    def views(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
        out = []
        for layer in self.dense:
            w = params[layer.w_offset:layer.w_offset + layer.rows * layer.cols]
            w = w.reshape(layer.rows, layer.cols)
            b = None
            if layer.b_offset is not None:
                b = params[layer.b_offset:layer.b_offset + layer.rows]
            out.append((w, b))
        return out

    def fourier_matrix(self, params: np.ndarray) -> np.ndarray | None:
        f = self.fourier
        if f is None:
            return None
        return params[f.w_offset:f.w_offset + f.rows * f.cols].reshape(f.rows, f.cols)


@functools.lru_cache(maxsize=256)
def layout(arch: ArchSpec) -> Layout:
    offset = 0
    fourier = None
    dense = []
    prunable: list[np.ndarray] = []
    fixed: list[tuple[int, int]] = []

    def add(rows, cols, bias):
        nonlocal offset
        w_off = offset
        offset += rows * cols
        prunable.append(np.arange(w_off, offset))
        b_off = None
        if bias:
            b_off = offset
            offset += rows
            if arch.prune_biases:
                prunable.append(np.arange(b_off, offset))
        dense.append(Layer(w_off, rows, cols, b_off))

    if arch.kind == "linear":
        add(arch.out_dim, arch.in_dim, bias=False)
    elif arch.kind == "siren":
        dims = [arch.in_dim] + [arch.width] * arch.hidden_layers + [arch.out_dim]
        for cols, rows in zip(dims[:-1], dims[1:]):
            add(rows, cols, bias=True)
    else:
        fourier = Layer(0, arch.fourier_dim, arch.in_dim, None)
        offset = arch.fourier_dim * arch.in_dim
        fixed.append((0, offset))
        dims = [2 * arch.fourier_dim] + [arch.width] * (arch.hidden_layers - 1) + [arch.out_dim]
        for cols, rows in zip(dims[:-1], dims[1:]):
            add(rows, cols, bias=True)

    trainable = np.ones(offset, dtype=bool)
    for lo, hi in fixed:
        trainable[lo:hi] = False
    idx = np.sort(np.concatenate(prunable)) if prunable else np.zeros(0, dtype=np.int64)
    idx.setflags(write=False)
    trainable.setflags(write=False)
    return Layout(offset, fourier, tuple(dense), idx.astype(np.int64), trainable)


class Mask:
    """Binary keep-mask over the prunable entries of a parameter vector.

    ``bits[i]`` refers to ``params[prunable_map[i]]``. Entries outside
    ``prunable_map`` are never masked.
    """

    __slots__ = ("bits", "prunable_map", "d")

    def __init__(self, bits, prunable_map, d: int):
        bits = np.asarray(bits, dtype=bool)
        prunable_map = np.asarray(prunable_map, dtype=np.int64)
        if bits.shape != prunable_map.shape:
            raise ValueError(
                f"mask has {bits.size} bits for {prunable_map.size} prunable entries")
        self.bits = bits
        self.prunable_map = prunable_map
        self.d = int(d)

    @classmethod
    def ones(cls, arch: ArchSpec) -> "Mask":
        lay = layout(arch)
        return cls(np.ones(lay.prunable.size, dtype=bool), lay.prunable, lay.d)

    def copy(self) -> "Mask":
        return Mask(self.bits.copy(), self.prunable_map, self.d)

    def count(self) -> int:
        """Surviving prunable entries, ||M||_0."""
        return int(np.count_nonzero(self.bits))

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return (self.d == other.d and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.prunable_map, other.prunable_map))

    def __repr__(self) -> str:
        return f"Mask({self.count()}/{self.bits.size} kept, d={self.d})"

    def pruned_indices(self) -> np.ndarray:
        return self.prunable_map[~self.bits]

    def multiplier(self, dtype=np.float64) -> np.ndarray:
        """Length-d 0/1 vector; 1 everywhere except pruned slots."""
        m = np.ones(self.d, dtype=dtype)
        m[self.pruned_indices()] = 0
        return m

    def apply(self, params: np.ndarray) -> np.ndarray:
        """Copy of ``params`` with pruned slots set to +0.0."""
        out = np.array(params, copy=True)
        out[self.pruned_indices()] = 0
        return out

    def issubset(self, other: "Mask") -> bool:
        return bool(np.all(~self.bits | other.bits))


def check_params(arch: ArchSpec, params: np.ndarray, mask: Mask | None = None) -> Layout:
    lay = layout(arch)
    if params.ndim != 1 or params.size != lay.d:
        raise ValueError(f"expected {lay.d} parameters for {arch.kind}, got shape {params.shape}")
    if mask is not None and (mask.d != lay.d or mask.bits.size != lay.prunable.size):
        raise ValueError(
            f"mask covers {mask.bits.size} of d={mask.d}; architecture needs "
            f"{lay.prunable.size} of d={lay.d}")
    return lay


def init(arch: ArchSpec, dtype=np.float64) -> np.ndarray:
    """Seeded random initialization.

    SIREN: first layer U(-1/n, 1/n), later layers U(-sqrt(6/n)/omega0, +...)
    with n the fan-in; biases share their layer's bound. FFN: Fourier matrix
    N(0, sigma^2), later layers U(-1/sqrt(n), 1/sqrt(n)).
    """
    lay = layout(arch)
    rng = np.random.default_rng(arch.seed)
    params = np.zeros(lay.d, dtype=np.float64)
    if lay.fourier is not None:
        f = lay.fourier
        params[f.w_offset:f.w_offset + f.rows * f.cols] = rng.normal(0.0, arch.sigma, f.rows * f.cols)
    for i, layer in enumerate(lay.dense):
        n = layer.cols
        if arch.kind == "siren":
            bound = 1.0 / n if i == 0 else math.sqrt(6.0 / n) / arch.omega0
        else:
            bound = 1.0 / math.sqrt(n)
        size = layer.rows * layer.cols
        params[layer.w_offset:layer.w_offset + size] = rng.uniform(-bound, bound, size)
        if layer.b_offset is not None:
            params[layer.b_offset:layer.b_offset + layer.rows] = rng.uniform(-bound, bound, layer.rows)
    return params.astype(dtype, copy=False)


def encode(arch: ArchSpec, params: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Input to the first trained layer: raw coords, or Fourier features for FFN."""
    lay = layout(arch)
    coords = np.asarray(coords, dtype=params.dtype)
    if lay.fourier is None:
        return coords
    proj = (2 * np.pi) * (coords @ lay.fourier_matrix(params).T)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=1)


def forward(arch: ArchSpec, params: np.ndarray, mask: Mask | None, coords) -> np.ndarray:
    """Evaluate the network on a (N, in_dim) batch of coordinates."""
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != arch.in_dim:
        raise ValueError(f"coords must have shape (N, {arch.in_dim}), got {coords.shape}")
    lay = check_params(arch, params, mask)
    w = params if mask is None else mask.apply(params)
    a = encode(arch, w, coords)
    views = lay.views(w)
    omegas = arch.layer_omegas() if arch.kind == "siren" else None
    for i, (W, b) in enumerate(views):
        z = a @ W.T
        if b is not None:
            z = z + b
        if i == len(views) - 1:
            return z
        if arch.kind == "siren":
            a = np.sin(omegas[i] * z)
        else:
            a = np.maximum(z, 0)
    return a


def param_count(arch: ArchSpec) -> int:
    """Length d of the full parameter vector (FFN Fourier matrix included)."""
    return layout(arch).d


def prunable_count(arch: ArchSpec) -> int:
    return int(layout(arch).prunable.size)


def fixed_count(arch: ArchSpec) -> int:
    """Entries that are never trained (the FFN Fourier matrix)."""
    return int(np.count_nonzero(~layout(arch).trainable))


def surviving_count(mask: Mask, arch: ArchSpec | None = None) -> int:
    """||M||_0, or with ``arch`` the reported total.

    The reported total counts surviving prunable entries plus trained
    entries that are exempt from pruning (e.g. biases when
    ``prune_biases=False``). The fixed FFN Fourier matrix is not included;
    see :func:`fixed_count`.
    """
    if arch is None:
        return mask.count()
    lay = layout(arch)
    exempt = int(np.count_nonzero(lay.trainable)) - int(np.count_nonzero(lay.trainable[lay.prunable]))
    return mask.count() + exempt


def dense_count(arch: ArchSpec) -> int:
    """Reported parameter count of the unpruned network (fixed entries excluded)."""
    return surviving_count(Mask.ones(arch), arch)


def widths_param_counts(arch: ArchSpec, widths: Sequence[int]) -> dict[int, int]:
    return {w: dense_count(arch.replace(width=w)) for w in widths}
