"""Per-signal fitting under a step budget, PSNR reporting and baselines' sizing."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import grad as G
from . import imageio
from .models import ArchSpec, Mask, dense_count, fixed_count, forward, surviving_count
from .optim import AdamState, adam_step
from .signals import make_grid

MSE_FLOOR = 1e-12

# Dense-Narrow / Scratch widths for the 256-wide, 4-hidden-layer base network.
DEFAULT_WIDTHS = (256, 230, 206, 184, 164, 148, 132, 118, 106, 94, 84, 76,
                68, 60, 54, 48, 44, 38, 34, 32, 28)


class WidthTable(tuple):
    """Strictly decreasing tuple of even candidate widths."""

    def __new__(cls, widths: Sequence[int] = DEFAULT_WIDTHS):
        widths = tuple(int(w) for w in widths)
        if not widths:
            raise ValueError("width table is empty")
        if any(w <= 0 or w % 2 for w in widths):
            raise ValueError("widths must be positive even numbers")
        if any(a <= b for a, b in zip(widths, widths[1:])):
            raise ValueError("widths must be strictly decreasing")
        return super().__new__(cls, widths)

    @classmethod
    def even_range(cls, top: int, bottom: int) -> "WidthTable":
        return cls(range(top, bottom - 1, -2))


def psnr(mse: float, max_val: float = 1.0) -> float:
    """10 log10(max^2 / mse), with mse clamped below at 1e-12."""
    if mse < 0 or math.isnan(mse):
        raise ValueError(f"mse must be non-negative, got {mse}")
    return 10.0 * math.log10(max_val ** 2 / max(mse, MSE_FLOOR))


def mse_of_loss(loss: float, signal) -> float:
    return loss / signal.targets.size


def fit_signal(arch: ArchSpec, init_params: np.ndarray, mask: Mask, signal, budget: int,
               lr: float = 1e-3, adam: AdamState | None = None, return_state: bool = False):
    """Full-batch Adam for ``budget`` steps from ``init_params``.

    Returns ``(params, trajectory)`` where ``trajectory[k]`` is the PSNR
    after ``k`` steps (so it has ``budget + 1`` entries). A running Adam
    state can be passed in and, with ``return_state``, is returned third.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    params = mask.apply(init_params)
    if adam is None:
        adam = AdamState.zeros(params.size, lr, params.dtype)
    traj = np.empty(budget + 1)
    for k in range(budget):
        loss, g = G.value_and_grad(arch, params, mask, signal)
        traj[k] = psnr(mse_of_loss(loss, signal))
        adam, params = adam_step(adam, params, mask, g)
    traj[budget] = psnr(mse_of_loss(G.forward_loss(arch, params, mask, signal).value, signal))
    if return_state:
        return params, traj, adam
    return params, traj


def bits_per_pixel(surviving_params: int, bits_per_param: int, height: int, width: int,
                   half_precision: bool = False) -> float:
    """(#params x bits per param) / #pixels; ``half_precision`` halves the bit width."""
    if surviving_params <= 0 or bits_per_param <= 0 or height <= 0 or width <= 0:
        raise ValueError("bits_per_pixel inputs must be positive")
    bits = bits_per_param / 2 if half_precision else bits_per_param
    return surviving_params * bits / (height * width)


def dense_narrow_width_for(table: Sequence[int], arch: ArchSpec, target_params: int) -> int:
    """Smallest table width whose dense parameter count is at least ``target_params``."""
    best = None
    for w in WidthTable(table):
        if dense_count(arch.replace(width=w)) >= target_params:
            best = w
        else:
            break
    if best is None:
        raise ValueError(f"no width in the table reaches {target_params} parameters")
    return best


def draw_signals(signals: Sequence, n_signals: int, seed: int) -> list[int]:
    """Seeded draw without replacement; depends only on (len, n, seed)."""
    rng = np.random.default_rng(seed)
    k = min(n_signals, len(signals))
    return [int(i) for i in rng.choice(len(signals), size=k, replace=False)]


@dataclass
class EvalReport:
    method: str
    seed: int
    signal_ids: list[str]
    trajectories: np.ndarray
    surviving_params: int
    total_params: int
    fixed_params: int = 0
    bits_per_pixel: float = float("nan")
    config: dict = field(default_factory=dict)

    @property
    def budget(self) -> int:
        return self.trajectories.shape[1] - 1

    @property
    def final(self) -> np.ndarray:
        return self.trajectories[:, -1]

    @property
    def mean_psnr(self) -> float:
        return float(self.final.mean())

    @property
    def std_psnr(self) -> float:
        return float(self.final.std())

    def rows(self):
        mean = self.trajectories.mean(axis=0)
        std = self.trajectories.std(axis=0)
        for step in range(self.trajectories.shape[1]):
            yield {"method": self.method, "seed": self.seed,
                   "surviving_params": self.surviving_params,
                   "total_params": self.total_params, "step": step,
                   "mean_psnr": float(mean[step]), "std_psnr": float(std[step])}

    def summary(self) -> dict:
        return {"method": self.method, "seed": self.seed,
                "surviving_params": self.surviving_params,
                "total_params": self.total_params, "fixed_params": self.fixed_params,
                "bits_per_pixel": self.bits_per_pixel, "budget": self.budget,
                "mean_psnr": self.mean_psnr, "std_psnr": self.std_psnr,
                "signal_ids": list(self.signal_ids),
                "per_signal_psnr": [float(x) for x in self.final],
                "config": self.config}


REPORT_FIELDS = ("method", "seed", "surviving_params", "total_params", "step",
                 "mean_psnr", "std_psnr")


def write_reports_csv(path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            for row in rep.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_reports_json(path, reports: Sequence[EvalReport], config: dict | None = None) -> None:
    payload = {"config": config or {}, "reports": [r.summary() for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def evaluate(arch: ArchSpec, params: np.ndarray, mask: Mask, signal_set, split: str = "val",
             n_signals: int = 100, budget: int = 100, seed: int = 0, lr: float = 1e-3,
             method: str = "", workers: int = 1,
             fitter: Callable | None = None, config: dict | None = None) -> EvalReport:
    """Fit each drawn signal independently from the same ``(params, mask)``.

    ``fitter(signal) -> trajectory`` replaces the default Adam fit, e.g. for
    per-signal pruning baselines.
    """
    signals = signal_set.split(split) if hasattr(signal_set, "split") else list(signal_set)
    if not signals:
        raise ValueError(f"cannot evaluate on an empty {split!r} split")
    drawn = [signals[i] for i in draw_signals(signals, n_signals, seed)]
    if fitter is None:
        def fitter(s):
            return fit_signal(arch, params, mask, s, budget, lr)[1]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trajs = list(pool.map(fitter, drawn))
    else:
        trajs = [fitter(s) for s in drawn]
    first = drawn[0]
    surviving = surviving_count(mask, arch)
    return EvalReport(
        method=method, seed=seed, signal_ids=[s.id for s in drawn],
        trajectories=np.vstack(trajs), surviving_params=surviving,
        total_params=dense_count(arch), fixed_params=fixed_count(arch),
        bits_per_pixel=bits_per_pixel(max(surviving, 1), 32, first.height, first.width),
        config=dict(config or {}))


def render(arch: ArchSpec, params: np.ndarray, mask: Mask | None, height: int, width: int,
           out_path=None) -> np.ndarray:
    """Evaluate on a height x width grid, quantize to 8 bit and optionally write PPM/PNG."""
    values = forward(arch, params, mask, make_grid(height, width))
    image = imageio.to_uint8(values.reshape(height, width, arch.out_dim))
    if out_path is not None:
        imageio.write_image(out_path, image)
    return image
