"""JSON experiment configuration with named presets.

A config is one JSON object with the blocks ``arch``, ``data``, ``meta``,
``prune``, ``eval`` and ``ticket`` plus a few top-level run options. Every
block is optional on input (missing keys keep their defaults) but unknown
keys anywhere raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .evaluation import DEFAULT_WIDTHS, WidthTable
from .models import ArchSpec
from .optim import MetaConfig
from .pruning import SparsitySchedule

PRUNE_METHODS = ("meta_sparse", "random", "dense_narrow", "scratch", "oneshot", "imp", "ticket")
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class DataConfig:
    # "synth" or a directory of .ppm/.png images
    source: str = "synth"
    size: int = 32
    seed: int = 0
    n: int = 10
    n_val: int | None = None
    split_ratio: float = 0.8
    # short side before center-cropping directory images (None: only upsample)
    resize_to: int | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("data.size must be >= 1")
        if not 0.0 < self.split_ratio <= 1.0:
            raise ConfigError("data.split_ratio must lie in (0, 1]")
        if self.source == "synth" and (self.n < 2 or self.size < 8):
            raise ConfigError("synthetic data needs n >= 2 and size >= 8")


@dataclass(frozen=True)
class PruneConfig:
    method: str = "meta_sparse"
    gamma: float = 0.2
    # stop once survivors <= target_fraction * prunable count
    target_fraction: float = 0.05
    oneshot_epochs: tuple[int, int] = (50, 50)
    imp_rounds: int = 3

    def __post_init__(self):
        if self.method not in PRUNE_METHODS:
            raise ConfigError(f"prune.method must be one of {PRUNE_METHODS}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("prune.gamma must lie in (0, 1)")
        if not 0.0 < self.target_fraction <= 1.0:
            raise ConfigError("prune.target_fraction must lie in (0, 1]")
        object.__setattr__(self, "oneshot_epochs", tuple(int(e) for e in self.oneshot_epochs))
        if len(self.oneshot_epochs) != 2 or min(self.oneshot_epochs) < 0:
            raise ConfigError("prune.oneshot_epochs must be two non-negative ints")
        if self.imp_rounds < 1:
            raise ConfigError("prune.imp_rounds must be >= 1")

    def schedule(self, prunable: int) -> SparsitySchedule:
        return SparsitySchedule.to_fraction(self.gamma, self.target_fraction, prunable)


@dataclass(frozen=True)
class EvalConfig:
    budget: int = 100
    n_signals: int = 100
    lr: float = 1e-3
    seed: int = 0
    split: str = "val"
    widths: tuple[int, ...] = DEFAULT_WIDTHS

    def __post_init__(self):
        if self.budget < 0 or self.n_signals < 1:
            raise ConfigError("eval.budget must be >= 0 and eval.n_signals >= 1")
        if not self.lr > 0:
            raise ConfigError("eval.lr must be > 0")
        if self.split not in ("train", "val"):
            raise ConfigError("eval.split must be 'train' or 'val'")
        try:
            object.__setattr__(self, "widths", tuple(WidthTable(self.widths)))
        except ValueError as exc:
            raise ConfigError(f"eval.widths: {exc}") from None


@dataclass(frozen=True)
class TicketConfig:
    train_steps: int = 50_000
    rounds: int = 10
    lr: float = 1e-4
    gamma: float = 0.2
    # image file; None uses the first training signal of the data block
    image: str | None = None

    def __post_init__(self):
        if self.train_steps < 1 or self.rounds < 1:
            raise ConfigError("ticket.train_steps and ticket.rounds must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("ticket.gamma must lie in (0, 1)")


_BLOCKS = {"arch": ArchSpec, "data": DataConfig, "meta": MetaConfig, "prune": PruneConfig,
           "eval": EvalConfig, "ticket": TicketConfig}


@dataclass(frozen=True)
class ExperimentConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    data: DataConfig = field(default_factory=DataConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ticket: TicketConfig = field(default_factory=TicketConfig)
    precision: str = "f32"
    workers: int = 1
    out: str = "runs"
    name: str = ""

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for block in ("prune", "eval"):
            for k, v in out[block].items():
                if isinstance(v, tuple):
                    out[block][k] = list(v)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def override(self, *, seed: int | None = None, workers: int | None = None,
                 precision: str | None = None, out: str | None = None) -> "ExperimentConfig":
        """Apply command-line overrides. ``seed`` reseeds init, batches, data and eval."""
        cfg = self
        if seed is not None:
            cfg = cfg.replace(arch=cfg.arch.replace(seed=seed), meta=cfg.meta.replace(seed=seed),
                              data=dataclasses.replace(cfg.data, seed=seed),
                              eval=dataclasses.replace(cfg.eval, seed=seed))
        if workers is not None:
            cfg = cfg.replace(workers=workers)
        if precision is not None:
            cfg = cfg.replace(precision=precision)
        if out is not None:
            cfg = cfg.replace(out=out)
        return cfg


def _build(cls, raw: Any, where: str, base=None):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    values = dataclasses.asdict(base) if base is not None else {}
    if cls is ArchSpec and "width" in raw and "fourier_dim" not in raw:
        # let an FFN encoding size that was derived from the old width re-derive
        values.pop("fourier_dim", None)
    values.update(raw)
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw: Any, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Validate ``raw`` and merge it over ``base`` (default: built-in defaults).

    A top-level ``"preset"`` key selects the base by name.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    if "preset" in raw:
        if base is not None:
            raise ConfigError("'preset' cannot be combined with an explicit base")
        base = preset(raw.pop("preset"))
    base = base or ExperimentConfig()
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    changes = {}
    for key, value in raw.items():
        if key in _BLOCKS:
            changes[key] = _build(_BLOCKS[key], value, key, getattr(base, key))
        else:
            changes[key] = value
    try:
        return base.replace(**changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def loads(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def _full() -> ExperimentConfig:
    return ExperimentConfig(
        arch=ArchSpec(kind="siren", width=256, hidden_layers=4, omega0=200.0),
        data=DataConfig(source="data/celeba", size=178),
        meta=MetaConfig(),
        prune=PruneConfig(gamma=0.2, target_fraction=0.05),
        eval=EvalConfig(budget=100, n_signals=100, lr=1e-3),
        name="full")


def _desk() -> ExperimentConfig:
    return ExperimentConfig(
        arch=ArchSpec(kind="siren", width=64, hidden_layers=2, omega0=30.0),
        data=DataConfig(source="synth", size=32, n=10),
        meta=MetaConfig(outer_lr=DESK_OUTER_LR, inner_lr=1e-3, inner_steps=2, outer_steps=5000,
                        retrain_steps=1000, batch_size=3),
        prune=PruneConfig(gamma=0.2, target_fraction=0.33),
        eval=EvalConfig(budget=100, n_signals=10, lr=1e-3, widths=tuple(range(64, 7, -2))),
        ticket=TicketConfig(train_steps=2000, rounds=3, lr=1e-4),
        name="desk")


# outer Adam step for the desk preset (5,000 steps instead of 150,000)
DESK_OUTER_LR = 1e-4


def _presets() -> dict[str, ExperimentConfig]:
    full = _full()
    desk = _desk()
    return {
        "full": full,
        "full_ffn": full.replace(arch=ArchSpec(kind="ffn", width=256, hidden_layers=4,
                                                 sigma=20.0), name="full_ffn"),
        "full_imagenette": full.replace(
            data=DataConfig(source="data/imagenette", size=178, resize_to=200),
            name="full_imagenette"),
        "full_ticket": full.replace(
            arch=ArchSpec(kind="siren", width=256, hidden_layers=4, omega0=30.0),
            data=DataConfig(source="data/kodak", size=512, split_ratio=1.0),
            prune=PruneConfig(method="ticket", gamma=0.2),
            ticket=TicketConfig(train_steps=50_000, rounds=10, lr=1e-4),
            name="full_ticket"),
        "full_ticket_ffn": full.replace(
            arch=ArchSpec(kind="ffn", width=256, hidden_layers=4, sigma=20.0),
            data=DataConfig(source="data/kodak", size=512, split_ratio=1.0),
            prune=PruneConfig(method="ticket", gamma=0.2),
            ticket=TicketConfig(train_steps=50_000, rounds=10, lr=1e-4),
            name="full_ticket_ffn"),
        "desk": desk,
        "desk_ticket": desk.replace(
            arch=ArchSpec(kind="siren", width=128, hidden_layers=3, omega0=30.0),
            data=DataConfig(source="synth", size=64, n=2),
            prune=PruneConfig(method="ticket", gamma=0.2),
            eval=dataclasses.replace(desk.eval, widths=tuple(range(128, 15, -2))),
            ticket=TicketConfig(train_steps=2000, rounds=3, lr=1e-4),
            name="desk_ticket"),
    }


PRESET_NAMES = ("full", "full_ffn", "full_imagenette", "full_ticket", "full_ticket_ffn",
                "desk", "desk_ticket")


def preset(name: str) -> ExperimentConfig:
    presets = _presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return presets[name]
