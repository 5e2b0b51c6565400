"""Mask-aware SGD/Adam and the MAML / Reptile outer loops.

Every update leaves pruned entries (and, for Adam, their moments) at
exactly 0.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import grad as G
from .models import ArchSpec, Mask

log = logging.getLogger(__name__)

META_KINDS = ("maml", "fomaml", "reptile")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, d: int, lr: float = 1e-3, dtype=np.float64, **kw) -> "AdamState":
        return cls(np.zeros(d, dtype=dtype), np.zeros(d, dtype=dtype), 0, lr, **kw)


@dataclass(frozen=True)
class MetaConfig:
    outer_lr: float = 1e-5
    inner_lr: float = 1e-3
    # "mean": inner_lr is a step on the per-value MSE, i.e. the SGD step on the
    # raw summed loss is inner_lr / (pixels * channels). "sum": used as given.
    inner_lr_units: str = "mean"
    inner_steps: int = 2
    outer_steps: int = 150_000
    retrain_steps: int = 30_000
    batch_size: int = 3
    meta_kind: str = "maml"
    # "adam" (default) or "sgd": the literal outer update theta -= beta * g
    outer_optimizer: str = "adam"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.meta_kind not in META_KINDS:
            raise ValueError(f"meta_kind must be one of {META_KINDS}")
        if self.inner_lr_units not in ("mean", "sum"):
            raise ValueError("inner_lr_units must be 'mean' or 'sum'")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ValueError("outer_optimizer must be 'adam' or 'sgd'")
        for name in ("inner_steps", "outer_steps", "retrain_steps", "log_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.outer_lr > 0 or not self.inner_lr > 0:
            raise ValueError("learning rates must be > 0")

    def replace(self, **changes) -> "MetaConfig":
        return dataclasses.replace(self, **changes)

    def inner_step(self, signal) -> float:
        """SGD step size on the summed loss of ``signal``."""
        if self.inner_lr_units == "mean":
            return self.inner_lr / np.asarray(signal.targets).size
        return self.inner_lr


def _check(params, mask: Mask, gradient):
    if params.shape != gradient.shape or params.ndim != 1:
        raise ValueError(f"params {params.shape} and gradient {gradient.shape} differ")
    if mask.d != params.size:
        raise ValueError(f"mask is for d={mask.d}, params have {params.size}")
    if not np.all(np.isfinite(gradient)):
        raise G.NonFiniteError("non-finite gradient")


def sgd_step(params: np.ndarray, mask: Mask, gradient: np.ndarray, lr: float) -> np.ndarray:
    _check(params, mask, gradient)
    out = params - lr * gradient
    out[mask.pruned_indices()] = 0
    return out


def adam_step(state: AdamState, params: np.ndarray, mask: Mask, gradient: np.ndarray):
    """One bias-corrected Adam step; returns ``(new_state, new_params)``."""
    _check(params, mask, gradient)
    if state.m.shape != params.shape:
        raise ValueError("Adam state does not match parameter length")
    pruned = mask.pruned_indices()
    g = np.array(gradient, dtype=params.dtype, copy=True)
    g[pruned] = 0
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * (g * g)
    m[pruned] = 0
    v[pruned] = 0
    m_hat = m / (1 - state.beta1 ** step)
    v_hat = v / (1 - state.beta2 ** step)
    out = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    out[pruned] = 0
    if not (np.all(np.isfinite(out)) and np.all(np.isfinite(v))):
        raise G.NonFiniteError("non-finite parameters or moments after Adam step")
    return dataclasses.replace(state, m=m, v=v, step=step), out


def inner_adapt(arch: ArchSpec, params: np.ndarray, mask: Mask, signal, t: int,
                lr: float) -> np.ndarray:
    """``t`` full-batch SGD steps of the masked loss on one signal."""
    if t < 0:
        raise ValueError("t must be >= 0")
    out = mask.apply(params) if t else np.array(params, copy=True)
    for _ in range(t):
        out = sgd_step(out, mask, G.grad(arch, out, mask, signal), lr)
    return out


def meta_batch_gradient(arch: ArchSpec, params: np.ndarray, mask: Mask, batch: Sequence,
                        cfg: MetaConfig):
    """Mean post-adaptation loss and mean meta-gradient over ``batch``."""
    first_order = cfg.meta_kind == "fomaml"
    total = np.zeros_like(params)
    loss = 0.0
    for signal in batch:
        value, g = G.meta_value_and_grad(arch, params, mask, signal, cfg.inner_step(signal),
                                         cfg.inner_steps, first_order)
        total += g
        loss += value
    return loss / len(batch), total / len(batch)


def maml_outer_step(arch: ArchSpec, params: np.ndarray, mask: Mask, batch: Sequence,
                    cfg: MetaConfig, adam: AdamState | None):
    """Average the meta-gradients over ``batch`` and take one outer step.

    The outer step is Adam unless ``cfg.outer_optimizer == "sgd"``, in which
    case ``adam`` is passed through untouched.
    """
    if not batch:
        raise ValueError("batch must contain at least one signal")
    _, g = meta_batch_gradient(arch, params, mask, batch, cfg)
    if cfg.outer_optimizer == "sgd":
        return sgd_step(params, mask, g, cfg.outer_lr), adam
    adam, params = adam_step(adam, params, mask, g)
    return params, adam


def reptile_outer_step(arch: ArchSpec, params: np.ndarray, mask: Mask, batch: Sequence,
                       cfg: MetaConfig) -> np.ndarray:
    """theta += outer_lr * mean_j(adapt_j(theta) - theta)."""
    if not batch:
        raise ValueError("batch must contain at least one signal")
    if cfg.inner_steps < 1:
        raise ValueError("reptile needs inner_steps >= 1")
    start = mask.apply(params)
    delta = np.zeros_like(start)
    for signal in batch:
        delta += inner_adapt(arch, start, mask, signal, cfg.inner_steps,
                             cfg.inner_step(signal)) - start
    out = start + cfg.outer_lr * (delta / len(batch))
    out[mask.pruned_indices()] = 0
    return out


def sample_batch(cfg: MetaConfig, step: int, n: int, phase: int = 0) -> np.ndarray:
    """Indices of the signals drawn at outer step ``step`` (uniform, with replacement)."""
    rng = np.random.default_rng([cfg.seed, phase, step])
    return rng.integers(0, n, size=cfg.batch_size)


class MetaResult(NamedTuple):
    params: np.ndarray
    adam: AdamState | None
    losses: list[tuple[int, float]]


def run_meta(arch: ArchSpec, params: np.ndarray, mask: Mask, signal_set, cfg: MetaConfig,
             steps: int, adam: AdamState | None = None, start_step: int = 0,
             callback: Callable[[int, float], None] | None = None,
             check_mask: bool = False, phase: int = 0) -> MetaResult:
    """Run ``steps`` outer iterations over the training split.

    Batches depend only on ``(cfg.seed, phase, step index)``, so a run resumed at
    ``start_step`` with the saved Adam state continues the same trajectory.
    ``losses`` holds ``(step, mean post-adaptation loss)`` every
    ``cfg.log_every`` steps (and the last step).
    """
    train = signal_set.train if hasattr(signal_set, "train") else list(signal_set)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    params = mask.apply(params)
    if steps == 0:
        return MetaResult(params, adam, [])
    if not train:
        raise ValueError("empty training split")
    if adam is None and cfg.meta_kind != "reptile" and cfg.outer_optimizer == "adam":
        adam = AdamState.zeros(params.size, cfg.outer_lr, params.dtype)
    losses = []
    pruned = mask.pruned_indices()
    for step in range(start_step, start_step + steps):
        batch = [train[i] for i in sample_batch(cfg, step, len(train), phase)]
        if cfg.meta_kind == "reptile":
            params = reptile_outer_step(arch, params, mask, batch, cfg)
            loss = None
        else:
            loss, g = meta_batch_gradient(arch, params, mask, batch, cfg)
            if cfg.outer_optimizer == "sgd":
                params = sgd_step(params, mask, g, cfg.outer_lr)
            else:
                adam, params = adam_step(adam, params, mask, g)
        last = step == start_step + steps - 1
        if cfg.log_every and (step % cfg.log_every == 0 or last):
            if loss is None:
                loss = mean_adapted_loss(arch, params, mask, batch, cfg)
            losses.append((step, loss))
            log.debug("outer step %d: loss %.6g", step, loss)
            if callback is not None:
                callback(step, loss)
        if check_mask:
            assert not np.any(params[pruned]), "pruned parameter resurrected"
            if adam is not None:
                assert not np.any(adam.m[pruned]) and not np.any(adam.v[pruned])
    return MetaResult(params, adam, losses)


def mean_adapted_loss(arch: ArchSpec, params: np.ndarray, mask: Mask, signals: Sequence,
                      cfg: MetaConfig) -> float:
    """Mean loss after ``cfg.inner_steps`` SGD steps, over ``signals``."""
    total = 0.0
    for s in signals:
        adapted = inner_adapt(arch, params, mask, s, cfg.inner_steps, cfg.inner_step(s))
        total += G.forward_loss(arch, adapted, mask, s).value
    return total / max(len(signals), 1)
