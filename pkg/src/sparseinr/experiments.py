"""Scaled-down comparison runs shared by the acceptance suite and the demos."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import config as C
from .evaluation import dense_narrow_width_for, evaluate, fit_signal
from .models import Mask, dense_count, init, prunable_count, surviving_count
from .optim import run_meta
from .pruning import SparsitySchedule, run_meta_sparse_inr, winning_ticket
from .signals import synth_set

log = logging.getLogger(__name__)


@dataclass
class Level:
    round: int
    survivors: int
    fraction: float
    params: int
    narrow_width: int
    narrow_params: int
    psnr: dict = field(default_factory=dict)


@dataclass
class OrderingRun:
    seed: int
    dense_psnr: float
    scratch_dense_psnr: float
    levels: list[Level]
    seconds: float


def _reptile_meta(cfg: C.ExperimentConfig):
    return cfg.meta.replace(meta_kind="reptile", outer_lr=REPTILE_OUTER_LR,
                            inner_lr=REPTILE_INNER_LR, inner_lr_units="mean")


# Reptile interpolation step and inner SGD step (per-value MSE units); the
# MAML inner step is too small to move the weights enough for Reptile.
REPTILE_OUTER_LR = 0.1
REPTILE_INNER_LR = 1.0


def ordering_run(cfg: C.ExperimentConfig, seed: int, n_levels: int = 3,
                 reptile: bool = False, train_split: bool = True) -> OrderingRun:
    """One seed of the Meta-SparseINR / Random / Dense-Narrow / Scratch comparison.

    Evaluates the ``n_levels`` sparsest levels of the schedule in ``cfg.prune``.
    With ``reptile`` the Reptile variant of the pipeline is added at the
    sparsest level; ``train_split`` adds a training-split evaluation of
    Meta-SparseINR.
    """
    t0 = time.perf_counter()
    cfg = cfg.override(seed=seed)
    arch, dtype, ev = cfg.arch, cfg.dtype, cfg.eval
    data = synth_set(cfg.data.seed, cfg.data.n, cfg.data.size, n_val=cfg.data.n_val)
    mask = Mask.ones(arch)
    theta0 = init(arch, dtype)

    def score(a, p, m, split="val"):
        return evaluate(a, p, m, data, split=split, n_signals=ev.n_signals, budget=ev.budget,
                        seed=ev.seed, lr=ev.lr).mean_psnr

    dense = run_meta(arch, theta0, mask, data, cfg.meta, cfg.meta.outer_steps).params
    sched = cfg.prune.schedule(prunable_count(arch))
    _, _, trace = run_meta_sparse_inr(arch, data, cfg.meta, sched, "magnitude", params=dense,
                                      dtype=dtype)
    _, _, rtrace = run_meta_sparse_inr(arch, data, cfg.meta, sched, "random", params=dense,
                                       dtype=dtype, prune_seed=seed)
    narrow_cache: dict[int, tuple[float, float]] = {}
    levels = []
    for rec, rrec in zip(trace.rounds[-n_levels:], rtrace.rounds[-n_levels:]):
        assert rec.survivors == rrec.survivors
        count = surviving_count(rec.mask, arch)
        width = dense_narrow_width_for(ev.widths, arch, count)
        narrow = arch.replace(width=width)
        if width not in narrow_cache:
            nmask = Mask.ones(narrow)
            n0 = init(narrow, dtype)
            nmeta = run_meta(narrow, n0, nmask, data, cfg.meta, cfg.meta.outer_steps).params
            narrow_cache[width] = (score(narrow, nmeta, nmask), score(narrow, n0, nmask))
        lv = Level(rec.round, rec.survivors, rec.survivors / len(mask), count, width,
                   dense_count(narrow))
        lv.psnr["meta_sparse"] = score(arch, rec.params, rec.mask)
        lv.psnr["random"] = score(arch, rrec.params, rrec.mask)
        lv.psnr["dense_narrow"], lv.psnr["scratch"] = narrow_cache[width]
        if train_split:
            lv.psnr["meta_sparse_train"] = score(arch, rec.params, rec.mask, "train")
        levels.append(lv)
        log.info("seed %d level %d (%d params): %s", seed, rec.round, count, lv.psnr)
    if reptile:
        rcfg = _reptile_meta(cfg)
        rdense = run_meta(arch, theta0, mask, data, rcfg, rcfg.outer_steps).params
        target = trace.rounds[-1].survivors
        rsched = SparsitySchedule(cfg.prune.gamma, target)
        _, _, reptrace = run_meta_sparse_inr(arch, data, rcfg, rsched, "magnitude",
                                             params=rdense, dtype=dtype)
        last = reptrace.rounds[-1]
        levels[-1].psnr["reptile_sparse"] = score(arch, last.params, last.mask)
    return OrderingRun(seed, score(arch, dense, mask), score(arch, theta0, mask), levels,
                       time.perf_counter() - t0)


def mean_margins(runs: list[OrderingRun]) -> list[dict]:
    """Per level (sparsest last): seed-averaged PSNR per method and the margins."""
    out = []
    for i in range(len(runs[0].levels)):
        per = [r.levels[i] for r in runs]
        methods = per[0].psnr.keys()
        mean = {m: float(np.mean([lv.psnr[m] for lv in per])) for m in methods}
        row = {"round": per[0].round, "fraction": per[0].fraction, "params": per[0].params,
               "narrow_params": per[0].narrow_params, "psnr": mean,
               "vs_random": mean["meta_sparse"] - mean["random"],
               "vs_scratch": mean["meta_sparse"] - mean["scratch"],
               "vs_dense_narrow": mean["meta_sparse"] - mean["dense_narrow"]}
        if "meta_sparse_train" in mean:
            row["train_val_gap"] = abs(mean["meta_sparse_train"] - mean["meta_sparse"])
        if "reptile_sparse" in mean:
            row["reptile_vs_scratch"] = mean["reptile_sparse"] - mean["scratch"]
        out.append(row)
    return out


@dataclass
class TicketComparison:
    dense_psnr: float
    ticket_survivors: list[int]
    ticket_peak: list[float]
    narrow_width: int
    narrow_params: int
    narrow_peak: float


def ticket_comparison(cfg: C.ExperimentConfig, signal, rounds: int | None = None
                      ) -> TicketComparison:
    """Winning tickets for ``rounds`` prunes vs. the dense-narrow net matching the last one."""
    t, arch = cfg.ticket, cfg.arch
    rounds = t.rounds if rounds is None else rounds
    tickets = winning_ticket(arch, signal, t.train_steps, t.gamma, rounds, t.lr, cfg.dtype)
    last = tickets[-1]
    width = dense_narrow_width_for(cfg.eval.widths, arch, surviving_count(last.mask, arch))
    narrow = arch.replace(width=width)
    _, traj = fit_signal(narrow, init(narrow, cfg.dtype), Mask.ones(narrow), signal,
                         t.train_steps, t.lr)
    return TicketComparison(float(tickets[0].trajectory.max()),
                            [tk.mask.count() for tk in tickets],
                            [float(tk.trajectory.max()) for tk in tickets],
                            width, dense_count(narrow), float(traj.max()))
