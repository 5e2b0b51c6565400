"""Global magnitude pruning and the pruning pipelines built on it.

Each pruning round removes ``floor(gamma * ||M||_0)`` of the surviving
prunable entries (computed exactly on the binary value of ``gamma``).
Ties at the threshold are pruned lowest flat index first.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from . import grad as G
from .evaluation import fit_signal
from .models import ArchSpec, Mask, init, prunable_count
from .optim import AdamState, MetaConfig, mean_adapted_loss, run_meta

log = logging.getLogger(__name__)


def prune_count(survivors: int, gamma: float) -> int:
    """floor(gamma * survivors), exact for the given float ``gamma``."""
    return math.floor(Fraction(gamma) * survivors)


def _check_gamma(gamma: float):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


@dataclass(frozen=True)
class SparsitySchedule:
    gamma: float = 0.2
    target_kappa: int = 1

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.target_kappa < 1:
            raise ValueError("target_kappa must be >= 1")

    @classmethod
    def to_fraction(cls, gamma: float, fraction: float, prunable: int) -> "SparsitySchedule":
        """Schedule that stops once survivors <= fraction * prunable."""
        return cls(gamma, max(1, math.floor(fraction * prunable)))

    def survivors(self, start: int) -> list[int]:
        """Survivor counts from ``start`` until at or below ``target_kappa``."""
        seq = [start]
        while seq[-1] > self.target_kappa:
            k = prune_count(seq[-1], self.gamma)
            if k == 0:
                raise RuntimeError(
                    f"pruning stalls at {seq[-1]} survivors before reaching {self.target_kappa}")
            seq.append(seq[-1] - k)
        return seq

    def rounds(self, start: int) -> int:
        return len(self.survivors(start)) - 1


def magnitude_scores(params: np.ndarray, mask: Mask) -> np.ndarray:
    return mask.bits * np.abs(params[mask.prunable_map])


def magnitude_prune(params: np.ndarray, mask: Mask, gamma: float, count: int | None = None) -> Mask:
    """Remove the smallest-|theta| survivors under one global threshold.

    ``count`` overrides the number removed (default ``floor(gamma*||M||_0)``).
    """
    _check_gamma(gamma)
    survivors = np.flatnonzero(mask.bits)
    if survivors.size < 2:
        raise ValueError("need at least two surviving entries to prune")
    k = prune_count(survivors.size, gamma) if count is None else int(count)
    new = mask.copy()
    if k <= 0:
        return new
    scores = np.abs(params[mask.prunable_map[survivors]])
    # stable sort keeps lower flat index first among equal scores
    order = np.argsort(scores, kind="stable")
    new.bits[survivors[order[:k]]] = False
    return new


def prune_threshold(params: np.ndarray, mask: Mask, new_mask: Mask) -> float:
    """Largest magnitude removed between ``mask`` and ``new_mask``."""
    removed = mask.bits & ~new_mask.bits
    if not removed.any():
        return float("nan")
    return float(np.abs(params[mask.prunable_map[removed]]).max())


def random_prune(mask: Mask, gamma: float, seed: int) -> Mask:
    """Remove ``floor(gamma*||M||_0)`` survivors uniformly without replacement."""
    _check_gamma(gamma)
    survivors = np.flatnonzero(mask.bits)
    k = prune_count(survivors.size, gamma)
    new = mask.copy()
    if k > 0:
        rng = np.random.default_rng(seed)
        new.bits[rng.choice(survivors, size=k, replace=False)] = False
    return new


class PruneRound(NamedTuple):
    round: int
    survivors: int
    threshold: float
    loss_before: float
    loss_after: float
    params: np.ndarray
    mask: Mask


@dataclass
class PruneTrace:
    rounds: list[PruneRound] = field(default_factory=list)

    def survivors(self) -> list[int]:
        return [r.survivors for r in self.rounds]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "survivors", "threshold", "loss_before", "loss_after"])
            for r in self.rounds:
                w.writerow([r.round, r.survivors, repr(r.threshold), repr(r.loss_before),
                            repr(r.loss_after)])


def _probe(signal_set, limit=16):
    return signal_set.train[:limit]


def run_meta_sparse_inr(arch: ArchSpec, signal_set, cfg: MetaConfig, sched: SparsitySchedule,
                        method: str = "magnitude", params: np.ndarray | None = None,
                        dtype=np.float64, on_round: Callable[[PruneRound], None] | None = None,
                        prune_seed: int | None = None):
    """Meta-learn, then alternately prune and meta-retrain until ||M||_0 <= kappa.

    ``params`` skips the ``cfg.outer_steps`` pretraining and starts pruning
    from an already meta-trained dense vector. ``method="random"`` swaps the
    magnitude criterion for uniform random pruning. Returns
    ``(params, mask, trace)``; the trace keeps a snapshot per round.
    """
    if method not in ("magnitude", "random"):
        raise ValueError("method must be 'magnitude' or 'random'")
    mask = Mask.ones(arch)
    if params is None:
        params = init(arch, dtype)
        params = run_meta(arch, params, mask, signal_set, cfg, cfg.outer_steps).params
    else:
        params = mask.apply(np.asarray(params, dtype=dtype))
    prune_seed = cfg.seed if prune_seed is None else prune_seed
    trace = PruneTrace()
    probe = _probe(signal_set)
    rnd = 0
    while mask.count() > sched.target_kappa:
        rnd += 1
        if method == "magnitude":
            new_mask = magnitude_prune(params, mask, sched.gamma)
            threshold = prune_threshold(params, mask, new_mask)
        else:
            new_mask = random_prune(mask, sched.gamma, seed=prune_seed * 1_000_003 + rnd)
            threshold = float("nan")
        if new_mask.count() == mask.count():
            raise RuntimeError(f"round {rnd} pruned nothing at {mask.count()} survivors")
        mask = new_mask
        params = mask.apply(params)
        before = mean_adapted_loss(arch, params, mask, probe, cfg)
        # fresh outer optimizer state after every prune
        params = run_meta(arch, params, mask, signal_set, cfg, cfg.retrain_steps,
                          phase=rnd).params
        after = mean_adapted_loss(arch, params, mask, probe, cfg)
        record = PruneRound(rnd, mask.count(), threshold, before, after, params.copy(), mask.copy())
        trace.rounds.append(record)
        log.info("round %d: %d survivors, adapted loss %.4g -> %.4g", rnd, mask.count(),
                 before, after)
        if on_round is not None:
            on_round(record)
    return params, mask, trace


class Ticket(NamedTuple):
    mask: Mask
    init: np.ndarray
    trajectory: np.ndarray


def winning_ticket(arch: ArchSpec, signal, train_steps: int, gamma: float, rounds: int,
                   lr: float = 1e-4, dtype=np.float64,
                   on_round: Callable[[int, Ticket], None] | None = None) -> list[Ticket]:
    """Iterative magnitude pruning with rewinding to the initialization.

    Round ``r`` trains the round-``r`` ticket for ``train_steps`` Adam steps,
    records its PSNR trajectory, prunes ``gamma`` of the survivors of the
    *trained* weights and rewinds survivors to the initial values. Returns
    ``rounds + 1`` tickets; entry 0 is the dense network.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    _check_gamma(gamma)
    theta0 = init(arch, dtype)
    mask = Mask.ones(arch)
    tickets = []
    for r in range(rounds + 1):
        start = mask.apply(theta0)
        trained, traj = fit_signal(arch, start, mask, signal, train_steps, lr)
        ticket = Ticket(mask, start, traj)
        tickets.append(ticket)
        if on_round is not None:
            on_round(r, ticket)
        if r < rounds:
            mask = magnitude_prune(trained, mask, gamma)
    return tickets


def per_signal_oneshot(arch: ArchSpec, meta_params: np.ndarray, signal, target_kappa: int,
                       lr: float = 1e-3, epochs: tuple[int, int] = (50, 50)):
    """Fit, prune once to ``target_kappa`` survivors, fit again.

    One epoch is one full-batch Adam step; the Adam state carries across the
    prune. Returns ``(params, mask, trajectory)``.
    """
    mask = Mask.ones(arch)
    if not 1 <= target_kappa <= mask.count():
        raise ValueError("target_kappa must lie in [1, prunable count]")
    params, traj1, adam = fit_signal(arch, meta_params, mask, signal, epochs[0], lr,
                                     return_state=True)
    remove = mask.count() - target_kappa
    if remove:
        mask = magnitude_prune(params, mask, 0.5, count=remove)
        params = mask.apply(params)
    params, traj2, _ = fit_signal(arch, params, mask, signal, epochs[1], lr, adam=adam,
                                  return_state=True)
    return params, mask, np.concatenate([traj1[:-1], traj2])


def imp_segment(rounds: int, total: int = 100) -> int:
    return total // (rounds + 1)


def per_signal_imp(arch: ArchSpec, meta_params: np.ndarray, signal, rounds: int,
                   lr: float = 1e-3, gamma: float = 0.2, total: int = 100):
    """``rounds`` prunes of ``gamma`` interleaved with floor(total/(rounds+1))-step fits.

    Returns ``(params, mask, trajectory)``.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    seg = imp_segment(rounds, total)
    mask = Mask.ones(arch)
    params, traj, adam = fit_signal(arch, meta_params, mask, signal, seg, lr, return_state=True)
    parts = [traj[:-1]]
    for _ in range(rounds):
        mask = magnitude_prune(params, mask, gamma)
        params = mask.apply(params)
        params, traj, adam = fit_signal(arch, params, mask, signal, seg, lr, adam=adam,
                                        return_state=True)
        parts.append(traj[:-1])
    parts.append(traj[-1:])
    return params, mask, np.concatenate(parts)


def kappa_for_fraction(arch: ArchSpec, fraction: float) -> int:
    return max(1, math.floor(fraction * prunable_count(arch)))
