"""Command-line runner: ``python -m sparseinr <subcommand> [options]``.

Every subcommand reads one JSON config (``--config`` or ``--preset``), applies
the ``--seed/--workers/--precision/--out`` overrides and writes its artifacts
plus a ``config.json`` echo into ``--out``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as C
from . import imageio
from .evaluation import (EvalReport, dense_narrow_width_for, evaluate, fit_signal, psnr,
                         render, write_reports_csv, write_reports_json)
from .grad import NonFiniteError
from .models import Mask, dense_count, init, prunable_count, surviving_count
from .optim import AdamState, run_meta
from .pruning import per_signal_imp, prune_count, per_signal_oneshot, run_meta_sparse_inr, winning_ticket
from .signals import DataError, Signal, SignalSet, load_image, load_image_dir, synth_set

log = logging.getLogger("sparseinr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------- helpers

def load_data(cfg: C.ExperimentConfig) -> SignalSet:
    """Synthetic set, a directory with ``train/`` and ``val/`` subdirectories,
    or a flat directory split by ``data.split_ratio``."""
    d = cfg.data
    if d.source == "synth":
        return synth_set(d.seed, d.n, d.size, n_val=d.n_val)
    root = Path(d.source)
    if not root.is_dir():
        raise DataError(f"data directory {root} does not exist")
    if (root / "train").is_dir() and (root / "val").is_dir():
        train = load_image_dir(root / "train", d.size, 1.0, d.seed, d.resize_to).train
        val = load_image_dir(root / "val", d.size, 1.0, d.seed, d.resize_to).train
        return SignalSet(train, val, source=str(root))
    return load_image_dir(root, d.size, d.split_ratio, d.seed, d.resize_to)


def _bits(cfg) -> int:
    return 64 if cfg.precision == "f64" else 32


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out: Path, cfg, **extra) -> None:
    payload = cfg.to_dict()
    payload.update(extra)
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_ckpt(path, cfg):
    try:
        arch, params, mask = ckpt.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    except ckpt.CheckpointError as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None
    return arch, params.astype(cfg.dtype), mask


def _save_state(path: Path, adam: AdamState | None, next_step: int) -> None:
    arrays = {"next_step": np.array(next_step)}
    if adam is not None:
        arrays.update(m=adam.m, v=adam.v, step=np.array(adam.step), lr=np.array(adam.lr))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _load_state(path: Path, dtype):
    with np.load(path) as z:
        next_step = int(z["next_step"])
        if "m" not in z:
            return None, next_step
        adam = AdamState(z["m"].astype(dtype), z["v"].astype(dtype), int(z["step"]),
                         float(z["lr"]))
    return adam, next_step


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ------------------------------------------------------------ subcommands

def cmd_synth_data(cfg, args) -> int:
    """Write the configured synthetic set as PNG files under train/ and val/."""
    data = synth_set(cfg.data.seed, cfg.data.n, cfg.data.size, n_val=cfg.data.n_val)
    out = _out(cfg)
    for split in ("train", "val"):
        folder = out / split
        folder.mkdir(exist_ok=True)
        for s in data.split(split):
            imageio.write_image(folder / f"{s.id}.png", imageio.to_uint8(s.image))
    _echo(out, cfg, source=data.source)
    print(f"wrote {len(data.train)} train / {len(data.val)} val images to {out}")
    return EXIT_OK


def cmd_meta_train(cfg, args) -> int:
    """Initialize and meta-train for ``meta.outer_steps`` (or ``--steps``).

    With ``--resume`` the run continues from ``meta.ckpt`` + ``meta_state.npz``
    in the output directory.
    """
    data = load_data(cfg)
    out = _out(cfg)
    ck, state = out / "meta.ckpt", out / "meta_state.npz"
    if args.resume:
        if not (ck.exists() and state.exists()):
            raise DataError(f"nothing to resume in {out}")
        arch, params, mask = _load_ckpt(ck, cfg)
        if arch != cfg.arch:
            raise C.ConfigError("checkpoint architecture differs from the config")
        adam, start = _load_state(state, cfg.dtype)
    else:
        arch, mask = cfg.arch, Mask.ones(cfg.arch)
        params, adam, start = init(arch, cfg.dtype), None, 0
    steps = cfg.meta.outer_steps - start if args.steps is None else args.steps
    steps = max(steps, 0)
    result = run_meta(arch, params, mask, data, cfg.meta, steps, adam=adam, start_step=start)
    ckpt.save(ck, arch, result.params, mask, bits=_bits(cfg))
    _save_state(state, result.adam, start + steps)
    log_path = out / "meta_losses.csv"
    mode = "a" if args.resume and log_path.exists() else "w"
    with open(log_path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(["step", "loss"])
        for step, loss in result.losses:
            w.writerow([step, repr(float(loss))])
    _echo(out, cfg, completed_steps=start + steps)
    print(f"meta-trained {start} -> {start + steps} steps; checkpoint {ck}")
    return EXIT_OK


def cmd_prune_loop(cfg, args) -> int:
    """Alternate pruning and meta-retraining, one checkpoint per level."""
    if cfg.prune.method not in ("meta_sparse", "random"):
        raise C.ConfigError("prune-loop needs prune.method 'meta_sparse' or 'random'")
    data = load_data(cfg)
    out = _out(cfg)
    source = Path(args.checkpoint) if args.checkpoint else out / "meta.ckpt"
    arch, params, mask = _load_ckpt(source, cfg)
    if mask.count() != len(mask):
        raise DataError("prune-loop expects a dense (unpruned) checkpoint")
    sched = cfg.prune.schedule(prunable_count(arch))
    method = "magnitude" if cfg.prune.method == "meta_sparse" else "random"

    def on_round(rec):
        ckpt.save(out / f"level_{rec.round:02d}.ckpt", arch, rec.params, rec.mask, bits=_bits(cfg))
        print(f"round {rec.round}: {rec.survivors} survivors")

    _, _, trace = run_meta_sparse_inr(arch, data, cfg.meta, sched, method=method, params=params,
                                      dtype=cfg.dtype, on_round=on_round)
    trace.to_csv(out / "trace.csv")
    _echo(out, cfg, source_checkpoint=str(source), schedule=sched.survivors(len(mask)))
    return EXIT_OK


def _baseline_widths(cfg, arch, match) -> list[int]:
    if not match:
        return list(cfg.eval.widths)
    widths = []
    for path in match:
        a, _, m = _load_ckpt(path, cfg)
        w = dense_narrow_width_for(cfg.eval.widths, a, surviving_count(m, a))
        if w not in widths:
            widths.append(w)
    return widths


def cmd_eval(cfg, args) -> int:
    """Evaluate checkpoints, or a baseline series, on the configured split."""
    data = load_data(cfg)
    out = _out(cfg)
    ev = cfg.eval
    reports: list[EvalReport] = []
    common = dict(split=ev.split, n_signals=ev.n_signals, budget=ev.budget, seed=ev.seed,
                  lr=ev.lr, workers=cfg.workers, config=cfg.to_dict())
    if args.baseline in ("scratch", "dense_narrow"):
        for w in _baseline_widths(cfg, cfg.arch, args.match):
            arch = cfg.arch.replace(width=w)
            mask = Mask.ones(arch)
            params = init(arch, cfg.dtype)
            if args.baseline == "dense_narrow":
                params = run_meta(arch, params, mask, data, cfg.meta, cfg.meta.outer_steps).params
            reports.append(evaluate(arch, params, mask, data, method=args.baseline, **common))
    elif args.baseline in ("oneshot", "imp"):
        if len(args.checkpoints) != 1:
            raise C.ConfigError(f"--baseline {args.baseline} takes exactly one dense checkpoint")
        arch, params, mask = _load_ckpt(args.checkpoints[0], cfg)
        if args.baseline == "oneshot":
            kappas = [_load_ckpt(p, cfg)[2].count() for p in args.match] or [
                max(1, int(cfg.prune.target_fraction * prunable_count(arch)))]
            for kappa in kappas:
                def fitter(s, kappa=kappa):
                    return per_signal_oneshot(arch, params, s, kappa, ev.lr,
                                              cfg.prune.oneshot_epochs)[2]
                rep = evaluate(arch, params, mask, data, method="oneshot", fitter=fitter, **common)
                rep.surviving_params = kappa + dense_count(arch) - prunable_count(arch)
                reports.append(rep)
        else:
            def fitter(s):
                return per_signal_imp(arch, params, s, cfg.prune.imp_rounds, ev.lr,
                                      cfg.prune.gamma, ev.budget)[2]
            rep = evaluate(arch, params, mask, data, method="imp", fitter=fitter, **common)
            kappa = len(mask)
            for _ in range(cfg.prune.imp_rounds):
                kappa -= prune_count(kappa, cfg.prune.gamma)
            rep.surviving_params = kappa + dense_count(arch) - prunable_count(arch)
            reports.append(rep)
    else:
        if not args.checkpoints:
            raise C.ConfigError("eval needs checkpoint paths or --baseline")
        for path in args.checkpoints:
            arch, params, mask = _load_ckpt(path, cfg)
            label = args.label or cfg.prune.method
            rep = evaluate(arch, params, mask, data, method=label, **common)
            reports.append(rep)
            if args.render:
                _render_extremes(out, Path(path).stem, arch, params, mask, data, rep, cfg)
    write_reports_csv(out / "eval.csv", reports)
    write_reports_json(out / "eval.json", reports, config=cfg.to_dict())
    _echo(out, cfg, checkpoints=[str(p) for p in args.checkpoints], baseline=args.baseline)
    for r in reports:
        print(f"{r.method:>12} params={r.surviving_params:>7} psnr={r.mean_psnr:.2f}"
              f" +- {r.std_psnr:.2f}")
    return EXIT_OK


def _render_extremes(out, stem, arch, params, mask, data, rep, cfg):
    """Render the best and worst signal of a report after re-fitting them."""
    by_id = {s.id: s for s in data.split(cfg.eval.split)}
    order = np.argsort(rep.final)
    for tag, idx in (("worst", order[0]), ("best", order[-1])):
        s = by_id[rep.signal_ids[idx]]
        fitted, _ = fit_signal(arch, params, mask, s, cfg.eval.budget, cfg.eval.lr)
        render(arch, fitted, mask, s.height, s.width, out / f"{stem}_{tag}.png")
        imageio.write_image(out / f"{stem}_{tag}_target.png", imageio.to_uint8(s.image))


def _single_signal(cfg, image: str | None) -> Signal:
    path = image or cfg.ticket.image
    if path:
        try:
            return load_image(path, cfg.data.size, cfg.data.resize_to)
        except (OSError, imageio.ImageFormatError) as exc:
            raise DataError(f"cannot load {path}: {exc}") from None
    data = load_data(cfg)
    if not data.train:
        raise DataError("no training signal to fit")
    return data.train[0]


def cmd_fit(cfg, args) -> int:
    """Fit one image from a checkpoint (or a fresh init) and write the trajectory."""
    signal = _single_signal(cfg, args.image)
    out = _out(cfg)
    if args.checkpoint:
        arch, params, mask = _load_ckpt(args.checkpoint, cfg)
    else:
        arch, mask = cfg.arch, Mask.ones(cfg.arch)
        params = init(arch, cfg.dtype)
    steps = cfg.eval.budget if args.steps is None else args.steps
    fitted, traj = fit_signal(arch, params, mask, signal, steps, cfg.eval.lr)
    _write_csv(out / "fit.csv", ["step", "psnr"], ((k, float(p)) for k, p in enumerate(traj)))
    ckpt.save(out / "fit.ckpt", arch, fitted, mask, bits=_bits(cfg))
    render(arch, fitted, mask, signal.height, signal.width, out / "fit.png")
    _echo(out, cfg, signal=signal.id, steps=steps)
    print(f"{signal.id}: PSNR {traj[0]:.2f} -> {traj[-1]:.2f} dB after {steps} steps")
    return EXIT_OK


def cmd_ticket(cfg, args) -> int:
    """Winning tickets vs dense-narrow networks on one image (peak PSNR per size)."""
    signal = _single_signal(cfg, args.image)
    out = _out(cfg)
    t = cfg.ticket
    arch = cfg.arch
    rows = []
    tickets = winning_ticket(arch, signal, t.train_steps, t.gamma, t.rounds, t.lr, cfg.dtype,
                             on_round=lambda r, tk: print(
                                 f"ticket round {r}: {tk.mask.count()} survivors, "
                                 f"peak {tk.trajectory.max():.2f} dB"))
    for r, tk in enumerate(tickets):
        rows.append(["ticket", r, arch.width, surviving_count(tk.mask, arch),
                     float(tk.trajectory.max()), float(tk.trajectory[-1])])
    seen = set()
    for tk in tickets:
        w = dense_narrow_width_for(cfg.eval.widths, arch, surviving_count(tk.mask, arch))
        if w in seen:
            continue
        seen.add(w)
        narrow = arch.replace(width=w)
        mask = Mask.ones(narrow)
        _, traj = fit_signal(narrow, init(narrow, cfg.dtype), mask, signal, t.train_steps, t.lr)
        rows.append(["dense_narrow", 0, w, dense_count(narrow), float(traj.max()),
                     float(traj[-1])])
        print(f"dense-narrow width {w}: peak {traj.max():.2f} dB")
    _write_csv(out / "tradeoff.csv",
               ["method", "round", "width", "surviving_params", "peak_psnr", "final_psnr"], rows)
    _echo(out, cfg, signal=signal.id)
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    """Average eval.json summaries over seeds per (method, surviving_params)."""
    groups = defaultdict(list)
    for path in args.inputs:
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from None
        for rep in payload.get("reports", []):
            groups[(rep["method"], rep["surviving_params"])].append(rep["mean_psnr"])
    out = _out(cfg)
    rows = []
    for (method, count), values in sorted(groups.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        rows.append([method, count, len(values), float(np.mean(values)), float(np.std(values))])
        print(f"{method:>12} {count:>8} n={len(values)} {np.mean(values):.2f} "
              f"+- {np.std(values):.2f}")
    _write_csv(out / "report.csv",
               ["method", "surviving_params", "n_runs", "mean_psnr", "std_psnr"], rows)
    _echo(out, cfg, inputs=[str(p) for p in args.inputs])
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--preset", help=f"named preset ({', '.join(C.PRESET_NAMES)})")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--precision", choices=sorted(C.PRECISIONS))
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sparseinr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-data", parents=[common], help="write the synthetic image set")
    p = sub.add_parser("meta-train", parents=[common], help="dense meta-training")
    p.add_argument("--steps", type=int, help="outer steps to run now (default: to meta.outer_steps)")
    p.add_argument("--resume", action="store_true")
    p = sub.add_parser("prune-loop", parents=[common], help="prune / meta-retrain loop")
    p.add_argument("--checkpoint", help="dense meta-trained checkpoint (default OUT/meta.ckpt)")
    p = sub.add_parser("eval", parents=[common], help="per-signal fitting evaluation")
    p.add_argument("checkpoints", nargs="*")
    p.add_argument("--baseline", choices=("scratch", "dense_narrow", "oneshot", "imp"))
    p.add_argument("--match", nargs="*", default=[],
                   help="checkpoints whose sizes select the baseline widths / targets")
    p.add_argument("--label", help="method name written to the report")
    p.add_argument("--data", help="evaluate on this image directory instead of data.source")
    p.add_argument("--render", action="store_true", help="write best/worst reconstructions")
    p = sub.add_parser("fit", parents=[common], help="fit a single image")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--steps", type=int)
    p = sub.add_parser("ticket", parents=[common], help="winning ticket vs dense-narrow")
    p.add_argument("--image")
    p = sub.add_parser("report", parents=[common], help="aggregate eval.json files")
    p.add_argument("inputs", nargs="+")
    return parser


COMMANDS = {"synth-data": cmd_synth_data, "meta-train": cmd_meta_train,
            "prune-loop": cmd_prune_loop, "eval": cmd_eval, "fit": cmd_fit,
            "ticket": cmd_ticket, "report": cmd_report}


def resolve_config(args) -> C.ExperimentConfig:
    if args.config and args.preset:
        raise C.ConfigError("use either --config or --preset")
    if args.config:
        cfg = C.load(args.config)
    elif args.preset:
        cfg = C.preset(args.preset)
    else:
        cfg = C.ExperimentConfig()
    cfg = cfg.override(seed=args.seed, workers=args.workers, precision=args.precision,
                       out=args.out)
    if getattr(args, "data", None):
        cfg = cfg.replace(data=dataclasses.replace(cfg.data, source=args.data))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
