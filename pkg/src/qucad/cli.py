"""Command-line front end: ``qucad <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calib import DriftConfig, export_csv, parse_calibrations, synth_timeseries, write_calibrations
from .compress import CompressConfig, CompressionTable, admm_compress, compressed_cost
from .harness import (ExperimentConfig, Strategy, TimelineResult, breakpoint_toy, make_splits, run_timeline,
                      scan_loss_surface, summarize, table_rows, write_grid_csv, write_table_csv)
from .qcore import GateCostModel
from .qnn import QnnModel, TrainConfig, evaluate_accuracy, iris, load_csv, make_model, train
from .repo import Repository, build_repository

log = logging.getLogger("qucad")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument helpers


def load_dataset(spec: str):
    """``iris`` for the bundled copy, else a CSV path (header detected)."""
    if spec == "iris":
        return iris()
    with open(spec, newline="") as f:
        first = next(csv.reader(f), [])
    try:
        [float(v) for v in first]
        header = False
    except ValueError:
        header = True
    return load_csv(spec, header=header)


def calib_slice(spec: str):
    """``path[:start[:stop]]`` → list of snapshots."""
    parts = spec.split(":")
    path, bounds = parts[0], parts[1:]
    if len(bounds) > 2:
        raise ValueError(f"bad calibration slice {spec!r}; expected path[:start[:stop]]")
    try:
        idx = [int(b) if b else None for b in bounds]
    except ValueError:
        raise ValueError(f"bad calibration slice {spec!r}") from None
    days = parse_calibrations(path)
    if len(idx) == 1:
        if idx[0] is None:
            return days
        return [days[idx[0]]]
    return days[slice(*idx)] if idx else days


def one_day(spec: str):
    days = calib_slice(spec)
    if len(days) != 1:
        raise ValueError(f"{spec!r} selects {len(days)} days; give path:index")
    return days[0]


def _compress_config(args) -> CompressConfig:
    cm = GateCostModel.load(args.cost_model) if args.cost_model else GateCostModel()
    policy = "absolute" if args.abs_threshold is not None else "fraction"
    thr = args.abs_threshold if args.abs_threshold is not None else args.mask_fraction
    return CompressConfig(CompressionTable(), args.rho, args.rounds, args.inner_epochs, policy, thr,
                          args.finetune_epochs, args.batch_size, args.lr, not args.agnostic, cm, args.seed,
                          args.rho_growth)


def _add_compress_args(p):
    d = CompressConfig()
    p.add_argument("--rho", type=float, default=d.rho)
    p.add_argument("--rho-growth", type=float, default=d.rho_growth, help="per-round multiplier on rho")
    p.add_argument("--rounds", type=int, default=d.rounds)
    p.add_argument("--inner-epochs", type=int, default=d.inner_epochs)
    p.add_argument("--finetune-epochs", type=int, default=d.finetune_epochs)
    p.add_argument("--mask-fraction", type=float, default=0.5, help="fraction of parameters to pin")
    p.add_argument("--abs-threshold", type=float, help="absolute priority threshold instead of a fraction")
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--agnostic", action="store_true", help="ignore gate noise when ranking parameters")
    p.add_argument("--cost-model", help="JSON override of the gate cost table")


def _model_and_splits(args):
    splits = make_splits(load_dataset(args.dataset), seed=args.split_seed)
    if getattr(args, "model", None):
        return QnnModel.load(args.model), splits
    m = make_model(splits.train, args.qubits, args.blocks, seed=args.seed)
    m, _ = train(m, splits.train, TrainConfig(epochs=args.epochs, seed=args.seed), val=splits.val)
    return m, splits


def _add_model_args(p, need_model=False):
    p.add_argument("--dataset", default="iris", help="'iris' or a CSV of features then label")
    p.add_argument("--split-seed", type=int, default=0)
    if need_model:
        p.add_argument("--model", required=True)
    else:
        p.add_argument("--model", help="trained model JSON; trained from scratch when omitted")
        p.add_argument("--qubits", type=int, default=4)
        p.add_argument("--blocks", type=int, default=3)
        p.add_argument("--epochs", type=int, default=30)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_calib(args):
    cfg = DriftConfig(n_days=args.days, n_qubits=args.qubits, base_sq=args.base_sq, base_tq=args.base_tq,
                      base_ro10=args.base_ro10, base_ro01=args.base_ro01, heterogeneity=args.heterogeneity,
                      spike_prob=args.spike_prob, spike_mag=tuple(args.spike_mag),
                      spike_targets=tuple(args.spike_target) if args.spike_target else None, seed=args.seed)
    if args.qubits != 4:
        cfg = replace(cfg, coupling=tuple((i, (i + 1) % args.qubits) for i in range(args.qubits))
                      if args.qubits > 2 else ((0, 1),))
    days = synth_timeseries(cfg)
    write_calibrations(args.out, days)
    if args.csv:
        export_csv(args.csv, days)
    print(f"wrote {len(days)} days to {args.out}")


def cmd_train(args):
    splits = make_splits(load_dataset(args.dataset), seed=args.split_seed)
    noise = None
    if args.noise:
        from .calib import build_noise_model
        noise = build_noise_model(one_day(args.noise), args.qubits)
    m = make_model(splits.train, args.qubits, args.blocks, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed, noise=noise)
    m, trace = train(m, splits.train, cfg, val=splits.val)
    m.save(args.out)
    print(f"loss {trace[0]:.4f} -> {min(trace):.4f}; test accuracy {evaluate_accuracy(m, splits.test, noise):.4f}")


def cmd_compress(args):
    from .calib import build_noise_model
    model = QnnModel.load(args.model)
    splits = make_splits(load_dataset(args.dataset), seed=args.split_seed)
    snap = one_day(args.calib)
    cfg = _compress_config(args)
    out, mask = admm_compress(model, splits.train, snap, cfg)
    out.save(args.out, mask=mask.tolist(), table=list(cfg.table.levels), snapshot_id=snap.date)
    noise = build_noise_model(snap, model.circuit.n_qubits)
    before = compressed_cost(model.circuit, model.theta, None, cfg.table, cfg.cost_model)
    after = compressed_cost(out.circuit, out.theta, mask, cfg.table, cfg.cost_model)
    print(f"masked {int(mask.sum())}/{len(mask)}; basis gates (1q, 2q) {before} -> {after}; "
          f"noisy test accuracy {evaluate_accuracy(model, splits.test, noise, cfg.cost_model):.4f} -> "
          f"{evaluate_accuracy(out, splits.test, noise, cfg.cost_model):.4f}")


def cmd_build_repo(args):
    model, splits = _model_and_splits(args)
    repo = build_repository(model, calib_slice(args.offline), splits.train, splits.val, args.K, args.A,
                            _compress_config(args), seed=args.seed)
    repo.save(args.out)
    for i, e in enumerate(repo.entries):
        print(f"entry {i}: centroid day {e.snapshot.date}, {len(e.members)} days, mean acc {e.mean_acc:.3f}"
              f"{' (invalid)' if e.invalid else ''}")
    print(f"th_w {repo.th_w:.4g}")


def cmd_run_timeline(args):
    model, splits = _model_and_splits(args)
    history = calib_slice(args.offline) if args.offline else []
    online = calib_slice(args.online)
    strategy = Strategy.parse(args.strategy)
    if strategy in (Strategy.QUCAD, Strategy.QUCAD_NO_OFFLINE) and not history and not args.repo:
        raise ValueError(f"{strategy.value} needs --offline history or --repo")
    config = ExperimentConfig(_compress_config(args), args.na_epochs, args.K, args.A, args.workers)
    repo = Repository.load(args.repo) if args.repo else None
    res = run_timeline(strategy, model, splits, history, online, config, args.seed, repo)
    res.save(args.out)
    print(f"{res.strategy}: mean accuracy {res.accuracies.mean():.4f} over {len(res.records)} days, "
          f"{res.opt_count} online optimizations ({res.opt_time:.1f}s)")


def cmd_scan_surface(args):
    if args.model:
        model = QnnModel.load(args.model)
        data = make_splits(load_dataset(args.dataset), seed=args.split_seed).test
        from .calib import build_noise_model
        noise = build_noise_model(one_day(args.noise), model.circuit.n_qubits) if args.noise else None
    else:
        model, data, noise = breakpoint_toy(seed=args.seed)
    i, j = args.params
    scan = scan_loss_surface(model, i, j, args.grid, data, noise, difference=noise is not None)
    prefix = Path(args.out_prefix)
    write_grid_csv(f"{prefix}_noiseless.csv", scan.noiseless)
    if scan.noisy is not None:
        write_grid_csv(f"{prefix}_noisy.csv", scan.noisy)
        write_grid_csv(f"{prefix}_difference.csv", scan.difference)
    print(f"wrote {args.grid}x{args.grid} grids with prefix {prefix}")


def cmd_report(args):
    runs = [TimelineResult.load(p) for p in args.runs]
    if args.baseline:
        baseline = TimelineResult.load(args.baseline)
    elif len(runs) >= 2:
        baseline = runs[-1]
    else:
        baseline = runs[0]
    rows = [summarize(r, tuple(args.thresholds), baseline) for r in runs]
    if args.csv:
        write_table_csv(args.csv, rows)
    for d in table_rows(rows):
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items()))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qucad", description="Noise-adaptive compression of quantum neural networks.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-calib", help="generate a synthetic calibration history")
    p.add_argument("--days", type=int, default=389)
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--base-sq", type=float, default=0.004)
    p.add_argument("--base-tq", type=float, default=0.03)
    p.add_argument("--base-ro10", type=float, default=0.02)
    p.add_argument("--base-ro01", type=float, default=0.05)
    p.add_argument("--heterogeneity", type=float, default=0.0)
    p.add_argument("--spike-prob", type=float, default=0.08)
    p.add_argument("--spike-mag", type=float, nargs=2, default=(0.05, 0.15))
    p.add_argument("--spike-target", action="append", help="field such as tq:0-1 (repeatable)")
    p.add_argument("--csv", help="also export a flat CSV table")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_calib)

    p = sub.add_parser("train", help="train a QNN (noiseless unless --noise is given)")
    p.add_argument("--dataset", default="iris")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--noise", help="cal.json:index for noise-aware training")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="compress a model for one calibration day")
    _add_model_args(p, need_model=True)
    p.add_argument("--calib", required=True, help="cal.json:index")
    _add_compress_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("build-repo", help="cluster history and compress one model per cluster")
    _add_model_args(p)
    p.add_argument("--offline", required=True, help="cal.json[:start[:stop]]")
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--A", type=float, default=0.5, help="accuracy requirement")
    _add_compress_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_repo)

    p = sub.add_parser("run-timeline", help="play one strategy over the online days")
    p.add_argument("--strategy", required=True, help=", ".join(s.value for s in Strategy))
    _add_model_args(p)
    p.add_argument("--offline", help="cal.json[:start[:stop]]")
    p.add_argument("--online", required=True, help="cal.json[:start[:stop]]")
    p.add_argument("--repo", help="prebuilt repository JSON")
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--A", type=float, default=0.5)
    p.add_argument("--na-epochs", type=int, default=ExperimentConfig().na_epochs)
    p.add_argument("--workers", type=int, default=1)
    _add_compress_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run_timeline)

    p = sub.add_parser("scan-surface", help="loss over a grid of two parameters")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--params", type=int, nargs=2, default=(0, 1))
    p.add_argument("--model", help="model JSON; the two-parameter toy when omitted")
    p.add_argument("--dataset", default="iris")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--noise", help="cal.json:index")
    p.add_argument("--out-prefix", default="surface")
    p.set_defaults(fn=cmd_scan_surface)

    p = sub.add_parser("report", help="summary table of timeline results")
    p.add_argument("runs", nargs="+", help="TimelineResult JSON files; the last is the baseline unless --baseline")
    p.add_argument("--baseline")
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.8, 0.7, 0.5])
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_report)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0)
    return ap


def cli_main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, IndexError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
