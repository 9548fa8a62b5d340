"""Batch command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import bench as B
from . import data as D
from . import gaussian_approx as G
from . import trainer as TR
from .errors import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TR.TrainConfig()
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--h", type=int, default=d.h)
    p.add_argument("--h-glb", type=int, default=d.h_glb)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--patience", type=int, default=d.patience)


def _config(args) -> TR.TrainConfig:
    try:
        return TR.TrainConfig(
            steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed,
            h=args.h, h_glb=args.h_glb, hidden=args.hidden, patience=args.patience,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="automan", description="Mask-based automated feature engineering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a pipeline and write checkpoint, report and features")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--schema", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_train_flags(p)

    p = sub.add_parser("apply", help="engineer features for a CSV with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("export", help="re-export per-split features and the manifest from a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("bench", help="wall-clock scaling benchmark")
    p.add_argument("--sizes", type=_int_list, default=[100, 200])
    p.add_argument("--axis", choices=("d", "n", "k"), default="d")
    p.add_argument("--n", type=int, default=B.BenchConfig.n)
    p.add_argument("--d", type=int, default=B.BenchConfig.d)
    p.add_argument("--steps", type=int, default=B.BenchConfig.steps)
    p.add_argument("--repeats", type=int, default=B.BenchConfig.repeats)
    p.add_argument("--kernels", action="store_true", help="also compare the numba and numpy kernel backends")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("gauss-demo", help="fit Gaussian sums to a target and report uniform errors")
    p.add_argument("--target", default="sin", help=f"one of {', '.join(sorted(G.TARGETS))} or 'corpus'")
    p.add_argument("--K", type=_int_list, default=[3, 10])
    p.add_argument("--N", type=float, default=3.0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("seed-sweep", help="repeat split and training over seeds; mean and std of the test metric")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--schema", required=True, type=Path)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--out", type=Path)
    _add_train_flags(p)
    return parser


def _write_report(out: Path, report: TR.TrainReport) -> None:
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    lines = ["step,train_loss,val_metric"]
    lines += [f"{s},{a!r},{b!r}" for s, a, b in zip(report.curve_steps, report.train_loss, report.val_metric)]
    (out / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_for_checkpoint(path: Path, meta: dict, model) -> D.Dataset:
    return D.load_csv(path, model.schema, code_tables=meta["cat_levels"], classes=meta["classes"], require_target=False)


def cmd_train(args) -> int:
    cfg = _config(args)
    schema = D.Schema.load(args.schema)
    ds = D.split(D.load_csv(args.data, schema), seed=cfg.seed)
    model, report = TR.train(ds, TR.build_model(ds, cfg), cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    TR.save_checkpoint(args.out / "checkpoint.npz", model, ds, cfg)
    _write_report(args.out, report)
    TR.export_features(model, ds, args.out)
    TR.write_features(model, ds, args.out / "features.csv")
    print(f"best validation {report.metric}: {report.final_metric:.6g} at step {report.best_step}")
    if len(ds.split_indices("test")):
        print(f"test {report.metric}: {TR.evaluate(model, ds, 'test'):.6g}")
    return EXIT_OK


def cmd_apply(args) -> int:
    model, meta = TR.load_checkpoint(args.checkpoint)
    ds = _load_for_checkpoint(args.data, meta, model)
    args.out.mkdir(parents=True, exist_ok=True)
    TR.write_features(model, ds, args.out / "features.csv")
    TR.write_manifest(model, args.out / "manifest.json")
    print(f"wrote {len(ds)} rows x {model.h_glb} features to {args.out / 'features.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    model, meta = TR.load_checkpoint(args.checkpoint)
    seed = (meta.get("train_config") or {}).get("seed", 0)
    ds = D.load_csv(args.data, model.schema, classes=meta["classes"])
    ds = D.split(ds, seed=seed)
    if ds.cat_levels != meta["cat_levels"]:
        raise DataError("data file does not reproduce the checkpoint's training split")
    for p in TR.export_features(model, ds, args.out):
        print(p)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = B.BenchConfig(n=args.n, d=args.d, steps=args.steps, repeats=args.repeats)
    try:
        table = B.benchmark_scaling("scaling", args.sizes, cfg, axis=args.axis)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(table.to_text())
    if args.kernels:
        sys.stdout.write(B.kernel_table(B.benchmark_kernels()))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"scaling_{args.axis}.csv").write_text(table.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_gauss(args) -> int:
    targets = list(G.CORPUS) if args.target == "corpus" else [args.target]
    if any(t not in G.TARGETS for t in targets):
        raise UsageError(f"unknown target {args.target!r}; choose from {', '.join(sorted(G.TARGETS))} or 'corpus'")
    if any(k < 1 for k in args.K) or args.seeds < 1 or args.N <= 0:
        raise UsageError("K values and --seeds must be >= 1 and --N positive")
    reports = [G.approximation_report(t, args.K, args.N, seeds=args.seeds) for t in targets]
    for rep in reports:
        sys.stdout.write(rep.to_text())
    checks = G.verify_algebra()
    print(f"product closure max error {checks['product_closure_max_error']:.3g}; "
          f"separates points: {checks['separates_points']}; vanishes nowhere: {checks['vanishes_nowhere']}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for rep in reports:
            (args.out / f"gauss_{rep.target}.csv").write_text(rep.to_csv(), encoding="utf-8")
            (args.out / f"gauss_{rep.target}.txt").write_text(rep.to_text(), encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    cfg = _config(args)
    ds = D.load_csv(args.data, D.Schema.load(args.schema))
    res = TR.seed_sweep(ds, cfg, trials=args.trials, baseline=not args.no_baseline)
    print(f"engineered {res['metric']}: {res['engineered_mean']:.4f} +- {res['engineered_std']:.4f} over {res['trials']} trials")
    if "raw" in res:
        print(f"raw        {res['metric']}: {res['raw_mean']:.4f} +- {res['raw_std']:.4f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "seed_sweep.json").write_text(json.dumps({**res, "config": asdict(cfg)}, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "apply": cmd_apply,
    "export": cmd_export,
    "bench": cmd_bench,
    "gauss-demo": cmd_gauss,
    "seed-sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"automan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"automan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"automan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
