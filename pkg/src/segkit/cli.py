"""Command-line entry point: ``segkit <command> [options]``.

Exit codes are a stable contract: 0 success, 1 runtime or training failure,
2 usage or configuration error. ``--dry-run`` prints the resolved plan and
writes nothing.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import gradcheck
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config
from .data.io import DataError, Manifest, load_split
from .data.synth import check_ratio_range, synth_dataset
from .ensemble import MODES
from .experiments import compare_losses, ensemble_predict, loss_csv, loss_table, train_from_manifest
from .losses import LOSS_KINDS
from .trainer import TrainingError, evaluate, load_model

RESOLVED_CONFIG = "config.resolved.ini"

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # registered on the root parser and on every subcommand so the flags
    # work on either side of the command name
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config file (INI)")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--seed", type=int, default=default, help="top-level seed (overrides the config)")
    parser.add_argument(
        "--dry-run", action="store_true", default=argparse.SUPPRESS if suppress else False, help="print the plan, write nothing"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False, help="suppress progress logging"
    )


def _names(text: str) -> List[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in _names(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segkit", description="Right-ventricle segmentation experiments.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        _global_flags(p, suppress=True)
        return p

    p = add("train", "train one model from a config file")
    p.add_argument("--manifest", help="dataset manifest (overrides [experiment] manifest)")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.add_argument("--resume", help="continue from a checkpoint written by a previous run")

    p = add("eval", "score a checkpoint on one split of a manifest")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--spacing", type=float, nargs=2, metavar=("ROW_MM", "COL_MM"), help="pixel spacing (default: per sample)")
    p.add_argument("--threshold", type=float, help="probability threshold (default: the checkpoint's)")

    p = add("ensemble", "fuse several checkpoints and score the result")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--spacing", type=float, nargs=2, metavar=("ROW_MM", "COL_MM"))

    p = add("synth", "write a seeded synthetic crescent dataset")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.add_argument("--ratio", type=float, nargs=2, default=(0.01, 0.08), metavar=("LO", "HI"), help="foreground ratio range")
    p.add_argument("--format", default="pgm", choices=("pgm", "png"), dest="image_format")

    p = add("gradcheck", "run the finite-difference gradient suite")
    p.add_argument("--ops", type=_names, help="comma separated case names (default: all)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--inject-broken", action="store_true", help="add a case with a wrong gradient (must fail)")
    p.add_argument("--list", action="store_true", help="list case names and exit")

    p = add("losscompare", "train one model per (loss, seed) and tabulate validation Dice")
    p.add_argument("--manifest")
    p.add_argument("--losses", type=_names, default=list(LOSS_KINDS), help=f"comma separated, from {', '.join(LOSS_KINDS)}")
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    return parser


# -- helpers --------------------------------------------------------------------------------


def _experiment(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else ExperimentConfig()
    train = exp.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        train = replace(train, epochs=args.epochs)
    exp = replace(exp, train=train)
    if getattr(args, "manifest", None):
        exp = replace(exp, manifest=str(Path(args.manifest).resolve()))
    return exp


def _manifest(path) -> Manifest:
    if path is None:
        raise UsageError("no manifest given (use --manifest or [experiment] manifest)")
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    return Manifest.load(path)


def _checkpoint(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    return p


def _out_dir(args, exp: Optional[ExperimentConfig], fallback: Optional[Path] = None) -> Path:
    if args.out:
        return Path(args.out)
    if exp is not None and exp.out:
        out = Path(exp.out)
        return out if out.is_absolute() else exp.base_dir / out
    if fallback is not None:
        return fallback
    raise UsageError("no output directory given (use --out or [experiment] out)")


def _resolved(exp: ExperimentConfig, out: Path) -> str:
    # absolute paths so the written file works from wherever it is read
    manifest = exp.manifest_path()
    return replace(exp, manifest=str(manifest.resolve()) if manifest else None, out=str(out.resolve())).to_text()


def _plan(lines: Sequence[str]) -> int:
    print("dry run; nothing written")
    for line in lines:
        print(f"  {line}")
    return EXIT_OK


# -- commands --------------------------------------------------------------------------


def cmd_train(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    manifest_path = exp.manifest_path()
    resume = _checkpoint(args.resume) if args.resume else None
    if args.dry_run:
        t = exp.train
        return _plan(
            [
                f"manifest: {manifest_path}",
                f"output: {out}",
                f"model: {t.model.family} depth {t.model.depth} base width {t.model.base_width}",
                f"loss: {t.loss.kind}; epochs {t.epochs}; batch {t.batch_size}; seed {t.seed}",
                f"resume: {resume or 'no'}",
                "resolved config:",
                *exp.to_text().splitlines(),
            ]
        )
    manifest = _manifest(manifest_path)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(_resolved(exp, out))
    result = train_from_manifest(exp.train, manifest, out, resume)
    print(f"best val Dice {result.best_val_dice:.4f} at epoch {result.best_epoch}; outputs in {out}")
    return EXIT_OK


def _write_report(report, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    (out / "report.txt").write_text(report.table() + "\n")


def cmd_eval(args) -> int:
    path = _checkpoint(args.checkpoint)
    out = _out_dir(args, None, path.parent / f"eval-{args.split}")
    if args.dry_run:
        return _plan([f"checkpoint: {path}", f"manifest: {args.manifest} [{args.split}]", f"reports: {out}/report.csv, report.txt"])
    manifest = _manifest(args.manifest)
    model, cfg, _ = load_model(path)
    samples = load_split(manifest, args.split)
    if not samples:
        raise UsageError(f"split {args.split!r} of {args.manifest} is empty")
    threshold = cfg.threshold if args.threshold is None else args.threshold
    report = evaluate(model, samples, cfg.data, spacing=args.spacing, threshold=threshold)
    _write_report(report, out)
    print(report.table())
    return EXIT_OK


def cmd_ensemble(args) -> int:
    if len(args.checkpoints) < 2:
        raise UsageError(f"need >= 2 checkpoints for an ensemble, got {len(args.checkpoints)}")
    paths = [_checkpoint(c) for c in args.checkpoints]
    if args.mode == "majority" and len(paths) % 2 == 0:
        print(f"warning: {len(paths)} members; majority vote ties go to background", file=sys.stderr)
    out = _out_dir(args, None, Path(f"ensemble-{args.mode}-{args.split}"))
    if args.dry_run:
        return _plan([f"members: {', '.join(map(str, paths))}", f"mode: {args.mode}", f"manifest: {args.manifest} [{args.split}]", f"output: {out}"])
    manifest = _manifest(args.manifest)
    report = ensemble_predict(paths, manifest, args.split, args.mode, out, args.spacing)
    _write_report(report, out)
    print(report.table())
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    ratio = tuple(args.ratio)
    try:
        check_ratio_range(args.size, ratio)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = 0 if args.seed is None else args.seed
    out = _out_dir(args, None)
    if args.dry_run:
        return _plan([f"{args.n} samples of {args.size}x{args.size}, ratio {ratio[0]}..{ratio[1]}, seed {seed}", f"output: {out}"])
    manifest = synth_dataset(args.n, out, args.size, ratio, seed, image_format=args.image_format)
    counts = manifest.counts()
    print(f"wrote {args.n} samples to {out} (" + ", ".join(f"{k} {v}" for k, v in counts.items()) + ")")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    known = {**gradcheck.OP_CASES, **gradcheck.LOSS_CASES}
    if args.list:
        print("\n".join(known))
        return EXIT_OK
    names = args.ops or list(known)
    unknown = [n for n in names if n not in known and not (args.inject_broken and n in gradcheck.BROKEN_CASES)]
    if unknown:
        raise UsageError(f"unknown gradcheck case(s): {', '.join(unknown)}")
    extra = None
    if args.inject_broken:
        extra = gradcheck.BROKEN_CASES
        names = names + [n for n in extra if n not in names]
    if args.dry_run:
        return _plan([f"{len(names)} cases x {args.trials} trials, tolerance {args.tolerance:g}", ", ".join(names)])
    seed = 0 if args.seed is None else args.seed
    start = time.perf_counter()
    width = max(len(n) for n in names)
    print(f"{'case'.ljust(width)}  max rel error  status")
    failed = 0
    for name in names:
        (res,) = gradcheck.run_suite([name], args.trials, seed, args.tolerance, extra)
        failed += not res.passed
        print(f"{name.ljust(width)}  {res.max_rel_error:13.3e}  {'ok' if res.passed else 'FAIL'}")
    print(f"{len(names) - failed}/{len(names)} passed in {time.perf_counter() - start:.1f} s")
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def cmd_losscompare(args) -> int:
    unknown = [k for k in args.losses if k not in LOSS_KINDS]
    if unknown:
        raise UsageError(f"unknown loss(es): {', '.join(unknown)}; expected {', '.join(LOSS_KINDS)}")
    if not args.losses or not args.seeds:
        raise UsageError("need at least one loss and one seed")
    exp = _experiment(args)
    out = _out_dir(args, exp)
    if args.dry_run:
        runs = [f"{k} seed {s} -> {out / k / f'seed{s}'}" for k in args.losses for s in args.seeds]
        return _plan([f"manifest: {exp.manifest_path()}", f"epochs {exp.train.epochs}", *runs])
    manifest = _manifest(exp.manifest_path())
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(_resolved(exp, out))
    rows = compare_losses(exp.train, manifest, args.losses, args.seeds, out)
    table = loss_table(rows)
    (out / "losscompare.csv").write_text(loss_csv(rows, args.seeds))
    (out / "losscompare.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ensemble": cmd_ensemble,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "losscompare": cmd_losscompare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CheckpointError, DataError) as exc:
        print(f"segkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"segkit {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"segkit {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
