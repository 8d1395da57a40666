"""Command-line entry point: ``charda {train,eval,experiment,grid,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import load_experiments, load_run_config
from .corpus import read_corpus, read_manifest, resolve_splits
from .errors import CharDAError, ConfigurationError
from .grid import GRID_ROWS, published_grid, published_target
from .model import Model, ModelConfig
from .report import emit_report

logger = logging.getLogger("charda")


def _seeds(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigurationError(f"bad seed list {text!r}") from None


def _pick_split(splits, name: str):
    if name in ("train", "validation", "test"):
        if splits[0].name != "fixed":
            raise ConfigurationError(f"split {name!r} needs a fixed-split manifest; use foldN")
        return getattr(splits[0], name)
    for s in splits:
        if s.name == name:
            return s.test
    raise ConfigurationError(f"unknown split {name!r}")


def _write_runs(report: str, results) -> None:
    Path(str(report) + ".runs.json").write_text(
        json.dumps(harness.run_artifacts(results), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_train(args) -> int:
    config, flags, embeddings = load_run_config(args.config)
    embeddings = args.embeddings or embeddings
    segments, label_set = read_corpus(args.corpus)
    splits = resolve_splits(segments, read_manifest(args.manifest))
    if not 1 <= args.fold <= len(splits):
        raise ConfigurationError(f"fold {args.fold} out of range 1..{len(splits)}")
    split = splits[args.fold - 1]
    model, record = harness.train(config, flags, label_set, split.train, split.validation, embeddings)
    if record.aborted:
        raise CharDAError(f"training aborted: {record.aborted}")
    model.save(args.out_checkpoint)
    print(json.dumps({
        "checkpoint": args.out_checkpoint,
        "best_epoch": record.best_epoch,
        "stop_epoch": record.stop_epoch,
        "validation_accuracy": record.validation_accuracy[record.best_epoch - 1],
    }))
    return 0


def cmd_eval(args) -> int:
    model = Model.load(args.checkpoint)
    segments, _ = read_corpus(args.corpus)
    splits = resolve_splits(segments, read_manifest(args.manifest))
    encoded = harness.encode_for(model, _pick_split(splits, args.split))
    res = harness.evaluate(model, encoded, args.context_source)
    print(
        json.dumps(
            {
                "split": args.split,
                "accuracy": res.accuracy,
                "correct": res.correct,
                "total": res.total,
                "labels": model.label_set.labels,
                "confusion": res.confusion.tolist(),
            }
        )
    )
    return 0


def cmd_experiment(args) -> int:
    specs = load_experiments(args.spec)
    seeds = _seeds(args.seeds)
    if seeds is not None:
        for s in specs:
            s.seeds = seeds
    results = [harness.run_experiment(s, jobs=args.jobs) for s in specs]
    sys.stdout.write(emit_report(results, args.report, args.format))
    _write_runs(args.report, results)
    return 0


def cmd_grid(args) -> int:
    if args.config:
        base, _, _ = load_run_config(args.config)
    else:
        base = ModelConfig()
    rows = [r.strip() for r in args.rows.split(";")] if args.rows else None
    seeds = _seeds(args.seeds) or tuple(range(10))
    grid = published_grid(args.corpus, args.manifest, args.embeddings, seeds, base, rows, jobs=args.jobs)
    for notice in grid.notices:
        print(f"notice: {notice}", file=sys.stderr)
    if not grid.results:
        raise ConfigurationError("no grid rows could run")
    sys.stdout.write(emit_report(grid.results, args.report, args.format))
    _write_runs(args.report, grid.results)
    if args.targets:
        for r in grid.results:
            target = published_target(args.targets, r.name)
            if target is None:
                continue
            targets = dict(zip(("validation", "test"), target)) if isinstance(target, tuple) else {"cv": target}
            for split, st in r.statistics.items():
                if split in targets:
                    print(f"target {r.name} {split}: measured {st.mean:.4f} published {targets[split]:.4f} "
                          f"delta {st.mean - targets[split]:+.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        config, flags, _ = load_run_config(args.config)
    else:
        config, flags = ModelConfig(), harness.PreprocessingFlags(keep_punctuation=True)
    report = harness.toy_gradient_check(config, flags, args.max_elements)
    for name, err in report.max_relative_error.items():
        print(f"{name}\t{err:.3e}")
    for name in report.frozen:
        print(f"{name}\tfrozen")
    if not report.passed(args.tolerance):
        raise CharDAError(f"gradient check failed: max relative error {report.worst:.3e} >= {args.tolerance:g}")
    if report.skipped_at_kinks:
        print(f"skipped\t{report.skipped_at_kinks} elements whose perturbation crossed a pooling or ReLU switch point")
    print(f"ok\tmax relative error {report.worst:.3e} < {args.tolerance:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="charda", description="Character/word CNN dialog act classification.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and save a checkpoint")
    t.add_argument("--corpus", required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--fold", type=int, default=1, help="fold used as test set for k-fold manifests")
    t.add_argument("--embeddings")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", help="train, validation, test or foldN")
    e.add_argument("--context-source", choices=harness.CONTEXT_SOURCES, default="gold")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="multi-seed runs of one or more experiment specs")
    x.add_argument("--spec", required=True)
    x.add_argument("--seeds", help="comma-separated seeds overriding the spec")
    x.add_argument("--report", required=True)
    x.add_argument("--format", choices=("text", "csv"), default="text")
    x.add_argument("--jobs", type=int, default=1)
    x.set_defaults(func=cmd_experiment)

    g = sub.add_parser("grid", help="run the published experiment grid on one corpus")
    g.add_argument("--corpus", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--report", required=True)
    g.add_argument("--embeddings")
    g.add_argument("--config", help="base hyperparameters (run config file)")
    g.add_argument("--seeds")
    g.add_argument("--rows", help="semicolon-separated row names; known: " + "; ".join(r.name for r in GRID_ROWS))
    g.add_argument("--format", choices=("text", "csv"), default="text")
    g.add_argument("--targets", choices=("swbd", "dihana"), help="print deviations from published values")
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_grid)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check of a configured model")
    c.add_argument("--config")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--max-elements", type=int, default=50, help="sampled elements per parameter")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CharDAError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
