"""Command-line entry point.

One executable, five subcommands: synth (make a synthetic dataset), train,
eval, introspect, and bench. Every failure exits nonzero after printing a
single "error:<category>: message" line to stderr so callers can branch on
the category without parsing prose. All artifacts land under --out next to
a run.json recording the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import infer
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset, save_dataset, stratified_folds
from .errors import ActError, ConfigError, DataError
from .model import _PRESETS, init_params, param_count, preset
from .synth import synth_generate
from .train import TrainConfig, evaluate, summarize_folds, train_one, write_history

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse prints usage prose by default; keep the category line contract
    def error(self, message):
        print(f"error:usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _run_manifest(out: Path, command: str, resolved: dict) -> None:
    _write_json(out / "run.json", {"command": command, **resolved})


# ---------------------------------------------------------------------------
# train-config resolution: defaults < config file < flags
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def read_config_file(path) -> dict:
    """Flat "key = value" lines; blank lines and # comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, "
                              f"got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _TRAIN_FIELDS:
            known = ", ".join(sorted(_TRAIN_FIELDS))
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} "
                              f"(known keys: {known})")
        caster = int if _TRAIN_FIELDS[key] in (int, "int") else float
        try:
            values[key] = caster(value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: cannot parse {value!r} "
                              f"as {caster.__name__} for {key!r}") from None
    return values


def resolve_train_config(config_path=None, **flag_overrides) -> TrainConfig:
    merged: dict = {}
    if config_path is not None:
        merged.update(read_config_file(config_path))
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    return TrainConfig(**merged)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty; "
                          "pass --force to overwrite")
    dataset = synth_generate(classes=args.classes,
                             train_per_class=args.train_per_class,
                             test_per_class=args.test_per_class,
                             in_features=args.features, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    _run_manifest(out, "synth", {
        "out": str(out), "classes": args.classes,
        "train_per_class": args.train_per_class,
        "test_per_class": args.test_per_class,
        "features": args.features, "seed": args.seed,
    })
    print(f"wrote {len(dataset.samples)} samples "
          f"({len(dataset.train)} train, {len(dataset.test)} test), "
          f"{args.classes} classes, {dataset.feature_dim} features -> {out}")
    return 0


def _fold_indices(spec: str, folds: int) -> list[int]:
    if spec == "all":
        return list(range(folds))
    try:
        index = int(spec)
    except ValueError:
        raise ConfigError(f"--fold must be an integer or 'all', "
                          f"got {spec!r}") from None
    if not 0 <= index < folds:
        raise ConfigError(f"--fold {index} out of range for {folds} folds")
    return [index]


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    train_config = resolve_train_config(args.config, seed=args.seed)
    model_config = preset(args.preset, in_features=dataset.feature_dim,
                          num_classes=len(dataset.class_names))
    folds = stratified_folds(dataset.train, folds=args.folds,
                             val_fraction=1.0 / args.folds,
                             seed=train_config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _run_manifest(out, "train", {
        "data": str(args.data), "preset": args.preset, "fold": args.fold,
        "folds": args.folds, "out": str(out),
        "model_config": dataclasses.asdict(model_config),
        "train_config": dataclasses.asdict(train_config),
        "class_names": dataset.class_names,
    })
    fold_metrics = []
    for index in _fold_indices(args.fold, args.folds):
        params, history = train_one(model_config, dataset, folds, index,
                                    train_config)
        save_checkpoint(out / f"fold{index}.ckpt", params,
                        class_names=dataset.class_names,
                        seed=train_config.seed)
        write_history(out / f"fold{index}-history.jsonl", history)
        metrics = evaluate(params, dataset.test)
        fold_metrics.append(metrics)
        print(f"fold {index}: test accuracy {metrics.accuracy:.4f}, "
              f"balanced accuracy {metrics.balanced_accuracy:.4f}")
    if args.fold == "all":
        summary = summarize_folds(fold_metrics)
        _write_json(out / "summary.json", summary)
        print(f"all folds: balanced accuracy "
              f"{100 * summary['balanced_accuracy_mean']:.2f} "
              f"± {100 * summary['balanced_accuracy_std']:.2f} "
              f"(accuracy {100 * summary['accuracy_mean']:.2f} "
              f"± {100 * summary['accuracy_std']:.2f})")
    return 0


def _load_members(paths, dataset) -> list:
    members = []
    for path in paths:
        params, meta = load_checkpoint(path)
        names = meta.get("class_names")
        if names is not None and names != dataset.class_names:
            raise ConfigError(f"checkpoint {path} was trained on different "
                              "class names than the dataset")
        members.append(params)
    return members


def _print_metrics(metrics) -> None:
    print(f"samples: {int(metrics.confusion.sum())}")
    print(f"accuracy: {metrics.accuracy:.6f}")
    print(f"balanced_accuracy: {metrics.balanced_accuracy:.6f}")
    print("confusion:")
    for row in metrics.confusion:
        print(" ".join(str(int(v)) for v in row))


def _cmd_eval(args) -> int:
    paths = list(args.models or [])
    if args.model:
        paths.insert(0, args.model)
    if not paths:
        raise ConfigError("pass --model FILE or --models FILE [FILE ...]")
    dataset = load_dataset(args.data)
    members = _load_members(paths, dataset)
    metrics = infer.ensemble_evaluate(members, dataset.test,
                                      max_frames=args.max_frames,
                                      direction=args.drop_from)
    _print_metrics(metrics)
    return 0


def _cmd_introspect(args) -> int:
    dataset = load_dataset(args.data)
    params, _meta = load_checkpoint(args.model)
    by_id = {s.id: s for s in dataset.samples}
    if args.sample not in by_id:
        ids = sorted(by_id)
        raise DataError(f"unknown sample id {args.sample!r}; dataset has "
                        f"{len(ids)} samples with ids {ids[0]} .. {ids[-1]}")
    sample = by_id[args.sample]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    maps = infer.attention_maps(params, sample.features)
    labels = [f"layer{i}.head{j}" for i in range(maps.num_layers)
              for j in range(maps.num_heads)]
    infer.write_blob(out / "attention.blob", maps.maps,
                     kind="attention_maps", labels=labels,
                     extra={"sample": sample.id})
    scores = infer.cls_attention_scores(params, sample.features)
    infer.write_blob(out / "cls_scores.blob", scores,
                     kind="cls_attention_scores",
                     extra={"sample": sample.id})
    infer.write_blob(out / "pos_similarity.blob",
                     infer.pos_embed_similarity(params).astype(np.float32),
                     kind="positional_similarity")
    for direction in ("head", "tail"):
        curve = infer.frame_drop_sweep(params, dataset.test,
                                       direction=direction)
        infer.write_curve(out / f"framedrop-{direction}.csv", curve)
    _run_manifest(out, "introspect", {
        "model": str(args.model), "data": str(args.data),
        "sample": sample.id, "out": str(out),
        "model_config": dataclasses.asdict(params.config),
    })
    print(f"wrote {maps.num_layers * maps.num_heads} attention maps, "
          f"{len(scores)} class-token scores, positional similarity, and "
          f"2 frame-drop curves -> {out}")
    return 0


def _cmd_bench(args) -> int:
    config = bench_mod.BenchConfig(warmup_runs=args.warmup,
                                   timed_runs=args.runs,
                                   threads=args.threads, seed=args.seed)
    if args.sweep:
        reports = bench_mod.sweep(sorted(_PRESETS, key=lambda n: param_count(preset(n))),
                                  config)
    elif args.model:
        params, _meta = load_checkpoint(args.model)
        reports = [bench_mod.benchmark(params, config)]
    elif args.preset:
        params = init_params(preset(args.preset), seed=config.seed)
        reports = [bench_mod.benchmark(params, config)]
    else:
        raise ConfigError("pass --model FILE, --preset NAME, or --sweep")
    for report in reports:
        print(f"{report.model}: {report.param_count} params, "
              f"mean {report.mean_ms:.3f} ms ± {report.std_ms:.3f}, "
              f"median {report.median_ms:.3f}, p95 {report.p95_ms:.3f}, "
              f"range [{report.min_ms:.3f}, {report.max_ms:.3f}] "
              f"({report.warmup_runs} warmup, {report.timed_runs} timed, "
              f"threads {report.threads_requested} requested / "
              f"{report.threads_effective} effective)")
    if args.out:
        payload = [r.to_dict() for r in reports]
        _write_json(Path(args.out), payload[0] if len(payload) == 1
                    else {"reports": payload})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="act", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    show_defaults = {"formatter_class": argparse.ArgumentDefaultsHelpFormatter}

    p = sub.add_parser("synth", help="generate a synthetic pose dataset",
                       **show_defaults)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--classes", type=int, default=20,
                   help="number of action classes")
    p.add_argument("--train-per-class", type=int, default=100,
                   help="training sequences per class")
    p.add_argument("--test-per-class", type=int, default=20,
                   help="held-out sequences per class")
    p.add_argument("--features", type=int, default=52,
                   help="per-frame feature width")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    p.set_defaults(func=_cmd_synth)

    training_defaults = ", ".join(
        f"{f.name}={getattr(TrainConfig(), f.name)}"
        for f in dataclasses.fields(TrainConfig))
    p = sub.add_parser("train", help="train one fold or all folds",
                       epilog="training defaults (override via --config or "
                              f"flags): {training_defaults}",
                       **show_defaults)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--preset", default="micro", choices=sorted(_PRESETS),
                   help="model size")
    p.add_argument("--fold", default="0", help="fold index or 'all'")
    p.add_argument("--folds", type=int, default=10,
                   help="cross-validation fold count")
    p.add_argument("--config", default=None,
                   help="key = value file overriding training defaults")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the config-file seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate one model or an ensemble",
                       **show_defaults)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", default=None, help="checkpoint to evaluate")
    p.add_argument("--models", nargs="+", default=None,
                   help="checkpoints to average as an ensemble")
    p.add_argument("--max-frames", type=int, default=None,
                   help="truncate every sequence to this many frames")
    p.add_argument("--drop-from", default="tail", choices=["head", "tail"],
                   help="which end loses frames under --max-frames")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("introspect",
                       help="export attention and robustness artifacts",
                       **show_defaults)
    p.add_argument("--model", required=True, help="checkpoint to inspect")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--sample", required=True, help="sample id to inspect")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=_cmd_introspect)

    p = sub.add_parser("bench", help="measure single-sequence CPU latency",
                       **show_defaults)
    p.add_argument("--model", default=None, help="checkpoint to time")
    p.add_argument("--preset", default=None, choices=sorted(_PRESETS),
                   help="time a freshly initialized preset")
    p.add_argument("--sweep", action="store_true",
                   help="time every preset on the same input")
    p.add_argument("--warmup", type=int, default=10,
                   help="untimed warmup runs")
    p.add_argument("--runs", type=int, default=100,
                   help="timed runs")
    p.add_argument("--threads", type=int, default=8,
                   help="BLAS thread cap")
    p.add_argument("--seed", type=int, default=0, help="input seed")
    p.add_argument("--out", default=None, help="write the full report JSON")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.func(args)
    except ActError as err:
        print(f"error:{err.category}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error:io: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
