"""Command line entry points.

Exit codes: 0 on success, 1 for usage and validation problems, 2 when a
command fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cyclesense",
                     description="Detect near miss incidents in bicycle sensor rides.")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file overlaying the defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="list rides found under a data directory")
    p.add_argument("data_dir", type=Path)
    p.add_argument("--region", default=None)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("gensynth", help="generate a synthetic ride dataset")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--rides", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--amplitude", type=float, default=None)

    p = sub.add_parser("preprocess", help="clean, split and tensorize a dataset")
    p.add_argument("data_dir", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--region", default=None)
    p.add_argument("--partition", default=None,
                   choices=["android-old", "android-new", "ios"])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-dft", action="store_true")
    p.add_argument("--no-normalize", action="store_true")

    p = sub.add_parser("train", help="train a detector on a prepared dataset")
    p.add_argument("prepared_dir", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--model", default="cyclesense", choices=["cyclesense", "fcn"])
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("evaluate", help="score trained models on the test split")
    p.add_argument("prepared_dir", type=Path)
    p.add_argument("model_dirs", type=Path, nargs="+")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--heuristic", action="store_true",
                   help="also report the accelerometer jump baseline")

    p = sub.add_parser("detect", help="score one ride file with a trained model")
    p.add_argument("model_dir", type=Path)
    p.add_argument("ride_file", type=Path)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("gridsearch", help="compare hyperparameter settings")
    p.add_argument("prepared_dir", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    return parser


def _load_config(args):
    from .config import RunConfig, load_config

    if args.config is not None:
        return load_config(args.config)
    return RunConfig()


def _cmd_scan(args, cfg) -> int:
    from .rides import partition_dataset

    scan = partition_dataset(args.data_dir, region=args.region,
                             max_workers=args.threads)
    for ride_id, partition in sorted(scan.entries):
        print(f"{ride_id}\t{partition.value}")
    for ride_id, message in scan.errors:
        print(f"error\t{ride_id}\t{message}", file=sys.stderr)
    print(f"{len(scan.entries)} rides, {len(scan.errors)} unreadable",
          file=sys.stderr)
    return 0


def _cmd_gensynth(args, cfg) -> int:
    import dataclasses

    from .synth import SynthSpec, generate_dataset

    spec = SynthSpec(n_rides=cfg.synth.n_rides,
                     amplitude_sigma=cfg.synth.amplitude_sigma,
                     incident_rate=cfg.synth.incident_rate,
                     brake_fraction=cfg.synth.brake_fraction,
                     region=cfg.synth.region, seed=cfg.seed)
    overrides = {}
    if args.rides is not None:
        overrides["n_rides"] = args.rides
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.amplitude is not None:
        overrides["amplitude_sigma"] = args.amplitude
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    paths = generate_dataset(args.out_dir, spec)
    print(f"wrote {len(paths)} rides under {args.out_dir}")
    return 0


def _cmd_preprocess(args, cfg) -> int:
    from .pipeline import prepare_from_dir, save_prepared
    from .rides import DatasetPartition
    from .spectral import FrequencySpec
    from .training import SplitPlan

    partition = DatasetPartition(args.partition) if args.partition else None
    test_ratio = 1.0 - cfg.train_ratio - cfg.val_ratio
    plan = SplitPlan(seed=cfg.seed,
                     ratios=(cfg.train_ratio, cfg.val_ratio, test_ratio))
    prepared = prepare_from_dir(
        args.data_dir, plan, freq=FrequencySpec(f=cfg.train.f),
        use_dft=cfg.train.use_dft and not args.no_dft,
        normalize=cfg.normalize and not args.no_normalize,
        region=args.region, partition=partition, max_workers=args.threads)
    save_prepared(args.out, prepared)
    for ride_id, reason in prepared.rejected:
        print(f"rejected\t{ride_id}\t{reason}", file=sys.stderr)
    counts = {name: len(prepared.buckets[name].labels)
              for name in ("train", "val", "test")}
    print(f"buckets: train={counts['train']} val={counts['val']} "
          f"test={counts['test']} -> {args.out}")
    return 0


def _cmd_train(args, cfg) -> int:
    from .models import CycleSenseClassifier, FcnClassifier
    from .pipeline import load_prepared

    buckets, tensors, stats, freq = load_prepared(args.prepared_dir)
    seed = args.seed if args.seed is not None else cfg.seed
    t = cfg.train
    if args.model == "cyclesense":
        clf = CycleSenseClassifier(
            f=freq.f, gru_units=t.gru_units, gru_layers=t.gru_layers,
            cell=t.cell, kernels=t.kernels, dropout_rate=t.dropout_rate,
            learning_rate=t.learning_rate, epochs=t.epochs,
            batch_size=t.batch_size, patience=t.patience,
            class_weighting=t.class_weighting, augment=t.augment,
            stacking=t.stacking, pretrain_epochs=t.pretrain_epochs,
            gan_steps=t.gan_steps, gan_batch_size=t.gan_batch_size,
            gan_learning_rate=t.gan_learning_rate,
            gap_fraction=t.gap_fraction, seed=seed)
        clf.fit(tensors["train"], val=tensors["val"])
    else:
        f = cfg.fcn
        clf = FcnClassifier(learning_rate=f.learning_rate, epochs=f.epochs,
                            batch_size=f.batch_size, patience=f.patience,
                            class_weighting=f.class_weighting, seed=seed)
        clf.fit(buckets["train"], val=buckets["val"])
    args.out.mkdir(parents=True, exist_ok=True)
    clf.save(args.out)
    # detect needs the preprocessing context the model was trained with
    with open(args.prepared_dir / "dataset.json", "r", encoding="utf-8") as fh:
        dataset_meta = json.load(fh)
    with open(args.out / "prepare.json", "w", encoding="utf-8") as fh:
        json.dump({"f": dataset_meta["f"],
                   "normalization": dataset_meta["normalization"],
                   "use_dft": t.use_dft}, fh, indent=2)
    from .training import write_history_csv
    write_history_csv(args.out / "history.csv", clf.history_)
    best = max(r.val_auc for r in clf.history_)
    print(f"trained {args.model}: best val auc {best:.4f} -> {args.out}")
    return 0


def _cmd_evaluate(args, cfg) -> int:
    from .evaluate import comparison_report
    from .models import (CycleSenseClassifier, FcnClassifier,
                         JumpHeuristicDetector)
    from .pipeline import load_prepared

    buckets, tensors, stats, freq = load_prepared(args.prepared_dir)
    scored = {}
    for model_dir in args.model_dirs:
        if (model_dir / "cyclesense.json").exists():
            clf = CycleSenseClassifier.load(model_dir)
            test = tensors["test"]
            name = f"cyclesense:{model_dir.name}"
        elif (model_dir / "fcn.json").exists():
            clf = FcnClassifier.load(model_dir)
            test = buckets["test"]
            name = f"fcn:{model_dir.name}"
        else:
            print(f"error: no model found in {model_dir}", file=sys.stderr)
            return 1
        scored[name] = (clf.decision_function(test), test.labels)
    if args.heuristic:
        det = JumpHeuristicDetector()
        det.fit(buckets["train"])
        scored["heuristic"] = (det.decision_function(buckets["test"]),
                               buckets["test"].labels)
    rows = comparison_report(scored, out_dir=args.out)
    for row in rows:
        n = row["n_pos"] + row["n_neg"]
        print(f"{row['model']}\tauc={row['auc']:.4f}\tn={n}\tpos={row['n_pos']}")
    return 0


def _cmd_detect(args, cfg) -> int:
    from .models import CycleSenseClassifier, FcnClassifier
    from .pipeline import ride_to_buckets
    from .preprocess import NormalizationStats
    from .rides import parse_ride
    from .spectral import FrequencySpec

    model_dir = Path(args.model_dir)
    if (model_dir / "cyclesense.json").exists():
        clf = CycleSenseClassifier.load(model_dir)
        wants_tensors = True
    elif (model_dir / "fcn.json").exists():
        clf = FcnClassifier.load(model_dir)
        wants_tensors = False
    else:
        print(f"error: no model found in {model_dir}", file=sys.stderr)
        return 1
    with open(model_dir / "prepare.json", "r", encoding="utf-8") as fh:
        prep = json.load(fh)
    stats = NormalizationStats.from_dict(prep["normalization"])
    freq = FrequencySpec(f=prep["f"])

    text = Path(args.ride_file).read_text(encoding="utf-8")
    ride = parse_ride(text, ride_id=Path(args.ride_file).stem)
    bucket_set, tensor_batch = ride_to_buckets(ride, stats, freq,
                                               use_dft=prep.get("use_dft", True))
    scores = clf.decision_function(tensor_batch if wants_tensors else bucket_set)
    n_hits = 0
    for index, score in zip(bucket_set.bucket_index, scores):
        offset_s = int(index) * 10
        flag = "incident" if score >= args.threshold else "ok"
        if score >= args.threshold:
            n_hits += 1
        print(f"bucket {index} (+{offset_s}s)\tscore={score:.4f}\t{flag}")
    print(f"{n_hits}/{len(scores)} buckets over threshold {args.threshold}",
          file=sys.stderr)
    return 0


def _cmd_gridsearch(args, cfg) -> int:
    from .pipeline import load_prepared
    from .training import grid_search

    buckets, _, _, _ = load_prepared(args.prepared_dir)
    space = {"f": cfg.grid.f, "gru_units": cfg.grid.gru_units,
             "cell": cfg.grid.cell, "learning_rate": cfg.grid.learning_rate}
    epochs = args.epochs if args.epochs is not None else cfg.grid.epochs
    out_csv = args.out if args.out is not None else None
    results = grid_search(buckets["train"], buckets["val"], space=space,
                          epochs=epochs, seed=cfg.seed, out_csv=out_csv)
    for r in results:
        auc = "n/a" if r.status != "ok" else f"{r.val_auc:.4f}"
        print(f"f={r.f}\tunits={r.gru_units}\tcell={r.cell}\t"
              f"lr={r.learning_rate}\tauc={auc}\t{r.status}")
    return 0


_COMMANDS = {"scan": _cmd_scan, "gensynth": _cmd_gensynth,
             "preprocess": _cmd_preprocess, "train": _cmd_train,
             "evaluate": _cmd_evaluate, "detect": _cmd_detect,
             "gridsearch": _cmd_gridsearch}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:                # noqa: BLE001 - last resort
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
