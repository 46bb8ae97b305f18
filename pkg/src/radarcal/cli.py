"""Command-line front end.

Exit codes: 0 success, 2 usage/config/input errors, 3 numeric failure.
Progress goes to stderr; tables and summaries to stdout; artifacts to files.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from radarcal.calibration import bins_to_csv
from radarcal.classifier import load_model, save_model, train, write_training_log
from radarcal.dataset import dataset_stats, generate_dataset, read_dataset, write_dataset
from radarcal.errors import InvalidArgument, NumericFailure
from radarcal.experiment import (
    ExperimentConfig,
    aggregate,
    aggregate_policy,
    corruption_sweep,
    evaluate_model,
    load_config,
    pool_predictions,
    predictions_for,
    run_experiment,
    seeds_for,
)
from radarcal.report import render_table, write_report_files
from radarcal.smoothing import SmoothingPolicy, resolve_kind

log = logging.getLogger("radarcal")


class UsageError(Exception):
    """Bad input from the command line; reported with exit code 2."""


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _read_dataset(path):
    if not Path(path).is_file():
        raise UsageError(f"dataset not found: {path}")
    return read_dataset(path)


def cmd_generate(args) -> int:
    config = _config(args)
    ds_cfg = config.dataset
    if args.seed is not None:
        ds_cfg = replace(ds_cfg, master_seed=args.seed)
    log.info("generating %s", {k: v for k, v in ds_cfg.split_sizes.items()})
    dataset = generate_dataset(ds_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out)
    stats = dataset_stats(dataset.train, dataset.n_classes)
    print(f"wrote {out}")
    for name, samples in dataset.splits.items():
        print(f"  {name}: {len(samples)} samples")
    names = [s.name for s in ds_cfg.class_specs]
    print("  train class counts: " + ", ".join(f"{n}={c}" for n, c in zip(names, stats.class_counts)))
    print(f"  train range [{stats.r_min:.3f}, {stats.r_max:.3f}] m")
    print(f"  train mean power [{stats.pi_min:.6g}, {stats.pi_max:.6g}]")
    return 0


def _policies_from_args(args, config: ExperimentConfig) -> List[SmoothingPolicy]:
    if args.policy is None:
        return list(config.policies)
    kind = resolve_kind(args.policy)
    eps, alpha = args.epsilon, args.alpha
    # the defaults used throughout: eps 0.1 for fixed smoothing, alpha 0.5 for adaptive
    if kind == "epsilon" and eps is None:
        eps = 0.1
    if kind in ("range", "power") and alpha is None:
        alpha = 0.5
    return [SmoothingPolicy(kind, epsilon=eps, alpha=alpha, prior=args.prior)]


def cmd_train(args) -> int:
    config = _config(args)
    dataset = _read_dataset(args.dataset)
    policies = _policies_from_args(args, config)
    train_cfg = config.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    n_seeds = args.seeds if args.seeds is not None else config.n_seeds
    if n_seeds < 1:
        raise UsageError("--seeds must be >= 1")
    stats = dataset_stats(dataset.train, dataset.n_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for policy in policies:
        for i, seed in enumerate(seeds_for(train_cfg, n_seeds)):
            log.info("training %s run %d (seed %d)", policy.name, i, seed)
            result = train(dataset.train, dataset.val, policy, stats,
                           replace(train_cfg, seed=seed), dataset.n_classes)
            stem = f"{policy.name}_{i:02d}"
            save_model(result, out / f"model_{stem}.json")
            write_training_log(result.log, out / f"log_{stem}.csv")
            print(f"{out / f'model_{stem}.json'}  best_epoch={result.best_epoch} "
                  f"val_acc={max((e.val_accuracy for e in result.log), default=float('nan')):.4f}")
    return 0


def _model_paths(args) -> List[Path]:
    paths = args.models or sorted(glob.glob(str(Path(args.model_dir) / "model_*.json")))
    if not paths:
        raise UsageError(f"no model files given and none found in {args.model_dir}")
    missing = [p for p in paths if not Path(p).is_file()]
    if missing:
        raise UsageError(f"model file not found: {missing[0]}")
    return [Path(p) for p in sorted(paths)]


def _load_models(paths):
    return [(p, load_model(p)) for p in paths]


def _split(dataset, name):
    samples = dataset.splits.get(name)
    if not samples:
        raise UsageError(f"dataset has no {name!r} split")
    return samples


def _evaluation_config(args, config):
    ev = config.evaluation
    if args.n_bins is not None:
        ev = replace(ev, n_bins=args.n_bins)
    if args.range_edges is not None:
        edges = tuple(args.range_edges)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise UsageError("--range-edges must be strictly increasing")
        ev = replace(ev, range_edges=edges)
    return ev


def _group_by_policy(models):
    groups = {}
    for path, m in models:
        groups.setdefault(m.policy.name, []).append((path, m))
    return groups


def cmd_evaluate(args) -> int:
    config = _config(args)
    dataset = _read_dataset(args.dataset)
    samples = _split(dataset, args.split)
    models = _load_models(_model_paths(args))
    ev_cfg = _evaluation_config(args, config)
    dim = dataset.config.physics.height * dataset.config.physics.width
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, group in _group_by_policy(models).items():
        evals = []
        for path, m in group:
            if m.params.layer_dims[0] != dim:
                raise UsageError(f"{path}: model input dimension {m.params.layer_dims[0]} "
                                 f"does not match dataset ({dim})")
            log.info("evaluating %s", path.name)
            ev = evaluate_model(m, samples, ev_cfg)
            evals.append(ev)
            stem = path.stem.replace("model_", "report_", 1)
            (out / f"{stem}.json").write_text(
                json.dumps(ev.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
            (out / f"{stem}.csv").write_text(bins_to_csv(ev.report.bins), encoding="utf-8")
        pooled = pool_predictions([predictions_for(m, samples) for _, m in group])
        results[name] = aggregate_policy(group[0][1].policy, evals, pooled=pooled,
                                         n_bins=ev_cfg.n_bins)
    agg = aggregate(results)
    _dump_json(agg, out / "aggregate.json")
    print(render_table(agg["policies"]))
    return 0


def cmd_corrupt_sweep(args) -> int:
    config = _config(args)
    dataset = _read_dataset(args.dataset)
    samples = _split(dataset, args.split)
    models = _load_models(_model_paths(args))
    ev_cfg = _evaluation_config(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flat = [m for _, m in models]
    evals = [evaluate_model(m, samples, ev_cfg) for m in flat]
    corruption_sweep(flat, evals, samples, dataset.config.master_seed, ev_cfg.n_bins)
    results = {}
    by_policy = {}
    for m, ev in zip(flat, evals):
        by_policy.setdefault(m.policy.name, (m.policy, []))[1].append(ev)
    for name, (policy, evs) in by_policy.items():
        results[name] = aggregate_policy(policy, evs, n_bins=ev_cfg.n_bins)
    agg = aggregate(results)
    _dump_json(agg, out / "corruption_aggregate.json")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "severity", "accuracy_mean", "accuracy_std", "ece_mean", "ece_std",
                     "mmc_all_mean", "mmc_all_std", "mmc_incorrect_mean", "mmc_incorrect_std"])
    for entry in agg["policies"]:
        for row in entry["corruption_by_severity"]:
            writer.writerow([entry["name"], row["severity"]] + [
                repr(row[m][k]) if row[m][k] is not None else ""
                for m in ("accuracy", "ece", "mmc_all", "mmc_incorrect") for k in ("mean", "std")])
    (out / "corruption_by_severity.csv").write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_report(args) -> int:
    merged = {}
    order = []
    for path in args.aggregates:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            entries = doc["policies"]
            if not isinstance(entries, list):
                raise TypeError("policies must be a list")
            for e in entries:
                name = e["name"]
                if name not in merged:
                    merged[name] = {}
                    order.append(name)
                merged[name].update(e)
        except FileNotFoundError:
            raise UsageError(f"aggregate file not found: {path}") from None
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"{path}: malformed aggregate ({exc})") from None
    entries = [merged[n] for n in order]
    try:
        table = render_table(entries)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed aggregate ({exc})") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_files(entries, out)
    print(table)
    return 0


def cmd_run(args) -> int:
    config = _config(args)
    if args.seed is not None:
        config.train = replace(config.train, seed=args.seed)
    result = run_experiment(config, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(result.aggregate, out / "aggregate.json")
    write_report_files(result.aggregate["policies"], out)
    print(render_table(result.aggregate["policies"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radarcal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment config JSON (defaults are built in)")
        if seed:
            p.add_argument("--seed", type=int, help="override the base seed")

    p = sub.add_parser("generate", help="generate a synthetic dataset file")
    common(p)
    p.add_argument("--out", default="dataset.jsonl")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model file per seed")
    common(p)
    p.add_argument("--dataset", default="dataset.jsonl")
    p.add_argument("--policy", help="hard | epsilon | range | power (aliases: eps-smooth, r-smooth, p-smooth)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--prior", default="uniform", choices=("uniform", "empirical"))
    p.add_argument("--seeds", type=int, help="number of independent runs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="models")
    p.set_defaults(func=cmd_train)

    for name, func, out in (("evaluate", cmd_evaluate, "reports"),
                            ("corrupt-sweep", cmd_corrupt_sweep, "corruption")):
        p = sub.add_parser(name, help="evaluate model files" if name == "evaluate"
                           else "evaluate model files on corrupted test splits")
        common(p)
        p.add_argument("--models", nargs="+")
        p.add_argument("--model-dir", default="models")
        p.add_argument("--dataset", default="dataset.jsonl")
        p.add_argument("--split", default="test")
        p.add_argument("--n-bins", type=int)
        p.add_argument("--range-edges", type=float, nargs="+")
        p.add_argument("--out", default=out)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render aggregate files as a comparison table")
    p.add_argument("aggregates", nargs="+")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="whole pipeline in one process")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"radarcal {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"radarcal {args.command}: numeric failure (seed {exc.seed}, epoch {exc.epoch}): {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
