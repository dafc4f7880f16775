"""Command-line entry point.

Subcommands: ``train``, ``sweep``, ``validate-theory``, ``gradcheck``,
``gen-data``. Configuration is a flat ``key = value`` file; ``--set KEY=VALUE``
overrides it. Exit codes: 0 success, 1 configuration error, 2 certification
failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hvlearn import data, models, theory
from hvlearn.core import INFINITY
from hvlearn.errors import ConfigError, FormatError, MismatchError
from hvlearn.models import ModelKind, ModelSpec
from hvlearn.schedule import ScheduleState, parse_xi_schedule
from hvlearn.trainer import Aggregator, RunConfig, RunLog, train

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_IO = 0, 1, 2, 3

RUN_COLUMNS = [
    "variant_id", "seed", "epoch", "xi", "lr", "mu_batch_mean",
    "train_mean_loss", "train_max_loss", "val_error", "test_error",
]
SUMMARY_COLUMNS = [
    "variant_id", "n_seeds", "best_epoch_median", "median_test_error", "mean_test_error",
    "min_test_error", "relative_reduction", "wins_or_ties_vs_mean",
]

DEFAULTS = {
    "model": "mlp",
    "hidden_dim": "32",
    "dropout": "0.0",
    "aggregator": "hypervolume",
    "xi_schedule": "-3,-2,-1,0",
    "batch_size": "500",
    "base_lr": "0.1",
    "momentum": "0.9",
    "patience": "20",
    "lr_decay": "0.1",
    "lr_floor": "0.001",
    "max_epochs": "200",
    "dataset": "rare",
    "n_per_class": "400",
    "num_classes": "2",
    "dim": "2",
    "separation": "6.0",
    "seeds": "0",
}
OPTIONAL_KEYS = {"variants", "data_seed", "mnist_dir", "train_per_class", "idx_dir"}
DATASETS = ("rare", "blobs", "mnist", "idx")


def fmt(value) -> str:
    """Serialize a CSV cell; floats keep 17 significant digits."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def parse_kv_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def parse_variant(text: str) -> tuple[str, Aggregator, tuple[float, ...]]:
    """``mean`` or ``hv:<xi>,<xi>,...`` -> ``(variant_id, aggregator, schedule)``."""
    text = text.strip()
    if text == "mean":
        return "mean", Aggregator.MEAN, (INFINITY,)
    if text.startswith("hv:"):
        schedule = parse_xi_schedule(text[3:])
        ScheduleState(xi_schedule=schedule, learning_rate=1.0)
        return "hv:" + ",".join(fmt_xi(x) for x in schedule), Aggregator.HYPERVOLUME, schedule
    raise ConfigError(f"unknown variant {text!r}; use 'mean' or 'hv:<xi list>'")


def fmt_xi(x: float) -> str:
    return "inf" if x == INFINITY else format(x, "g")


@dataclass(frozen=True)
class Variant:
    variant_id: str
    aggregator: Aggregator
    xi_schedule: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, str]
    variants: tuple[Variant, ...]
    seeds: tuple[int, ...]
    out_dir: Path
    workers: int = 1

    def get(self, key: str, cast=str):
        if key not in self.values:
            raise ConfigError(f"missing config key {key!r}")
        try:
            return cast(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {self.values[key]!r}") from exc

    def maybe(self, key: str, cast=str):
        return self.get(key, cast) if self.values.get(key, "") != "" else None

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        try:
            kind = ModelKind(self.get("model"))
        except ValueError as exc:
            raise ConfigError(f"unknown model {self.values['model']!r}") from exc
        return ModelSpec(
            kind=kind,
            input_dim=input_dim,
            num_classes=num_classes,
            hidden_dim=self.get("hidden_dim", int) if kind is ModelKind.MLP else 0,
            dropout_prob=self.get("dropout", float),
        )

    def run_config(self, variant: Variant, seed: int, spec: ModelSpec) -> RunConfig:
        return RunConfig(
            model=spec,
            aggregator=variant.aggregator,
            xi_schedule=variant.xi_schedule,
            batch_size=self.get("batch_size", int),
            base_lr=self.get("base_lr", float),
            momentum=self.get("momentum", float),
            patience=self.get("patience", int),
            lr_decay=self.get("lr_decay", float),
            lr_floor=self.get("lr_floor", float),
            max_epochs=self.get("max_epochs", int),
            seed=seed,
        )


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.replace(";", ",").split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse seed list {text!r}") from exc
    if not seeds:
        raise ConfigError("at least one seed is required")
    return seeds


def build_config(args, single_variant: bool) -> ExperimentConfig:
    values = dict(DEFAULTS)
    if args.config:
        values.update(parse_kv_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed_list is not None:
        values["seeds"] = args.seed_list
    unknown = sorted(set(values) - set(DEFAULTS) - OPTIONAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if values["dataset"] not in DATASETS:
        raise ConfigError(f"unknown dataset {values['dataset']!r}; choose from {', '.join(DATASETS)}")
    seeds = _parse_seeds(values["seeds"])

    if single_variant or "variants" not in values:
        agg = values["aggregator"]
        if agg == "mean":
            spec = "mean"
        elif agg == "hypervolume":
            spec = "hv:" + values["xi_schedule"]
        else:
            raise ConfigError(f"unknown aggregator {agg!r}")
        variant_texts = [spec]
    else:
        variant_texts = [v for v in values["variants"].split(";") if v.strip()]
    if not variant_texts:
        raise ConfigError("no variants configured")
    variants = tuple(Variant(*parse_variant(v)) for v in variant_texts)
    out = Path(args.out or os.environ.get("HV_OUT_DIR") or "hv_out")
    cfg = ExperimentConfig(values, variants, seeds, out, workers=max(1, args.workers))
    # validate numeric keys early so errors surface before any training
    try:
        cfg.run_config(variants[0], seeds[0], ModelSpec(ModelKind.LOGISTIC, 1, 2))
        cfg.model_spec(1, 2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_dataset(cfg: ExperimentConfig, seed: int) -> data.SplitDataset:
    kind = cfg.get("dataset")
    if kind in ("rare", "blobs"):
        data_seed = cfg.maybe("data_seed", int)
        return data.gen_synthetic(
            kind,
            cfg.get("n_per_class", int),
            seed=seed if data_seed is None else data_seed,
            num_classes=cfg.get("num_classes", int),
            dim=cfg.get("dim", int),
            separation=cfg.get("separation", float),
        )
    if kind == "mnist":
        directory = cfg.maybe("mnist_dir") or data.default_mnist_dir()
        if directory is None:
            raise ConfigError("dataset=mnist needs mnist_dir (or HV_MNIST_DIR)")
        return data.load_mnist(directory, cfg.maybe("train_per_class", int), seed=cfg.maybe("data_seed", int) or 0)
    if kind == "idx":
        directory = Path(cfg.get("idx_dir"))
        splits = [data.load_idx(directory / f"{s}-images-idx3-ubyte", directory / f"{s}-labels-idx1-ubyte")
                  for s in ("train", "val", "test")]
        k = int(max(int(b.targets.max()) for b in splits)) + 1
        return data.SplitDataset(*splits, name=f"idx:{directory}", num_classes=k, normalization="divide-255")
    raise ConfigError(f"unknown dataset {kind!r}")


def run_cell(cfg: ExperimentConfig, variant: Variant, seed: int) -> RunLog:
    dataset = load_dataset(cfg, seed)
    spec = cfg.model_spec(dataset.feature_dim, dataset.num_classes)
    return train(cfg.run_config(variant, seed, spec), dataset)


def _run_rows(variant_id: str, seed: int, run: RunLog):
    for r in run.records:
        yield [variant_id, seed, r.epoch, r.xi, r.learning_rate, r.mu_batch_mean,
               r.train_mean_loss, r.train_max_loss, r.val_error, r.test_error]


def _cell_job(args):
    cfg, vi, seed, path = args
    variant = cfg.variants[vi]
    run = run_cell(cfg, variant, seed)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows([fmt(v) for v in row] for row in _run_rows(variant.variant_id, seed, run))
    return vi, seed, run.best_epoch, run.test_error_at_best


def summarize(results: dict[tuple[int, int], tuple[int | None, float]], cfg: ExperimentConfig) -> list[list]:
    """One summary row per variant; reduction and wins are relative to ``mean``."""
    by_variant = {}
    for (vi, seed), (best_epoch, err) in results.items():
        by_variant.setdefault(vi, {})[seed] = (best_epoch, err)
    mean_idx = next((i for i, v in enumerate(cfg.variants) if v.aggregator is Aggregator.MEAN), None)
    base = by_variant.get(mean_idx)
    rows = []
    for vi, variant in enumerate(cfg.variants):
        cells = by_variant.get(vi, {})
        errs = np.array([cells[s][1] for s in cfg.seeds if s in cells])
        epochs = [cells[s][0] for s in cfg.seeds if s in cells and cells[s][0] is not None]
        reduction, wins = math.nan, ""
        if base is not None:
            base_errs = np.array([base[s][1] for s in cfg.seeds if s in cells])
            if base_errs.mean() > 0:
                reduction = float((base_errs.mean() - errs.mean()) / base_errs.mean())
            wins = int(np.sum(errs <= base_errs))
        rows.append([
            variant.variant_id, errs.size,
            float(np.median(epochs)) if epochs else math.nan,
            float(np.median(errs)), float(errs.mean()), float(errs.min()), reduction, wins,
        ])
    return rows


def run_experiment(cfg: ExperimentConfig) -> list[list]:
    """Train every (variant, seed) cell, write ``runs.csv`` and ``summary.csv``."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cell_dir = cfg.out_dir / "cells"
    cell_dir.mkdir(exist_ok=True)
    jobs = [(cfg, vi, seed, cell_dir / f"{vi:03d}_{seed}.csv")
            for vi in range(len(cfg.variants)) for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        outcomes = [_cell_job(j) for j in jobs]
    results = {(vi, seed): (be, err) for vi, seed, be, err in outcomes}

    with open(cfg.out_dir / "runs.csv", "w", newline="") as fh:
        fh.write(",".join(RUN_COLUMNS) + "\n")
        for job in jobs:
            with open(job[3]) as part:
                shutil.copyfileobj(part, fh)
    shutil.rmtree(cell_dir)

    rows = summarize(results, cfg)
    with open(cfg.out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows([fmt(v) for v in row] for row in rows)
    return rows


def cmd_train(args, single_variant: bool) -> int:
    cfg = build_config(args, single_variant)
    rows = run_experiment(cfg)
    for row in rows:
        line = f"{row[0]:<24} median test error {row[3]:.4f}  mean {row[4]:.4f}"
        print(line if math.isnan(row[6]) else f"{line}  reduction {row[6]:+.3f}")
    print(f"wrote {cfg.out_dir / 'runs.csv'} and {cfg.out_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_validate_theory(args) -> int:
    if args.nu <= 0 or args.epsilon <= 0 or args.grid < 1:
        raise ConfigError("--nu, --epsilon and --grid must be positive")
    result = theory.run_battery(
        n_problems=args.problems, nu=args.nu, epsilon=args.epsilon, grid=args.grid,
        weight_cases=args.weight_cases, seed=args.seed,
    )
    out = Path(args.out or os.environ.get("HV_OUT_DIR") or "hv_out")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "certificates.txt", "w") as fh:
        for cert in result.certificates:
            fh.write(cert.to_record() + "\n\n")
        fh.write(f"[weight_deviation]\ncases={result.weight_cases}\n"
                 f"worst_excess_over_nu={fmt(result.weight_worst_excess)}\n\n")
        fh.write(f"[limits]\ncases={result.limit_cases}\nworst_relative_deviation={fmt(result.limit_worst)}\n")
    applicable = [c for c in result.certificates if c.applicable]
    print(f"certificates: {len(applicable) - len(result.failures)}/{len(applicable)} applicable passed")
    print(f"weight deviation: worst excess over nu {result.weight_worst_excess:.3e} ({result.weight_cases} cases)")
    print(f"limits: worst relative deviation {result.limit_worst:.3e} ({result.limit_cases} cases)")
    print(f"wrote {out / 'certificates.txt'}")
    return EXIT_OK if result.passed else EXIT_CERT


def gradcheck(trials: int, seed: int, h: float = 1e-6) -> float:
    """Worst per-sample relative error between analytic and central-difference
    gradients over random small models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        kind = ModelKind.MLP if t % 2 else ModelKind.LOGISTIC
        spec = ModelSpec(kind, int(rng.integers(1, 5)), int(rng.integers(2, 5)),
                         hidden_dim=int(rng.integers(1, 6)), dropout_prob=0.5 * (t % 4 == 3))
        params = models.init_params(spec, rng) + 0.3 * rng.standard_normal(spec.num_params)
        n = int(rng.integers(1, 5))
        batch = data.Batch(rng.random((n, spec.input_dim)), rng.integers(0, spec.num_classes, n))
        mask_seed = int(rng.integers(2**31))
        grads = models.per_sample_gradients(spec, params, batch, mask_seed)
        for i in range(n):
            fd = models.finite_diff_gradient(
                lambda p: models.per_sample_losses(spec, p, batch, mask_seed)[i], params, h)
            scale = max(np.linalg.norm(grads[i]), 1e-8)
            worst = max(worst, float(np.linalg.norm(fd - grads[i]) / scale))
    return worst


def cmd_gradcheck(args) -> int:
    worst = gradcheck(args.trials, args.seed)
    print(f"worst relative error over {args.trials} models: {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_CERT


def cmd_gen_data(args) -> int:
    cfg = build_config(args, single_variant=True)
    seed = cfg.seeds[0]
    dataset = load_dataset(cfg, seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name, batch in (("train", dataset.train), ("val", dataset.validation), ("test", dataset.test)):
        data.batch_to_idx(batch, cfg.out_dir / f"{name}-images-idx3-ubyte", cfg.out_dir / f"{name}-labels-idx1-ubyte")
    print(f"wrote {dataset.name} splits ({dataset.train.size}/{dataset.validation.size}/{dataset.test.size}) to {cfg.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: $HV_OUT_DIR or ./hv_out)")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--config", help="flat key = value configuration file")
    exp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    exp.add_argument("--workers", type=int, default=1)
    exp.add_argument("--seed-list", help="comma-separated seeds, e.g. 0,1,2")

    parser = argparse.ArgumentParser(prog="hvlearn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, exp], help="train one aggregator over the seed list")
    sub.add_parser("sweep", parents=[common, exp], help="train every configured variant over the seed list")
    sub.add_parser("gen-data", parents=[common, exp], help="write a synthetic dataset as IDX files")

    vt = sub.add_parser("validate-theory", parents=[common], help="run the bound certification battery")
    vt.add_argument("--nu", type=float, default=0.5)
    vt.add_argument("--grid", type=int, default=10_000, help="perturbations sampled per ladder rung")
    vt.add_argument("--epsilon", type=float, default=0.1)
    vt.add_argument("--problems", type=int, default=50)
    vt.add_argument("--weight-cases", type=int, default=10_000)
    vt.add_argument("--seed", type=int, default=0)

    gc = sub.add_parser("gradcheck", parents=[common], help="compare model gradients with finite differences")
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("train", "sweep"):
            return cmd_train(args, single_variant=args.command == "train")
        if args.command == "validate-theory":
            return cmd_validate_theory(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        return cmd_gen_data(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, MismatchError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
