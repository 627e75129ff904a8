"""Command-line pipeline: prepare data, train models, evaluate, sweep.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
Primary outputs (stats, training logs, eval reports, sweep tables) are
byte-deterministic for a fixed seed and configuration; figures are rendered
alongside them.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import os
import sys

import numpy as np

from . import __version__, data, evaluation, figures, models, training
from .config import (
    ConfigError,
    load_config_file,
    resolve_options,
    write_manifest,
)

logger = logging.getLogger(__name__)

VARIANT_CHOICES = ("rl", "ml", "fused", "fused-scratch")
AXIS_ALIASES = {
    "neg-ratio": "neg_ratio", "neg_ratio": "neg_ratio",
    "negative-ratio": "neg_ratio", "negative_ratio": "neg_ratio",
    "factors": "factors", "predictive-dim": "factors", "predictive_dim": "factors",
}


class _Parser(argparse.ArgumentParser):
    """Argument errors raise instead of exiting so main() can map exit codes."""

    def error(self, message):
        raise ConfigError(message)


PREPARE_DEFAULTS = {
    "raw": None, "format": data.FORMAT_DOUBLE_COLON, "out": ".", "name": None,
    "seed": 42, "min_user": 20, "min_item": 5, "no_filter": False,
    "test_negatives": 100,
}
TRAIN_DEFAULTS = {
    "dataset": None, "variant": "rl", "factors": 8, "neg_ratio": 4,
    "epochs": 20, "lr": 0.001, "batch_size": 256, "seed": 42, "out": ".",
    "k": 10, "eval_every": 1, "patience": None, "alpha": 0.5,
    "rl_checkpoint": None, "ml_checkpoint": None,
    "neg_resample": training.RESAMPLE_EPOCH, "init_stddev": 0.01,
}
EVALUATE_DEFAULTS = {
    "dataset": None, "checkpoint": None, "itempop": False, "k": 10,
    "seed": 42, "out": ".",
}
SWEEP_DEFAULTS = {
    "dataset": None, "variant": "fused", "axis": None, "values": None,
    "factors": 8, "neg_ratio": 4, "epochs": 20, "lr": 0.001,
    "batch_size": 256, "seed": 42, "out": ".", "k": 10, "alpha": 0.5,
    "parallel": 0, "eval_every": 1,
}

_FLAG_KWARGS = {
    "no_filter": dict(action="store_const", const=True),
    "itempop": dict(action="store_const", const=True),
}
_OPTION_CASTS = {
    "raw": str, "format": str, "out": str, "name": str, "seed": int,
    "min_user": int, "min_item": int, "test_negatives": int, "dataset": str,
    "variant": str, "factors": int, "neg_ratio": int, "epochs": int,
    "lr": float, "batch_size": int, "k": int, "eval_every": int,
    "patience": int, "alpha": float, "rl_checkpoint": str,
    "ml_checkpoint": str, "neg_resample": str, "init_stddev": float,
    "checkpoint": str, "axis": str, "values": str, "parallel": int,
}


def _add_options(parser: argparse.ArgumentParser, defaults: dict) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="key = value configuration file")
    for key in defaults:
        flag = "--" + key.replace("_", "-")
        if key in _FLAG_KWARGS:
            parser.add_argument(flag, dest=key, default=None, **_FLAG_KWARGS[key])
        else:
            parser.add_argument(flag, dest=key, default=None,
                                type=_OPTION_CASTS[key])


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    file_values = load_config_file(args.config) if args.config else {}
    cli_values = {key: getattr(args, key) for key in defaults}
    return resolve_options(defaults, file_values, cli_values)


def _require(opts: dict, *keys: str) -> None:
    for key in keys:
        if opts[key] is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def _split_prefix(prefix: str) -> tuple[str, str]:
    directory, name = os.path.split(prefix)
    return directory or ".", name


def _load_dataset(prefix: str):
    directory, name = _split_prefix(prefix)
    return data.read_canonical(directory, name), name


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(args: argparse.Namespace) -> int:
    opts = _resolve(args, PREPARE_DEFAULTS)
    _require(opts, "raw")
    if opts["name"] is None:
        opts["name"] = os.path.basename(str(opts["raw"])).split(".")[0]
    log = data.load_ratings(opts["raw"], opts["format"])
    if not opts["no_filter"]:
        log = data.filter_k_core(log, opts["min_user"], opts["min_item"])
    _, split = data.build_split(log)
    rng = np.random.default_rng([opts["seed"], training.STREAM_TEST_NEGATIVES])
    cases = data.sample_test_negatives(split, opts["test_negatives"], rng)
    os.makedirs(opts["out"], exist_ok=True)
    data.write_canonical(split, cases, opts["out"], opts["name"])
    stats_path = os.path.join(opts["out"], f"{opts['name']}.stats")
    _write_lines(stats_path, [
        f"users\t{split.num_users}",
        f"items\t{split.num_items}",
        f"interactions\t{split.total_interactions}",
        f"sparsity\t{split.sparsity:.4f}",
    ])
    write_manifest(os.path.join(opts["out"], f"{opts['name']}.manifest.txt"),
                   "prepare", __version__, opts)
    print(f"{opts['name']}: {split.num_users} users, {split.num_items} items, "
          f"{split.total_interactions} interactions, "
          f"sparsity {split.sparsity:.4f}, dropped {split.dropped_users}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _model_id(variant: str, arch: models.ArchSpec) -> str:
    d = arch.rl_predictive_dim if arch.has_rl else arch.ml_predictive_dim
    return f"{variant}-d{d}"


def _train_config(opts: dict, optimizer: str) -> training.TrainConfig:
    return training.TrainConfig(
        batch_size=opts["batch_size"], learning_rate=opts["lr"],
        optimizer=optimizer, epochs=opts["epochs"],
        negative_ratio=opts["neg_ratio"], seed=opts["seed"],
        eval_every=opts["eval_every"], patience=opts.get("patience"),
        neg_resample=opts.get("neg_resample", training.RESAMPLE_EPOCH),
        init_stddev=opts.get("init_stddev", 0.01))


def _check_dims(arch: models.ArchSpec, split: data.SplitDataset, source: str) -> None:
    if (arch.num_users, arch.num_items) != (split.num_users, split.num_items):
        raise ValueError(
            f"{source} was built for {arch.num_users} users x {arch.num_items} "
            f"items but the dataset has {split.num_users} x {split.num_items}")


def _build_initial_params(variant: str, split: data.SplitDataset,
                          opts: dict) -> models.ModelParams:
    if variant == "fused":
        _require(opts, "rl_checkpoint", "ml_checkpoint")
        rl_params = models.load_checkpoint(opts["rl_checkpoint"])
        ml_params = models.load_checkpoint(opts["ml_checkpoint"])
        _check_dims(rl_params.arch, split, opts["rl_checkpoint"])
        _check_dims(ml_params.arch, split, opts["ml_checkpoint"])
        return models.fuse_pretrained(rl_params, ml_params, opts["alpha"])
    arch_variant = "fused" if variant == "fused-scratch" else variant
    arch = models.ArchSpec.default(arch_variant, split.num_users,
                                   split.num_items, opts["factors"])
    rng = np.random.default_rng([opts["seed"], training.STREAM_INIT])
    return models.init_params(arch, rng, stddev=opts["init_stddev"])


def _train_and_report(variant: str, split: data.SplitDataset,
                      cases: list[data.TestCase], opts: dict, out_dir: str,
                      dataset_name: str):
    optimizer = (training.OPTIMIZER_SGD if variant == "fused"
                 else training.OPTIMIZER_ADAM)
    params = _build_initial_params(variant, split, opts)
    config = _train_config(opts, optimizer)
    best, history = training.train(params, split, cases, config, k=opts["k"])
    model_id = _model_id(variant, best.arch)
    os.makedirs(out_dir, exist_ok=True)
    models.save_checkpoint(best, os.path.join(out_dir, f"{model_id}.ckpt"))
    _write_lines(os.path.join(out_dir, f"{model_id}.train.log"),
                 history.log_lines())
    _write_lines(os.path.join(out_dir, f"{model_id}.timings.tsv"),
                 history.timing_lines())
    report = evaluation.evaluate(evaluation.model_score_fn(best, split.train),
                                 cases, k=opts["k"], model_id=model_id,
                                 seed=opts["seed"])
    evaluation.write_report(report, os.path.join(out_dir, f"{model_id}.eval.txt"),
                            dataset=dataset_name)
    figures.plot_training_history(history,
                                  os.path.join(out_dir, f"{model_id}.history.png"),
                                  title=f"{model_id} on {dataset_name}")
    return best, history, report, model_id


def cmd_train(args: argparse.Namespace) -> int:
    opts = _resolve(args, TRAIN_DEFAULTS)
    _require(opts, "dataset")
    variant = opts["variant"]
    if variant not in VARIANT_CHOICES:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANT_CHOICES}")
    (split, cases), dataset_name = _load_dataset(opts["dataset"])
    best, history, report, model_id = _train_and_report(
        variant, split, cases, opts, opts["out"], dataset_name)
    write_manifest(os.path.join(opts["out"], f"{model_id}.manifest.txt"),
                   "train", __version__, opts)
    print(f"{model_id} on {dataset_name}: HR@{opts['k']} {report.hr:.4f} "
          f"NDCG@{opts['k']} {report.ndcg:.4f} (best epoch {history.best_epoch})")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args: argparse.Namespace) -> int:
    opts = _resolve(args, EVALUATE_DEFAULTS)
    _require(opts, "dataset")
    (split, cases), dataset_name = _load_dataset(opts["dataset"])
    if opts["itempop"]:
        score_fn = evaluation.item_pop_score_fn(split.train)
        model_id = "itempop"
    else:
        _require(opts, "checkpoint")
        params = models.load_checkpoint(opts["checkpoint"])
        _check_dims(params.arch, split, opts["checkpoint"])
        score_fn = evaluation.model_score_fn(params, split.train)
        model_id = _model_id(params.arch.variant, params.arch)
    report = evaluation.evaluate(score_fn, cases, k=opts["k"],
                                 model_id=model_id, seed=opts["seed"])
    os.makedirs(opts["out"], exist_ok=True)
    report_path = os.path.join(opts["out"], f"{model_id}.eval.txt")
    evaluation.write_report(report, report_path, dataset=dataset_name)
    figures.plot_rank_histogram(report,
                                os.path.join(opts["out"], f"{model_id}.ranks.png"),
                                title=f"{model_id} on {dataset_name}")
    write_manifest(os.path.join(opts["out"], f"{model_id}.manifest.txt"),
                   "evaluate", __version__, opts)
    print(f"{model_id} on {dataset_name}: HR@{opts['k']} {report.hr:.4f} "
          f"NDCG@{opts['k']} {report.ndcg:.4f}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def run_sweep_cell(dataset_prefix: str, cell_dir: str, variant: str,
                   opts: dict) -> tuple[float, float]:
    """Train and evaluate one sweep cell; used directly and via process pools."""
    (split, cases), dataset_name = _load_dataset(dataset_prefix)
    if variant == "fused":
        cell_opts = dict(opts)
        _, _, _, rl_id = _train_and_report("rl", split, cases, cell_opts,
                                           cell_dir, dataset_name)
        _, _, _, ml_id = _train_and_report("ml", split, cases, cell_opts,
                                           cell_dir, dataset_name)
        cell_opts["rl_checkpoint"] = os.path.join(cell_dir, f"{rl_id}.ckpt")
        cell_opts["ml_checkpoint"] = os.path.join(cell_dir, f"{ml_id}.ckpt")
        _, _, report, _ = _train_and_report("fused", split, cases, cell_opts,
                                            cell_dir, dataset_name)
    else:
        _, _, report, _ = _train_and_report(variant, split, cases, opts,
                                            cell_dir, dataset_name)
    return report.hr, report.ndcg


def cmd_sweep(args: argparse.Namespace) -> int:
    opts = _resolve(args, SWEEP_DEFAULTS)
    _require(opts, "dataset", "axis", "values")
    axis = AXIS_ALIASES.get(opts["axis"].strip())
    if axis is None:
        raise ConfigError(f"unknown sweep axis {opts['axis']!r}; "
                          "use neg-ratio or factors")
    variant = opts["variant"]
    if variant not in VARIANT_CHOICES:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANT_CHOICES}")
    try:
        values = [int(v) for v in str(opts["values"]).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values: {exc}") from None
    if not values:
        raise ConfigError("empty sweep value list")

    out_dir = opts["out"]
    os.makedirs(out_dir, exist_ok=True)
    jobs = []
    for value in values:
        cell_opts = {**TRAIN_DEFAULTS, **{k: opts[k] for k in SWEEP_DEFAULTS
                                          if k in TRAIN_DEFAULTS}}
        cell_opts[axis] = value
        cell_dir = os.path.join(out_dir, f"cell-{axis.replace('_', '-')}-{value}")
        jobs.append((value, cell_dir, cell_opts))

    results: dict[int, tuple[float, float] | None] = {}
    if opts["parallel"] and opts["parallel"] > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=opts["parallel"]) as pool:
            futures = {pool.submit(run_sweep_cell, opts["dataset"], cell_dir,
                                   variant, cell_opts): value
                       for value, cell_dir, cell_opts in jobs}
            for future, value in futures.items():
                try:
                    results[value] = future.result()
                except Exception as exc:
                    logger.error("sweep cell %s=%d failed: %s", axis, value, exc)
                    results[value] = None
    else:
        for value, cell_dir, cell_opts in jobs:
            try:
                results[value] = run_sweep_cell(opts["dataset"], cell_dir,
                                                variant, cell_opts)
            except Exception as exc:
                logger.error("sweep cell %s=%d failed: %s", axis, value, exc)
                results[value] = None

    axis_tag = axis.replace("_", "-")
    table_lines = ["value\thr\tndcg\tstatus"]
    series_lines = []
    ok_values, ok_hrs, ok_ndcgs = [], [], []
    for value in values:
        res = results[value]
        if res is None:
            table_lines.append(f"{value}\t-\t-\tfailed")
        else:
            hr, ndcg = res
            table_lines.append(f"{value}\t{hr:.6f}\t{ndcg:.6f}\tok")
            series_lines.append(f"{value}\t{hr:.6f}\t{ndcg:.6f}")
            ok_values.append(value)
            ok_hrs.append(hr)
            ok_ndcgs.append(ndcg)
    _write_lines(os.path.join(out_dir, f"sweep-{axis_tag}.tsv"), table_lines)
    _write_lines(os.path.join(out_dir, f"sweep-{axis_tag}.series.tsv"), series_lines)
    if ok_values:
        figures.plot_sweep(ok_values, ok_hrs, ok_ndcgs, axis_tag,
                           os.path.join(out_dir, f"sweep-{axis_tag}.png"),
                           title=f"{variant} sweep over {axis_tag}")
    write_manifest(os.path.join(out_dir, f"sweep-{axis_tag}.manifest.txt"),
                   "sweep", __version__, opts)
    for line in table_lines:
        print(line)
    if any(results[v] is None for v in values):
        return 2
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="implicitcf",
                     description="Implicit-feedback recommender pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    for name, defaults, func in (
            ("prepare", PREPARE_DEFAULTS, cmd_prepare),
            ("train", TRAIN_DEFAULTS, cmd_train),
            ("evaluate", EVALUATE_DEFAULTS, cmd_evaluate),
            ("sweep", SWEEP_DEFAULTS, cmd_sweep)):
        p = sub.add_parser(name)
        _add_options(p, defaults)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help()
            return 1
        return args.func(args)
    except (ConfigError, data.DataFormatError, data.EmptyDatasetError,
            models.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
