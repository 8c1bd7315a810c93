"""
Command-line entry point.

Every command ends by printing one machine-parseable line to stdout:
`RESULT key=value ...`. Logs go to stderr.

Exit codes: 0 success, 1 selftest failure, 2 invalid input (config, data, checkpoint,
shapes, evaluation arguments), 3 non-finite loss during training.
"""
import functools
import os
import sys
from typing import Dict, Optional

import click

from mixbt.core.config import settings
from mixbt.core.exceptions import CoreApplicationException, DimensionError, NonFiniteLossError
from mixbt.core.logging_config import get_logger, set_log_level
from mixbt.core.run_config import PRESETS, load_run_config, read_config_fields, write_resolved_config
from mixbt.services.checkpoint import load_checkpoint
from mixbt.services.curves import export_curves
from mixbt.services.data import load_eval_source, load_run_datasets
from mixbt.services.evaluation import (
    FeatureBank,
    default_k,
    knn_evaluate,
    linear_probe,
    redundancy_diagnostic,
)
from mixbt.services.model import extract_features
from mixbt.services.objectives import objective_registry
from mixbt.services.selftest import run_selftest, suite_registry
from mixbt.services.sweep import SWEEPABLE, run_sweep
from mixbt.services.trainloop import EVAL_COLUMNS, EvalRecord, format_float, pretrain, resolve_seed

logger = get_logger(__name__)

EXIT_SELFTEST_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_NON_FINITE = 3


def emit_result(**fields) -> None:
    parts = []
    for key, value in fields.items():
        if value is None:
            text = "none"
        elif isinstance(value, float):
            text = format_float(value)
        else:
            text = str(value).replace(" ", "_")
        parts.append(f"{key}={text}")
    click.echo("RESULT " + " ".join(parts))


def handle_errors(fn):
    """Map the exception hierarchy onto exit codes, with a RESULT line naming the error."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonFiniteLossError as e:
            click.echo(f"error: {e.message}", err=True)
            emit_result(status="error", error=type(e).__name__, step=e.step, epoch=e.epoch,
                        batch=e.batch_index, dump=e.dump_path)
            sys.exit(EXIT_NON_FINITE)
        except CoreApplicationException as e:
            click.echo(f"error: {e.message}", err=True)
            key = e.details.get("key") if isinstance(e.details, dict) else None
            emit_result(status="error", error=type(e).__name__, key=key)
            sys.exit(EXIT_INVALID_INPUT)
    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Override LOG_LEVEL for this invocation.")
def main(log_level: Optional[str]):
    """Mixed Barlow Twins pre-training and evaluation."""
    if log_level:
        set_log_level(log_level)


# --- pretrain ---

@main.command("pretrain")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat YAML run config; keys are RunConfig fields.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
              help="Seed the config with a named preset before the file's keys apply.")
@click.option("--objective", type=click.Choice(objective_registry.names()), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Run directory (default: DEFAULT_RUN_DIR/<objective>-seed<seed>).")
@handle_errors
def pretrain_command(config_path, preset, objective, seed, out_dir):
    """Pre-train an encoder and write metrics.csv, eval.csv and checkpoints."""
    cfg = load_run_config(config_path, preset, {"objective": objective})
    run_seed = resolve_seed(cfg, seed)
    out_dir = out_dir or os.path.join(settings.DEFAULT_RUN_DIR, f"{cfg.objective}-seed{run_seed}")
    train, test = load_run_datasets(cfg, run_seed)
    write_resolved_config(cfg, out_dir, run_seed)
    artifacts = pretrain(cfg, train, test, out_dir=out_dir, seed=run_seed)
    final = artifacts.evals[-1]
    emit_result(
        status="ok",
        objective=cfg.objective,
        seed=run_seed,
        steps=len(artifacts.metrics),
        final_total=artifacts.final_total,
        final_knn_top1=final.knn_top1,
        best_knn_top1=artifacts.best_knn_top1,
        overfitting_gap=artifacts.overfitting_gap,
        linear_top1=final.linear_top1,
        out=out_dir,
    )


# --- evaluation commands ---

def _frozen_features(checkpoint_path: str, data: str, max_per_class: Optional[int]):
    checkpoint = load_checkpoint(checkpoint_path)
    train, test = load_eval_source(data, max_per_class)
    if train.meta.pixels != checkpoint.params.input_dim:
        raise DimensionError("eval", f"checkpoint expects {checkpoint.params.input_dim} inputs per image, "
                                     f"data has {train.meta.pixels}")
    chunk = settings.EVAL_FEATURE_CHUNK
    bank = extract_features(checkpoint.params, train.images, chunk)
    queries = extract_features(checkpoint.params, test.images, chunk)
    return checkpoint, train, test, bank, queries


def _default_eval_csv(checkpoint_path: str) -> str:
    directory = os.path.dirname(os.path.abspath(checkpoint_path))
    if os.path.basename(directory) == "checkpoints":
        directory = os.path.dirname(directory)
    return os.path.join(directory, "eval.csv")


def _append_eval_row(path: str, record: EvalRecord) -> None:
    new_file = not os.path.isfile(path)
    with open(path, "a", encoding="utf-8") as f:
        if new_file:
            f.write(",".join(EVAL_COLUMNS) + "\n")
        f.write(",".join(record.as_row()) + "\n")


@main.command("eval-knn")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, help="CIFAR directory or synthetic:key=value,... spec.")
@click.option("--k", type=click.IntRange(min=1), default=None, help="Neighbours (default: by bank size).")
@click.option("--temperature", type=float, default=0.5, show_default=True)
@click.option("--weighting", type=click.Choice(["exp", "uniform"]), default="exp", show_default=True)
@click.option("--max-per-class", type=click.IntRange(min=1), default=None)
@click.option("--eval-csv", type=click.Path(dir_okay=False), default=None,
              help="CSV to append to (default: the run's eval.csv).")
@handle_errors
def eval_knn_command(checkpoint_path, data, k, temperature, weighting, max_per_class, eval_csv):
    """k-NN top-1 accuracy of a checkpoint's frozen encoder features."""
    checkpoint, train, test, bank_features, query_features = _frozen_features(checkpoint_path, data, max_per_class)
    classes = train.meta.class_count
    bank = FeatureBank.from_features(bank_features, train.labels, classes)
    queries = FeatureBank.from_features(query_features, test.labels, classes)
    k = k or default_k(len(bank))
    accuracy = knn_evaluate(bank, queries, k, temperature, weighting)
    offdiag, diag = redundancy_diagnostic(
        extract_features(checkpoint.params, test.images, settings.EVAL_FEATURE_CHUNK, projector=True)
    )
    eval_csv = eval_csv or _default_eval_csv(checkpoint_path)
    _append_eval_row(eval_csv, EvalRecord(epoch=checkpoint.epoch, knn_top1=accuracy, linear_top1=None,
                                          offdiag_mean=offdiag, diag_mean=diag))
    emit_result(status="ok", knn_top1=accuracy, k=k, epoch=checkpoint.epoch, eval_csv=eval_csv)


@main.command("linear-probe")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, help="CIFAR directory or synthetic:key=value,... spec.")
@click.option("--epochs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=512, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--gamma", type=float, default=0.97, show_default=True)
@click.option("--weight-decay", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--max-per-class", type=click.IntRange(min=1), default=None)
@handle_errors
def linear_probe_command(checkpoint_path, data, epochs, batch_size, lr, gamma, weight_decay, seed, max_per_class):
    """Linear-probe top-1 accuracy of a checkpoint's frozen encoder features."""
    checkpoint, train, test, bank_features, query_features = _frozen_features(checkpoint_path, data, max_per_class)
    seed = settings.MIXBT_SEED if seed is None else seed
    accuracy = linear_probe(bank_features, train.labels, query_features, test.labels, epochs, batch_size,
                            class_count=train.meta.class_count, lr=lr, gamma=gamma,
                            weight_decay=weight_decay, seed=seed)
    emit_result(status="ok", linear_top1=accuracy, epoch=checkpoint.epoch, seed=seed)


# --- reporting ---

@main.command("export-curves")
@click.option("--run", "runs", multiple=True, required=True, type=click.Path(),
              help="Run directory; repeat to compare runs.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output file; .svg renders a chart, anything else writes CSV.")
@handle_errors
def export_curves_command(runs, out_path):
    """Merge runs into a per-epoch table (CSV) or line chart (SVG)."""
    table = export_curves(list(runs), out_path)
    emit_result(status="ok", rows=len(table.rows), runs=len(runs), out=out_path)


@main.command("selftest")
@click.option("--trials", type=click.IntRange(min=1), default=None,
              help="Random trials for the gradient suite (default: SELFTEST_TRIALS).")
@click.option("--suite", "suites", multiple=True, type=click.Choice(suite_registry.names()),
              help="Run only these suites.")
def selftest_command(trials, suites):
    """Run the oracle suites and report pass/fail per suite."""
    results = run_selftest(trials or settings.SELFTEST_TRIALS, list(suites) or None)
    for result in results:
        click.echo(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}", err=True)
    failed = [r.name for r in results if not r.passed]
    emit_result(status="ok" if not failed else "failed", suites=len(results),
                failed=",".join(failed) if failed else None)
    if failed:
        sys.exit(EXIT_SELFTEST_FAILED)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--param", required=True, type=click.Choice(SWEEPABLE))
@click.option("--values", required=True, help="Comma-separated values, e.g. 1x,2x,3x or 128,1024 or inverse_d.")
@click.option("--objective", type=click.Choice(objective_registry.names()), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def sweep_command(config_path, preset, param, values, objective, seed, out_dir):
    """One pre-training run per value of --param; summary in sweep.csv."""
    base: Dict = read_config_fields(config_path, preset)
    if objective is not None:
        base["objective"] = objective
    results = run_sweep(base, param, [v for v in values.split(",") if v.strip()], out_dir, seed=seed)
    best = max(results, key=lambda r: r.final_knn_top1)
    emit_result(status="ok", runs=len(results), best_value=best.value,
                best_final_knn_top1=best.final_knn_top1, out=os.path.join(out_dir, "sweep.csv"))


if __name__ == "__main__":
    main()
