"""
Hyperparameter sweeps: one pre-training run per value of a single config key.

Supported keys: `lambda_reg` (absolute values or
multiples of lambda_bt written as "2x"), `lambda_bt` (floats or "inverse_d") and the
embedding dimension `d`.
"""
import csv
import os
import re
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from mixbt.core.exceptions import ConfigurationError
from mixbt.core.logging_config import get_logger
from mixbt.core.run_config import build_config, write_resolved_config
from mixbt.schemas import RunConfig
from mixbt.services.data import load_run_datasets
from mixbt.services.trainloop import format_float, pretrain, resolve_seed

logger = get_logger(__name__)

SWEEPABLE = ("lambda_reg", "lambda_bt", "d")
SWEEP_COLUMNS = ["param", "value", "final_knn_top1", "best_knn_top1", "final_total", "overfitting_gap"]
_MULTIPLE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*[xX]\s*$")


@dataclass
class SweepResult:
    param: str
    value: str
    run_dir: str
    final_knn_top1: float
    best_knn_top1: float
    final_total: float
    overfitting_gap: float

    def as_row(self) -> List[str]:
        return [self.param, self.value, format_float(self.final_knn_top1), format_float(self.best_knn_top1),
                format_float(self.final_total), format_float(self.overfitting_gap)]


def _parse_value(param: str, text: str) -> Any:
    if param == "d":
        try:
            return int(text)
        except ValueError:
            raise ConfigurationError(f"sweep value '{text}' for 'd' is not an integer", key="d") from None
    if param == "lambda_bt" and text.strip() == "inverse_d":
        return "inverse_d"
    if param == "lambda_reg" and _MULTIPLE.match(text):
        return text.strip().lower()
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"sweep value '{text}' for '{param}' is not a number", key=param) from None


def config_for_value(base: Dict[str, Any], param: str, text: str) -> RunConfig:
    """
    The run config for one sweep point. `base` holds the raw (unresolved) config keys so
    derived defaults such as lambda_reg = 4 x lambda_bt follow the swept value.
    """
    if param not in SWEEPABLE:
        raise ConfigurationError(f"Cannot sweep '{param}'. Sweepable keys: {', '.join(SWEEPABLE)}", key=param)
    fields = dict(base)
    value = _parse_value(param, text)
    if param == "lambda_reg" and isinstance(value, str):
        # multiples refer to the resolved lambda_bt of the base config
        multiple = float(_MULTIPLE.match(value).group(1))
        lambda_bt = build_config({k: v for k, v in fields.items() if k != "lambda_reg"}).lambda_bt
        value = multiple * lambda_bt
    fields[param] = value
    return build_config(fields)


def _slug(param: str, text: str) -> str:
    return f"{param}_" + re.sub(r"[^A-Za-z0-9.]+", "_", text.strip())


def run_sweep(base: Dict[str, Any], param: str, values: Sequence[str], out_dir: str,
              seed: Optional[int] = None) -> List[SweepResult]:
    """Run one pretrain per value under `out_dir/<param>_<value>/` and write `out_dir/sweep.csv`."""
    if not values:
        raise ConfigurationError("a sweep needs at least one value", key=param)
    configs = [config_for_value(base, param, text) for text in values]
    # every swept key leaves the data untouched, so both splits are loaded once
    run_seed = resolve_seed(configs[0], seed)
    train, test = load_run_datasets(configs[0], run_seed)

    os.makedirs(out_dir, exist_ok=True)
    results = []
    for text, cfg in zip(values, configs):
        run_dir = os.path.join(out_dir, _slug(param, text))
        logger.info(f"Sweep {param}={text}: training into {run_dir}")
        write_resolved_config(cfg, run_dir, resolve_seed(cfg, seed))
        artifacts = pretrain(cfg, train, test, out_dir=run_dir, seed=seed)
        results.append(SweepResult(
            param=param,
            value=text.strip(),
            run_dir=run_dir,
            final_knn_top1=artifacts.final_knn_top1,
            best_knn_top1=artifacts.best_knn_top1,
            final_total=artifacts.final_total,
            overfitting_gap=artifacts.overfitting_gap,
        ))

    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for result in results:
            writer.writerow(result.as_row())
    return results
