"""
Loading and snapshotting run configurations.

A run config is a flat YAML mapping whose keys are `RunConfig` field names. A preset
may seed the mapping first; the file's keys then override it. The resolved config
(derived values such as lambda_reg filled in) is written next to each run as
`config.resolved.yaml` and is itself a valid --config input.
"""
import os
from typing import Any, Dict, Optional

import yaml
from pydantic import ValidationError

from mixbt.core.exceptions import ConfigurationError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import RunConfig

logger = get_logger(__name__)

RESOLVED_CONFIG_NAME = "config.resolved.yaml"

# Published defaults for the four small-image datasets, plus the laptop-scale "desk" run.
PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "dataset": "synthetic",
        "hidden_dims": [256, 128],
        "d": 64,
        "lambda_bt": 0.0078125,
        "batch_size": 256,
        "epochs": 100,
        "warmup_epochs": 10,
        "base_lr": 0.01,
    },
    "cifar10": {
        "dataset": "cifar10",
        "batch_size": 256,
        "base_lr": 0.01,
        "d": 1024,
        "lambda_bt": 0.0078125,
        "lambda_reg": 4.0,
    },
    "cifar100": {
        "dataset": "cifar100",
        "batch_size": 256,
        "base_lr": 0.01,
        "d": 1024,
        "lambda_bt": 0.0078125,
        "lambda_reg": 4.0,
    },
    "tinyimagenet": {
        "dataset": "tinyimagenet",
        "batch_size": 256,
        "base_lr": 0.01,
        "d": 1024,
        "lambda_bt": "inverse_d",
        "lambda_reg": 4.0,
    },
    "stl10": {
        "dataset": "stl10",
        "batch_size": 256,
        "base_lr": 0.01,
        "d": 1024,
        "lambda_bt": 0.0078125,
        "lambda_reg": 2.0,
    },
}


def build_config(fields: Dict[str, Any]) -> RunConfig:
    """Validate raw config keys, mapping pydantic errors onto ConfigurationError."""
    try:
        return RunConfig(**fields)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first.get("loc", ())) or None
        if first.get("type") == "extra_forbidden":
            raise ConfigurationError(f"Unknown config key '{key}'", key=key) from None
        where = f" for '{key}'" if key else ""
        raise ConfigurationError(f"Invalid config value{where}: {first.get('msg')}", key=key) from None


def read_config_fields(path: Optional[str] = None, preset: Optional[str] = None) -> Dict[str, Any]:
    """
    Raw (unvalidated) config keys from an optional preset overlaid with an optional file.

    Raises:
        ConfigurationError: unknown preset, unreadable file or a document that is not a mapping.
    """
    fields: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"Unknown preset '{preset}'. Available: {', '.join(sorted(PRESETS))}",
                                     key="preset")
        fields.update(PRESETS[preset])
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = yaml.safe_load(f)
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file '{path}': {e}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Config file '{path}' is not valid YAML: {e}") from e
        if document is None:
            document = {}
        if not isinstance(document, dict):
            raise ConfigurationError(f"Config file '{path}' must contain a key-value mapping")
        fields.update(document)
    return fields


def load_run_config(path: Optional[str] = None, preset: Optional[str] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    fields = read_config_fields(path, preset)
    fields.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(fields)


def write_resolved_config(cfg: RunConfig, out_dir: str, seed: int) -> str:
    """Snapshot every field (with the seed actually used) as `config.resolved.yaml`."""
    os.makedirs(out_dir, exist_ok=True)
    snapshot = cfg.model_dump(mode="json")
    snapshot["seed"] = seed
    path = os.path.join(out_dir, RESOLVED_CONFIG_NAME)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(snapshot, f, sort_keys=True)
    logger.debug(f"Wrote resolved config to {path}")
    return path
