import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from src.domain.schemas import ExperimentConfig
from src.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    command: str
    run_id: str
    seed: int
    rng: np.random.Generator
    out_dir: Path


def _flatten(doc: Dict[str, Any]) -> Dict[str, Any]:
    """Top-level keys plus every [section] table, merged into one flat mapping."""
    flat: Dict[str, Any] = {}
    for key, value in doc.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for k, v in items:
            k = k.replace("-", "_")
            if k in flat:
                raise ConfigError(f"config key {k!r} is set twice")
            flat[k] = v
    return flat


def load_experiment_config(path: Optional[str], overrides: Dict[str, Any]) -> ExperimentConfig:
    """TOML file (optional) first, then command-line flags of the same name."""
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as fh:
                values = _flatten(tomllib.load(fh))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"unparseable config {path}: {e}")
        unknown = sorted(set(values) - set(ExperimentConfig.model_fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except PydanticValidationError as e:
        raise ConfigError(f"invalid config: {e.errors()[0]['loc']} {e.errors()[0]['msg']}")


def run_context(command: str, config: ExperimentConfig) -> RunContext:
    """Run id hashed from the command and config (output dir excluded); seeded generator."""
    canonical = json.dumps({"command": command, **config.model_dump(mode="json", exclude={"out"})},
                           sort_keys=True)
    run_id = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    logger.debug("Run context: command=%s run_id=%s seed=%d", command, run_id, config.seed)
    return RunContext(command=command, run_id=run_id, seed=config.seed,
                      rng=np.random.default_rng(config.seed), out_dir=out)
