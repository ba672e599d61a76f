from datetime import datetime
from pathlib import Path
from typing import Optional
import json
import logging

import pytz

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.core.synthetic import generate_synthetic
from app.db.datasets import load_dataset
from app.schemas.base import MultiModeDataset, RunConfig, SimMstConfig

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.json"


def output_dir(config: RunConfig, command: str) -> Path:
    """``output_dir`` from the config, else ``$SIMMST_OUTPUT_ROOT/<command>``."""
    path = Path(config.output_dir) if config.output_dir else Path(settings.SIMMST_OUTPUT_ROOT) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_resolved_config(config: RunConfig, directory: Path, command: str, stamp: bool = True) -> Path:
    """Echo the fully resolved configuration next to a command's outputs.

    The directory itself is left out of the echo. ``resolved_at`` sits beside the
    ``config`` block; ``stamp=False`` leaves it out where the directory must be
    byte-reproducible.
    """
    payload = {
        "command": command,
        "version": settings.VERSION,
        "config": config.model_dump(mode="json", exclude={"output_dir"}),
    }
    if stamp:
        payload["resolved_at"] = datetime.now(pytz.utc).isoformat()
    path = directory / RESOLVED_CONFIG_FILE
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def resolve_dataset(config: RunConfig) -> MultiModeDataset:
    """The dataset at ``dataset_path``, or a synthetic one generated from ``config.synthetic``."""
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    logger.info("No dataset path given; generating the configured synthetic dataset")
    return generate_synthetic(config.synthetic)


def model_config(config: RunConfig, dataset: MultiModeDataset) -> SimMstConfig:
    return SimMstConfig.from_architecture(
        config.model,
        num_modes=dataset.num_modes,
        num_nodes=dataset.num_nodes,
        channels=dataset.channels,
    )


def require_checkpoint(config: RunConfig) -> Path:
    if not config.checkpoint_path:
        raise ConfigurationError("this command needs --checkpoint (or checkpoint_path in the config)")
    return Path(config.checkpoint_path)


def driven_mode(config: RunConfig, override: Optional[int] = None) -> int:
    if override is not None:
        return override
    couplings = config.synthetic.couplings
    return couplings[0].target if couplings else 0
