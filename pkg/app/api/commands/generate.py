import argparse
import logging

from app.api.deps import output_dir, write_resolved_config
from app.core.synthetic import generate_synthetic
from app.db.datasets import save_dataset
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "write a seeded synthetic multi-mode dataset directory"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    pass


def run(args: argparse.Namespace, config: RunConfig) -> int:
    directory = output_dir(config, "dataset")
    dataset = generate_synthetic(config.synthetic)
    save_dataset(dataset, directory)
    # no timestamp: the same seed must give a byte-identical directory
    write_resolved_config(config, directory, "generate", stamp=False)
    print(f"dataset {dataset.values.shape} written to {directory}")
    return 0
