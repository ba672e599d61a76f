import argparse
import logging

from app.api.deps import model_config, output_dir, resolve_dataset, write_resolved_config
from app.core.data import prepare_data
from app.core.model import SimMst, count_parameters
from app.core.training import train
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "train a model and keep the best-validation checkpoint"

CHECKPOINT_FILE = "checkpoint.zip"
HISTORY_FILE = "history.jsonl"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    pass


def run(args: argparse.Namespace, config: RunConfig) -> int:
    directory = output_dir(config, "train")
    write_resolved_config(config, directory, "train")
    dataset = resolve_dataset(config)
    model = SimMst(model_config(config, dataset), seed=config.train.seed)
    logger.info(f"Model has {count_parameters(model)} parameters")

    data = prepare_data(dataset, model.config.history_len, model.config.horizon)
    result = train(
        model,
        data,
        config.train,
        checkpoint_path=directory / CHECKPOINT_FILE,
        history_path=directory / HISTORY_FILE,
    )
    print(
        f"best validation loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
        f"checkpoint {directory / CHECKPOINT_FILE}"
    )
    return 0
