import argparse
import logging

import numpy as np

from app.api.deps import output_dir, require_checkpoint, resolve_dataset, write_resolved_config
from app.core.data import chronological_split, prepare_data
from app.core.training import predict_range
from app.db.checkpoints import load_checkpoint
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "write forecasts for a range of the dataset"

PREDICTIONS_FILE = "predictions.npz"
RELATIONS_FILE = "relations.npz"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", help="checkpoint written by train")
    parser.add_argument("--start", type=int, help="first time index (default: start of the test split)")
    parser.add_argument("--stop", type=int, help="end time index, exclusive (default: T)")
    parser.add_argument("--relations", action="store_true", help="also dump the normalized relation matrices")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(require_checkpoint(config))
    directory = output_dir(config, "predict")
    write_resolved_config(config, directory, "predict")
    dataset = resolve_dataset(config)
    model = checkpoint.model

    start, stop = args.start, args.stop
    if start is None:
        start = chronological_split(dataset.num_steps, model.config.history_len, model.config.horizon).test[0]
    if stop is None:
        stop = dataset.num_steps
    scaler = checkpoint.scaler
    if scaler is None:
        scaler = prepare_data(dataset, model.config.history_len, model.config.horizon).scaler
    result = predict_range(model, scaler, dataset, range(start, stop), config.train.batch_size)
    np.savez(
        directory / PREDICTIONS_FILE,
        anchors=result.anchors,
        predictions=result.predictions,
        truth=result.truth,
        mode_names=np.array(dataset.mode_names),
    )
    print(f"{len(result.anchors)} forecasts for [{start}, {stop}) written to {directory / PREDICTIONS_FILE}")

    if args.relations:
        relation_set = model.relation_matrices()
        if relation_set is None:
            logger.warning("Cross-mode spatial learning is disabled; no relation matrices to dump")
        else:
            np.savez(directory / RELATIONS_FILE, **relation_set.as_arrays())
            print(f"relation matrices written to {directory / RELATIONS_FILE}")
    return 0
