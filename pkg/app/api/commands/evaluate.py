import argparse
import json
import logging

from app.api.deps import output_dir, require_checkpoint, resolve_dataset, write_resolved_config
from app.core.data import prepare_data
from app.core.metrics import write_metric_csv
from app.core.training import evaluate
from app.db.checkpoints import load_checkpoint
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "compute MAE/RMSE/CORR per mode and horizon for a checkpoint"

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "evaluation.json"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", help="checkpoint written by train")
    parser.add_argument("--split", choices=["train", "val", "test"])


def run(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(require_checkpoint(config))
    directory = output_dir(config, "evaluate")
    write_resolved_config(config, directory, "evaluate")
    dataset = resolve_dataset(config)
    model = checkpoint.model

    data = prepare_data(dataset, model.config.history_len, model.config.horizon, scaler=checkpoint.scaler)
    outcome = evaluate(
        model,
        data,
        config.evaluation.split,
        config.evaluation.horizons,
        dataset.mode_names,
        config.train.batch_size,
    )
    write_metric_csv(outcome.rows, directory / METRICS_FILE)
    summary = {"split": config.evaluation.split, "loss": outcome.loss, "windows": int(outcome.truth.shape[0])}
    (directory / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n")

    for row in outcome.rows:
        corr = "n/a" if row.corr is None else f"{row.corr:.4f}"
        print(f"{row.mode} H={row.horizon}: MAE {row.mae:.4f} RMSE {row.rmse:.4f} CORR {corr}")
    print(f"{config.evaluation.split} loss {outcome.loss:.6f}")
    return 0
