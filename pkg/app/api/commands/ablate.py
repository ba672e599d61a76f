import argparse
import logging

from app.api.deps import driven_mode, model_config, output_dir, resolve_dataset, write_resolved_config
from app.core.ablation import VARIANTS, run_ablation
from app.core.data import prepare_data
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "train full and reduced variants under one budget and compare test metrics"

TABLE_FILE = "ablation.csv"
SEEDS_FILE = "ablation_seeds.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variants", nargs="+", choices=sorted(VARIANTS), help="subset of variants to train")
    parser.add_argument("--driven-mode", dest="driven_mode", type=int, help="mode index for the per-seed comparison")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    directory = output_dir(config, "ablate")
    write_resolved_config(config, directory, "ablate")
    dataset = resolve_dataset(config)
    base = model_config(config, dataset)
    data = prepare_data(dataset, base.history_len, base.horizon)

    result = run_ablation(
        base,
        data,
        config.train,
        seeds=config.ablation_seeds,
        mode_names=dataset.mode_names,
        horizons=config.evaluation.horizons,
        driven_mode=driven_mode(config, args.driven_mode),
        variants=args.variants,
    )
    table = result.table()
    table.to_csv(directory / TABLE_FILE, index=False)
    result.seed_table().to_csv(directory / SEEDS_FILE, index=False)
    print(table.to_string(index=False))
    print(f"full beats wo_csrl on {result.driven_mode} in {result.full_wins} of {len(config.ablation_seeds)} seeds")
    return 0
