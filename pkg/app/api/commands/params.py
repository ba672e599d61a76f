import argparse
import logging

import pandas as pd

from app.api.deps import output_dir, write_resolved_config
from app.core.complexity import scaling_report
from app.core.model import SimMst, count_parameters
from app.db.datasets import read_metadata
from app.schemas.base import RunConfig, SimMstConfig

logger = logging.getLogger(__name__)

HELP = "print the parameter count and the scaling report"

SCALING_FILE = "scaling.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-timing", dest="timed", action="store_false", help="skip forward-pass timing")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    directory = output_dir(config, "params")
    write_resolved_config(config, directory, "params")
    if config.dataset_path:
        metadata = read_metadata(config.dataset_path)
        dims = (metadata.num_modes, metadata.num_nodes, metadata.channels)
    else:
        dims = (config.synthetic.num_modes, config.synthetic.num_nodes, config.synthetic.channels)
    base = SimMstConfig.from_architecture(config.model, num_modes=dims[0], num_nodes=dims[1], channels=dims[2])
    print(f"parameters: {count_parameters(SimMst(base))}")

    report = scaling_report(base, timed=args.timed)
    pd.DataFrame([row.model_dump() for row in report.rows]).to_csv(directory / SCALING_FILE, index=False)
    print(pd.DataFrame([row.model_dump() for row in report.rows]).to_string(index=False))
    print(f"growth exponent in N: {report.node_exponent:.3f}")
    print(f"growth exponent in W: {report.history_exponent:.3f}")
    return 0
