import argparse
import json
import logging

from app.api.deps import output_dir, write_resolved_config
from app.core.gradcheck import run_gradcheck_suite
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

HELP = "finite-difference gradient checks on the tiny configuration"

REPORT_FILE = "gradcheck.json"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--step", type=float, default=1e-5)
    parser.add_argument("--tolerance", type=float, default=1e-4)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    directory = output_dir(config, "gradcheck")
    write_resolved_config(config, directory, "gradcheck")
    reports = run_gradcheck_suite(seed=config.train.seed, step=args.step, tolerance=args.tolerance)

    payload = {name: report.model_dump() for name, report in reports.items()}
    (directory / REPORT_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for name, report in reports.items():
        status = "ok" if report.passed else f"FAILED ({', '.join(report.failures)})"
        print(f"{name}: {report.max_error:.3e} {status}")
    worst = max(report.max_error for report in reports.values())
    print(f"max relative error {worst:.3e}")
    return 0 if all(report.passed for report in reports.values()) else 1
