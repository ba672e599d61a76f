from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Type
import argparse
import difflib
import json
import logging
import sys

from pydantic import BaseModel, ValidationError

from app.api.commands import ablate, evaluate, generate, gradcheck, params, predict, train
from app.core.config import settings
from app.core.exceptions import ConfigurationError, SimMstError
from app.schemas.base import RunConfig

logger = logging.getLogger(__name__)

COMMANDS = {
    "generate": generate,
    "train": train,
    "evaluate": evaluate,
    "predict": predict,
    "gradcheck": gradcheck,
    "params": params,
    "ablate": ablate,
}

# flag dest -> dotted config key
FLAG_OVERRIDES = {
    "seed": "seed",
    "dataset": "dataset_path",
    "output": "output_dir",
    "checkpoint": "checkpoint_path",
    "layers": "model.num_layers",
    "tdl_kind": "model.tdl_kind",
    "epochs": "train.max_epochs",
    "patience": "train.patience",
    "lr": "train.learning_rate",
    "batch_size": "train.batch_size",
    "split": "evaluation.split",
}


def _section_schemas(schema: Type[BaseModel]) -> Dict[str, Type[BaseModel]]:
    sections = {}
    for name, field in schema.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            sections[name] = annotation
    return sections


def _suggest(key: str, schema: Type[BaseModel]) -> Optional[str]:
    """Closest field name, falling back to a dotted ``section.field`` one level down."""
    match = difflib.get_close_matches(key, list(schema.model_fields), n=1)
    if match:
        return match[0]
    nested = {
        f"{section}.{field}": field
        for section, sub_schema in _section_schemas(schema).items()
        for field in sub_schema.model_fields
    }
    match = difflib.get_close_matches(key, sorted(set(nested.values())), n=1)
    if not match:
        return None
    return next(dotted for dotted, field in nested.items() if field == match[0])


def _check_keys(values: Dict[str, Any], schema: Type[BaseModel], where: str) -> None:
    """Reject keys the schema does not know, suggesting the closest known one."""
    sections = _section_schemas(schema)
    for key, value in values.items():
        if key not in schema.model_fields:
            suggestion = _suggest(key, schema)
            hint = f" (did you mean '{suggestion}'?)" if suggestion else ""
            raise ConfigurationError(f"unknown key '{key}' in {where}{hint}")
        if isinstance(value, dict) and key in sections:
            _check_keys(value, sections[key], f"section '{key}'")


def _set_dotted(values: Dict[str, Any], dotted: str, value: Any) -> None:
    *sections, leaf = dotted.split(".")
    target = values
    for section in sections:
        existing = target.get(section)
        if existing is None:
            existing = target[section] = {}
        elif not isinstance(existing, dict):
            raise ConfigurationError(f"cannot set '{dotted}': '{section}' is not a section")
        target = existing
    target[leaf] = value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults <- JSON file <- overrides (dotted keys such as ``model.num_layers``)."""
    values: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigurationError(f"config file {config_path} does not exist")
        text = config_path.read_text().strip()
        try:
            values = json.loads(text) if text else {}
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {config_path} is not valid JSON: {e}")
        if not isinstance(values, dict):
            raise ConfigurationError(f"config file {config_path} must hold a JSON object")

    for dotted, value in (overrides or {}).items():
        _set_dotted(values, dotted, value)

    _check_keys(values, RunConfig, "the configuration")
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"]) or "configuration"
        raise ConfigurationError(f"invalid value for {location}: {error['msg']} (got {error.get('input')!r})")


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for dest, dotted in FLAG_OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dotted] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got '{item}'")
        key, text = item.split("=", 1)
        overrides[key.strip()] = _parse_value(text)
    return overrides


def _common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. model.topk=10")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help=f"output directory (default under ${{SIMMST_OUTPUT_ROOT}}, now {settings.SIMMST_OUTPUT_ROOT})")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--layers", type=int)
    parser.add_argument("--tdl-kind", dest="tdl_kind", choices=["mlp", "seasonal"])
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simmst", description=settings.DESCRIPTION)
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(name, help=module.HELP)
        _common_arguments(sub)
        module.add_arguments(sub)
    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        config = parse_config(args.config, collect_overrides(args))
        return COMMANDS[args.command].run(args, config)
    except SimMstError as e:
        logger.error(f"{args.command} failed: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        print(f"error: {e}", file=sys.stderr)
        return 1
