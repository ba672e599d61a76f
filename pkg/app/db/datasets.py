from pathlib import Path
from typing import Union
import json
import logging

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.exceptions import DatasetLoadError
from app.schemas.base import DatasetMetadata, MultiModeDataset

logger = logging.getLogger(__name__)

METADATA_FILE = "metadata.json"
VALUE_DTYPE = "<f8"
CSV_COLUMNS = ["node", "time_index", "channel", "value"]

PathLike = Union[str, Path]


def save_dataset(dataset: MultiModeDataset, path: PathLike) -> Path:
    """Write ``dataset`` to ``path``; identical datasets give byte-identical directories."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    metadata = dataset.metadata()
    (root / METADATA_FILE).write_text(metadata.model_dump_json(by_alias=True, indent=2) + "\n")
    for m, name in enumerate(metadata.mode_names):
        # node, time, channel row-major
        np.ascontiguousarray(dataset.values[m], dtype=VALUE_DTYPE).tofile(root / f"{name}.bin")
    logger.info(f"Saved dataset {dataset.values.shape} to {root}")
    return root


def read_metadata(path: PathLike) -> DatasetMetadata:
    metadata_path = Path(path) / METADATA_FILE
    if not metadata_path.is_file():
        raise DatasetLoadError(f"missing {metadata_path}")
    try:
        return DatasetMetadata.model_validate(json.loads(metadata_path.read_text()))
    except json.JSONDecodeError as e:
        raise DatasetLoadError(f"{metadata_path} is not valid JSON: {e}")
    except ValidationError as e:
        raise DatasetLoadError(f"{metadata_path} is invalid: {e.errors()[0]['msg']}")


def _read_binary(path: Path, metadata: DatasetMetadata) -> np.ndarray:
    expected = metadata.num_nodes * metadata.num_steps * metadata.channels
    values = np.fromfile(path, dtype=VALUE_DTYPE)
    if values.size != expected:
        raise DatasetLoadError(
            f"{path.name}: holds {values.size} values, metadata declares "
            f"N={metadata.num_nodes} x T={metadata.num_steps} x C={metadata.channels} = {expected}"
        )
    return values.astype(np.float64).reshape(metadata.num_nodes, metadata.num_steps, metadata.channels)


def _read_csv(path: Path, metadata: DatasetMetadata) -> np.ndarray:
    """Long-format rows ``node,time_index,channel,value`` covering every cell exactly once."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetLoadError(f"{path.name}: cannot parse CSV: {e}")
    missing = [column for column in CSV_COLUMNS if column not in frame.columns]
    if missing:
        raise DatasetLoadError(f"{path.name}: missing columns {missing}")

    shape = (metadata.num_nodes, metadata.num_steps, metadata.channels)
    index = frame[CSV_COLUMNS[:3]].to_numpy()
    if not np.issubdtype(index.dtype, np.integer):
        raise DatasetLoadError(f"{path.name}: node, time_index and channel must be integers")
    for axis, (column, size) in enumerate(zip(CSV_COLUMNS[:3], shape)):
        bad = (index[:, axis] < 0) | (index[:, axis] >= size)
        if np.any(bad):
            raise DatasetLoadError(
                f"{path.name}: {column} value {index[bad, axis][0]} outside [0, {size})"
            )
    if frame.duplicated(subset=CSV_COLUMNS[:3]).any():
        raise DatasetLoadError(f"{path.name}: duplicate (node, time_index, channel) rows")
    if len(frame) != int(np.prod(shape)):
        raise DatasetLoadError(f"{path.name}: {len(frame)} rows, expected {int(np.prod(shape))}")

    values = np.empty(shape)
    values[index[:, 0], index[:, 1], index[:, 2]] = frame["value"].to_numpy(dtype=np.float64)
    return values


def load_dataset(path: PathLike) -> MultiModeDataset:
    """Read and validate a dataset directory; ``<mode>.csv`` is used when ``<mode>.bin`` is absent."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetLoadError(f"dataset directory {root} does not exist")
    metadata = read_metadata(root)

    modes = []
    for name in metadata.mode_names:
        binary, table = root / f"{name}.bin", root / f"{name}.csv"
        if binary.is_file():
            values = _read_binary(binary, metadata)
        elif table.is_file():
            logger.info(f"Importing {table.name} from CSV")
            values = _read_csv(table, metadata)
        else:
            raise DatasetLoadError(f"mode {name}: neither {binary.name} nor {table.name} found in {root}")
        if not np.all(np.isfinite(values)):
            raise DatasetLoadError(f"mode {name}: non-finite values")
        modes.append(values)

    dataset = MultiModeDataset(
        values=np.stack(modes),
        start_timestamp=metadata.start_timestamp,
        step_minutes=metadata.step_minutes,
        mode_names=metadata.mode_names,
        channel_names=metadata.channel_names,
    )
    logger.debug(f"Loaded dataset {dataset.values.shape} from {root}")
    return dataset


def convert_csv_dataset(path: PathLike) -> Path:
    """Rewrite a CSV-backed dataset directory in the binary layout."""
    return save_dataset(load_dataset(path), path)
