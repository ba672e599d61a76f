from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union
import io
import json
import logging
import zipfile

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.data import Scaler
from app.core.exceptions import CheckpointLoadError
from app.core.model import SimMst
from app.schemas.base import SimMstConfig

logger = logging.getLogger(__name__)

HEADER_MEMBER = "checkpoint.json"
PARAM_PREFIX = "params/"
SCALER_PREFIX = "scaler/"
# Fixed member order and timestamp keep archives of identical parameters byte-identical
FIXED_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    model: SimMst
    scaler: Optional[Scaler] = None
    info: Dict[str, Any] = field(default_factory=dict)


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def _npy_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array, dtype=np.float64), allow_pickle=False)
    return buffer.getvalue()


def save_checkpoint(
    path: Union[str, Path],
    model: SimMst,
    scaler: Optional[Scaler] = None,
    info: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": settings.CHECKPOINT_FORMAT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "parameters": sorted(model.params),
        "info": info or {},
    }
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr(_member(HEADER_MEMBER), json.dumps(header, indent=2, sort_keys=True))
        for name in sorted(model.params):
            archive.writestr(_member(f"{PARAM_PREFIX}{name}.npy"), _npy_bytes(model.params[name].data))
        if scaler is not None:
            archive.writestr(_member(f"{SCALER_PREFIX}mean.npy"), _npy_bytes(scaler.mean))
            archive.writestr(_member(f"{SCALER_PREFIX}std.npy"), _npy_bytes(scaler.std))
    logger.debug(f"Saved checkpoint with {len(model.params)} tensors to {path}")
    return path


def _read_npy(archive: zipfile.ZipFile, member: str) -> np.ndarray:
    with archive.open(member) as handle:
        return np.lib.format.read_array(io.BytesIO(handle.read()), allow_pickle=False)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointLoadError(f"checkpoint {path} does not exist")
    try:
        with zipfile.ZipFile(path) as archive:
            header = json.loads(archive.read(HEADER_MEMBER))
            version = header.get("format_version")
            if version != settings.CHECKPOINT_FORMAT_VERSION:
                raise CheckpointLoadError(
                    f"checkpoint {path} has format version {version}, "
                    f"expected {settings.CHECKPOINT_FORMAT_VERSION}"
                )
            config = SimMstConfig.model_validate(header["config"])
            state = {
                name: _read_npy(archive, f"{PARAM_PREFIX}{name}.npy") for name in header["parameters"]
            }
            scaler = None
            if f"{SCALER_PREFIX}mean.npy" in archive.namelist():
                scaler = Scaler(
                    mean=_read_npy(archive, f"{SCALER_PREFIX}mean.npy"),
                    std=_read_npy(archive, f"{SCALER_PREFIX}std.npy"),
                )
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise CheckpointLoadError(f"checkpoint {path} is unreadable: {e}")
    except ValidationError as e:
        raise CheckpointLoadError(f"checkpoint {path} carries an invalid config: {e.errors()[0]['msg']}")

    model = SimMst(config)
    model.load_state_dict(state)
    return Checkpoint(model=model, scaler=scaler, info=header.get("info", {}))
