from dataclasses import dataclass
from datetime import datetime
from typing import Dict, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigurationError, DimensionError
from app.schemas.base import ArraySchema, ForecastBatch, MultiModeDataset, SplitRanges

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)
SLOT_MINUTES = 30
STD_FLOOR = 1e-8
SPLITS = ("train", "val", "test")


def chronological_split(
    num_steps: int,
    history_len: int,
    horizon: int,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> SplitRanges:
    """Contiguous train/val/test ranges with boundaries at floor(f1*T) and floor((f1+f2)*T)."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    first = int(math.floor(fractions[0] * num_steps + 1e-9))
    second = int(math.floor((fractions[0] + fractions[1]) * num_steps + 1e-9))
    ranges = SplitRanges(train=[0, first], val=[first, second], test=[second, num_steps])

    window = history_len + horizon
    for name in SPLITS:
        start, stop = getattr(ranges, name)
        if stop - start < window:
            raise ConfigurationError(
                f"{name} split [{start}, {stop}) is shorter than history + horizon = {window}"
            )
    return ranges


def calendar_indices(start: datetime, step_minutes: int, positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Time-of-day slot (midnight = 0, 30-minute slots) and day of week (Monday = 0)."""
    stamps = pd.Timestamp(start) + pd.to_timedelta(np.asarray(positions, dtype=np.int64) * step_minutes, unit="min")
    stamps = pd.DatetimeIndex(stamps)
    tod = ((stamps.hour * 60 + stamps.minute) // SLOT_MINUTES).to_numpy(dtype=np.int64)
    dow = stamps.dayofweek.to_numpy(dtype=np.int64)
    return tod, dow


def make_windows(
    values: np.ndarray,
    time_range: range,
    history_len: int,
    horizon: int,
    start_timestamp: datetime,
    step_minutes: int,
    stride: int = 1,
) -> ForecastBatch:
    """One sample per anchor t whose history [t-W+1, t] and target [t+1, t+H] lie in ``time_range``.

    ``values`` is M x N x T x C; calendar features come from the last history step t.
    """
    first_anchor = time_range.start + history_len - 1
    last_anchor = time_range.stop - horizon - 1
    anchors = np.arange(first_anchor, last_anchor + 1, stride, dtype=np.int64)
    history_idx = anchors[:, None] + np.arange(-history_len + 1, 1)
    target_idx = anchors[:, None] + np.arange(1, horizon + 1)

    # M x N x B x L x C -> B x M x N x L x C
    history = np.moveaxis(values[:, :, history_idx, :], 2, 0)
    target = np.moveaxis(values[:, :, target_idx, :], 2, 0)
    tod, dow = calendar_indices(start_timestamp, step_minutes, anchors)
    return ForecastBatch(
        history=np.ascontiguousarray(history),
        target=np.ascontiguousarray(target),
        tod_index=tod,
        dow_index=dow,
        anchors=anchors,
    )


class Scaler(ArraySchema):
    """Per (mode, channel) z-score statistics, shaped M x 1 x 1 x C for broadcasting."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, train_range: range) -> "Scaler":
        train = values[:, :, train_range.start:train_range.stop, :]
        mean = train.mean(axis=(1, 2), keepdims=True)
        std = np.maximum(train.std(axis=(1, 2), keepdims=True), STD_FLOOR)
        return cls(mean=mean, std=std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class PreparedData:
    """Scaled windows for every split plus the scaler fitted on the training range."""
    scaler: Scaler
    ranges: SplitRanges
    windows: Dict[str, ForecastBatch]


def prepare_data(
    dataset: MultiModeDataset,
    history_len: int,
    horizon: int,
    scaler: Optional[Scaler] = None,
) -> PreparedData:
    """Split, scale and window ``dataset``; a given ``scaler`` (from a checkpoint) is reused as is."""
    ranges = chronological_split(dataset.num_steps, history_len, horizon)
    if scaler is None:
        scaler = Scaler.fit(dataset.values, ranges.get("train"))
    elif scaler.mean.shape != (dataset.num_modes, 1, 1, dataset.channels):
        raise DimensionError(
            f"scaler statistics {scaler.mean.shape} do not fit a dataset with "
            f"M={dataset.num_modes}, C={dataset.channels}"
        )
    scaled = scaler.apply(dataset.values)
    windows = {
        split: make_windows(
            scaled,
            ranges.get(split),
            history_len,
            horizon,
            dataset.start_timestamp,
            dataset.step_minutes,
        )
        for split in SPLITS
    }
    logger.debug(
        f"Prepared windows: " + ", ".join(f"{s}={len(w)}" for s, w in windows.items())
    )
    return PreparedData(scaler=scaler, ranges=ranges, windows=windows)
