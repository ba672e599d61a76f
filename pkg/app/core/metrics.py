from typing import List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigurationError, ContractError, DimensionError
from app.schemas.base import MetricRow

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["mode", "horizon", "mae", "rmse", "corr"]


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    if pred.size == 0:
        raise ContractError("metrics need at least one element")


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    _check_pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def corr(pred: np.ndarray, truth: np.ndarray) -> Optional[float]:
    """Mean Pearson correlation over series, one series per trailing index.

    Inputs are S x ... with samples on axis 0 (typically S x N x C). Series whose
    true values are constant are skipped; None when no series qualifies.
    """
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    if pred.ndim == 0 or pred.shape[0] < 2:
        return None
    pred = pred.reshape(pred.shape[0], -1)
    truth = truth.reshape(truth.shape[0], -1)

    pred_dev = pred - pred.mean(axis=0)
    truth_dev = truth - truth.mean(axis=0)
    truth_norm = np.sqrt(np.sum(truth_dev ** 2, axis=0))
    pred_norm = np.sqrt(np.sum(pred_dev ** 2, axis=0))
    valid = truth_norm > 0
    if not np.any(valid):
        return None

    numerator = np.sum(pred_dev * truth_dev, axis=0)[valid]
    denominator = pred_norm[valid] * truth_norm[valid]
    # a constant prediction against a varying truth carries no linear signal
    per_series = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)
    return float(np.clip(per_series.mean(), -1.0, 1.0))


def metric_rows(
    pred: np.ndarray,
    truth: np.ndarray,
    mode_names: Sequence[str],
    horizons: Sequence[int],
) -> List[MetricRow]:
    """One row per (mode, horizon step) for predictions shaped S x M x N x H x C."""
    if pred.shape != truth.shape or pred.ndim != 5:
        raise DimensionError(f"expected matching S x M x N x H x C arrays, got {pred.shape} and {truth.shape}")
    horizon_len = pred.shape[3]
    for step in horizons:
        if step < 1 or step > horizon_len:
            raise ConfigurationError(f"horizon step {step} outside [1, {horizon_len}]")

    rows = []
    for m, name in enumerate(mode_names):
        for step in horizons:
            p, t = pred[:, m, :, step - 1], truth[:, m, :, step - 1]
            rows.append(MetricRow(mode=name, horizon=step, mae=mae(p, t), rmse=rmse(p, t), corr=corr(p, t)))
    return rows


def metric_table(rows: Sequence[MetricRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=METRIC_COLUMNS)


def write_metric_csv(rows: Sequence[MetricRow], path) -> None:
    metric_table(rows).to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote {len(rows)} metric rows to {path}")
