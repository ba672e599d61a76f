from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import json
import logging
import math
import time

import numpy as np

from app.core import ops
from app.core.data import PreparedData, Scaler, make_windows
from app.core.exceptions import DimensionError, NonFiniteError, TrainingAborted
from app.core.metrics import metric_rows
from app.core.model import SimMst
from app.core.tensor import Tape, Tensor
from app.db.checkpoints import save_checkpoint
from app.schemas.base import ForecastBatch, HistoryRecord, MetricRow, MultiModeDataset, TrainConfig

logger = logging.getLogger(__name__)


def mae_loss(pred: Tensor, truth: Union[Tensor, np.ndarray]) -> Tensor:
    """Per-sample sum of |pred - truth| over modes, nodes, horizon and channels, averaged over the batch.

    ``pred`` is B x M x N x H x C; an unbatched M x N x H x C pair counts as one sample.
    """
    truth = ops.as_tensor(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"mae_loss: prediction {pred.shape} vs truth {truth.shape}")
    batch = pred.shape[0] if pred.ndim == 5 else 1
    return ops.scale(ops.total(ops.absolute(ops.sub(pred, truth))), 1.0 / batch)


@dataclass
class AdamState:
    """Step counter plus first/second moment estimates keyed by parameter name."""
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update of every parameter from its ``grad``, in place."""
    grads = {}
    for name in sorted(params):
        grad = params[name].grad
        grad = np.zeros_like(params[name].data) if grad is None else grad
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient in parameter {name}")
        grads[name] = grad

    state.step += 1
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step
    step_size = config.learning_rate / correction1

    for name, grad in grads.items():
        if name not in state.first:
            state.first[name] = np.zeros_like(grad)
            state.second[name] = np.zeros_like(grad)
        first, second = state.first[name], state.second[name]
        first *= config.beta1
        first += (1.0 - config.beta1) * grad
        second *= config.beta2
        second += (1.0 - config.beta2) * (grad * grad)
        params[name].data -= step_size * first / (np.sqrt(second / correction2) + config.adam_eps)


def clip_gradients(params: Dict[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``; returns the norm before."""
    squares = [float(np.sum(p.grad * p.grad)) for _, p in sorted(params.items()) if p.grad is not None]
    norm = math.sqrt(sum(squares))
    if norm > max_norm:
        factor = max_norm / norm
        for param in params.values():
            if param.grad is not None:
                param.grad = param.grad * factor
    return norm


@dataclass
class TrainResult:
    history: List[HistoryRecord]
    best_epoch: int
    best_val_loss: float
    initial_train_loss: float
    checkpoint_path: Optional[Path] = None

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss if self.history else self.initial_train_loss


def predict_scaled(model: SimMst, batch: ForecastBatch, batch_size: int) -> np.ndarray:
    """Forward pass without a tape, chunked; returns scaled predictions B x M x N x H x C."""
    chunks = []
    for start in range(0, len(batch), batch_size):
        rows = np.arange(start, min(start + batch_size, len(batch)))
        chunks.append(model.forward(batch.subset(rows)).data)
    return np.concatenate(chunks, axis=0)


def split_loss(model: SimMst, batch: ForecastBatch, batch_size: int) -> float:
    """Mean per-sample MAE objective over a whole split, in scaled units."""
    total = 0.0
    for start in range(0, len(batch), batch_size):
        rows = np.arange(start, min(start + batch_size, len(batch)))
        chunk = batch.subset(rows)
        total += mae_loss(model.forward(chunk), chunk.target).item() * len(rows)
    return total / len(batch)


def _save_best(model: SimMst, scaler: Scaler, path: Optional[Path], info: dict) -> None:
    if path is None:
        return
    save_checkpoint(path, model, scaler=scaler, info=info)


def train(
    model: SimMst,
    data: PreparedData,
    config: TrainConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    history_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Seeded mini-batch Adam on the training windows with validation-based early stopping.

    On return the model holds the best-validation parameters. Stops once the number of
    epochs without improvement exceeds ``patience`` or after ``max_epochs``.
    """
    checkpoint_path = Path(checkpoint_path) if checkpoint_path is not None else None
    history_path = Path(history_path) if history_path is not None else None
    if history_path is not None:
        history_path.parent.mkdir(parents=True, exist_ok=True)
        history_path.write_text("")

    train_windows, val_windows = data.windows["train"], data.windows["val"]
    rng = np.random.default_rng(config.seed)
    state = AdamState()

    initial_train_loss = split_loss(model, train_windows, config.batch_size)
    logger.info(
        f"Training {len(model.params)} tensors on {len(train_windows)} windows "
        f"({len(val_windows)} validation), initial loss {initial_train_loss:.6f}"
    )

    history: List[HistoryRecord] = []
    best_val, best_epoch, stale = math.inf, 0, 0
    best_state = model.state_dict()

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_windows))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            batch = train_windows.subset(rows)
            model.zero_grad()
            with Tape() as tape:
                loss = mae_loss(model.forward(batch), batch.target)
            if not np.isfinite(loss.item()):
                model.load_state_dict(best_state)
                raise TrainingAborted(
                    f"non-finite training loss at epoch {epoch}; best checkpoint from epoch {best_epoch} kept",
                    checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
                )
            tape.backward(loss)
            if config.clip_norm is not None:
                clip_gradients(model.params, config.clip_norm)
            try:
                adam_step(model.params, state, config)
            except NonFiniteError as e:
                model.load_state_dict(best_state)
                raise TrainingAborted(
                    f"{e.detail} at epoch {epoch}; best checkpoint from epoch {best_epoch} kept",
                    checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
                )
            running += loss.item() * len(rows)

        record = HistoryRecord(
            epoch=epoch,
            train_loss=running / len(train_windows),
            val_loss=split_loss(model, val_windows, config.batch_size),
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
        history.append(record)
        if history_path is not None:
            with history_path.open("a") as handle:
                handle.write(record.model_dump_json() + "\n")
        logger.info(
            f"epoch {epoch}: train {record.train_loss:.6f} val {record.val_loss:.6f} ({record.wall_ms:.0f} ms)"
        )

        if record.val_loss < best_val:
            best_val, best_epoch, stale = record.val_loss, epoch, 0
            best_state = model.state_dict()
            _save_best(
                model,
                data.scaler,
                checkpoint_path,
                {"best_epoch": epoch, "best_val_loss": best_val, "seed": config.seed},
            )
        else:
            stale += 1
            if stale > config.patience:
                logger.info(f"Early stopping after epoch {epoch}: no improvement for {stale} epochs")
                break

    model.load_state_dict(best_state)
    logger.info(f"Best validation loss {best_val:.6f} at epoch {best_epoch}")
    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        initial_train_loss=initial_train_loss,
        checkpoint_path=checkpoint_path,
    )


def read_history(path: Union[str, Path]) -> List[HistoryRecord]:
    lines = Path(path).read_text().splitlines()
    return [HistoryRecord.model_validate(json.loads(line)) for line in lines if line.strip()]


@dataclass
class Evaluation:
    rows: List[MetricRow]
    loss: float
    predictions: np.ndarray
    truth: np.ndarray


def evaluate(
    model: SimMst,
    data: PreparedData,
    split: str,
    horizons: Sequence[int],
    mode_names: Sequence[str],
    batch_size: int = 128,
) -> Evaluation:
    """Metric rows in original units at each horizon step, plus the split's scaled objective."""
    windows = data.windows[split]
    scaled = predict_scaled(model, windows, batch_size)
    predictions = data.scaler.invert(scaled)
    truth = data.scaler.invert(windows.target)
    rows = metric_rows(predictions, truth, mode_names, horizons)
    loss = split_loss(model, windows, batch_size)
    logger.info(f"{split} loss {loss:.6f} over {len(windows)} windows")
    return Evaluation(rows=rows, loss=loss, predictions=predictions, truth=truth)


@dataclass
class Prediction:
    anchors: np.ndarray
    predictions: np.ndarray
    truth: np.ndarray


def predict_range(
    model: SimMst,
    scaler: Scaler,
    dataset: MultiModeDataset,
    time_range: range,
    batch_size: int = 128,
) -> Prediction:
    """Forecasts in original units for every window inside ``time_range``."""
    cfg = model.config
    if time_range.start < 0 or time_range.stop > dataset.num_steps or len(time_range) < cfg.history_len + cfg.horizon:
        raise DimensionError(
            f"range [{time_range.start}, {time_range.stop}) must lie in [0, {dataset.num_steps}) "
            f"and span at least history + horizon = {cfg.history_len + cfg.horizon} steps"
        )
    windows = make_windows(
        scaler.apply(dataset.values),
        time_range,
        cfg.history_len,
        cfg.horizon,
        dataset.start_timestamp,
        dataset.step_minutes,
    )
    predictions = scaler.invert(predict_scaled(model, windows, batch_size))
    return Prediction(anchors=windows.anchors, predictions=predictions, truth=scaler.invert(windows.target))
