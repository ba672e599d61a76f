from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 24 * 60


class BaseSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArraySchema(BaseModel):
    """Records that carry numpy arrays."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# Model configuration

class TdlKind(str, Enum):
    """Temporal mixing variants"""
    MLP = "mlp"
    SEASONAL = "seasonal"


class ArchitectureConfig(BaseSchema):
    """Architecture knobs that do not depend on the dataset."""
    history_len: int = Field(12, ge=1)
    horizon: int = Field(12, ge=1)
    hidden_dim: int = Field(32, ge=1)
    embed_dim: int = Field(40, ge=1)
    num_layers: int = Field(3, ge=1)
    topk: int = Field(20, ge=1)
    tdl_kind: TdlKind = TdlKind.MLP
    enable_tdl: bool = True
    enable_csrl: bool = True
    enable_ccl: bool = True
    cross_mode: bool = True
    share_projections: bool = True
    temporal_lengths: Optional[List[int]] = None

    @model_validator(mode="after")
    def check_temporal_lengths(self):
        if self.temporal_lengths is None:
            return self
        lengths = self.temporal_lengths
        if len(lengths) != self.num_layers + 1:
            raise ValueError(
                f"temporal_lengths needs num_layers + 1 = {self.num_layers + 1} entries, got {len(lengths)}"
            )
        if lengths[0] != self.history_len:
            raise ValueError(f"temporal_lengths[0] must equal history_len ({self.history_len})")
        for previous, current in zip(lengths, lengths[1:]):
            if current < 1 or current > previous:
                raise ValueError(f"temporal_lengths must be positive and non-increasing, got {lengths}")
        return self

    def resolved_temporal_lengths(self) -> List[int]:
        """T_0 = W, T_l = ceil(T_{l-1} / 2) unless configured explicitly."""
        if self.temporal_lengths is not None:
            return list(self.temporal_lengths)
        lengths = [self.history_len]
        for _ in range(self.num_layers):
            lengths.append(math.ceil(lengths[-1] / 2))
        return lengths


class SimMstConfig(ArchitectureConfig):
    """Full model configuration including the data dimensions."""
    num_modes: int = Field(..., ge=1)
    num_nodes: int = Field(..., ge=1)
    channels: int = Field(..., ge=1)

    @model_validator(mode="after")
    def check_topk(self):
        if self.topk > self.num_nodes:
            raise ValueError(f"topk ({self.topk}) must not exceed num_nodes ({self.num_nodes})")
        return self

    @classmethod
    def from_architecture(
        cls, arch: ArchitectureConfig, num_modes: int, num_nodes: int, channels: int
    ) -> "SimMstConfig":
        values = arch.model_dump()
        if values["topk"] > num_nodes:
            logger.warning(f"topk {values['topk']} exceeds num_nodes {num_nodes}; clamping to {num_nodes}")
            values["topk"] = num_nodes
        return cls(**values, num_modes=num_modes, num_nodes=num_nodes, channels=channels)


# Training / evaluation configuration

class TrainConfig(BaseSchema):
    learning_rate: float = Field(0.001, gt=0)
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(1000, ge=1)
    patience: int = Field(100, ge=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = 0
    clip_norm: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_patience(self):
        # the default patience shrinks to a short explicit epoch budget
        if "patience" not in self.model_fields_set and self.patience > self.max_epochs:
            self.patience = self.max_epochs
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})")
        return self


class EvaluationConfig(BaseSchema):
    horizons: List[int] = Field(default_factory=lambda: [3, 6, 12])
    split: str = "test"

    @field_validator("horizons")
    @classmethod
    def check_horizons(cls, v: List[int]) -> List[int]:
        if not v or any(h < 1 for h in v):
            raise ValueError("horizons must be a non-empty list of 1-indexed steps")
        return v

    @field_validator("split")
    @classmethod
    def check_split(cls, v: str) -> str:
        if v not in ("train", "val", "test"):
            raise ValueError(f"split must be one of train/val/test, got {v}")
        return v


class Coupling(BaseSchema):
    """Mode ``target`` follows ``gain`` times mode ``source`` delayed by ``lag`` steps."""
    source: int = Field(..., ge=0)
    target: int = Field(..., ge=0)
    lag: int = Field(..., ge=0)
    gain: float

    @model_validator(mode="after")
    def check_distinct(self):
        if self.source == self.target:
            raise ValueError("a coupling needs distinct source and target modes")
        return self


class SyntheticConfig(BaseSchema):
    seed: int = 7
    num_modes: int = Field(2, ge=1)
    num_nodes: int = Field(8, ge=1)
    num_steps: int = Field(400, ge=2)
    channels: int = Field(1, ge=1)
    couplings: List[Coupling] = Field(
        default_factory=lambda: [Coupling(source=0, target=1, lag=2, gain=0.8)]
    )
    start_timestamp: datetime = datetime(2016, 4, 1)
    step_minutes: int = Field(30, ge=1)
    ar_coefficient: float = Field(0.5, ge=0, lt=1)
    noise_scale: float = Field(0.03, ge=0)
    coupled_noise: float = Field(0.02, ge=0)
    mode_names: Optional[List[str]] = None

    @model_validator(mode="after")
    def check_modes(self):
        targets = [c.target for c in self.couplings]
        if len(set(targets)) != len(targets):
            raise ValueError("each mode can be driven by at most one coupling")
        for coupling in self.couplings:
            if max(coupling.source, coupling.target) >= self.num_modes:
                raise ValueError(f"coupling {coupling.source}->{coupling.target} names a mode >= num_modes")
            if coupling.source in targets:
                raise ValueError("coupling sources must not themselves be driven modes")
        if self.mode_names is not None and len(self.mode_names) != self.num_modes:
            raise ValueError("mode_names must have num_modes entries")
        return self


class RunConfig(BaseSchema):
    """Everything one command needs; written back as resolved_config.json."""
    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    dataset_path: Optional[str] = None
    output_dir: Optional[str] = None
    checkpoint_path: Optional[str] = None
    seed: Optional[int] = None
    ablation_seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])

    @model_validator(mode="after")
    def propagate_seed(self):
        # A top-level seed drives both the trainer and the generator
        if self.seed is not None:
            if self.train.seed != self.seed:
                self.train = self.train.model_copy(update={"seed": self.seed})
            if self.synthetic.seed != self.seed:
                self.synthetic = self.synthetic.model_copy(update={"seed": self.seed})
        return self


# Datasets

class DatasetMetadata(BaseModel):
    """Contents of metadata.json in a dataset directory."""
    version: int = 1
    num_modes: int = Field(..., ge=1, alias="M")
    num_nodes: int = Field(..., ge=1, alias="N")
    num_steps: int = Field(..., ge=1, alias="T")
    channels: int = Field(..., ge=1, alias="C")
    mode_names: List[str]
    channel_names: List[str]
    start_timestamp: datetime
    step_minutes: int = Field(30, ge=1)

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    @model_validator(mode="after")
    def check_names(self):
        if len(self.mode_names) != self.num_modes:
            raise ValueError(f"mode_names has {len(self.mode_names)} entries, M = {self.num_modes}")
        if len(self.channel_names) != self.channels:
            raise ValueError(f"channel_names has {len(self.channel_names)} entries, C = {self.channels}")
        if MINUTES_PER_DAY % self.step_minutes != 0:
            raise ValueError(f"step_minutes {self.step_minutes} does not divide a day")
        return self


class MultiModeDataset(ArraySchema):
    """Observations of shape M x N x T x C with their calendar anchor."""
    values: np.ndarray
    start_timestamp: datetime
    step_minutes: int = 30
    mode_names: List[str]
    channel_names: List[str]

    @model_validator(mode="after")
    def check_values(self):
        if self.values.ndim != 4:
            raise ValueError(f"values must be M x N x T x C, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain non-finite entries")
        if len(self.mode_names) != self.values.shape[0]:
            raise ValueError("mode_names does not match the mode axis")
        if len(self.channel_names) != self.values.shape[3]:
            raise ValueError("channel_names does not match the channel axis")
        if MINUTES_PER_DAY % self.step_minutes != 0:
            raise ValueError(f"step_minutes {self.step_minutes} does not divide a day")
        self.values.setflags(write=False)
        return self

    @property
    def num_modes(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def num_steps(self) -> int:
        return self.values.shape[2]

    @property
    def channels(self) -> int:
        return self.values.shape[3]

    def metadata(self) -> DatasetMetadata:
        return DatasetMetadata(
            num_modes=self.num_modes,
            num_nodes=self.num_nodes,
            num_steps=self.num_steps,
            channels=self.channels,
            mode_names=list(self.mode_names),
            channel_names=list(self.channel_names),
            start_timestamp=self.start_timestamp,
            step_minutes=self.step_minutes,
        )


class ForecastBatch(ArraySchema):
    """Windowed samples: history B x M x N x W x C, target B x M x N x H x C."""
    history: np.ndarray
    target: np.ndarray
    tod_index: np.ndarray
    dow_index: np.ndarray
    anchors: np.ndarray

    def __len__(self) -> int:
        return self.history.shape[0]

    def subset(self, rows: np.ndarray) -> "ForecastBatch":
        return ForecastBatch(
            history=self.history[rows],
            target=self.target[rows],
            tod_index=self.tod_index[rows],
            dow_index=self.dow_index[rows],
            anchors=self.anchors[rows],
        )


class SplitRanges(BaseModel):
    """Half-open index ranges over the time axis."""
    train: List[int]
    val: List[int]
    test: List[int]

    def get(self, split: str) -> range:
        start, stop = getattr(self, split)
        return range(start, stop)


# Reports and logs

class HistoryRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float


class MetricRow(BaseModel):
    mode: str
    horizon: int
    mae: float
    rmse: float
    corr: Optional[float] = None


class GradientReport(BaseModel):
    """Per-leaf maximum relative error between analytic and central-difference gradients."""
    errors: Dict[str, float]
    tolerance: float
    step: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def failures(self) -> List[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


class ScalingRow(BaseModel):
    sweep: str
    num_nodes: int
    history_len: int
    parameters: int
    history_dependent_parameters: int
    forward_ms: float


class ScalingReport(BaseModel):
    rows: List[ScalingRow]
    node_exponent: float
    history_exponent: float


class AblationRow(BaseModel):
    variant: str
    mode: str
    horizon: int
    mae: float
    rmse: float
    corr: Optional[float] = None
    seeds: int
