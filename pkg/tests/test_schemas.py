from datetime import datetime

import numpy as np
import pytest
from pydantic import ValidationError

from app.schemas.base import (
    DatasetMetadata,
    EvaluationConfig,
    MultiModeDataset,
    RunConfig,
    SplitRanges,
    TrainConfig,
)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert (config.learning_rate, config.batch_size, config.max_epochs, config.patience) == (0.001, 128, 1000, 100)
        assert config.clip_norm is None

    def test_default_patience_follows_epoch_budget(self):
        assert TrainConfig(max_epochs=10).patience == 10

    def test_explicit_patience_must_fit(self):
        with pytest.raises(ValidationError):
            TrainConfig(max_epochs=10, patience=11)

    @pytest.mark.parametrize("field", ["learning_rate", "batch_size", "max_epochs"])
    def test_positive(self, field):
        with pytest.raises(ValidationError):
            TrainConfig(**{field: 0})


class TestRunConfig:
    def test_seed_propagates(self):
        config = RunConfig(seed=5)
        assert config.train.seed == 5
        assert config.synthetic.seed == 5

    def test_without_seed_sections_keep_their_own(self):
        config = RunConfig()
        assert config.train.seed == 0
        assert config.synthetic.seed == 7

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig(modle={})

    def test_evaluation_split(self):
        with pytest.raises(ValidationError):
            EvaluationConfig(split="holdout")
        with pytest.raises(ValidationError):
            EvaluationConfig(horizons=[0])


class TestDatasetSchemas:
    def test_values_become_read_only(self):
        dataset = MultiModeDataset(
            values=np.zeros((1, 2, 3, 1)),
            start_timestamp=datetime(2016, 4, 1),
            mode_names=["taxi"],
            channel_names=["pickup"],
        )
        with pytest.raises(ValueError):
            dataset.values[0, 0, 0, 0] = 1.0

    def test_non_finite_values_rejected(self):
        with pytest.raises(ValidationError):
            MultiModeDataset(
                values=np.full((1, 2, 3, 1), np.inf),
                start_timestamp=datetime(2016, 4, 1),
                mode_names=["taxi"],
                channel_names=["pickup"],
            )

    def test_step_must_divide_a_day(self):
        with pytest.raises(ValidationError):
            DatasetMetadata(
                M=1, N=1, T=1, C=1, mode_names=["taxi"], channel_names=["pickup"],
                start_timestamp=datetime(2016, 4, 1), step_minutes=7,
            )

    def test_split_ranges(self):
        ranges = SplitRanges(train=[0, 7], val=[7, 9], test=[9, 12])
        assert list(ranges.get("val")) == [7, 8]
