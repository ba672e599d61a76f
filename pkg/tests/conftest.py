from datetime import datetime

import numpy as np
import pytest

from app.core.data import prepare_data
from app.core.gradcheck import tiny_config
from app.core.model import SimMst
from app.core.synthetic import generate_synthetic
from app.schemas.base import MultiModeDataset, SimMstConfig, SyntheticConfig, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny):
    return SimMst(tiny, seed=0)


@pytest.fixture
def small_synthetic():
    """Two coupled modes, four nodes, long enough for W=6, H=3 in every split."""
    return generate_synthetic(SyntheticConfig(seed=3, num_modes=2, num_nodes=4, num_steps=160))


@pytest.fixture
def small_config():
    return SimMstConfig(
        num_modes=2,
        num_nodes=4,
        channels=1,
        history_len=6,
        horizon=3,
        hidden_dim=8,
        embed_dim=6,
        num_layers=2,
        topk=3,
    )


@pytest.fixture
def small_data(small_synthetic, small_config):
    return prepare_data(small_synthetic, small_config.history_len, small_config.horizon)


@pytest.fixture
def quick_train():
    return TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=4, patience=4, seed=0)


@pytest.fixture
def make_dataset():
    def _make(values, start=datetime(2016, 4, 1), step=30):
        values = np.asarray(values, dtype=np.float64)
        return MultiModeDataset(
            values=values,
            start_timestamp=start,
            step_minutes=step,
            mode_names=[f"mode{m}" for m in range(values.shape[0])],
            channel_names=[f"channel{c}" for c in range(values.shape[3])],
        )

    return _make
