import logging

import numpy as np

from app.core.exceptions import ConfigurationError
from app.schemas.base import MINUTES_PER_DAY, MultiModeDataset, SyntheticConfig

logger = logging.getLogger(__name__)


def _ar_noise(rng: np.random.Generator, shape, coefficient: float, scale: float) -> np.ndarray:
    """AR(1) noise along axis 1 of ``shape`` (N x T x C)."""
    shocks = rng.standard_normal(shape) * scale
    noise = np.empty(shape)
    noise[:, 0] = shocks[:, 0]
    for t in range(1, shape[1]):
        noise[:, t] = coefficient * noise[:, t - 1] + shocks[:, t]
    return noise


def generate_synthetic(config: SyntheticConfig) -> MultiModeDataset:
    """Independent modes are a daily sinusoid per (node, channel) plus AR(1) noise;
    a driven mode follows ``gain * source(t - lag)`` plus small independent noise.

    Every draw comes from one ``default_rng(seed)`` in a fixed order, so a seed
    fully determines the values.
    """
    n, t_len, c = config.num_nodes, config.num_steps, config.channels
    for coupling in config.couplings:
        if coupling.lag >= t_len:
            raise ConfigurationError(
                f"coupling {coupling.source}->{coupling.target}: lag {coupling.lag} must be smaller than T={t_len}"
            )

    rng = np.random.default_rng(config.seed)
    period = MINUTES_PER_DAY // config.step_minutes
    max_lag = max((coupling.lag for coupling in config.couplings), default=0)
    # index tau covers t = tau - max_lag, so lagged sources exist for t < lag
    steps = np.arange(t_len + max_lag, dtype=np.float64)

    driven = {coupling.target: coupling for coupling in config.couplings}
    extended = {}
    for m in range(config.num_modes):
        if m in driven:
            continue
        level = rng.uniform(1.0, 3.0, size=(n, 1, c))
        amplitude = rng.uniform(0.5, 1.5, size=(n, 1, c))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1, c))
        seasonal = level + amplitude * np.sin(2.0 * np.pi * steps[None, :, None] / period + phase)
        extended[m] = seasonal + _ar_noise(
            rng, (n, steps.size, c), config.ar_coefficient, config.noise_scale
        )

    values = np.empty((config.num_modes, n, t_len, c))
    for m in range(config.num_modes):
        if m in driven:
            coupling = driven[m]
            offset = max_lag - coupling.lag
            lagged = extended[coupling.source][:, offset:offset + t_len]
            values[m] = coupling.gain * lagged + config.coupled_noise * rng.standard_normal((n, t_len, c))
        else:
            values[m] = extended[m][:, max_lag:]
    np.maximum(values, 0.0, out=values)

    mode_names = config.mode_names or [f"mode{m}" for m in range(config.num_modes)]
    channel_names = [f"channel{k}" for k in range(c)]
    logger.info(
        f"Generated synthetic dataset M={config.num_modes} N={n} T={t_len} C={c} "
        f"with {len(config.couplings)} coupling(s), seed {config.seed}"
    )
    return MultiModeDataset(
        values=values,
        start_timestamp=config.start_timestamp,
        step_minutes=config.step_minutes,
        mode_names=list(mode_names),
        channel_names=channel_names,
    )
