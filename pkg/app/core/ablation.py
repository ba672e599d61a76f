from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from app.core.data import PreparedData
from app.core.exceptions import ConfigurationError
from app.core.metrics import mae
from app.core.model import SimMst
from app.core.training import evaluate, train
from app.schemas.base import AblationRow, SimMstConfig, TrainConfig

logger = logging.getLogger(__name__)

VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "wo_tdl": {"enable_tdl": False},
    "wo_csrl": {"enable_csrl": False},
    "wo_ccl": {"enable_ccl": False},
    "wo_cross_mode": {"cross_mode": False},
}


@dataclass
class SeedResult:
    seed: int
    variant: str
    driven_mode: str
    driven_mae: float


@dataclass
class AblationResult:
    rows: List[AblationRow]
    seed_results: List[SeedResult]
    driven_mode: str
    full_wins: int

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])

    def seed_table(self) -> pd.DataFrame:
        return pd.DataFrame([vars(result) for result in self.seed_results])

    def mean_test_mae(self, variant: str) -> float:
        """Test MAE of ``variant`` averaged over modes, horizons and seeds."""
        return float(np.mean([row.mae for row in self.rows if row.variant == variant]))


def variant_config(base: SimMstConfig, variant: str) -> SimMstConfig:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown ablation variant {variant}; choose from {sorted(VARIANTS)}")
    return base.model_copy(update=VARIANTS[variant])


def run_ablation(
    base: SimMstConfig,
    data: PreparedData,
    train_config: TrainConfig,
    seeds: Sequence[int],
    mode_names: Sequence[str],
    horizons: Sequence[int],
    driven_mode: int,
    variants: Optional[Sequence[str]] = None,
) -> AblationResult:
    """Train every variant once per seed and compare test metrics.

    Rows average each (variant, mode, horizon) metric over seeds. Per seed, the driven
    mode's test MAE over all horizon steps is kept, and ``full_wins`` counts the seeds
    where the full model beats the variant without cross-mode spatial learning.
    """
    variants = list(variants or VARIANTS)
    if not 0 <= driven_mode < base.num_modes:
        raise ConfigurationError(f"driven mode {driven_mode} outside [0, {base.num_modes})")

    collected: Dict[str, List] = {variant: [] for variant in variants}
    seed_results: List[SeedResult] = []
    for seed in seeds:
        seeded = train_config.model_copy(update={"seed": seed})
        for variant in variants:
            logger.info(f"Ablation: variant {variant}, seed {seed}")
            model = SimMst(variant_config(base, variant), seed=seed)
            train(model, data, seeded)
            outcome = evaluate(model, data, "test", horizons, mode_names, seeded.batch_size)
            collected[variant].append(outcome.rows)
            seed_results.append(
                SeedResult(
                    seed=seed,
                    variant=variant,
                    driven_mode=mode_names[driven_mode],
                    driven_mae=mae(outcome.predictions[:, driven_mode], outcome.truth[:, driven_mode]),
                )
            )

    rows = []
    for variant in variants:
        per_seed = collected[variant]
        for position, template in enumerate(per_seed[0]):
            matching = [rows_for_seed[position] for rows_for_seed in per_seed]
            corrs = [row.corr for row in matching if row.corr is not None]
            rows.append(
                AblationRow(
                    variant=variant,
                    mode=template.mode,
                    horizon=template.horizon,
                    mae=float(np.mean([row.mae for row in matching])),
                    rmse=float(np.mean([row.rmse for row in matching])),
                    corr=float(np.mean(corrs)) if corrs else None,
                    seeds=len(matching),
                )
            )

    full_wins = 0
    if "full" in variants and "wo_csrl" in variants:
        by_key = {(r.seed, r.variant): r.driven_mae for r in seed_results}
        full_wins = sum(1 for seed in seeds if by_key[(seed, "full")] < by_key[(seed, "wo_csrl")])
        logger.info(
            f"Full model beats wo_csrl on mode {mode_names[driven_mode]} in {full_wins} of {len(seeds)} seeds"
        )
    return AblationResult(
        rows=rows,
        seed_results=seed_results,
        driven_mode=mode_names[driven_mode],
        full_wins=full_wins,
    )
