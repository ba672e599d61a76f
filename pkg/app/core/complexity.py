from typing import List, Sequence, Tuple
import logging
import time

import numpy as np

from app.core.model import SimMst, count_parameters
from app.schemas.base import ScalingReport, ScalingRow, SimMstConfig

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = (8, 16, 32, 64)


def history_dependent_count(model: SimMst) -> int:
    """Scalars whose shapes depend on the history length (the temporal mixing blocks)."""
    return int(sum(p.size for name, p in model.params.items() if ".tdl." in name))


def node_dependent_count(model: SimMst) -> int:
    return int(sum(p.size for name, p in model.params.items() if name.endswith(".embedding")))


def growth_exponent(sizes: Sequence[int], counts: Sequence[int]) -> float:
    """Least-squares slope of log(count) against log(size)."""
    sizes = np.asarray(sizes, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0) or len(sizes) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(sizes), np.log(counts), 1)
    return float(slope)


def time_forward(model: SimMst, repeats: int = 3, batch_size: int = 4, seed: int = 0) -> float:
    """Mean wall milliseconds of one forward pass on random inputs (no tape)."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    history = rng.standard_normal((batch_size, cfg.num_modes, cfg.num_nodes, cfg.history_len, cfg.channels))
    tod = rng.integers(0, 48, size=batch_size)
    dow = rng.integers(0, 7, size=batch_size)
    model.forward(history, tod, dow)  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        model.forward(history, tod, dow)
    return (time.perf_counter() - start) * 1000.0 / repeats


def _row(sweep: str, config: SimMstConfig, timed: bool) -> Tuple[ScalingRow, SimMst]:
    model = SimMst(config)
    row = ScalingRow(
        sweep=sweep,
        num_nodes=config.num_nodes,
        history_len=config.history_len,
        parameters=count_parameters(model),
        history_dependent_parameters=history_dependent_count(model),
        forward_ms=time_forward(model) if timed else 0.0,
    )
    return row, model


def scaling_report(
    base: SimMstConfig,
    node_sweep: Sequence[int] = DEFAULT_SWEEP,
    history_sweep: Sequence[int] = DEFAULT_SWEEP,
    timed: bool = True,
) -> ScalingReport:
    """Parameter counts across sweeps of N and W with fitted growth exponents.

    The node exponent is fitted on the node-embedding tables, the history exponent on
    the history-dependent blocks; the remaining parameters do not vary with the swept size.
    """
    rows: List[ScalingRow] = []
    node_counts = []
    for n in node_sweep:
        config = base.model_copy(update={"num_nodes": n, "topk": min(base.topk, n)})
        row, model = _row("nodes", config, timed)
        node_counts.append(node_dependent_count(model))
        rows.append(row)

    history_counts = []
    for w in history_sweep:
        config = base.model_copy(update={"history_len": w, "temporal_lengths": None})
        row, _ = _row("history", config, timed)
        history_counts.append(row.history_dependent_parameters)
        rows.append(row)

    report = ScalingReport(
        rows=rows,
        node_exponent=growth_exponent(node_sweep, node_counts),
        history_exponent=growth_exponent(history_sweep, history_counts),
    )
    logger.info(
        f"Scaling exponents: nodes {report.node_exponent:.3f}, history {report.history_exponent:.3f}"
    )
    return report
