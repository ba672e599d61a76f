from typing import Dict, List, Optional, Sequence, Union
import logging
import math

import numpy as np

from app.core import ops, relations
from app.core.exceptions import ContractError, DimensionError
from app.core.relations import ModeEmbeddingBank, RelationMatrixSet
from app.core.tensor import Tensor
from app.schemas.base import ForecastBatch, SimMstConfig, TdlKind

logger = logging.getLogger(__name__)

TIME_OF_DAY_SLOTS = 48
DAY_OF_WEEK_SLOTS = 7


class SimMst:
    """All learnable parameters plus the forward computation.

    Parameters live in ``self.params`` under stable canonical names (see README);
    each is a leaf :class:`Tensor` with ``requires_grad`` set.
    """

    def __init__(self, config: SimMstConfig, seed: int = 0):
        self.config = config
        self.lengths = config.resolved_temporal_lengths()
        self.params: Dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        self._rng = None
        logger.debug(f"Built SimMST with {count_parameters(self)} parameters, temporal lengths {self.lengths}")

    def _uniform(self, name: str, shape, fan_in: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.params[name] = Tensor(self._rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def _constant(self, name: str, shape, value: float) -> None:
        self.params[name] = Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)

    def _affine(self, prefix: str, fan_in: int, fan_out: int) -> None:
        self._uniform(f"{prefix}.weight", (fan_in, fan_out), fan_in)
        self._constant(f"{prefix}.bias", (fan_out,), 0.0)

    def _norm(self, prefix: str, width: int) -> None:
        self._constant(f"{prefix}.gamma", (width,), 1.0)
        self._constant(f"{prefix}.beta", (width,), 0.0)

    def _build(self) -> None:
        cfg = self.config
        d, d_emb = cfg.hidden_dim, cfg.embed_dim

        for m in range(cfg.num_modes):
            self._affine(f"mode{m}.init", cfg.channels, d)

        if cfg.enable_csrl:
            for m in range(cfg.num_modes):
                self._uniform(f"mode{m}.embedding", (cfg.num_nodes, d_emb), d_emb)
            projection_owners = ["relation"] if cfg.share_projections else [f"mode{m}" for m in range(cfg.num_modes)]
            for owner in projection_owners:
                for side in ("in_proj", "out_proj"):
                    self._affine(f"{owner}.{side}.0", d_emb, d_emb)
                    self._affine(f"{owner}.{side}.1", d_emb, d_emb)
            self._constant("relation.pair_weight", (cfg.num_modes, cfg.num_modes), 0.0)

        for m in range(cfg.num_modes):
            for layer in range(1, cfg.num_layers + 1):
                t_prev, t_cur = self.lengths[layer - 1], self.lengths[layer]
                prefix = f"mode{m}.layer{layer}"
                if cfg.enable_tdl:
                    if cfg.tdl_kind == TdlKind.MLP:
                        self._affine(f"{prefix}.tdl.0", t_prev, t_prev)
                        self._affine(f"{prefix}.tdl.1", t_prev, t_cur)
                    else:
                        bins = t_prev // 2 + 1
                        self._uniform(f"{prefix}.tdl.weight_real", (bins,), 1)
                        self._uniform(f"{prefix}.tdl.weight_imag", (bins,), 1)
                        self._constant(f"{prefix}.tdl.bias_real", (bins,), 0.0)
                        self._constant(f"{prefix}.tdl.bias_imag", (bins,), 0.0)
                    self._norm(f"{prefix}.tdl.norm", t_cur)
                if cfg.enable_ccl:
                    self._affine(f"{prefix}.ccl.0", d, d)
                    self._affine(f"{prefix}.ccl.1", d, d)
                    self._norm(f"{prefix}.ccl.norm", d)

        self._uniform("readout.tod_embedding", (TIME_OF_DAY_SLOTS, d), d)
        self._uniform("readout.dow_embedding", (DAY_OF_WEEK_SLOTS, d), d)
        for m in range(cfg.num_modes):
            self._affine(f"mode{m}.out.0", 2 * d, d)
            self._affine(f"mode{m}.out.1", d, cfg.horizon * cfg.channels)

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ContractError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise DimensionError(
                    f"parameter {name}: expected shape {self.params[name].shape}, got {value.shape}"
                )
            self.params[name].data = np.array(value, dtype=np.float64)

    def init_hidden(self, x_m: Union[Tensor, np.ndarray], mode: int) -> Tensor:
        """Per-timestamp affine map C -> D with mode-specific parameters."""
        x_m = ops.as_tensor(x_m)
        if x_m.shape[-1] != self.config.channels:
            raise DimensionError(
                f"init_hidden: expected {self.config.channels} channels, got input of shape {x_m.shape}"
            )
        return ops.add(ops.matmul(x_m, self.p(f"mode{mode}.init.weight")), self.p(f"mode{mode}.init.bias"))

    def tdl_forward(self, hidden: Tensor, mode: int, layer: int) -> Tensor:
        """Temporal mixing (..., N, T_{l-1}, D) -> (..., N, T_l, D) with a mean-pooled residual."""
        t_prev, t_cur = self.lengths[layer - 1], self.lengths[layer]
        if hidden.ndim < 2 or hidden.shape[-2] != t_prev:
            raise DimensionError(
                f"tdl_forward: layer {layer} expects temporal length {t_prev}, got shape {hidden.shape}"
            )
        series = ops.swapaxes(hidden, -1, -2)
        residual = ops.mean_pool_last(series, t_cur)
        if not self.config.enable_tdl:
            return ops.swapaxes(residual, -1, -2)

        prefix = f"mode{mode}.layer{layer}.tdl"
        if self.config.tdl_kind == TdlKind.MLP:
            mixed = ops.gelu(ops.add(ops.matmul(series, self.p(f"{prefix}.0.weight")), self.p(f"{prefix}.0.bias")))
            mixed = ops.add(ops.matmul(mixed, self.p(f"{prefix}.1.weight")), self.p(f"{prefix}.1.bias"))
        else:
            spectrum = ops.complex_hadamard(
                ops.real_fft(series), self.p(f"{prefix}.weight_real"), self.p(f"{prefix}.weight_imag")
            )
            spectrum = ops.Spectrum(
                ops.add(spectrum.real, self.p(f"{prefix}.bias_real")),
                ops.add(spectrum.imag, self.p(f"{prefix}.bias_imag")),
            )
            mixed = ops.mean_pool_last(ops.inverse_real_fft(spectrum, t_prev), t_cur)

        normed = ops.layer_norm(mixed, self.p(f"{prefix}.norm.gamma"), self.p(f"{prefix}.norm.beta"))
        return ops.swapaxes(ops.add(normed, residual), -1, -2)

    def embedding_bank(self) -> ModeEmbeddingBank:
        e_in, e_out = [], []
        for m in range(self.config.num_modes):
            owner = "relation" if self.config.share_projections else f"mode{m}"
            table = self.p(f"mode{m}.embedding")
            for side, sink in (("in_proj", e_in), ("out_proj", e_out)):
                sink.append(
                    relations.project_embeddings(
                        table,
                        self.p(f"{owner}.{side}.0.weight"),
                        self.p(f"{owner}.{side}.0.bias"),
                        self.p(f"{owner}.{side}.1.weight"),
                        self.p(f"{owner}.{side}.1.bias"),
                    )
                )
        return ModeEmbeddingBank(e_in=e_in, e_out=e_out)

    def relation_matrices(self) -> Optional[RelationMatrixSet]:
        """Every A_{m_i, m_j} for this forward pass; None when CSRL is disabled."""
        if not self.config.enable_csrl:
            return None
        return relations.build_relation_set(
            self.embedding_bank(),
            self.p("relation.pair_weight"),
            topk=self.config.topk,
            cross_mode=self.config.cross_mode,
        )

    def ccl_forward(self, hidden: Tensor, mode: int, layer: int) -> Tensor:
        """Channel mixing D -> D -> D with GeLU, layer norm and residual."""
        if not self.config.enable_ccl:
            return hidden
        if hidden.shape[-1] != self.config.hidden_dim:
            raise DimensionError(f"ccl_forward: expected feature axis {self.config.hidden_dim}, got {hidden.shape}")
        prefix = f"mode{mode}.layer{layer}.ccl"
        mixed = ops.gelu(ops.add(ops.matmul(hidden, self.p(f"{prefix}.0.weight")), self.p(f"{prefix}.0.bias")))
        mixed = ops.add(ops.matmul(mixed, self.p(f"{prefix}.1.weight")), self.p(f"{prefix}.1.bias"))
        normed = ops.layer_norm(mixed, self.p(f"{prefix}.norm.gamma"), self.p(f"{prefix}.norm.beta"))
        return ops.add(normed, hidden)

    def time_semantics(self, tod_index: np.ndarray, dow_index: np.ndarray) -> Tensor:
        """Time-of-day plus day-of-week embedding, one D-vector per sample."""
        tod_index = np.asarray(tod_index, dtype=np.int64)
        dow_index = np.asarray(dow_index, dtype=np.int64)
        if np.any((tod_index < 0) | (tod_index >= TIME_OF_DAY_SLOTS)):
            raise ContractError("time-of-day index outside [0, 48)")
        if np.any((dow_index < 0) | (dow_index >= DAY_OF_WEEK_SLOTS)):
            raise ContractError("day-of-week index outside [0, 7)")
        return ops.add(
            ops.take_rows(self.p("readout.tod_embedding"), tod_index),
            ops.take_rows(self.p("readout.dow_embedding"), dow_index),
        )

    def readout(
        self,
        states: Sequence[Tensor],
        tod_index: Optional[np.ndarray],
        dow_index: Optional[np.ndarray],
        mode: int,
    ) -> Tensor:
        """Pool each layer over time, sum, append time semantics, project to B x N x H x C."""
        if tod_index is None or dow_index is None:
            raise ContractError("readout needs the time-of-day and day-of-week of the last observed step")
        if not states:
            raise ContractError("readout needs at least the initial hidden state")
        pooled = None
        for state in states:
            summary = ops.mean(state, axis=-2)
            pooled = summary if pooled is None else ops.add(pooled, summary)

        batch, nodes, d = pooled.shape
        semantic = self.time_semantics(tod_index, dow_index)
        if semantic.shape[0] != batch:
            raise DimensionError(f"readout: {semantic.shape[0]} time features for a batch of {batch}")
        semantic = ops.broadcast_to(ops.reshape(semantic, (batch, 1, d)), (batch, nodes, d))
        z = ops.concat([pooled, semantic], axis=-1)

        prefix = f"mode{mode}.out"
        hidden = ops.gelu(ops.add(ops.matmul(z, self.p(f"{prefix}.0.weight")), self.p(f"{prefix}.0.bias")))
        out = ops.add(ops.matmul(hidden, self.p(f"{prefix}.1.weight")), self.p(f"{prefix}.1.bias"))
        return ops.reshape(out, (batch, nodes, self.config.horizon, self.config.channels))

    def forward(
        self,
        history: Union[ForecastBatch, np.ndarray],
        tod_index: Optional[np.ndarray] = None,
        dow_index: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Predictions B x M x N x H x C for a batch of histories B x M x N x W x C."""
        if isinstance(history, ForecastBatch):
            tod_index, dow_index = history.tod_index, history.dow_index
            history = history.history
        cfg = self.config
        expected = (cfg.num_modes, cfg.num_nodes, cfg.history_len, cfg.channels)
        if history.ndim != 5 or history.shape[1:] != expected:
            raise DimensionError(f"forward: expected history of shape (B, {expected}), got {history.shape}")

        relation_set = self.relation_matrices()
        states: List[List[Tensor]] = [
            [self.init_hidden(Tensor(history[:, m]), m)] for m in range(cfg.num_modes)
        ]
        for layer in range(1, cfg.num_layers + 1):
            temporal = [self.tdl_forward(states[m][-1], m, layer) for m in range(cfg.num_modes)]
            spatial = relations.propagate_all(relation_set, temporal) if relation_set is not None else temporal
            for m in range(cfg.num_modes):
                states[m].append(self.ccl_forward(spatial[m], m, layer))

        predictions = [self.readout(states[m], tod_index, dow_index, m) for m in range(cfg.num_modes)]
        return ops.stack(predictions, axis=1)

    __call__ = forward


def count_parameters(model: SimMst) -> int:
    """Exact number of learnable scalars."""
    return int(sum(param.size for param in model.params.values()))
