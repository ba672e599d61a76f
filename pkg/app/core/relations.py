from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

from app.core import ops
from app.core.exceptions import ContractError, DimensionError
from app.core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class ModeEmbeddingBank:
    """In-affect and out-affect node embeddings of every mode for one forward pass."""
    e_in: List[Tensor]
    e_out: List[Tensor]

    @property
    def num_modes(self) -> int:
        return len(self.e_in)


@dataclass
class RelationMatrixSet:
    """Normalized N x N matrices A[(i, j)] (influence of mode j on mode i) plus pair weights w."""
    matrices: Dict[Tuple[int, int], Tensor]
    pair_weight: Tensor

    def pairs_for(self, target: int) -> List[int]:
        return sorted(j for (i, j) in self.matrices if i == target)

    def as_arrays(self) -> Dict[str, np.ndarray]:
        return {f"A_{i}_{j}": a.data.copy() for (i, j), a in sorted(self.matrices.items())}

    def invariant_violations(self, tol: float = 1e-6) -> List[str]:
        """Nonnegative, row-stochastic, strictly positive diagonal."""
        problems = []
        for (i, j), a in sorted(self.matrices.items()):
            data = a.data
            if np.any(data < 0):
                problems.append(f"A_{i}_{j} has negative entries")
            if np.max(np.abs(data.sum(axis=-1) - 1.0)) > tol:
                problems.append(f"A_{i}_{j} rows do not sum to 1")
            if np.any(np.diag(data) <= 0):
                problems.append(f"A_{i}_{j} has a non-positive diagonal entry")
        return problems


def project_embeddings(embedding: Tensor, w0: Tensor, b0: Tensor, w1: Tensor, b1: Tensor) -> Tensor:
    """Single-hidden-layer perceptron with Tanh, applied row-wise to an N x D_emb table."""
    return ops.add(ops.matmul(ops.tanh(ops.add(ops.matmul(embedding, w0), b0)), w1), b1)


def learn_relation_matrix(bank: ModeEmbeddingBank, m_i: int, m_j: int) -> Tensor:
    """Net impact from mode m_j onto mode m_i: ReLU(Tanh(E_out_j E_in_i^T - E_in_j E_out_i^T))."""
    gross = ops.matmul(bank.e_out[m_j], ops.swapaxes(bank.e_in[m_i], 0, 1))
    reverse = ops.matmul(bank.e_in[m_j], ops.swapaxes(bank.e_out[m_i], 0, 1))
    return ops.relu(ops.tanh(ops.sub(gross, reverse)))


def topk_mask(values: np.ndarray, k: int) -> np.ndarray:
    """0/1 mask keeping the k largest entries of each row; ties keep the lowest column first."""
    order = np.argsort(-values, axis=-1, kind="stable")
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order[..., :k], 1.0, axis=-1)
    return mask


def sparsify_rows(a: Tensor, k: int) -> Tensor:
    n = a.shape[-1]
    if k < 1 or k > n:
        raise ContractError(f"sparsify_rows: k must lie in [1, {n}], got {k}")
    if k == n:
        return a
    # gradients flow only through the surviving entries
    return ops.hadamard(a, Tensor(topk_mask(a.data, k)))


def normalize_relation_matrix(a: Tensor) -> Tensor:
    """A = D^-1 (A~ + I), D the diagonal of row sums of A~ + I."""
    n = a.shape[-1]
    if a.ndim != 2 or a.shape[0] != n:
        raise DimensionError(f"normalize_relation_matrix: expected a square matrix, got {a.shape}")
    looped = ops.add(a, Tensor(np.eye(n)))
    return ops.div(looped, ops.total(looped, axis=-1, keepdims=True))


def cross_mode_propagate(a: Tensor, hidden: Tensor) -> Tensor:
    """A T + A^T T over the node axis of ``hidden`` (..., N, T_l, D)."""
    n = a.shape[-1]
    if hidden.ndim < 3 or hidden.shape[-3] != n:
        raise DimensionError(
            f"cross_mode_propagate: relation matrix {a.shape} does not match node axis of {hidden.shape}"
        )
    lead = hidden.shape[:-2]
    flat = ops.reshape(hidden, lead + (hidden.shape[-2] * hidden.shape[-1],))
    forward = ops.matmul(a, flat)
    backward = ops.matmul(ops.swapaxes(a, 0, 1), flat)
    return ops.reshape(ops.add(forward, backward), hidden.shape)


def aggregate_mode_impacts(impacts: Dict[int, Tensor], pair_weight: Tensor, target: int) -> Tensor:
    """S_i = sum_j (w_ij + 1[i == j]) * S^_ij over the source modes present in ``impacts``."""
    shapes = {s.shape for s in impacts.values()}
    if len(shapes) != 1:
        raise DimensionError(f"aggregate_mode_impacts: impacts disagree in shape: {sorted(shapes)}")
    result = None
    for source in sorted(impacts):
        coefficient = ops.index(pair_weight, (target, source))
        if source == target:
            coefficient = ops.add(coefficient, 1.0)
        term = ops.hadamard(impacts[source], coefficient)
        result = term if result is None else ops.add(result, term)
    return result


def build_relation_set(
    bank: ModeEmbeddingBank,
    pair_weight: Tensor,
    topk: int,
    cross_mode: bool = True,
) -> RelationMatrixSet:
    """Learn, sparsify and normalize every relation matrix once per forward pass."""
    matrices: Dict[Tuple[int, int], Tensor] = {}
    for m_i in range(bank.num_modes):
        for m_j in range(bank.num_modes):
            if not cross_mode and m_i != m_j:
                continue
            raw = learn_relation_matrix(bank, m_i, m_j)
            matrices[(m_i, m_j)] = normalize_relation_matrix(sparsify_rows(raw, topk))
    return RelationMatrixSet(matrices=matrices, pair_weight=pair_weight)


def propagate_all(relations: RelationMatrixSet, hidden: Sequence[Tensor]) -> List[Tensor]:
    """CSRL for every target mode given the TDL outputs of all modes."""
    outputs = []
    for target in range(len(hidden)):
        impacts = {
            source: cross_mode_propagate(relations.matrices[(target, source)], hidden[source])
            for source in relations.pairs_for(target)
        }
        outputs.append(aggregate_mode_impacts(impacts, relations.pair_weight, target))
    return outputs
