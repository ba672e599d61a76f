from typing import Callable, Dict, Mapping, Sequence, Tuple, Union
import logging

import numpy as np

from app.core import ops, relations
from app.core.exceptions import ContractError
from app.core.model import SimMst
from app.core.tensor import Tape, Tensor
from app.core.training import mae_loss
from app.schemas.base import GradientReport, SimMstConfig, TdlKind

logger = logging.getLogger(__name__)

# Below this magnitude an element is compared absolutely rather than relatively
RELATIVE_ERROR_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_ERROR_FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numerical_gradient(f: Callable[[], Tensor], leaf: Tensor, step: float) -> np.ndarray:
    """Central differences of the scalar program ``f`` w.r.t. every element of ``leaf``."""
    grad = np.zeros_like(leaf.data)
    for idx in np.ndindex(*leaf.shape):
        original = leaf.data[idx]
        leaf.data[idx] = original + step
        plus = f().item()
        leaf.data[idx] = original - step
        minus = f().item()
        leaf.data[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def gradient_check(
    f: Callable[[], Tensor],
    leaves: Union[Mapping[str, Tensor], Sequence[Tensor]],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = RELATIVE_ERROR_FLOOR,
) -> GradientReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    Args:
        f: deterministic zero-argument program returning a scalar tensor
        leaves: tensors (optionally named) to differentiate with respect to
        step: finite-difference step
        tolerance: pass threshold on the per-leaf maximum relative error

    Returns:
        GradientReport with one entry per leaf
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    if isinstance(leaves, Mapping):
        named: Dict[str, Tensor] = dict(leaves)
    else:
        named = {f"leaf{i}": leaf for i, leaf in enumerate(leaves)}

    for leaf in named.values():
        leaf.requires_grad = True
        leaf.zero_grad()
    with Tape() as tape:
        loss = f()
    # a program that never touches its leaves records nothing
    if loss.tape is tape:
        tape.backward(loss)
    analytic = {
        name: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in named.items()
    }

    errors = {}
    for name, leaf in named.items():
        numeric = numerical_gradient(f, leaf, step)
        errors[name] = relative_error(analytic[name], numeric, floor)
        if errors[name] >= tolerance:
            logger.debug(f"gradient check failed for {name}: relative error {errors[name]:.3e}")
    return GradientReport(errors=errors, tolerance=tolerance, step=step)


def tiny_config(tdl_kind: TdlKind = TdlKind.MLP) -> SimMstConfig:
    return SimMstConfig(
        num_modes=2,
        num_nodes=3,
        channels=1,
        history_len=4,
        horizon=2,
        hidden_dim=4,
        embed_dim=4,
        num_layers=1,
        topk=3,
        tdl_kind=tdl_kind,
    )


def _linear_probe(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


def _operation_programs(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[], Tensor], Dict[str, Tensor]]]:
    """Scalar programs exercising one operation each, with their leaves."""
    programs = {}

    a, b = Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((4, 5)))
    probe = _linear_probe(rng, (2, 3, 5))
    programs["matmul"] = (lambda: ops.total(ops.hadamard(ops.matmul(a, b), probe)), {"a": a, "b": b})

    for kind in ("relu", "tanh", "gelu"):
        x = Tensor(rng.standard_normal((3, 4)))
        probe_x = _linear_probe(rng, (3, 4))
        programs[kind] = (
            lambda kind=kind, x=x, probe_x=probe_x: ops.total(ops.hadamard(ops.elementwise(kind, x), probe_x)),
            {"x": x},
        )

    u, v = Tensor(rng.standard_normal((3, 4))), Tensor(rng.uniform(0.5, 2.0, size=(1, 4)))
    programs["binary"] = (
        lambda: ops.total(ops.div(ops.sub(ops.hadamard(ops.add(u, v), u), ops.scale(v, 0.5)), v)),
        {"u": u, "v": v},
    )

    x_norm = Tensor(rng.standard_normal((2, 3, 5)))
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, size=5)), Tensor(rng.standard_normal(5))
    probe_norm = _linear_probe(rng, (2, 3, 5))
    programs["layer_norm"] = (
        lambda: ops.total(ops.hadamard(ops.layer_norm(x_norm, gamma, beta), probe_norm)),
        {"x": x_norm, "gamma": gamma, "beta": beta},
    )

    series = Tensor(rng.standard_normal((2, 6)))
    w_real, w_imag = Tensor(rng.uniform(-1, 1, size=4)), Tensor(rng.uniform(-1, 1, size=4))
    probe_fft = _linear_probe(rng, (2, 6))
    programs["fft_pair"] = (
        lambda: ops.total(
            ops.hadamard(ops.inverse_real_fft(ops.complex_hadamard(ops.real_fft(series), w_real, w_imag), 6), probe_fft)
        ),
        {"x": series, "w_real": w_real, "w_imag": w_imag},
    )

    tables = [Tensor(rng.standard_normal((4, 3))) for _ in range(4)]
    probe_rel = _linear_probe(rng, (4, 4))

    def relation_program() -> Tensor:
        bank = relations.ModeEmbeddingBank(e_in=tables[:2], e_out=tables[2:])
        a = relations.normalize_relation_matrix(
            relations.sparsify_rows(relations.learn_relation_matrix(bank, 0, 1), 2)
        )
        return ops.total(ops.hadamard(a, probe_rel))

    programs["relation"] = (relation_program, {f"embedding{i}": t for i, t in enumerate(tables)})

    matrix = Tensor(rng.uniform(0.0, 1.0, size=(3, 3)))
    hidden = [Tensor(rng.standard_normal((2, 3, 2, 4))) for _ in range(2)]
    pair_weight = Tensor(rng.uniform(-0.5, 0.5, size=(2, 2)))
    probe_prop = _linear_probe(rng, (2, 3, 2, 4))

    def propagation_program() -> Tensor:
        impacts = {j: relations.cross_mode_propagate(matrix, hidden[j]) for j in range(2)}
        return ops.total(ops.hadamard(relations.aggregate_mode_impacts(impacts, pair_weight, 0), probe_prop))

    programs["propagation"] = (
        propagation_program,
        {"matrix": matrix, "hidden0": hidden[0], "hidden1": hidden[1], "pair_weight": pair_weight},
    )
    return programs


def _model_program(model: SimMst, rng: np.random.Generator) -> Callable[[], Tensor]:
    cfg = model.config
    history = rng.standard_normal((2, cfg.num_modes, cfg.num_nodes, cfg.history_len, cfg.channels))
    tod = np.array([1, 30])
    dow = np.array([0, 5])
    # targets sit well away from the predictions so |pred - target| never crosses its kink
    baseline = model.forward(history, tod, dow).data
    offsets = rng.uniform(0.05, 0.1, size=baseline.shape) * rng.choice([-1.0, 1.0], size=baseline.shape)
    target = baseline + offsets
    return lambda: mae_loss(model.forward(history, tod, dow), target)


def run_gradcheck_suite(
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> Dict[str, GradientReport]:
    """Per-operation checks plus the full model (both temporal variants) on the tiny configuration."""
    rng = np.random.default_rng(seed)
    reports: Dict[str, GradientReport] = {}
    for name, (program, leaves) in _operation_programs(rng).items():
        reports[f"op:{name}"] = gradient_check(program, leaves, step=step, tolerance=tolerance)

    for kind in (TdlKind.MLP, TdlKind.SEASONAL):
        model = SimMst(tiny_config(kind), seed=seed)
        reports[f"model:{kind.value}"] = gradient_check(
            _model_program(model, rng), model.params, step=step, tolerance=tolerance
        )

    for name, report in reports.items():
        level = logging.INFO if report.passed else logging.WARNING
        logger.log(level, f"gradcheck {name}: max relative error {report.max_error:.3e}")
    return reports
