from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.exceptions import ContractError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# One tape per context, so worker threads never share one
_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


def current_tape() -> Optional["Tape"]:
    return _active_tape.get()


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.tape is None:
            raise ContractError("backward() called on a tensor that was not recorded on a tape")
        self.tape.backward(self)

    # Operator sugar; the operations themselves live in app.core.ops
    def __add__(self, other):
        from app.core import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.core import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.core import ops
        return ops.hadamard(self, other)

    def __rmul__(self, other):
        from app.core import ops
        return ops.hadamard(other, self)

    def __truediv__(self, other):
        from app.core import ops
        return ops.div(self, other)

    def __neg__(self):
        from app.core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from app.core import ops
        return ops.matmul(self, other)


@dataclass
class Node:
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Append-only record of operations; nodes are stored in execution (topological) order."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.root: Optional[int] = None
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        output.node_id = len(self.nodes)
        output.tape = self
        output.requires_grad = True
        self.nodes.append(Node(kind=kind, inputs=tuple(inputs), output=output, backward=backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor reachable from ``loss``; leaf gradients accumulate."""
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss.tape is not self or self.nodes[loss.node_id].output is not loss:
            raise ContractError("loss was not produced on this tape")

        self.root = loss.node_id
        loss.grad = np.ones_like(loss.data)
        # Every consumer of a node was recorded after it, so a single reverse sweep is exact
        for node in reversed(self.nodes[: self.root + 1]):
            upstream = node.output.grad
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise ContractError(
                        f"{node.kind} produced a gradient of shape {grad.shape} for an input of shape {tensor.shape}"
                    )
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss on the tape that produced it."""
    loss.backward()
