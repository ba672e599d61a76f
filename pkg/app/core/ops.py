from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple, Union
import math

import numpy as np
from scipy.special import ndtr

from app.core.exceptions import ContractError, DimensionError
from app.core.tensor import BackwardFn, Tensor, current_tape

ArrayLike = Union[Tensor, np.ndarray, float, int]

LAYER_NORM_EPS = 1e-5
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(kind: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result("add", (a, b), a.data + b.data, backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result("sub", (a, b), a.data - b.data, backward)


def hadamard(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a, b)
    a_data, b_data = a.data, b.data

    def backward(g):
        return unbroadcast(g * b_data, a.shape), unbroadcast(g * a_data, b.shape)

    return _result("hadamard", (a, b), a_data * b_data, backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    a_data, b_data = a.data, b.data

    def backward(g):
        return unbroadcast(g / b_data, a.shape), unbroadcast(-g * a_data / (b_data * b_data), b.shape)

    return _result("div", (a, b), a_data / b_data, backward)


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _result("scale", (a,), a.data * factor, backward)


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)

    def backward(g):
        return (g * mask,)

    return _result("relu", (x,), x.data * mask, backward)


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result("tanh", (x,), out, backward)


def gelu(x: ArrayLike) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI

    def backward(g):
        return (g * (cdf + x.data * pdf),)

    return _result("gelu", (x,), x.data * cdf, backward)


def absolute(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)

    def backward(g):
        # subgradient 0 at ties
        return (g * sign,)

    return _result("abs", (x,), np.abs(x.data), backward)


_ELEMENTWISE: Dict[str, Callable[..., Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "gelu": gelu,
    "abs": absolute,
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "scale": scale,
}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if kind not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise kind: {kind}")
    return _ELEMENTWISE[kind](*args)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the last two axes, with broadcasting of leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast")
    a_data, b_data = a.data, b.data

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b_data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a_data, -1, -2), g)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _result("matmul", (a, b), np.matmul(a_data, b_data), backward)


def total(x: ArrayLike, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", (x,), np.asarray(out, dtype=np.float64), backward)


def mean(x: ArrayLike, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[ax] for ax in axes]))
    return scale(total(x, axis=axis, keepdims=keepdims), 1.0 / count)


def layer_norm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the per-position affine (gamma, beta)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"layer_norm: normalized axis must have length >= 1, got shape {x.shape}")
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} and beta {beta.shape} must both be ({width},)"
        )

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    gamma_data = gamma.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        grad_gamma = (g * x_hat).sum(axis=reduce_axes)
        grad_beta = g.sum(axis=reduce_axes)
        g_hat = g * gamma_data
        grad_x = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta

    return _result("layer_norm", (x, gamma, beta), x_hat * gamma_data + beta.data, backward)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}")

    def backward(g):
        return (g.reshape(x.shape),)

    return _result("reshape", (x,), out, backward)


def swapaxes(x: ArrayLike, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (np.swapaxes(g, axis1, axis2),)

    return _result("swapaxes", (x,), np.swapaxes(x.data, axis1, axis2).copy(), backward)


def broadcast_to(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {x.shape} to {shape}")

    def backward(g):
        return (unbroadcast(g, x.shape),)

    return _result("broadcast_to", (x,), out, backward)


def index(x: ArrayLike, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in the gradient."""
    x = as_tensor(x)
    out = np.array(x.data[key], dtype=np.float64)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _result("index", (x,), out, backward)


def take_rows(table: ArrayLike, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows of a 2-d table for an integer index array."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"take_rows: table must be 2-d, got {table.shape}")
    return index(table, np.asarray(indices, dtype=np.int64))


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} do not agree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", tensors, out, backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: all shapes must agree, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result("stack", tensors, out, backward)


class Spectrum(NamedTuple):
    """Non-redundant half spectrum of a real signal as paired real tensors."""

    real: Tensor
    imag: Tensor


def _adjoint_rfft(g: np.ndarray, n: int) -> np.ndarray:
    # Re(sum_k g_k exp(+2*pi*i*k*t/n)) over the half spectrum
    full = np.zeros(g.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : g.shape[-1]] = g
    return np.real(np.fft.ifft(full, axis=-1)) * n


def real_fft(x: ArrayLike) -> Spectrum:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"real_fft: last axis must have length >= 1, got shape {x.shape}")
    n = x.shape[-1]
    spectrum = np.fft.rfft(x.data, axis=-1)

    def backward_real(g):
        return (_adjoint_rfft(g.astype(np.complex128), n),)

    def backward_imag(g):
        return (_adjoint_rfft(1j * g, n),)

    real = _result("rfft_real", (x,), spectrum.real.copy(), backward_real)
    imag = _result("rfft_imag", (x,), spectrum.imag.copy(), backward_imag)
    return Spectrum(real, imag)


def inverse_real_fft(spectrum: Spectrum, n: int) -> Tensor:
    """Inverse of :func:`real_fft` for an output length ``n``."""
    real, imag = as_tensor(spectrum.real), as_tensor(spectrum.imag)
    bins = n // 2 + 1
    if real.shape != imag.shape or real.shape[-1] != bins:
        raise DimensionError(
            f"inverse_real_fft: expected matching spectra with {bins} bins for n={n}, "
            f"got {real.shape} and {imag.shape}"
        )
    out = np.fft.irfft(real.data + 1j * imag.data, n=n, axis=-1)
    weights = np.full(bins, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    weights /= n

    def backward(g):
        g_spec = np.fft.rfft(g, axis=-1)
        return g_spec.real * weights, g_spec.imag * weights

    return _result("irfft", (real, imag), out, backward)


def complex_hadamard(spectrum: Spectrum, w_real: ArrayLike, w_imag: ArrayLike) -> Spectrum:
    """(a + ib)(c + id) with broadcasting of the weight over leading axes."""
    a, b = spectrum
    real = sub(hadamard(a, w_real), hadamard(b, w_imag))
    imag = add(hadamard(a, w_imag), hadamard(b, w_real))
    return Spectrum(real, imag)


def pooling_matrix(length_in: int, length_out: int) -> np.ndarray:
    """Adaptive average pooling as a (length_in, length_out) matrix.

    Window j covers [floor(j*Lin/Lout), ceil((j+1)*Lin/Lout)); with Lin = 2*Lout this is
    window 2, stride 2.
    """
    if length_in < 1 or length_out < 1 or length_out > length_in:
        raise DimensionError(f"pooling: cannot pool length {length_in} to {length_out}")
    matrix = np.zeros((length_in, length_out))
    for j in range(length_out):
        start = (j * length_in) // length_out
        end = -((-(j + 1) * length_in) // length_out)
        matrix[start:end, j] = 1.0 / (end - start)
    return matrix


def mean_pool_last(x: ArrayLike, length_out: int) -> Tensor:
    """Mean-pool the last axis of ``x`` down to ``length_out`` (parameter-free)."""
    x = as_tensor(x)
    return matmul(x, Tensor(pooling_matrix(x.shape[-1], length_out)))
