"""Float64 array helpers and the splitmix64 generator.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order.  The helpers here add the shape checks and numerically stable forms the
rest of the package relies on.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """splitmix64 stream.  Single owner; never share between threads."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix(self.state)

    def next_uniform(self) -> float:
        # top 53 bits: exactly representable and strictly below 1.0
        return (self.next_u64() >> 11) * 2.0**-53

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs, identical to ``n`` calls of :meth:`next_u64`."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return z

    def uniform_array(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        z = self.u64_array(n) >> np.uint64(11)
        return (z.astype(np.float64) * 2.0**-53).reshape(shape)

    def randint(self, high: int) -> int:
        """Uniform integer in ``[0, high)``."""
        return int(self.next_uniform() * high)

    def spawn(self, salt: int) -> "Rng":
        """Independent stream keyed on the current state and ``salt``."""
        return Rng(_mix((self.state ^ (salt * _GOLDEN)) & _MASK64))


def rng_next_uniform(rng: Rng) -> float:
    return rng.next_uniform()


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-x)), overflow-free."""
    return expit(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_UNARY = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}
_BINARY = {"add": np.add, "mul": np.multiply}


def elementwise(op: str, *args) -> np.ndarray:
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one tensor")
        return _UNARY[op](as_tensor(args[0]))
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two tensors")
        a, b = as_tensor(args[0]), as_tensor(args[1])
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shape {list(a.shape)} does not match {list(b.shape)}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    logits = as_tensor(logits)
    if logits.shape[-1] < 2:
        raise DimensionError(f"softmax needs at least 2 columns, got {list(logits.shape)}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    if fan_in <= 0 or fan_out <= 0:
        raise DimensionError(f"glorot_uniform: fans must be positive, got {fan_in}, {fan_out}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    u = rng.uniform_array((fan_in, fan_out))
    return (2.0 * u - 1.0) * limit
