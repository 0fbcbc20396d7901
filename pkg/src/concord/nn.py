"""Layers with hand-written forward/backward passes, the loss and Adam.

Every forward function works on a single example or on a batch stacked along
the leading axis.  Backward functions return a dict of parameter gradients
keyed like the layer's ``params()`` plus the gradient w.r.t. the input.

GRU gate convention (fixed)::

    z  = sigmoid(x Wz + h Uz + bz)
    r  = sigmoid(x Wr + h Ur + br)
    h~ = tanh(x Wh + (r * h) Uh + bh)
    h' = (1 - z) * h + z * h~
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    BatchTooSmallError,
    CacheMismatchError,
    DimensionError,
    EmptySequenceError,
    LabelError,
)
from .numcore import Rng, glorot_uniform, log_softmax, sigmoid, softmax


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray

    PARAM_NAMES = ("W", "b")

    @classmethod
    def glorot(cls, rng: Rng, fan_in: int, fan_out: int) -> "DenseLayer":
        return cls(glorot_uniform(rng, fan_in, fan_out), np.zeros(fan_out))

    @property
    def in_size(self) -> int:
        return self.W.shape[0]

    @property
    def out_size(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != layer.in_size:
        raise DimensionError(
            f"dense: input {list(x.shape)} does not fit weights {list(layer.W.shape)}")
    return x @ layer.W + layer.b


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray):
    """Gradients of a dense layer; ``x`` is the forward input (the cache)."""
    if dy.shape[-1] != layer.out_size:
        raise DimensionError(f"dense: upstream {list(dy.shape)} vs out size {layer.out_size}")
    x2 = x.reshape(-1, layer.in_size)
    dy2 = dy.reshape(-1, layer.out_size)
    grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
    return grads, dy @ layer.W.T


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GRULayer:
    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    PARAM_NAMES = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")

    @classmethod
    def zeros(cls, in_size: int, hidden: int) -> "GRULayer":
        w = [np.zeros((in_size, hidden)) for _ in range(3)]
        u = [np.zeros((hidden, hidden)) for _ in range(3)]
        b = [np.zeros(hidden) for _ in range(3)]
        return cls(*w, *u, *b)

    @classmethod
    def glorot(cls, rng: Rng, in_size: int, hidden: int) -> "GRULayer":
        """Input kernels, then recurrent kernels, drawn in z, r, h order; zero biases."""
        w = [glorot_uniform(rng, in_size, hidden) for _ in range(3)]
        u = [glorot_uniform(rng, hidden, hidden) for _ in range(3)]
        b = [np.zeros(hidden) for _ in range(3)]
        return cls(*w, *u, *b)

    @property
    def input_size(self) -> int:
        return self.Wz.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.Uz.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def check_shapes(self) -> None:
        n, h = self.input_size, self.hidden_size
        expected = {"W": (n, h), "U": (h, h), "b": (h,)}
        for name, p in self.params().items():
            if p.shape != expected[name[0]]:
                raise DimensionError(f"GRU parameter {name} has shape {list(p.shape)}, "
                                     f"expected {list(expected[name[0]])}")


def _gru_cell(layer: GRULayer, x, h_prev):
    z = sigmoid(x @ layer.Wz + h_prev @ layer.Uz + layer.bz)
    r = sigmoid(x @ layer.Wr + h_prev @ layer.Ur + layer.br)
    hc = np.tanh(x @ layer.Wh + (r * h_prev) @ layer.Uh + layer.bh)
    h = (1.0 - z) * h_prev + z * hc
    return h, z, r, hc


def gru_step(layer: GRULayer, x_t: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    if x_t.shape[-1] != layer.input_size or h_prev.shape[-1] != layer.hidden_size:
        raise DimensionError(
            f"gru_step: x {list(x_t.shape)} / h {list(h_prev.shape)} do not fit a "
            f"{layer.input_size}->{layer.hidden_size} GRU")
    return _gru_cell(layer, x_t, h_prev)[0]


@dataclass
class GRUCache:
    layer: GRULayer
    xs: np.ndarray
    h_prev: list = field(default_factory=list)
    z: list = field(default_factory=list)
    r: list = field(default_factory=list)
    hc: list = field(default_factory=list)


def gru_forward(layer: GRULayer, xs: np.ndarray):
    """Run the GRU over ``xs`` ([T, in] or [n, T, in]) from a zero state.

    Returns the final hidden state and the cache for :func:`gru_backward`.
    """
    if xs.ndim not in (2, 3) or xs.shape[-1] != layer.input_size:
        raise DimensionError(f"gru_forward: input {list(xs.shape)} does not fit "
                             f"input size {layer.input_size}")
    T = xs.shape[-2]
    if T == 0:
        raise EmptySequenceError("gru_forward: sequence has no time steps")
    h = np.zeros(xs.shape[:-2] + (layer.hidden_size,))
    cache = GRUCache(layer, xs)
    for t in range(T):
        x_t = xs[t] if xs.ndim == 2 else xs[:, t, :]
        cache.h_prev.append(h)
        h, z, r, hc = _gru_cell(layer, x_t, h)
        cache.z.append(z)
        cache.r.append(r)
        cache.hc.append(hc)
    return h, cache


def gru_backward(layer: GRULayer, cache: GRUCache, dh_T: np.ndarray):
    """Backpropagation through time.  Returns (param grads, dxs)."""
    if cache.layer is not layer:
        raise CacheMismatchError("gru_backward: cache was produced by a different layer")
    xs = cache.xs
    if len(cache.z) != xs.shape[-2] or xs.shape[-1] != layer.input_size:
        raise CacheMismatchError("gru_backward: cache does not match the layer's shapes")
    expected = xs.shape[:-2] + (layer.hidden_size,)
    if dh_T.shape != expected:
        raise DimensionError(f"gru_backward: dh_T {list(dh_T.shape)}, expected {list(expected)}")

    grads = {name: np.zeros_like(p) for name, p in layer.params().items()}
    dxs = np.zeros_like(xs)
    dh = dh_T.copy()
    batched = xs.ndim == 3

    def outer(a, b):
        return a.T @ b if batched else np.outer(a, b)

    def colsum(a):
        return a.sum(axis=0) if batched else a

    for t in range(xs.shape[-2] - 1, -1, -1):
        x_t = xs[:, t, :] if batched else xs[t]
        h_prev, z, r, hc = cache.h_prev[t], cache.z[t], cache.r[t], cache.hc[t]

        dz = dh * (hc - h_prev)
        dh_prev = dh * (1.0 - z)
        dah = dh * z * (1.0 - hc * hc)
        drh = dah @ layer.Uh.T
        dr = drh * h_prev
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dh_prev += daz @ layer.Uz.T + dar @ layer.Ur.T

        grads["Wz"] += outer(x_t, daz)
        grads["Wr"] += outer(x_t, dar)
        grads["Wh"] += outer(x_t, dah)
        grads["Uz"] += outer(h_prev, daz)
        grads["Ur"] += outer(h_prev, dar)
        grads["Uh"] += outer(r * h_prev, dah)
        grads["bz"] += colsum(daz)
        grads["br"] += colsum(dar)
        grads["bh"] += colsum(dah)

        dx = daz @ layer.Wz.T + dar @ layer.Wr.T + dah @ layer.Wh.T
        if batched:
            dxs[:, t, :] = dx
        else:
            dxs[t] = dx
        dh = dh_prev
    return grads, dxs


# ---------------------------------------------------------------------------
# Batch normalisation
# ---------------------------------------------------------------------------

@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-3

    PARAM_NAMES = ("gamma", "beta")
    STATE_NAMES = ("running_mean", "running_var")

    @classmethod
    def identity(cls, dim: int, momentum: float = 0.99, eps: float = 1e-3) -> "BatchNormLayer":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), momentum, eps)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def state(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    training: bool


def batchnorm_forward(layer: BatchNormLayer, x: np.ndarray, training: bool,
                      update_running: bool = True):
    """Normalise over the batch axis (second to last).

    In training mode batch statistics are used and, unless ``update_running``
    is false, folded into the running averages in place.
    """
    if x.shape[-1] != layer.dim:
        raise DimensionError(f"batchnorm: input {list(x.shape)} vs dim {layer.dim}")
    if training:
        n = x.shape[-2]
        if n < 2:
            raise BatchTooSmallError(f"batchnorm: training needs a batch of at least 2, got {n}")
        mean = x.mean(axis=-2, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=-2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + layer.eps)
        xhat = (x - mean) * inv_std
        if update_running and x.ndim == 2:
            m = layer.momentum
            layer.running_mean[...] = m * layer.running_mean + (1.0 - m) * mean[0]
            layer.running_var[...] = m * layer.running_var + (1.0 - m) * var[0]
    else:
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.eps)
        xhat = (x - layer.running_mean) * inv_std
    y = layer.gamma * xhat + layer.beta
    return y, BatchNormCache(xhat, inv_std, training)


def batchnorm_backward(layer: BatchNormLayer, cache: BatchNormCache, dy: np.ndarray):
    xhat = cache.xhat
    flat_dy = dy.reshape(-1, layer.dim)
    grads = {
        "gamma": (flat_dy * xhat.reshape(-1, layer.dim)).sum(axis=0),
        "beta": flat_dy.sum(axis=0),
    }
    dxhat = dy * layer.gamma
    if not cache.training:
        return grads, dxhat * cache.inv_std
    n = dy.shape[-2]
    dx = cache.inv_std / n * (
        n * dxhat
        - dxhat.sum(axis=-2, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-2, keepdims=True)
    )
    return grads, dx


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout_mask(spec: DropoutSpec, shape, rng: Rng) -> np.ndarray:
    """Inverted-dropout scale mask: 0 for dropped units, 1/(1-rate) for kept ones."""
    keep = rng.uniform_array(shape) >= spec.rate
    return keep / (1.0 - spec.rate)


def dropout_forward(spec: DropoutSpec, x: np.ndarray, training: bool, rng: Rng | None):
    if not training or spec.rate == 0.0:
        return x, None
    mask = dropout_mask(spec, x.shape, rng)
    return x * mask, mask


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``labels`` under row-wise softmax."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"softmax_xent: {labels.shape[0] if labels.ndim else 0} labels "
                             f"for {n} rows")
    if labels.dtype.kind not in "iu" or (labels < 0).any() or (labels >= c).any():
        raise LabelError(f"softmax_xent: labels must be integers in [0, {c})")
    rows = np.arange(n)
    loss = -log_softmax(logits)[rows, labels].mean()
    dlogits = softmax(logits)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / n


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One optimiser step over every parameter that has a gradient."""
        self.t += 1
        for key, grad in grads.items():
            adam_update(self, key, params[key], grad)


def adam_update(state: AdamState, key: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update of ``param`` in place, at step ``state.t``."""
    if param.shape != grad.shape:
        raise DimensionError(f"adam: {key} has shape {list(param.shape)}, "
                             f"gradient {list(grad.shape)}")
    if state.t < 1:
        raise ValueError("adam_update called before AdamState.t was advanced")
    if key not in state.m:
        state.m[key] = np.zeros_like(param)
        state.v[key] = np.zeros_like(param)
    m, v = state.m[key], state.v[key]
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** state.t)
    v_hat = v / (1.0 - state.beta2 ** state.t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------

# Relative errors use max(|analytic|, |numeric|, REL_ERR_FLOOR) as denominator.
# Central differences at FD_STEP carry ~1e-10 absolute roundoff on O(1) losses,
# so relative error is only resolvable to 1e-5 for gradients above this floor.
REL_ERR_FLOOR = 1e-5
FD_STEP = 1e-5


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    skipped: int
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} at {self.worst} "
                f"(checked {self.checked}, skipped {self.skipped}, tol {self.tolerance:g})")


def gradient_check(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                   analytic: dict[str, np.ndarray], tolerance: float = 1e-5,
                   step: float = FD_STEP) -> GradCheckReport:
    """Compare ``analytic`` gradients against central differences of ``loss_fn``.

    ``loss_fn`` takes no arguments and must read ``params`` by reference; each
    entry is perturbed in place and restored afterwards.
    """
    worst_err, worst_name, checked = 0.0, "-", 0
    per_param = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * step)
        err = relative_error(analytic[name], numeric)
        checked += err.size
        per_param[name] = float(err.max()) if err.size else 0.0
        if err.size and err.max() > worst_err:
            worst_err = float(err.max())
            worst_name = f"{name}[{int(err.argmax())}]"
    return GradCheckReport(worst_err, worst_name, checked, 0, tolerance, per_param)
