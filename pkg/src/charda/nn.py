"""Minimal numeric core: layers with hand-written backward passes.

Every real-valued intermediate is a C-contiguous ``numpy.float64`` array.
Layers cache what their backward pass needs during ``forward`` and
accumulate parameter gradients into :class:`Parameter.grad` during
``backward``; composing the backward calls in reverse order gives
reverse-mode differentiation over the fixed layer set used by the models.

Leading axis of every layer input is the batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NonFiniteError

DTYPE = np.float64

# Independent PCG64 streams derived from one run seed.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_EMBEDDINGS = 2
STREAM_DROPOUT = 3


def make_rng(seed: int, stream: int = STREAM_INIT) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, stream)``.

    The bit stream of PCG64 seeded through ``SeedSequence`` is fixed by
    numpy's stability policy, so equal keys give equal draws everywhere.
    """
    if seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    trainable: bool = True
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.trainable:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


# -- initialisers -----------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape))


def embedding_uniform(rng: np.random.Generator, shape: Sequence[int], scale: float = 0.05) -> np.ndarray:
    return rng.uniform(-scale, scale, size=tuple(shape))


# -- functional forms ---------------------------------------------------------


def same_padding(window: int) -> tuple[int, int]:
    """Left/right zero rows that keep a window-``window`` convolution length-preserving."""
    left = (window - 1) // 2
    return left, window - 1 - left


def _windows(x: np.ndarray, window: int) -> np.ndarray:
    # x [B, L, d] -> [B, L, window * d], zero padded so position t sees rows t-left .. t+right
    left, right = same_padding(window)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    win = sliding_window_view(xp, window, axis=1)  # [B, L, d, window]
    b, length, d, _ = win.shape
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, length, window * d)


def conv1d_same(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Temporal convolution with "same" zero padding.

    ``x`` is ``[L, d]`` or ``[B, L, d]``, ``weights`` is ``[w, d, F]`` and the
    result has the same length as ``x`` with ``F`` channels.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    window, d, filters = weights.shape
    if x.shape[-1] != d:
        raise ConfigurationError(f"convolution expects input dim {d}, got {x.shape[-1]}")
    out = _windows(x, window) @ weights.reshape(window * d, filters) + bias
    return out[0] if squeeze else out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probabilities: np.ndarray, gold) -> np.ndarray | float:
    """Negative log-probability of the gold class (per row when batched)."""
    probabilities = np.asarray(probabilities, dtype=DTYPE)
    if probabilities.ndim == 1:
        return float(-np.log(probabilities[int(gold)]))
    gold = np.asarray(gold)
    return -np.log(probabilities[np.arange(len(gold)), gold])


def max_over_time(x: np.ndarray, valid_length) -> np.ndarray:
    """Per-channel maximum over the first ``valid_length`` rows."""
    return MaxOverTime().forward(x, valid_length)


# -- layers -------------------------------------------------------------------


class Embedding:
    """Row lookup into a ``[V, d]`` table.

    Row ``padding_index`` (when set) never receives gradient.
    """

    def __init__(self, table: Parameter, padding_index: int | None = None):
        self.table = table
        self.padding_index = padding_index
        self._indices = None

    @property
    def parameters(self) -> list[Parameter]:
        return [self.table]

    def forward(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        vocab = self.table.shape[0]
        if indices.size == 0:
            raise ConfigurationError("embedding lookup needs at least one index")
        if indices.min() < 0 or indices.max() >= vocab:
            raise ConfigurationError(f"token index out of range [0, {vocab})")
        self._indices = indices
        return self.table.value[indices]

    def backward(self, grad: np.ndarray) -> None:
        if not self.table.trainable:
            return
        g = np.zeros_like(self.table.value)
        np.add.at(g, self._indices.reshape(-1), grad.reshape(-1, g.shape[1]))
        if self.padding_index is not None:
            g[self.padding_index] = 0.0
        self.table.accumulate(g)


class TemporalConv:
    def __init__(self, weights: Parameter, bias: Parameter):
        if weights.value.ndim != 3 or bias.shape != (weights.shape[2],):
            raise ConfigurationError(
                f"conv weights {weights.shape} and bias {bias.shape} are inconsistent"
            )
        self.weights = weights
        self.bias = bias
        self._cols = None

    @property
    def window(self) -> int:
        return self.weights.shape[0]

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weights, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        window, d, filters = self.weights.shape
        if x.shape[-1] != d:
            raise ConfigurationError(f"convolution expects input dim {d}, got {x.shape[-1]}")
        self._cols = _windows(x, window)
        return self._cols @ self.weights.value.reshape(window * d, filters) + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        window, d, filters = self.weights.shape
        cols = self._cols
        b, length, _ = cols.shape
        flat_cols = cols.reshape(-1, window * d)
        flat_grad = grad.reshape(-1, filters)
        self.weights.accumulate((flat_cols.T @ flat_grad).reshape(window, d, filters))
        self.bias.accumulate(flat_grad.sum(axis=0))

        dcols = (grad @ self.weights.value.reshape(window * d, filters).T).reshape(b, length, window, d)
        left, right = same_padding(window)
        dxp = np.zeros((b, length + window - 1, d))
        for j in range(window):
            dxp[:, j : j + length] += dcols[:, :, j, :]
        return dxp[:, left : left + length]


class MaxOverTime:
    """Masked max pooling over the time axis.

    Gradient goes to the first maximal valid position of each channel.
    """

    def __init__(self):
        self._argmax = None
        self._shape = None

    def forward(self, x: np.ndarray, valid_length) -> np.ndarray:
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
            valid_length = [valid_length]
        lengths = np.asarray(valid_length, dtype=np.int64).reshape(-1)
        b, length, _ = x.shape
        if lengths.shape[0] != b:
            raise ConfigurationError("one valid length per batch row is required")
        if lengths.min() < 1:
            raise ValueError("valid_length must be >= 1 (empty segment)")
        if lengths.max() > length:
            raise ValueError(f"valid_length exceeds sequence length {length}")
        mask = np.arange(length)[None, :] < lengths[:, None]
        masked = np.where(mask[:, :, None], x, -np.inf)
        self._argmax = masked.argmax(axis=1)
        self._shape = x.shape
        out = np.take_along_axis(x, self._argmax[:, None, :], axis=1)[:, 0, :]
        return out[0] if squeeze else out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        squeeze = grad.ndim == 1
        if squeeze:
            grad = grad[None]
        dx = np.zeros(self._shape)
        np.put_along_axis(dx, self._argmax[:, None, :], grad[:, None, :], axis=1)
        return dx[0] if squeeze else dx


ACTIVATIONS = ("none", "relu", "softmax")


class Dense:
    def __init__(self, weights: Parameter, bias: Parameter, activation: str = "none"):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        if weights.value.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ConfigurationError(
                f"dense weights {weights.shape} and bias {bias.shape} are inconsistent"
            )
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self._x = None
        self._out = None

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weights, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.weights.shape[0]:
            raise ConfigurationError(
                f"dense layer expects input dim {self.weights.shape[0]}, got {x.shape[-1]}"
            )
        self._x = x
        z = x @ self.weights.value + self.bias.value
        if self.activation == "relu":
            z = np.maximum(z, 0.0)
        elif self.activation == "softmax":
            z = softmax(z)
        self._out = z
        return z

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            grad = grad * (self._out > 0)
        elif self.activation == "softmax":
            p = self._out
            grad = p * (grad - (grad * p).sum(axis=-1, keepdims=True))
        x = self._x
        if x.ndim == 1:
            self.weights.accumulate(np.outer(x, grad))
            self.bias.accumulate(grad)
        else:
            self.weights.accumulate(x.T @ grad)
            self.bias.accumulate(grad.sum(axis=0))
        return grad @ self.weights.value.T


class SoftmaxCrossEntropy:
    """Softmax over logits fused with mean cross-entropy over the batch."""

    def __init__(self):
        self._probs = None
        self._gold = None

    def forward(self, logits: np.ndarray, gold) -> tuple[float, np.ndarray]:
        gold = np.asarray(gold, dtype=np.int64)
        probs = softmax(logits)
        # log-softmax directly keeps the loss finite for confident predictions
        z = logits - logits.max(axis=-1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        loss = float(-log_probs[np.arange(len(gold)), gold].mean())
        self._probs, self._gold = probs, gold
        return loss, probs

    def backward(self) -> np.ndarray:
        g = self._probs.copy()
        g[np.arange(len(self._gold)), self._gold] -= 1.0
        return g / len(self._gold)


# -- single-example conveniences ------------------------------------------------


def embedding_forward(indices, table: Parameter) -> np.ndarray:
    return Embedding(table).forward(indices)


def temporal_conv_forward(x: np.ndarray, weights: Parameter, bias: Parameter) -> np.ndarray:
    return conv1d_same(np.asarray(x, dtype=DTYPE), weights.value, bias.value)


def dense_forward(x: np.ndarray, weights: Parameter, bias: Parameter, activation: str = "none") -> np.ndarray:
    return Dense(weights, bias, activation).forward(np.asarray(x, dtype=DTYPE))


# -- optimisers ---------------------------------------------------------------


def _check_finite(params: Iterable[Parameter]) -> None:
    for p in params:
        if p.trainable and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")


class SGD:
    def __init__(self, params: Sequence[Parameter], learning_rate: float = 1e-3):
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        _check_finite(self.params)
        for p in self.params:
            if p.trainable:
                p.value -= self.learning_rate * p.grad
            p.zero_grad()


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        _check_finite(self.params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.trainable:
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * p.grad**2
                p.value -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            p.zero_grad()


def make_optimizer(name: str, params: Sequence[Parameter], **hyper):
    if name == "adam":
        return Adam(params, **hyper)
    if name == "sgd":
        return SGD(params, learning_rate=hyper.get("learning_rate", 1e-3))
    raise ConfigurationError(f"unknown optimizer {name!r}")


# -- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    max_relative_error: dict[str, float]
    frozen: list[str]
    elements_checked: int
    skipped_at_kinks: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_relative_error.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.worst < tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def gradient_check(
    objective: Callable[[], float],
    params: Sequence[Parameter],
    step: float = 1e-5,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
    pattern: Callable[[], bytes] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    ``objective`` must run a forward and backward pass and return the scalar
    loss; it is called once for the analytic gradients and twice per checked
    element. Frozen parameters are listed but not perturbed. With
    ``max_elements`` set, a random subset of each parameter's elements is
    checked.

    Max pooling and ReLU are only piecewise smooth. When ``pattern`` is
    given it must return a fingerprint of the discrete choices made by the
    last forward pass (argmax positions, active units). Elements whose
    perturbation changes that fingerprint straddle a switch point where
    central differences are meaningless; they are skipped and counted.
    """
    for p in params:
        p.zero_grad()
    objective()
    analytic = {id(p): p.grad.copy() for p in params}
    base = pattern() if pattern else None

    errors: dict[str, float] = {}
    frozen: list[str] = []
    checked = skipped = 0
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        if not p.trainable:
            frozen.append(name)
            continue
        flat = p.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = (rng or make_rng(0)).choice(flat.size, size=max_elements, replace=False)
        numeric = np.empty(len(indices))
        smooth = np.ones(len(indices), dtype=bool)
        for k, idx in enumerate(indices):
            orig = flat[idx]
            flat[idx] = orig + step
            up = objective()
            crossed = base is not None and pattern() != base
            flat[idx] = orig - step
            down = objective()
            crossed = crossed or (base is not None and pattern() != base)
            flat[idx] = orig
            numeric[k] = (up - down) / (2.0 * step)
            smooth[k] = not crossed
        a = analytic[id(p)].reshape(-1)[indices]
        err = relative_error(a[smooth], numeric[smooth])
        errors[name] = float(err.max()) if err.size else 0.0
        checked += int(smooth.sum())
        skipped += int((~smooth).sum())
    for p in params:
        p.zero_grad()
    return GradCheckReport(errors, frozen, checked, skipped)
