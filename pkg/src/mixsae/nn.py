"""Minimal dense-network substrate: layers, activations, Adam, and a
finite-difference gradient checker.

Everything operates on 2-D numpy arrays shaped (batch, features). Gradients
are hand-derived reverse mode; layers cache whatever the backward pass needs
during forward. There is no graph machinery: models own their layer lists and
call backward in reverse order themselves.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Input dimensions do not match a layer's configuration."""


class Param:
    """A trainable array paired with its gradient accumulator."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str = "param"):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):  # pragma: no cover
        return f"Param({self.name}, shape={self.value.shape})"


def zero_grads(params: Sequence[Param]) -> None:
    for p in params:
        p.zero_grad()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype=np.float64) -> np.ndarray:
    """Scale-preserving uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


class Dense:
    """Affine layer y = x W^T + b with weights shaped (out, in).

    ``use_bias=False`` drops b entirely; layers feeding straight into a
    batch norm use this, since mean subtraction makes such a bias exactly
    inert (its gradient is identically zero).
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "dense", use_bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Param(glorot_uniform(rng, in_dim, out_dim, dtype), f"{name}.weight")
        self.bias = Param(np.zeros(out_dim, dtype=dtype), f"{name}.bias") if use_bias else None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"{self.weight.name}: input has {x.shape[-1]} columns, layer expects {self.in_dim}"
            )
        self._x = x
        y = x @ self.weight.value.T
        if self.bias is not None:
            y += self.bias.value
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.grad += dy.T @ self._x
        if self.bias is not None:
            self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value

    def parameters(self) -> list[Param]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    Train mode standardizes with batch statistics (biased variance) and
    updates the running estimates by the momentum rule
    ``running = (1 - momentum) * running + momentum * batch``; eval mode uses
    the running estimates only. Train mode requires a batch of at least 2
    (the batch variance is degenerate otherwise).
    """

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64, name: str = "bn"):
        self.dim = dim
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(np.ones(dim, dtype=dtype), f"{name}.gamma")
        self.beta = Param(np.zeros(dim, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.training = True
        self._xn = None
        self._std = None

    def forward(self, x: np.ndarray, update_running: bool = True) -> np.ndarray:
        if x.shape[1] != self.dim:
            raise ShapeError(f"{self.gamma.name}: got {x.shape[1]} features, expects {self.dim}")
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise ValueError(
                    f"{self.gamma.name}: batch normalization needs a batch of >= 2 "
                    f"in train mode, got {n}"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self._std = np.sqrt(var + self.eps)
            self._xn = (x - mean) / self._std
            if update_running:
                m = self.momentum
                # running variance tracks the unbiased batch estimate
                self.running_mean = (1 - m) * self.running_mean + m * mean
                self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
            return self.gamma.value * self._xn + self.beta.value
        self._std = np.sqrt(self.running_var + self.eps)
        self._xn = (x - self.running_mean) / self._std
        return self.gamma.value * self._xn + self.beta.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xn = self._xn
        self.gamma.grad += (dy * xn).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxn = dy * self.gamma.value
        if not self.training:
            return dxn / self._std
        n = xn.shape[0]
        s1 = dxn.sum(axis=0)
        s2 = (dxn * xn).sum(axis=0)
        return (dxn - s1 / n - xn * s2 / n) / self._std

    def parameters(self) -> list[Param]:
        return [self.gamma, self.beta]


class LeakyRelu:
    """max(x, slope * x) with the default negative slope of 0.01."""

    def __init__(self, slope: float = 0.01):
        self.slope = slope
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.where(x >= 0, x, self.slope * x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * np.where(self._x >= 0, 1.0, self.slope)

    def parameters(self) -> list[Param]:
        return []


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient through row-wise softmax given output p and upstream dp."""
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


class Adam:
    """Adam with decoupled weight decay.

    The decay shrinks parameters by ``lr * weight_decay`` before the Adam
    delta is applied, so the decay never enters the moment estimates.
    """

    def __init__(self, params: Sequence[Param], lr: float = 0.001,
                 weight_decay: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {p.name}")
            if self.weight_decay:
                p.value *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)


class Sgd:
    """Plain gradient descent with the same decoupled decay convention."""

    def __init__(self, params: Sequence[Param], lr: float = 0.001,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {p.name}")
            if self.weight_decay:
                p.value *= 1.0 - self.lr * self.weight_decay
            p.value -= self.lr * g

    def zero_grad(self) -> None:
        zero_grads(self.params)


def make_optimizer(kind: str, params: Sequence[Param], lr: float,
                   weight_decay: float):
    if kind == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay)
    if kind == "sgd":
        return Sgd(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind: {kind!r}")


def numeric_gradient(loss_fn: Callable[[], float], param: Param,
                     step: float = 1e-6) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. one parameter array."""
    flat = param.value.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad.reshape(param.value.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(loss_fn: Callable[[], float], params: Sequence[Param],
               step: float = 1e-6) -> float:
    """Compare analytic against central-difference gradients.

    ``loss_fn`` must zero the gradients, run forward and backward, and return
    the scalar loss; it has to be a deterministic function of the parameter
    values (fixed batch, no running-statistic drift feeding back into the
    output). Returns the max over all parameter entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ag in zip(params, analytic):
        ng = numeric_gradient(loss_fn, p, step)
        worst = max(worst, max_relative_error(ag, ng))
    return worst
