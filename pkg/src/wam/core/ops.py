"""Differentiable building blocks for the encoder, decoder and regression head.

Every op takes and returns :class:`Tensor` objects in NHWC layout and registers
a backward closure when any input requires gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .tensor import ConfigurationError, Param, Tensor, make_result

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _check_mode(mode: str) -> None:
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")


def conv2d_same(x: Tensor, kernel: Param, bias: Param) -> Tensor:
    """k x k convolution with zero padding that keeps the spatial extents.

    ``kernel`` has shape ``(k, k, c_in, c_out)``. Implemented as k*k shifted
    matrix products, which avoids materialising a full im2col buffer.
    """
    if x.data.ndim != 4:
        raise ConfigurationError(f"conv2d_same expects NHWC input, got shape {x.shape}")
    k, k2, cin, cout = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"kernel must be square with odd extent, got {kernel.shape}")
    if x.shape[-1] != cin:
        raise ConfigurationError(f"input shape {x.shape} does not match kernel shape {kernel.shape}")
    if bias.shape != (cout,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match kernel shape {kernel.shape}")
    n, h, w, _ = x.shape
    r = k // 2
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r), (0, 0))) if r else x.data
    wk = kernel.data
    out = np.zeros((n * h * w, cout), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            shifted = np.ascontiguousarray(xp[:, i:i + h, j:j + w, :]).reshape(-1, cin)
            out += shifted @ wk[i, j]
    out += bias.data
    out = out.reshape(n, h, w, cout)

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(-1, cout)
        if bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))
        if kernel.requires_grad:
            gk = np.empty_like(wk)
            for i in range(k):
                for j in range(k):
                    shifted = np.ascontiguousarray(xp[:, i:i + h, j:j + w, :]).reshape(-1, cin)
                    gk[i, j] = shifted.T @ g2
            kernel.accumulate(gk)
        if x.requires_grad:
            # same-padded correlation of the output gradient with the flipped, transposed kernel
            gp = np.pad(g, ((0, 0), (r, r), (r, r), (0, 0))) if r else g
            gx = np.zeros((n * h * w, cin), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    shifted = np.ascontiguousarray(gp[:, k - 1 - i:k - 1 - i + h, k - 1 - j:k - 1 - j + w, :])
                    gx += shifted.reshape(-1, cout) @ wk[i, j].T
            x.accumulate(gx.reshape(n, h, w, cin))

    return make_result(out, (x, kernel, bias), backward)


@dataclass
class RunningStats:
    """Per-channel moving statistics used by batch normalisation at inference."""

    channels: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON
    mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    var: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: bool = False

    def __post_init__(self) -> None:
        if self.mean is None:
            self.mean = np.zeros(self.channels)
        if self.var is None:
            self.var = np.ones(self.channels)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        if not self.initialized:
            self.mean = batch_mean.astype(np.float64)
            self.var = batch_var.astype(np.float64)
            self.initialized = True
        else:
            self.mean = self.momentum * self.mean + (1.0 - self.momentum) * batch_mean
            self.var = self.momentum * self.var + (1.0 - self.momentum) * batch_var


def batch_norm(x: Tensor, gamma: Param, beta: Param, mode: str, running: RunningStats) -> Tensor:
    _check_mode(mode)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    axes = tuple(range(x.data.ndim - 1))
    dt = x.data.dtype
    if mode == "train":
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes)
        running.update(mu, var)
    else:
        if not running.initialized:
            raise RuntimeError("uninitialized running statistics")
        mu = running.mean.astype(dt)
        var = running.var.astype(dt)
        centered = x.data - mu
    inv_std = (1.0 / np.sqrt(var + running.eps)).astype(dt)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    count = x.data.size // c

    def backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data
            if mode == "train":
                s1 = gx_hat.sum(axis=axes)
                s2 = (gx_hat * xhat).sum(axis=axes)
                x.accumulate(inv_std / count * (count * gx_hat - s1 - xhat * s2))
            else:
                x.accumulate(gx_hat * inv_std)

    return make_result(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.data.dtype)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * positive)

    return make_result(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g: np.ndarray) -> None:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x.accumulate(g * (cdf + x.data * pdf))

    return make_result(out, (x,), backward)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling; ties resolve to the first element in row-major order."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"max_pool2 needs even spatial extents, got {x.shape}")
    blocks = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        routed = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        routed = routed.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        x.accumulate(routed)

    return make_result(out, (x,), backward)


def avg_pool(x: Tensor, factor: int) -> Tensor:
    n, h, w, c = x.shape
    if factor == 1:
        return x
    if h % factor or w % factor:
        raise ConfigurationError(f"avg_pool factor {factor} does not divide extents of {x.shape}")
    out = x.data.reshape(n, h // factor, factor, w // factor, factor, c).mean(axis=(2, 4))

    def backward(g: np.ndarray) -> None:
        spread = np.repeat(np.repeat(g, factor, axis=1), factor, axis=2) / (factor * factor)
        x.accumulate(spread.astype(x.data.dtype))

    return make_result(out, (x,), backward)


def dense(x: Tensor, w: Param, b: Param) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ConfigurationError(f"dense shapes do not chain: x {x.shape}, w {w.shape}, b {b.shape}")
    out = x.data @ w.data + b.data

    def backward(g: np.ndarray) -> None:
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ w.data.T)

    return make_result(out, (x, w, b), backward)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("train-mode dropout needs an explicit random generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.data.dtype)
    factor = keep * scale
    out = x.data * factor

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * factor)

    return make_result(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_result(a.data + b.data, (a, b), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(original))

    return make_result(x.data.reshape(shape), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def sparse_categorical_xent(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the positions selected by ``mask``."""
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    k = logits.shape[-1]
    if mask.shape != targets.shape or logits.shape[:-1] != targets.shape:
        raise ConfigurationError(
            f"logits {logits.shape}, targets {targets.shape} and mask {mask.shape} are inconsistent")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ConfigurationError(f"targets must lie in [0, {k})")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no supervised positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count
    out = np.asarray(loss, dtype=logits.data.dtype)

    def backward(g: np.ndarray) -> None:
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        grad *= (mask[..., None] * (g / count)).astype(grad.dtype)
        logits.accumulate(grad)

    return make_result(out, (logits,), backward)


def mean_squared_error(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ConfigurationError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def backward(g: np.ndarray) -> None:
        pred.accumulate(g * 2.0 * diff / diff.size)

    return make_result(out, (pred,), backward)
