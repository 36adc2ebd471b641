"""Network-level operations on tensors: activations, convolution, spike
generation with a surrogate backward pass, per-timestep batch normalization,
channel plumbing, and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Array, EngineError, ShapeError, Tensor, record

_HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class SurrogateConfig:
    """Sharpness of the smooth stand-in derivative for the spike threshold."""

    alpha_surr: float = 2.0

    def __post_init__(self):
        if not self.alpha_surr > 0:
            raise ValueError(f"alpha_surr must be positive, got {self.alpha_surr}")


def surrogate_grad(z: Array, alpha: float) -> Array:
    """d(spike)/dz stand-in: alpha / (2 * (1 + (pi/2 * alpha * z)^2)).

    Even in z, maximal (= alpha/2) at z = 0, strictly positive, and finite
    for every finite z.
    """
    s = _HALF_PI * alpha * z
    with np.errstate(over="ignore"):  # huge z saturates cleanly to 0
        return alpha / (2.0 * (1.0 + s * s))


def soft_spike_forward(z: Array, alpha: float) -> Array:
    """Smooth primitive whose exact derivative is ``surrogate_grad``."""
    return 0.5 + np.arctan(_HALF_PI * alpha * z) / math.pi


def spike(z: Tensor, cfg: SurrogateConfig, mode: str = "hard") -> Tensor:
    """Threshold crossing: 1 where z > 0, else 0.

    ``hard`` emits exact binary spikes; the backward pass substitutes the
    surrogate derivative. ``soft`` emits the smooth primitive itself so that
    finite-difference gradient checks are well-posed; it is never used in
    training.
    """
    alpha = cfg.alpha_surr
    if mode == "hard":
        out = (z.data > 0).astype(np.float64)
    elif mode in ("soft", "soft-forward"):
        out = soft_spike_forward(z.data, alpha)
    else:
        raise ValueError(f"unknown spike mode {mode!r}")

    def back(g):
        return (g * surrogate_grad(z.data, alpha),)

    return record((z,), out, back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return record((x,), np.where(mask, x.data, 0.0), back)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def back(g):
        return (g * s * (1.0 - s),)

    return record((x,), s, back)


def square(x: Tensor) -> Tensor:
    def back(g):
        return (g * 2.0 * x.data,)

    return record((x,), x.data * x.data, back)


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    for ax in range(a.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise ShapeError(f"concat non-channel dims differ: {a.shape} vs {b.shape}")
    na = a.shape[axis]

    def back(g):
        ga, gb = np.split(g, [na], axis=axis)
        return ga, gb

    return record((a, b), np.concatenate((a.data, b.data), axis=axis), back)


def select_channels(x: Tensor, indices, axis: int = 1) -> Tensor:
    """Gather channels by index (repeats allowed); gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("selection must be a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise ShapeError(f"selection index out of range for {x.shape[axis]} channels")

    def back(g):
        gx = np.zeros_like(x.data)
        key = [slice(None)] * x.ndim
        key[axis] = idx
        np.add.at(gx, tuple(key), g)
        return (gx,)

    return record((x,), np.take(x.data, idx, axis=axis), back)


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    lo = pad // 2
    return out, lo, pad - lo


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with "same" zero padding: output h' = ceil(h/stride)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/kernel, got {x.shape} and {kernel.shape}")
    b, c, h, w = x.shape
    oc, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {kc}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    oh, pt, pb = _same_pad(h, kh, stride)
    ow, pl, pr = _same_pad(w, kw, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    # windows: (b, c, oh, ow, kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bcxykl,ockl->boxy", win, kernel.data, optimize=True)

    def back(g):
        gk = np.einsum("bcxykl,boxy->ockl", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for k in range(kh):
            for l in range(kw):
                patch = np.einsum("boxy,oc->bcxy", g, kernel.data[:, :, k, l], optimize=True)
                gxp[:, :, k:k + oh * stride:stride, l:l + ow * stride:stride] += patch
        gx = gxp[:, :, pt:pt + h, pl:pl + w]
        return gx, gk

    return record((x, kernel), out, back)


def bntt_step(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Array,
              running_var: Array, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Batch normalization with statistics and affine parameters owned by one
    timestep. ``running_mean``/``running_var`` are per-timestep buffers mutated
    in place during training and consumed at inference."""
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise EngineError("batch normalization in training mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * ivar.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    m = x.size // gamma.size

    def back(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        if training:
            gx = (ivar.reshape(shape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(shape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
            )
        else:
            gx = dxhat * ivar.reshape(shape)
        return gx, ggamma, gbeta

    return record((x, gamma, beta), out, back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over a batch of integer labels."""
    y = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (batch, classes) logits and flat labels, "
                         f"got {logits.shape} and {y.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = y.shape[0]
    loss = -logp[np.arange(n), y].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        return (p * (float(g) / n),)

    return record((logits,), np.asarray(loss), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for 2-d activations."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine shapes disagree: {x.shape} @ {w.shape}")

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return record((x, w, b), x.data @ w.data + b.data, back)


def lif_update(membrane: Tensor, drive: Tensor, prev_spikes: Tensor,
               leak: Tensor, threshold: Tensor, reset_mode: str) -> Tensor:
    """One fused membrane step.

    soft: U' = leak * U + drive - threshold * prev_spikes
    hard: U' = leak * (U * (1 - prev_spikes)) + drive
    Fusing the arithmetic keeps the unrolled tape small; gradients match the
    composed primitive ops exactly.
    """
    lk = leak.data
    th = threshold.data
    if reset_mode == "soft":
        out = lk * membrane.data + drive.data - th * prev_spikes.data

        def back(g):
            g_mem = g * lk
            g_prev = -g * th
            g_leak = _sum_to_scalar(g * membrane.data, leak.shape)
            g_th = _sum_to_scalar(-g * prev_spikes.data, threshold.shape)
            return g_mem, g, g_prev, g_leak, g_th

    elif reset_mode == "hard":
        retained = membrane.data * (1.0 - prev_spikes.data)
        out = lk * retained + drive.data

        def back(g):
            g_mem = g * lk * (1.0 - prev_spikes.data)
            g_prev = -g * lk * membrane.data
            g_leak = _sum_to_scalar(g * retained, leak.shape)
            g_th = np.zeros(threshold.shape)
            return g_mem, g, g_prev, g_leak, g_th

    else:
        raise ValueError(f"unknown reset mode {reset_mode!r}")
    return record((membrane, drive, prev_spikes, leak, threshold), out, back)


def normalized_drive(membrane: Tensor, threshold: Tensor) -> Tensor:
    """Threshold-relative potential fed to the spike function: U / V_th - 1."""
    th = threshold.data
    out = membrane.data / th - 1.0

    def back(g):
        g_mem = g / th
        g_th = _sum_to_scalar(-g * membrane.data / (th * th), threshold.shape)
        return g_mem, g_th

    return record((membrane, threshold), out, back)


def decay_add(state: Tensor, drive: Tensor, leak: Tensor) -> Tensor:
    """Non-spiking accumulator step: leak * state + drive, as one node."""
    lk = leak.data
    out = lk * state.data + drive.data

    def back(g):
        return g * lk, g, _sum_to_scalar(g * state.data, leak.shape)

    return record((state, drive, leak), out, back)


def _sum_to_scalar(grad: Array, shape: tuple[int, ...]) -> Array:
    return np.asarray(grad.sum()).reshape(shape)


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over every axis after the first two: (b, c, ...) -> (b, c)."""
    if x.ndim <= 2:
        return x
    axes = tuple(range(2, x.ndim))
    n = int(np.prod([x.shape[a] for a in axes]))

    def back(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)) / n, x.shape).copy(),)

    return record((x,), x.data.mean(axis=axes), back)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference, composed from primitive ops."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return square(diff).mean()
