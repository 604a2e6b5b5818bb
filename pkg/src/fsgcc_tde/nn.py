"""NumPy layers with hand-written backward passes.

Tensors are plain float64 arrays laid out (batch, channels, height, width).
Every ``*_forward`` has a ``*_backward`` partner taking the cache it
returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class ConvLayerParams:
    kernels: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: tuple = (1, 1)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels))


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """(low, high) zero padding so the output is ceil(size / stride); odd remainder goes high."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _check4(x: np.ndarray, name: str = "input"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be (batch, channels, height, width), got shape {x.shape}")


def conv2d_forward(x: np.ndarray, params: ConvLayerParams):
    """Zero-padded 'same' cross-correlation. Returns (output, cache)."""
    _check4(x)
    w, b = params.kernels, params.bias
    o, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {c}")
    sh, sw = params.stride
    bsz, _, h, wd = x.shape
    ph, pw = same_padding(h, kh, sh), same_padding(wd, kw, sw)
    ho, wo = -(-h // sh), -(-wd // sw)
    if (sh, sw) == (1, 1):
        return _conv_rows_forward(x, params, ph, pw)
    # im2col in (C*kh*kw, B*Ho*Wo) layout so both passes are plain matmuls
    xp = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), ph, pw))
    cols = np.empty((c, kh, kw, bsz, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    cols = cols.reshape(c * kh * kw, -1)
    out = w.reshape(o, -1) @ cols + b[:, None]
    y = out.reshape(o, bsz, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(y), (cols, xp.shape, (ph[0], pw[0]), x.shape, params)


def _conv_rows_forward(x, params, ph, pw):
    # stride 1: expand along the kernel width only, then one matmul per
    # kernel row on a shifted (strided, copy-free) view of the expansion
    w, b = params.kernels, params.bias
    o, c, kh, kw = w.shape
    bsz, _, h, wd = x.shape
    xp = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), ph, pw))
    hp = xp.shape[2]
    cols = np.empty((c, kw, hp, bsz, wd))
    for j in range(kw):
        cols[:, j] = xp[:, :, :, j:j + wd].transpose(0, 2, 1, 3)
    cols = cols.reshape(c * kw, hp, bsz * wd)
    out = np.empty((o, h, bsz * wd))
    out[:] = b[:, None, None]
    for i in range(kh):
        out += (w[:, :, i, :].reshape(o, -1) @ cols[:, i:i + h].reshape(c * kw, -1)).reshape(out.shape)
    y = out.reshape(o, h, bsz, wd).transpose(2, 0, 1, 3)
    return np.ascontiguousarray(y), ("rows", cols, xp.shape, (ph[0], pw[0]), x.shape, params)


def _conv_rows_backward(dy, cache):
    _, cols, xp_shape, (top, left), x_shape, params = cache
    w = params.kernels
    o, c, kh, kw = w.shape
    bsz, _, h, wd = dy.shape
    d2 = dy.transpose(1, 2, 0, 3).reshape(o, -1)
    dw = np.empty(w.shape)
    dcols = np.zeros(cols.shape)
    for i in range(kh):
        view = cols[:, i:i + h].reshape(c * kw, -1)
        dw[:, :, i, :] = (d2 @ view.T).reshape(o, c, kw)
        dcols[:, i:i + h] += (w[:, :, i, :].reshape(o, -1).T @ d2).reshape(c * kw, h, -1)
    dcols = dcols.reshape(c, kw, xp_shape[2], bsz, wd)
    dxp = np.zeros(xp_shape)  # (C, B, Hp, Wp)
    for j in range(kw):
        dxp[:, :, :, j:j + wd] += dcols[:, j].transpose(0, 2, 1, 3)
    dx = dxp[:, :, top:top + x_shape[2], left:left + wd].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), dw, d2.sum(axis=1)


def conv2d_backward(dy: np.ndarray, cache):
    """Returns (dx, dkernels, dbias)."""
    if isinstance(cache[0], str):
        return _conv_rows_backward(dy, cache)
    cols, xp_shape, (top, left), x_shape, params = cache
    w = params.kernels
    o, c, kh, kw = w.shape
    sh, sw = params.stride
    bsz, _, ho, wo = dy.shape
    d2 = dy.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = (w.reshape(o, -1).T @ d2).reshape(c, kh, kw, bsz, ho, wo)
    dxp = np.zeros(xp_shape)  # (C, B, Hp, Wp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, i, j]
    h, wd = x_shape[2], x_shape[3]
    dx = dxp[:, :, top:top + h, left:left + wd].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), dw, db


def batchnorm_forward(x: np.ndarray, params: BatchNormParams, training: bool):
    """Per-channel batch normalisation. Training mode updates the running statistics."""
    _check4(x)
    if x.shape[1] != len(params.gamma):
        raise ValueError("channel count does not match batch-norm parameters")
    g = params.gamma[None, :, None, None]
    bt = params.beta[None, :, None, None]
    if not training:
        xhat = (x - params.running_mean[None, :, None, None]) / np.sqrt(
            params.running_var[None, :, None, None] + params.epsilon)
        return g * xhat + bt, None
    if x.shape[0] < 2:
        raise ValueError("batch normalisation in training mode needs a batch of at least 2")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    m = x.shape[0] * x.shape[2] * x.shape[3]
    inv = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    mom = params.momentum
    params.running_mean = (1 - mom) * params.running_mean + mom * mean
    params.running_var = (1 - mom) * params.running_var + mom * var * m / (m - 1)
    return g * xhat + bt, (xhat, inv, params.gamma)


def batchnorm_backward(dy: np.ndarray, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = np.sum(dy * xhat, axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    dx = (inv[None, :, None, None] / m) * (
        m * dxhat - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * np.sum(dxhat * xhat, axis=(0, 2, 3))[None, :, None, None])
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def upsample_nearest_2x(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=-2).repeat(2, axis=-1)


def upsample_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack along channels, ``a`` first."""
    _check4(a, "a")
    _check4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(dy: np.ndarray, channels_a: int) -> tuple[np.ndarray, np.ndarray]:
    return dy[:, :channels_a], dy[:, channels_a:]


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place Adam update of every array in ``params`` with bias correction."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.m[name].shape != p.shape:
            raise ValueError(f"optimizer state for {name} has the wrong shape")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
