"""Convolution, batch normalization and dense layers on channel-last tensors."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import ShapeError, Tensor

INIT_STD = 0.02
IM2COL_BYTES = 256 * 2**20


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for SAME padding; odd extra goes after."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


class Conv2D:
    """k x k convolution with SAME zero padding; kernel layout [k, k, C_in, C_out]."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, dtype=np.float32, name: str = "conv"):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.name = name
        self.kernel = Tensor(np.zeros((k, k, c_in, c_out)), requires_grad=True, dtype=dtype, name=f"{name}.kernel")
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype, name=f"{name}.bias")

    def parameters(self) -> list[Tensor]:
        return [self.kernel, self.bias]

    def buffers(self) -> list[Tensor]:
        return []

    def init(self, seed: int) -> None:
        init_layer(self, seed)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self)


def conv2d(x: Tensor, layer: Conv2D) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,H,W,C], got {x.shape}")
    n, h, w, c = x.shape
    if c != layer.c_in:
        raise ShapeError(f"{layer.name}: input has {c} channels, kernel expects {layer.c_in}")
    k, s = layer.k, layer.stride
    ho, top, bottom = same_padding(h, k, s)
    wo, left, right = same_padding(w, k, s)
    if h + top + bottom < k or w + left + right < k:
        raise ShapeError(f"{layer.name}: kernel {k} larger than padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right), (0, 0)))
    kern = layer.kernel.data.astype(x.dtype, copy=False)
    rows = n * ho * wo
    kmat = kern.reshape(k * k * c, layer.c_out)

    def window(arr, i, j):
        return arr[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]

    # one big patch matrix when it fits, otherwise accumulate per kernel offset
    use_cols = rows * k * k * c * xp.itemsize <= IM2COL_BYTES
    if use_cols:
        cols = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(rows, k * k * c)
        out = cols @ kmat
    else:
        cols = None
        out = np.zeros((rows, layer.c_out), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += window(xp, i, j).reshape(rows, c) @ kern[i, j]
    out += layer.bias.data.astype(x.dtype, copy=False)
    out = out.reshape(n, ho, wo, layer.c_out)

    def backward(g):
        g2 = g.reshape(rows, layer.c_out)
        if cols is not None:
            dkern = (cols.T @ g2).reshape(kern.shape)
        else:
            dkern = np.empty_like(kern)
            for i in range(k):
                for j in range(k):
                    dkern[i, j] = window(xp, i, j).reshape(rows, c).T @ g2
        dx = None
        if x.requires_grad and s == 1 and n * h * w * k * k * layer.c_out * g.itemsize <= IM2COL_BYTES:
            # input grad of a stride-1 conv is a conv of g with the flipped, transposed kernel
            gp = np.pad(g, ((0, 0), (bottom, top), (right, left), (0, 0)))
            gcols = sliding_window_view(gp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
            wflip = kern[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * layer.c_out, c)
            dx = (gcols.reshape(n * h * w, k * k * layer.c_out) @ wflip).reshape(n, h, w, c)
        elif x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    window(dxp, i, j)[...] += (g2 @ kern[i, j].T).reshape(n, ho, wo, c)
            dx = dxp[:, top:top + h, left:left + w, :]
        return dx, dkern, g2.sum(axis=0)

    return T.custom_op(out, (x, layer.kernel, layer.bias), backward, "conv2d")


class BatchNorm:
    """Per-channel batch normalization over the N, H, W axes.

    ``mode`` selects normalization statistics: ``"train"`` uses batch
    statistics and updates the running averages, ``"batch"`` uses batch
    statistics without touching running averages, ``"eval"`` uses the
    running averages.
    """

    MODES = ("train", "batch", "eval")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9, dtype=np.float32,
                 name: str = "bn"):
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        self.channels, self.eps, self.momentum, self.name = channels, eps, momentum, name
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype, name=f"{name}.beta")
        self.running_mean = Tensor(np.zeros(channels), dtype=dtype, name=f"{name}.running_mean")
        self.running_var = Tensor(np.ones(channels), dtype=dtype, name=f"{name}.running_var")

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[Tensor]:
        return [self.running_mean, self.running_var]

    def init(self, seed: int) -> None:
        init_layer(self, seed)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return batchnorm(x, self, mode)


def batchnorm(x: Tensor, layer: BatchNorm, mode: str = "train") -> Tensor:
    if mode not in BatchNorm.MODES:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    if x.shape[-1] != layer.channels:
        raise ShapeError(f"{layer.name}: expected {layer.channels} channels, got {x.shape[-1]}")
    axes = tuple(range(x.ndim - 1))
    count = int(np.prod(x.shape[:-1]))
    gamma = layer.gamma.data.astype(x.dtype, copy=False)
    beta = layer.beta.data.astype(x.dtype, copy=False)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(layer.running_var.data.astype(x.dtype) + x.dtype.type(layer.eps))
        xhat = (x.data - layer.running_mean.data.astype(x.dtype)) * inv_std
        out = xhat * gamma + beta

        def backward_eval(g):
            return g * gamma * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return T.custom_op(out, (x, layer.gamma, layer.beta), backward_eval, "batchnorm")

    if count < 2:
        raise ShapeError(f"{layer.name}: batch statistics need at least 2 values per channel, got {count}")
    mean = x.data.mean(axis=axes)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(layer.eps))
    xhat = centered * inv_std
    out = xhat * gamma + beta

    if mode == "train":
        mom = layer.momentum
        unbiased = var * (count / (count - 1))
        rm, rv = layer.running_mean, layer.running_var
        rm.data = (mom * rm.data + (1 - mom) * mean).astype(rm.dtype)
        rv.data = (mom * rv.data + (1 - mom) * unbiased).astype(rv.dtype)

    def backward(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dxhat = g * gamma
        dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return T.custom_op(out, (x, layer.gamma, layer.beta), backward, "batchnorm")


class Dense:
    """Affine map input @ weight + bias with weight layout [in, out]."""

    def __init__(self, n_in: int, n_out: int, dtype=np.float32, name: str = "dense"):
        self.n_in, self.n_out, self.name = n_in, n_out, name
        self.weight = Tensor(np.zeros((n_in, n_out)), requires_grad=True, dtype=dtype, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, dtype=dtype, name=f"{name}.bias")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def buffers(self) -> list[Tensor]:
        return []

    def init(self, seed: int) -> None:
        init_layer(self, seed)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self)


def dense(x: Tensor, layer: Dense) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(f"{layer.name}: expected [N,{layer.n_in}], got {x.shape}")
    return T.add(T.matmul(x, layer.weight), layer.bias)


def init_layer(layer, seed: int) -> None:
    """Weights ~ normal(0, 0.02), biases 0, gamma 1, beta 0, running mean 0 / var 1."""
    if isinstance(layer, BatchNorm):
        layer.gamma.data = np.ones_like(layer.gamma.data)
        layer.beta.data = np.zeros_like(layer.beta.data)
        layer.running_mean.data = np.zeros_like(layer.running_mean.data)
        layer.running_var.data = np.ones_like(layer.running_var.data)
        return
    if isinstance(layer, Conv2D):
        weight, bias = layer.kernel, layer.bias
    elif isinstance(layer, Dense):
        weight, bias = layer.weight, layer.bias
    else:
        raise TypeError(f"cannot initialize {type(layer).__name__}")
    rng = np.random.default_rng(seed)
    weight.data = rng.normal(0.0, INIT_STD, size=weight.shape).astype(weight.dtype)
    bias.data = np.zeros_like(bias.data)


def activation(kind: str, x: Tensor, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return T.relu(x)
    if kind == "leaky_relu":
        return T.leaky_relu(x, alpha)
    if kind == "tanh":
        return T.tanh(x)
    if kind == "sigmoid":
        return T.sigmoid(x)
    if kind in ("none", "identity"):
        return x
    raise ValueError(f"unknown activation {kind!r}")
