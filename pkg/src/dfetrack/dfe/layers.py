"""Neural-network layers with hand-derived forward and backward passes.

Everything operates on NCHW float arrays.  Convolutions are valid (no
padding) with stride 1 and run as im2col matrix products; whole-image
inference chunks the output rows so the column buffer stays bounded.
Layers cache what their backward pass needs, so training is
single-writer by construction.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidInputError

# Upper bound on any im2col workspace during inference-mode forwards.
_COLS_BUDGET_BYTES = 128 * 1024 * 1024


class Layer:
    """Base: trainable params, mutable state, cached backward context."""

    frozen = False

    def params(self) -> list[tuple[str, np.ndarray]]:
        return []

    def state(self) -> list[tuple[str, np.ndarray]]:
        return []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grads(self) -> list[np.ndarray]:
        return []


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W) -> (N * OH * OW, C * KH * KW) patch matrix."""
    n, c = x.shape[0], x.shape[1]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # n, c, oh, ow, kh, kw
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(-1, c * kh * kw)


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back to the image."""
    n, c, h, w = x_shape
    oh, ow = h - kh + 1, w - kw + 1
    dcols = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u : u + oh, v : v + ow] += dcols[:, :, :, :, u, v]
    return dx


class Conv2d(Layer):
    """Valid cross-correlation, weight (F, C, KH, KW), bias (F)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self._cache = None
        self.gw = None
        self.gb = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grads(self):
        return [self.gw, self.gb]

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.shape[2], self.weight.shape[3]
        return h - kh + 1, w - kw + 1

    def forward(self, x, training):
        f, c, kh, kw = self.weight.shape
        n, xc, h, w = x.shape
        if xc != c:
            raise InvalidInputError(f"conv expects {c} input channels, got {xc}")
        if h < kh or w < kw:
            raise InvalidInputError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
        oh, ow = h - kh + 1, w - kw + 1
        wmat = self.weight.reshape(f, c * kh * kw)
        if training:
            cols = _im2col(x, kh, kw)
            out = cols @ wmat.T
            self._cache = (cols, x.shape)
            out = out.reshape(n, oh, ow, f)
        else:
            # Slab the output rows so the patch matrix stays within budget.
            row_bytes = n * ow * c * kh * kw * x.dtype.itemsize
            slab = max(1, _COLS_BUDGET_BYTES // max(row_bytes, 1))
            out = np.empty((n, oh, ow, f), dtype=x.dtype)
            for r0 in range(0, oh, slab):
                r1 = min(r0 + slab, oh)
                cols = _im2col(x[:, :, r0 : r1 + kh - 1, :], kh, kw)
                out[:, r0:r1] = (cols @ wmat.T).reshape(n, r1 - r0, ow, f)
        out += self.bias
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, dout):
        cols, x_shape = self._cache
        f, c, kh, kw = self.weight.shape
        dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, f)
        self.gb = dflat.sum(axis=0)
        self.gw = (dflat.T @ cols).reshape(self.weight.shape)
        dcols = dflat @ self.weight.reshape(f, -1)
        return _col2im(dcols, x_shape, kh, kw)


class ConvTranspose2d(Layer):
    """Adjoint of valid cross-correlation: output grows by kernel - 1.

    Weight layout (C_in, C_out, KH, KW), bias (C_out).
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self._x = None
        self.gw = None
        self.gb = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grads(self):
        return [self.gw, self.gb]

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.shape[2], self.weight.shape[3]
        return h + kh - 1, w + kw - 1

    def forward(self, x, training):
        cin, cout, kh, kw = self.weight.shape
        n, xc, h, w = x.shape
        if xc != cin:
            raise InvalidInputError(f"deconv expects {cin} input channels, got {xc}")
        xflat = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(-1, cin)
        patches = xflat @ self.weight.reshape(cin, cout * kh * kw)
        out_shape = (n, cout, h + kh - 1, w + kw - 1)
        # Scatter: every input position contributes one kh x kw patch.
        out = _scatter_patches(patches, (n, h, w), out_shape, kh, kw)
        out += self.bias[None, :, None, None]
        if training:
            self._x = x
        return out

    def backward(self, dout):
        x = self._x
        cin, cout, kh, kw = self.weight.shape
        n, _, h, w = x.shape
        self.gb = dout.sum(axis=(0, 2, 3))
        # Patches of dout seen from each input position.
        windows = sliding_window_view(dout, (kh, kw), axis=(2, 3))
        dout_cols = np.ascontiguousarray(
            windows.transpose(0, 2, 3, 1, 4, 5)
        ).reshape(n * h * w, cout * kh * kw)
        xflat = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(-1, cin)
        self.gw = (xflat.T @ dout_cols).reshape(self.weight.shape)
        dx = (dout_cols @ self.weight.reshape(cin, -1).T).reshape(n, h, w, cin)
        return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def _scatter_patches(patches: np.ndarray, in_spatial, out_shape, kh: int, kw: int) -> np.ndarray:
    n, h, w = in_spatial
    cout = out_shape[1]
    patches = patches.reshape(n, h, w, cout, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros(out_shape, dtype=patches.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, :, u : u + h, v : v + w] += patches[:, :, :, :, u, v]
    return out


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W).

    Training normalizes by biased batch statistics and blends running
    statistics with momentum; inference uses the running statistics as a
    fixed per-channel affine map.
    """

    def __init__(self, gamma, beta, running_mean, running_var, eps: float = 1e-5, momentum: float = 0.9):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.eps = eps
        self.momentum = momentum
        self._cache = None
        self.gg = None
        self.gb = None

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def grads(self):
        return [self.gg, self.gb]

    def forward(self, x, training):
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (self.gamma * inv).astype(x.dtype)
            shift = (self.beta - self.gamma * self.running_mean * inv).astype(x.dtype)
            return x * scale[None, :, None, None] + shift[None, :, None, None]
        n = x.shape[0]
        if n < 2:
            raise InvalidInputError(
                "batch normalization needs batches of at least 2 in training mode"
            )
        axes = (0, 2, 3)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        out = xhat * self.gamma[None, :, None, None] + self.beta[None, :, None, None]
        n_eff = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n_eff / (n_eff - 1)
        m = self.momentum
        self.running_mean[...] = m * self.running_mean + (1 - m) * mean
        self.running_var[...] = m * self.running_var + (1 - m) * unbiased
        self._cache = (xhat, inv)
        return out

    def backward(self, dout):
        xhat, inv = self._cache
        axes = (0, 2, 3)
        self.gb = dout.sum(axis=axes)
        self.gg = (dout * xhat).sum(axis=axes)
        g = self.gamma[None, :, None, None] * inv[None, :, None, None]
        mean_dy = dout.mean(axis=axes)[None, :, None, None]
        mean_dy_xhat = (dout * xhat).mean(axis=axes)[None, :, None, None]
        return g * (dout - mean_dy - xhat * mean_dy_xhat)


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, training):
        if training:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Layer):
    def __init__(self):
        self._s = None

    def forward(self, x, training):
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        if training:
            self._s = s
        return s

    def backward(self, dout):
        s = self._s
        return dout * s * (1.0 - s)


def mse_loss(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every sample and its gradient w.r.t. output."""
    if output.shape != target.shape:
        raise InvalidInputError(
            f"output shape {output.shape} != target shape {target.shape}"
        )
    diff = output - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad
