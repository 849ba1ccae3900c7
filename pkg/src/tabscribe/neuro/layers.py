"""Layers with explicit forward/backward passes on NHWC numpy arrays.

Caches for backward are written only during training-mode forwards, so
inference over a frozen network is reentrant.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    pass


class Parameter:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng, n, dtype):
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.astype(dtype)


class Layer:
    name = "layer"

    def build(self, in_shape: tuple, rng: np.random.Generator, dtype) -> tuple:
        """Create parameters for ``in_shape`` (sans batch); return output shape."""
        return in_shape

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Parameter]:
        return []

    def spec(self) -> dict:
        return {"kind": self.name}


class Standardize(Layer):
    """Fixed affine input map from [0, 1] ink scale to [-1, 1]. No parameters."""

    name = "standardize"

    def forward(self, x, training):
        return (x - 0.5) * 2.0

    def backward(self, grad):
        return grad * 2.0


class Conv2d(Layer):
    """3x3 convolution, stride 1, same padding, optional ReLU."""

    name = "conv2d"

    def __init__(self, filters: int, activation: str | None = "relu"):
        if filters <= 0:
            raise ValueError("filters must be positive")
        self.filters = filters
        self.activation = activation
        self.w: Parameter | None = None
        self.b: Parameter | None = None
        self._cache = None

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        self.in_channels = c
        fan_in, fan_out = 9 * c, 9 * self.filters
        self.w = Parameter(glorot_uniform(rng, (9 * c, self.filters), fan_in, fan_out, dtype))
        self.b = Parameter(np.zeros(self.filters, dtype=dtype))
        return (h, w, self.filters)

    def _im2col(self, x):
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # rows ordered (ky, kx, channel); one copy per kernel offset
        cols = np.empty((n, h, w, 9 * c), dtype=x.dtype)
        for ky in range(3):
            for kx in range(3):
                o = (ky * 3 + kx) * c
                cols[:, :, :, o : o + c] = xp[:, ky : ky + h, kx : kx + w, :]
        return cols.reshape(n * h * w, 9 * c)

    def forward(self, x, training):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"{self.name}: expected NHW{self.in_channels}, got {x.shape}")
        n, h, w, _ = x.shape
        cols = self._im2col(x)
        z = (cols @ self.w.value + self.b.value).reshape(n, h, w, self.filters)
        if self.activation == "relu":
            out = np.maximum(z, 0)
        else:
            out = z
        if training:
            self._cache = (cols, (n, h, w), z > 0 if self.activation == "relu" else None)
        return out

    def backward(self, grad):
        cols, (n, h, w), mask = self._cache
        if mask is not None:
            grad = grad * mask
        gflat = grad.reshape(n * h * w, self.filters)
        self.w.grad += cols.T @ gflat
        self.b.grad += gflat.sum(axis=0)
        dcols = (gflat @ self.w.value.T).reshape(n, h, w, 3, 3, self.in_channels)
        dxp = np.zeros((n, h + 2, w + 2, self.in_channels), dtype=grad.dtype)
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky : ky + h, kx : kx + w, :] += dcols[:, :, :, ky, kx, :]
        return dxp[:, 1 : h + 1, 1 : w + 1, :]

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": self.name, "filters": self.filters, "activation": self.activation}


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    name = "maxpool2x2"

    def __init__(self):
        self._cache = None

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"{self.name}: input {in_shape} too small to pool")
        return (h // 2, w // 2, c)

    @staticmethod
    def _windows(x):
        h2, w2 = x.shape[1] // 2, x.shape[2] // 2
        xc = x[:, : 2 * h2, : 2 * w2, :]
        return (xc[:, ::2, ::2], xc[:, ::2, 1::2], xc[:, 1::2, ::2], xc[:, 1::2, 1::2])

    def forward(self, x, training):
        wins = self._windows(x)
        out = np.maximum(np.maximum(wins[0], wins[1]), np.maximum(wins[2], wins[3]))
        if training:
            self._cache = (x, out)
        return out

    def backward(self, grad):
        x, out = self._cache
        n, h, w, c = x.shape
        dx = np.zeros((n, h, w, c), dtype=grad.dtype)
        dviews = (
            dx[:, : h // 2 * 2 : 2, : w // 2 * 2 : 2],
            dx[:, : h // 2 * 2 : 2, 1 : w // 2 * 2 : 2],
            dx[:, 1 : h // 2 * 2 : 2, : w // 2 * 2 : 2],
            dx[:, 1 : h // 2 * 2 : 2, 1 : w // 2 * 2 : 2],
        )
        # first window (in fixed order) matching the max wins the whole gradient
        claimed = np.zeros(grad.shape, dtype=bool)
        for win, dview in zip(self._windows(x), dviews):
            mask = (win == out) & ~claimed
            dview[...] = grad * mask
            claimed |= mask
        return dx


class Flatten(Layer):
    name = "flatten"

    def build(self, in_shape, rng, dtype):
        self._in_shape = in_shape
        return (int(np.prod(in_shape)),)

    def forward(self, x, training):
        self._n = x.shape[0]
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape((self._n, *self._in_shape))


class Dense(Layer):
    """Affine map over the last axis; accepts [N, D] or [N, T, D]."""

    name = "dense"

    def __init__(self, units: int, activation: str | None = None):
        if units <= 0:
            raise ValueError("units must be positive")
        self.units = units
        self.activation = activation
        self._cache = None

    def build(self, in_shape, rng, dtype):
        d = in_shape[-1]
        self.in_dim = d
        self.w = Parameter(glorot_uniform(rng, (d, self.units), d, self.units, dtype))
        self.b = Parameter(np.zeros(self.units, dtype=dtype))
        return (*in_shape[:-1], self.units)

    def forward(self, x, training):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.name}: expected last dim {self.in_dim}, got {x.shape}")
        z = x @ self.w.value + self.b.value
        out = np.maximum(z, 0) if self.activation == "relu" else z
        if training:
            self._cache = (x, z > 0 if self.activation == "relu" else None)
        return out

    def backward(self, grad):
        x, mask = self._cache
        if mask is not None:
            grad = grad * mask
        g2 = grad.reshape(-1, self.units)
        x2 = x.reshape(-1, self.in_dim)
        self.w.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return grad @ self.w.value.T

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": self.name, "units": self.units, "activation": self.activation}


class Dropout(Layer):
    """Inverted dropout; identity in inference mode."""

    name = "dropout"

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng: np.random.Generator | None = None  # set by Network
        self._mask = None

    def forward(self, x, training):
        if not training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        self._mask = mask
        return x * mask

    def backward(self, grad):
        return grad * self._mask if self._mask is not None else grad

    def spec(self):
        return {"kind": self.name, "rate": self.rate}


class CollapseToSequence(Layer):
    """[H, W, C] feature map -> W timesteps of dimension H*C (width-major)."""

    name = "collapse_to_sequence"

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        self._hwc = (h, w, c)
        return (w, h * c)

    def forward(self, x, training):
        n, h, w, c = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(n, w, h * c)

    def backward(self, grad):
        h, w, c = self._hwc
        n = grad.shape[0]
        return np.ascontiguousarray(grad.reshape(n, w, h, c).transpose(0, 2, 1, 3))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Lstm(Layer):
    """Single LSTM over [N, T, D]; returns the full hidden sequence [N, T, U].

    Gate order in the fused weight matrices is (input, forget, cell, output).
    """

    name = "lstm"

    def __init__(self, units: int):
        if units <= 0:
            raise ValueError("units must be positive")
        self.units = units
        self._cache = None

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 2:
            raise ShapeError(f"{self.name}: expected (T, D) input, got {in_shape}")
        t, d = in_shape
        u = self.units
        self.in_dim = d
        self.wx = Parameter(glorot_uniform(rng, (d, 4 * u), d, u, dtype))
        wh = np.concatenate([orthogonal(rng, u, dtype) for _ in range(4)], axis=1)
        self.wh = Parameter(wh)
        self.b = Parameter(np.zeros(4 * u, dtype=dtype))
        return (t, u)

    def forward(self, x, training):
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ShapeError(f"{self.name}: expected [N, T, {self.in_dim}], got {x.shape}")
        n, t, _ = x.shape
        u = self.units
        dtype = x.dtype
        i_s = np.empty((n, t, u), dtype)
        f_s = np.empty((n, t, u), dtype)
        g_s = np.empty((n, t, u), dtype)
        o_s = np.empty((n, t, u), dtype)
        tanhc_s = np.empty((n, t, u), dtype)
        h_s = np.empty((n, t, u), dtype)
        c_prev_s = np.empty((n, t, u), dtype)

        h = np.zeros((n, u), dtype)
        c = np.zeros((n, u), dtype)
        wx, wh, b = self.wx.value, self.wh.value, self.b.value
        for step in range(t):
            z = x[:, step] @ wx + h @ wh + b
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u : 2 * u])
            g = np.tanh(z[:, 2 * u : 3 * u])
            o = _sigmoid(z[:, 3 * u :])
            c_prev_s[:, step] = c
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            i_s[:, step], f_s[:, step], g_s[:, step], o_s[:, step] = i, f, g, o
            tanhc_s[:, step] = tc
            h_s[:, step] = h
        if training:
            self._cache = (x, i_s, f_s, g_s, o_s, tanhc_s, h_s, c_prev_s)
        return h_s

    def backward(self, grad):
        x, i_s, f_s, g_s, o_s, tanhc_s, h_s, c_prev_s = self._cache
        n, t, _ = x.shape
        u = self.units
        wx, wh = self.wx.value, self.wh.value
        dx = np.empty_like(x)
        dh_next = np.zeros((n, u), dtype=grad.dtype)
        dc_next = np.zeros((n, u), dtype=grad.dtype)
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros_like(self.b.value)
        for step in range(t - 1, -1, -1):
            i, f, g, o = i_s[:, step], f_s[:, step], g_s[:, step], o_s[:, step]
            tc = tanhc_s[:, step]
            dh = grad[:, step] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev_s[:, step]
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            h_prev = h_s[:, step - 1] if step > 0 else np.zeros((n, u), dtype=grad.dtype)
            dwx += x[:, step].T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, step] = dz @ wx.T
            dh_next = dz @ wh.T
            dc_next = dc * f
        self.wx.grad += dwx
        self.wh.grad += dwh
        self.b.grad += db
        return dx

    def params(self):
        return [self.wx, self.wh, self.b]

    def spec(self):
        return {"kind": self.name, "units": self.units}
