"""Layers with explicit forward/backward. All math in float64.

`mode` is one of:
  "train"     - dropout active, batch norm uses batch stats and updates
                its running estimates
  "eval"      - deterministic: dropout off, batch norm uses running stats
  "gradcheck" - dropout off, batch norm uses batch stats but leaves the
                running estimates untouched (so repeated forwards of the
                finite-difference probe see identical state)
"""

from __future__ import annotations

import numpy as np

MODES = ("train", "eval", "gradcheck")


class ShapeError(ValueError):
    pass


def _glorot_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base: parameter dict + gradient dict, one cached forward."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grads(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def forward(self, x, mode="eval", rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Embedding(Layer):
    """Index lookup table. Row 0 can be frozen at zero for padding."""

    def __init__(self, num_embeddings, dim, rng, frozen_padding=False):
        super().__init__()
        weight = rng.normal(0.0, 0.1, size=(num_embeddings, dim))
        if frozen_padding:
            weight[0] = 0.0
        self.params["weight"] = weight
        self.frozen_padding = frozen_padding
        self.num_embeddings = num_embeddings
        self.dim = dim
        self.zero_grads()

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.integer):
            raise ShapeError("embedding input must be integer indices")
        if x.size and (x.min() < 0 or x.max() >= self.num_embeddings):
            raise ShapeError(
                f"embedding index out of range [0, {self.num_embeddings})")
        self._x = x
        return self.params["weight"][x]

    def backward(self, dout):
        gw = self.grads["weight"]
        np.add.at(gw, self._x.reshape(-1), dout.reshape(-1, self.dim))
        if self.frozen_padding:
            gw[0] = 0.0
        return None  # integer inputs carry no gradient

    def frozen_mask(self, pname):
        if pname == "weight" and self.frozen_padding:
            mask = np.zeros((self.num_embeddings, self.dim), dtype=bool)
            mask[0] = True
            return mask
        return None


class Conv1d(Layer):
    """Valid-padding 1-D convolution. w[f, c, j], x[batch, L, C]."""

    def __init__(self, in_channels, out_channels, kernel, rng):
        super().__init__()
        fan_in = in_channels * kernel
        fan_out = out_channels * kernel
        self.params["w"] = _glorot_uniform(
            rng, fan_in, fan_out, (out_channels, in_channels, kernel))
        self.params["b"] = np.zeros(out_channels)
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.zero_grads()

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x, dtype=np.float64)
        batch, length, channels = x.shape
        k = self.kernel
        if channels != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {channels}")
        if length < k:
            raise ShapeError(f"input length {length} shorter than kernel {k}")
        t_out = length - k + 1
        # columns[b, t, j, c] = x[b, t + j, c]
        cols = np.stack([x[:, j:j + t_out, :] for j in range(k)], axis=2)
        cols = cols.reshape(batch, t_out, k * channels)
        w_flat = self.params["w"].transpose(2, 1, 0).reshape(k * channels,
                                                             self.out_channels)
        self._cols, self._w_flat, self._in_shape = cols, w_flat, x.shape
        return cols @ w_flat + self.params["b"]

    def backward(self, dout):
        batch, t_out, _ = dout.shape
        k, channels = self.kernel, self.in_channels
        d_cols = dout @ self._w_flat.T
        d_wflat = self._cols.reshape(-1, k * channels).T @ dout.reshape(
            -1, self.out_channels)
        self.grads["w"] += d_wflat.reshape(k, channels, self.out_channels
                                           ).transpose(2, 1, 0)
        self.grads["b"] += dout.sum(axis=(0, 1))
        dx = np.zeros(self._in_shape)
        d_cols = d_cols.reshape(batch, t_out, k, channels)
        for j in range(k):
            dx[:, j:j + t_out, :] += d_cols[:, :, j, :]
        return dx


class ReLU(Layer):
    def forward(self, x, mode="eval", rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return dout * self._mask


class GlobalMaxPool(Layer):
    """Max over the time axis: [batch, L, F] -> [batch, F].

    The backward pass routes each feature's gradient to the first
    position attaining the max (np.argmax tie rule).
    """

    def forward(self, x, mode="eval", rng=None):
        if x.shape[1] < 1:
            raise ShapeError("global max pool needs at least one time step")
        self._argmax = np.argmax(x, axis=1)
        self._in_shape = x.shape
        return np.take_along_axis(x, self._argmax[:, None, :], axis=1)[:, 0, :]

    def backward(self, dout):
        dx = np.zeros(self._in_shape)
        np.put_along_axis(dx, self._argmax[:, None, :], dout[:, None, :], axis=1)
        return dx


class Dense(Layer):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.params["w"] = _glorot_uniform(
            rng, in_features, out_features, (in_features, out_features))
        self.params["b"] = np.zeros(out_features)
        self.in_features = in_features
        self.out_features = out_features
        self.zero_grads()

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"dense expected {self.in_features} inputs, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self.grads["w"] += self._x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["w"].T


class BatchNorm1d(Layer):
    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.buffers["running_mean"] = np.zeros(num_features)
        self.buffers["running_var"] = np.ones(num_features)
        self.eps = eps
        self.momentum = momentum
        self.num_features = num_features
        self.zero_grads()

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x, dtype=np.float64)
        if mode in ("train", "gradcheck"):
            if x.shape[0] < 2:
                raise ShapeError("batch norm needs batch size >= 2 in train mode")
            mean = x.mean(axis=0)
            var = x.var(axis=0)  # biased, matches the normalization math
            if mode == "train":
                m = self.momentum
                self.buffers["running_mean"] = (
                    (1 - m) * self.buffers["running_mean"] + m * mean)
                self.buffers["running_var"] = (
                    (1 - m) * self.buffers["running_var"] + m * var)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, mode)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv_std, mode = self._cache
        self.grads["gamma"] += (dout * xhat).sum(axis=0)
        self.grads["beta"] += dout.sum(axis=0)
        dxhat = dout * self.params["gamma"]
        if mode == "eval":
            return dxhat * inv_std
        n = dout.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class Dropout(Layer):
    """Inverted dropout: eval is the identity."""

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, mode="eval", rng=None):
        if mode != "train" or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


# --- functional forms of the single-layer operations ----------------------

def conv1d_forward(x, layer: Conv1d):
    """Convolve one unbatched [L, C_in] input; returns [L-k+1, C_out]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return layer.forward(x[None, :, :])[0]


def global_max_pool(x):
    """Column-wise max of one [L, F] input; returns [F]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("global max pool expects a non-empty [L, F] input")
    return GlobalMaxPool().forward(x[None, :, :])[0]


def batchnorm1d_forward(x, layer: BatchNorm1d, mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    return layer.forward(np.asarray(x, dtype=np.float64), mode=mode)
