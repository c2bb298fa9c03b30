"""Network building blocks.

The stochastic layers never materialize weight samples during training.
Instead each pre-activation is sampled from its Gaussian approximation:
m_i = sum_j mu_ij h_j, v2_i = sum_j var_ij h_j^2, z = m + v * eps with
eps ~ N(0, I) drawn per example and output unit. The backward pass reuses
the exact eps from the forward pass (pathwise estimator), so with frozen
noise the whole map is an ordinary differentiable function.

Deterministic layers (ReLU, max-pool, batch norm, dropout, full-precision
dense/conv, softmax cross-entropy) implement their usual analytic
gradients.
"""

import numpy as np

from .errors import DimensionError, ProtocolError
from .tensor import col2im, conv_output_size, im2col

# Added under the square root of the pre-activation variance so the
# eps / (2v) backward term stays finite when distributions become
# deterministic. Tests that need an exact zero-variance collapse pass
# var_floor=0; the division guards below keep that case finite too.
VAR_FLOOR = 1e-10


def _safe_div(num, den):
    return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)


class LrDense:
    """Stochastic fully connected layer, dist shaped [d_out, d_in]."""

    def __init__(self, dist, var_floor=VAR_FLOOR):
        self.dist = dist
        self.var_floor = var_floor
        self.cache = None
        self.grad = {k: np.zeros_like(v) for k, v in dist.params().items()}

    def forward(self, h, rng, mode="train"):
        """Sample the pre-activation; mode="train" caches for backward."""
        if h.ndim != 2 or h.shape[1] != self.dist.shape[1]:
            raise DimensionError(
                f"dense input {h.shape} does not match dist {self.dist.shape}"
            )
        eps = rng.normal((h.shape[0], self.dist.shape[0]), dtype=h.dtype)
        return self.forward_with_noise(h, eps, cache=(mode == "train"))

    def forward_with_noise(self, h, eps, cache=True):
        """Deterministic forward given an explicit noise tensor."""
        mu, var = self.dist.moments()
        m = h @ mu.T
        v = np.sqrt(h * h @ var.T + self.var_floor)
        z = m + v * eps
        if cache:
            self.cache = (h, eps, v, mu, var)
        return z

    def forward_mean(self, h):
        mu, _ = self.dist.moments()
        return h @ mu.T

    def forward_fixed(self, h, w):
        return h @ w.T

    def backward(self, dz):
        """Accumulate logit grads and return dL/dh; batch contributions sum."""
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        h, eps, v, mu, var = self.cache
        d_mu = dz.T @ h
        half = _safe_div(dz * eps, 2.0 * v)
        d_var = half.T @ (h * h)
        for name, (dmu_dp, dvar_dp) in self.dist.moment_grads().items():
            self.grad[name] += dmu_dp * d_mu + dvar_dp * d_var
        dh = dz @ mu + (_safe_div(dz * eps, v) @ var) * h
        self.cache = None
        return dh

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        return self.dist.params()

    def grads(self):
        return self.grad


class LrConv:
    """Stochastic convolution, dist shaped [c_out, c_in, kh, kw].

    Runs the dense math on im2col patch columns: the variance of each
    output pixel accumulates over the kernel support, and noise is drawn
    per example, output channel and pixel.
    """

    def __init__(self, dist, stride=1, pad=0, var_floor=VAR_FLOOR):
        self.dist = dist
        self.stride = stride
        self.pad = pad
        self.var_floor = var_floor
        self.cache = None
        self.grad = {k: np.zeros_like(v) for k, v in dist.params().items()}

    def _geometry(self, x_shape):
        b, c, h, w = x_shape
        co, ci, kh, kw = self.dist.shape
        if c != ci:
            raise DimensionError(f"conv input channels {c} != dist channels {ci}")
        oh = conv_output_size(h, kh, self.stride, self.pad)
        ow = conv_output_size(w, kw, self.stride, self.pad)
        return co, kh, kw, oh, ow

    def forward(self, x, rng, mode="train"):
        co, kh, kw, oh, ow = self._geometry(x.shape)
        eps = rng.normal((co, x.shape[0] * oh * ow), dtype=x.dtype)
        return self.forward_with_noise(x, eps, cache=(mode == "train"))

    def forward_with_noise(self, x, eps, cache=True):
        co, kh, kw, oh, ow = self._geometry(x.shape)
        b = x.shape[0]
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        mu, var = self.dist.moments()
        mu_flat = mu.reshape(co, -1)
        var_flat = var.reshape(co, -1)
        m = mu_flat @ cols
        v = np.sqrt(var_flat @ (cols * cols) + self.var_floor)
        z = m + v * eps
        if cache:
            self.cache = (x.shape, cols, eps, v, mu_flat, var_flat)
        return z.reshape(co, b, oh, ow).transpose(1, 0, 2, 3)

    def forward_mean(self, x):
        co, kh, kw, oh, ow = self._geometry(x.shape)
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        mu, _ = self.dist.moments()
        out = mu.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def forward_fixed(self, x, w):
        co, kh, kw, oh, ow = self._geometry(x.shape)
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        out = w.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def backward(self, dz):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        x_shape, cols, eps, v, mu_flat, var_flat = self.cache
        co, kh, kw, oh, ow = self._geometry(x_shape)
        g = dz.transpose(1, 0, 2, 3).reshape(co, -1)
        d_mu = (g @ cols.T).reshape(self.dist.shape)
        half = _safe_div(g * eps, 2.0 * v)
        d_var = (half @ (cols * cols).T).reshape(self.dist.shape)
        for name, (dmu_dp, dvar_dp) in self.dist.moment_grads().items():
            self.grad[name] += dmu_dp * d_mu + dvar_dp * d_var
        dcols = mu_flat.T @ g + cols * (var_flat.T @ _safe_div(g * eps, v))
        dx = col2im(dcols, x_shape, (kh, kw), self.stride, self.pad)
        self.cache = None
        return dx

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        return self.dist.params()

    def grads(self):
        return self.grad


class FpDense:
    """Full-precision dense layer (optionally with bias)."""

    def __init__(self, weight, bias=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64)
        self.cache = None
        self.grad = {"weight": np.zeros_like(self.weight)}
        if self.bias is not None:
            self.grad["bias"] = np.zeros_like(self.bias)

    def forward(self, h, train=True):
        if h.shape[1] != self.weight.shape[1]:
            raise DimensionError(
                f"dense input {h.shape} does not match weight {self.weight.shape}"
            )
        if train:
            self.cache = h
        out = h @ self.weight.T
        if self.bias is not None:
            out = out + self.bias
        return out

    def backward(self, dz):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        h = self.cache
        self.grad["weight"] += dz.T @ h
        if self.bias is not None:
            self.grad["bias"] += dz.sum(axis=0)
        self.cache = None
        return dz @ self.weight

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def grads(self):
        return self.grad


class FpConv:
    """Full-precision convolution (no bias; batch norm follows it)."""

    def __init__(self, weight, stride=1, pad=0):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.stride = stride
        self.pad = pad
        self.cache = None
        self.grad = {"weight": np.zeros_like(self.weight)}

    def forward(self, x, train=True):
        co, ci, kh, kw = self.weight.shape
        if x.shape[1] != ci:
            raise DimensionError(f"conv input channels {x.shape[1]} != {ci}")
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        oh = conv_output_size(x.shape[2], kh, self.stride, self.pad)
        ow = conv_output_size(x.shape[3], kw, self.stride, self.pad)
        if train:
            self.cache = (x.shape, cols)
        out = self.weight.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def backward(self, dz):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        x_shape, cols = self.cache
        co, ci, kh, kw = self.weight.shape
        g = dz.transpose(1, 0, 2, 3).reshape(co, -1)
        self.grad["weight"] += (g @ cols.T).reshape(self.weight.shape)
        dcols = self.weight.reshape(co, -1).T @ g
        self.cache = None
        return col2im(dcols, x_shape, (kh, kw), self.stride, self.pad)

    def zero_grads(self):
        self.grad["weight"][...] = 0.0

    def params(self):
        return {"weight": self.weight}

    def grads(self):
        return self.grad


class Relu:
    def forward(self, x, train=True):
        if train:
            self.mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return dy * self.mask


class MaxPool2:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""

    def forward(self, x, train=True):
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        windows = (
            x[:, :, : h2 * 2, : w2 * 2]
            .reshape(b, c, h2, 2, w2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2, w2, 4)
        )
        idx = windows.argmax(axis=-1)  # first max wins: deterministic ties
        if train:
            self.cache = (x.shape, idx)
        return np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        x_shape, idx = self.cache
        b, c, h, w = x_shape
        h2, w2 = h // 2, w // 2
        flat = np.zeros((b, c, h2, w2, 4), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, : h2 * 2, : w2 * 2] = (
            flat.reshape(b, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h2 * 2, w2 * 2)
        )
        return dx


class BatchNorm:
    """Per-channel batch normalization with running statistics.

    Works on [B, C] and [B, C, H, W]; training uses biased batch variance
    and updates running stats with momentum, inference uses the running
    statistics.
    """

    def __init__(self, num_features, momentum=0.9, eps=1e-5):
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps
        self.cache = None
        self.grad = {"gamma": np.zeros(num_features), "beta": np.zeros(num_features)}

    def _axes_and_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise DimensionError(f"batch norm expects 2D or 4D input, got {x.shape}")

    def forward(self, x, train=True):
        axes, pshape = self._axes_and_shape(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        std = np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(pshape)) / std.reshape(pshape)
        if train:
            self.cache = (xhat, std, axes, pshape)
        return self.gamma.reshape(pshape) * xhat + self.beta.reshape(pshape)

    def backward(self, dy):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        xhat, std, axes, pshape = self.cache
        m = dy.size // dy.shape[1]
        self.grad["gamma"] += np.sum(dy * xhat, axis=axes)
        self.grad["beta"] += np.sum(dy, axis=axes)
        # exact gradient for normalization with biased batch variance
        dxhat = dy * self.gamma.reshape(pshape)
        term = (
            dxhat
            - np.mean(dxhat, axis=axes).reshape(pshape)
            - xhat * np.mean(dxhat * xhat, axis=axes).reshape(pshape)
        )
        self.cache = None
        return term / std.reshape(pshape)

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return self.grad

    def running_state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Dropout:
    """Inverted dropout: active only in training, identity at inference."""

    def __init__(self, rate):
        if not (0.0 <= rate < 1.0):
            raise DimensionError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.mask = None

    def forward(self, x, rng=None, train=True):
        if not train or self.rate == 0.0:
            self.mask = None
            return x
        keep = rng.uniform(x.shape) >= self.rate
        self.mask = keep / (1.0 - self.rate)
        return x * self.mask

    def backward(self, dy):
        if self.mask is None:
            return dy
        return dy * self.mask


class Flatten:
    def forward(self, x, train=True):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self.shape)


class SoftmaxXent:
    """Softmax + cross-entropy head; loss is the mean over the batch."""

    def forward(self, logits, labels):
        if logits.ndim != 2:
            raise DimensionError(f"logits must be [B, classes], got {logits.shape}")
        shifted = logits - logits.max(axis=1, keepdims=True)
        logprobs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self.probs = np.exp(logprobs)
        self.labels = np.asarray(labels)
        picked = logprobs[np.arange(len(self.labels)), self.labels]
        return float(-picked.mean())

    def backward(self):
        b = len(self.labels)
        d = self.probs.copy()
        d[np.arange(b), self.labels] -= 1.0
        return d / b
