"""Concrete-relaxation baseline for the stochastic layers.

Instead of sampling Gaussian pre-activations, these layers draw one relaxed
weight matrix per forward pass: for every weight a Gumbel-perturbed softmax
over the support {-1, 0, +1} (temperature tau) produces a soft weight

    w = sum_k value_k * softmax_k((log p_k + g_k) / tau),

shared across the batch. Gradients flow through the softmax with the noise
held fixed, which is the estimator this package's Gaussian trick is
compared against. As tau -> 0 the soft weights become exact categorical
samples; large tau flattens them toward zero.
"""

import numpy as np

from .dist import TernaryDist
from .errors import DimensionError, ProtocolError
from .tensor import col2im, conv_output_size, im2col

SUPPORT = np.array([-1.0, 0.0, 1.0])


def _softplus(x):
    return np.logaddexp(0.0, x)


def log_category_probs(dist):
    """Stable [..., 3] tensor of (log p_minus, log p_zero, log p_plus)."""
    a, b = dist.a, dist.b
    log_pm = -_softplus(a) - _softplus(b)
    log_p0 = -_softplus(-a)
    log_pp = -_softplus(a) - _softplus(-b)
    return np.stack([log_pm, log_p0, log_pp], axis=-1)


def gumbel_noise(rng, shape, dtype=np.float64):
    u = np.clip(rng.uniform(shape, dtype=dtype), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def relax_weights(dist, g, tau):
    """Soft weights and their softmax coordinates for noise g [..., 3]."""
    scores = (log_category_probs(dist) + g) / tau
    scores = scores - scores.max(axis=-1, keepdims=True)
    y = np.exp(scores)
    y /= y.sum(axis=-1, keepdims=True)
    return y @ SUPPORT, y


def _logit_grads(dist, d_logp):
    """Map dL/dlog p_k back to the two logits of a ternary distribution."""
    p0 = 1.0 / (1.0 + np.exp(-dist.a))
    q = 1.0 / (1.0 + np.exp(-dist.b))
    ga = d_logp[..., 0] * (-p0) + d_logp[..., 1] * (1.0 - p0) + d_logp[..., 2] * (-p0)
    gb = d_logp[..., 0] * (-q) + d_logp[..., 2] * (1.0 - q)
    return ga, gb


class GumbelDense:
    """Relaxed-weight dense layer; dist shaped [d_out, d_in]."""

    def __init__(self, dist, tau=0.1):
        if not isinstance(dist, TernaryDist):
            raise DimensionError("relaxed layers need a ternary distribution")
        self.dist = dist
        self.tau = tau
        self.cache = None
        self.grad = {k: np.zeros_like(v) for k, v in dist.params().items()}

    def forward(self, h, rng, mode="train"):
        g = gumbel_noise(rng, self.dist.shape + (3,), dtype=h.dtype)
        return self.forward_with_noise(h, g, cache=(mode == "train"))

    def forward_with_noise(self, h, g, cache=True):
        if h.shape[1] != self.dist.shape[1]:
            raise DimensionError(
                f"dense input {h.shape} does not match dist {self.dist.shape}"
            )
        w, y = relax_weights(self.dist, g, self.tau)
        if cache:
            self.cache = (h, w, y)
        return h @ w.T

    def forward_mean(self, h):
        mu, _ = self.dist.moments()
        return h @ mu.T

    def forward_fixed(self, h, w):
        return h @ w.T

    def backward(self, dz):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        h, w, y = self.cache
        dw = dz.T @ h
        d_logp = dw[..., None] * y * (SUPPORT - w[..., None]) / self.tau
        ga, gb = _logit_grads(self.dist, d_logp)
        self.grad["a"] += ga
        self.grad["b"] += gb
        self.cache = None
        return dz @ w

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        return self.dist.params()

    def grads(self):
        return self.grad


class GumbelConv:
    """Relaxed-weight convolution; dist shaped [c_out, c_in, kh, kw]."""

    def __init__(self, dist, tau=0.1, stride=1, pad=0):
        if not isinstance(dist, TernaryDist):
            raise DimensionError("relaxed layers need a ternary distribution")
        self.dist = dist
        self.tau = tau
        self.stride = stride
        self.pad = pad
        self.cache = None
        self.grad = {k: np.zeros_like(v) for k, v in dist.params().items()}

    def forward(self, x, rng, mode="train"):
        g = gumbel_noise(rng, self.dist.shape + (3,), dtype=x.dtype)
        return self.forward_with_noise(x, g, cache=(mode == "train"))

    def forward_with_noise(self, x, g, cache=True):
        co, ci, kh, kw = self.dist.shape
        if x.shape[1] != ci:
            raise DimensionError(f"conv input channels {x.shape[1]} != {ci}")
        w, y = relax_weights(self.dist, g, self.tau)
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        oh = conv_output_size(x.shape[2], kh, self.stride, self.pad)
        ow = conv_output_size(x.shape[3], kw, self.stride, self.pad)
        if cache:
            self.cache = (x.shape, cols, w, y)
        out = w.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def forward_mean(self, x):
        co, ci, kh, kw = self.dist.shape
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        mu, _ = self.dist.moments()
        oh = conv_output_size(x.shape[2], kh, self.stride, self.pad)
        ow = conv_output_size(x.shape[3], kw, self.stride, self.pad)
        out = mu.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def forward_fixed(self, x, w):
        co = self.dist.shape[0]
        kh, kw = self.dist.shape[2:]
        cols = im2col(x, (kh, kw), self.stride, self.pad)
        oh = conv_output_size(x.shape[2], kh, self.stride, self.pad)
        ow = conv_output_size(x.shape[3], kw, self.stride, self.pad)
        out = w.reshape(co, -1) @ cols
        return out.reshape(co, x.shape[0], oh, ow).transpose(1, 0, 2, 3)

    def backward(self, dz):
        if self.cache is None:
            raise ProtocolError("backward called without a cached training forward")
        x_shape, cols, w, y = self.cache
        co, ci, kh, kw = self.dist.shape
        gflat = dz.transpose(1, 0, 2, 3).reshape(co, -1)
        dw = (gflat @ cols.T).reshape(self.dist.shape)
        d_logp = dw[..., None] * y * (SUPPORT - w[..., None]) / self.tau
        ga, gb = _logit_grads(self.dist, d_logp)
        self.grad["a"] += ga
        self.grad["b"] += gb
        dcols = w.reshape(co, -1).T @ gflat
        self.cache = None
        return col2im(dcols, x_shape, (kh, kw), self.stride, self.pad)

    def zero_grads(self):
        for g in self.grad.values():
            g[...] = 0.0

    def params(self):
        return self.dist.params()

    def grads(self):
        return self.grad
