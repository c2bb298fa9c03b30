"""Dense tensor primitives and the deterministic counter-based RNG.

Tensors are plain numpy arrays (row-major, float64 by default; float32 is
selectable per run through the configs). There is no autodiff graph: every
layer implements its own analytic backward on top of the primitives here.
"""

import numpy as np

from .errors import DimensionError

DEFAULT_DTYPE = np.float64

# Fixed stream ids so every consumer of randomness is decoupled from the
# others: adding draws to one stream never shifts another stream's values.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NOISE = 2
STREAM_DROPOUT = 3
STREAM_SAMPLE = 4
STREAM_AUGMENT = 5
STREAM_GUMBEL = 6
STREAM_DIAG = 7


class Rng:
    """Counter-based random stream keyed by (seed, stream).

    Each draw re-keys a Philox generator with the current draw counter, so
    identical (seed, stream, counter) triples reproduce the same values on
    any machine and parallel workers can own disjoint streams. The state is
    three integers, which makes checkpointing trivial.
    """

    def __init__(self, seed, stream=0, counter=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF

    def _next_generator(self):
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        # counter word 1 leaves 2^64 blocks of room per draw
        ctr = np.array([0, self.counter, 0, 0], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def normal(self, shape, dtype=DEFAULT_DTYPE):
        """Standard normal tensor; advances the stream counter by one."""
        return self._next_generator().standard_normal(shape, dtype=dtype)

    def uniform(self, shape, dtype=DEFAULT_DTYPE):
        """Uniform [0, 1) tensor; advances the stream counter by one."""
        return self._next_generator().random(shape, dtype=dtype)

    def permutation(self, n):
        """Deterministic permutation of range(n); advances the counter."""
        return self._next_generator().permutation(n)

    def derive(self, stream):
        """Fresh stream with the same seed and a zero counter."""
        return Rng(self.seed, stream=stream, counter=0)

    def state(self):
        return {"seed": self.seed, "stream": self.stream, "counter": self.counter}

    @classmethod
    def from_state(cls, state):
        return cls(state["seed"], state["stream"], state["counter"])


def sample_standard_normal(rng, shape, dtype=DEFAULT_DTYPE):
    """Draw an i.i.d. standard normal tensor from the given stream."""
    return rng.normal(shape, dtype=dtype)


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.shape} x {b.shape}"
        )
    return a @ b


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x, kernel, stride=1, pad=0):
    """Unroll conv patches into a matrix.

    x is [B, C, H, W]; the result is [C*kh*kw, B*OH*OW] with columns ordered
    (b, oh, ow) row-major, so that a convolution whose kernels are flattened
    to rows [c_out, C*kh*kw] is exactly `weights_as_rows @ patches`.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"im2col: expected [B,C,H,W] input, got shape {x.shape}")
    kh, kw = kernel
    b, c, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(
            f"im2col: kernel {kernel} larger than padded input {(hp, wp)}"
        )
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = np.empty((c, kh, kw, b, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, b * oh * ow)


def col2im(cols, x_shape, kernel, stride=1, pad=0):
    """Adjoint of im2col: scatter-add patch columns back onto the image."""
    b, c, h, w = x_shape
    kh, kw = kernel
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = cols.reshape(c, kh, kw, b, oh, ow)
    xp = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                cols[:, i, j].transpose(1, 0, 2, 3)
            )
    if pad:
        xp = xp[:, :, pad:-pad, pad:-pad]
    return xp
