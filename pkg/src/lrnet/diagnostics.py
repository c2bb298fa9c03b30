"""Verification instruments for the Gaussian pre-activation approximation.

The central claim being checked: with weights drawn independently from the
learned discrete distributions, a unit's pre-activation z = sum_j w_j h_j
is approximately Normal(m, v^2) with m and v^2 the propagated moments.
`clt_fidelity` samples true discrete pre-activations and measures the
Kolmogorov-Smirnov distance to that normal, which should be small at
high-entropy settings and large when the distributions are nearly
deterministic (where the Gaussian picture breaks down).
"""

import math
from dataclasses import dataclass

import numpy as np

from .dist import BinaryDist, TernaryDist
from .errors import ConfigError, DimensionError
from .layers import LrConv, LrDense
from .network import STOCHASTIC_TYPES
from .tensor import Rng, im2col

_erf = np.vectorize(math.erf, otypes=[np.float64])


def normal_cdf(x, mean=0.0, std=1.0):
    if std <= 0.0:
        raise DimensionError(f"normal_cdf needs std > 0, got {std}")
    return 0.5 * (1.0 + _erf((np.asarray(x, dtype=np.float64) - mean) / (std * np.sqrt(2.0))))


def ks_distance(samples, cdf):
    """One-sample Kolmogorov-Smirnov statistic against an analytic CDF."""
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    n = samples.size
    if n == 0:
        raise DimensionError("ks_distance needs at least one sample")
    f = np.asarray(cdf(samples), dtype=np.float64)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(np.max(np.maximum(upper, lower)))


def _row_dist(dist, unit, draws):
    """Distribution of one output unit's weight row, tiled for batch draws."""
    flat_shape = (dist.shape[0], -1)
    if isinstance(dist, TernaryDist):
        a = dist.a.reshape(flat_shape)[unit]
        b = dist.b.reshape(flat_shape)[unit]
        return TernaryDist(np.tile(a, (draws, 1)), np.tile(b, (draws, 1)))
    if isinstance(dist, BinaryDist):
        b = dist.b.reshape(flat_shape)[unit]
        return BinaryDist(np.tile(b, (draws, 1)))
    raise ConfigError(f"unsupported distribution {type(dist).__name__}")


@dataclass
class CltReport:
    mean: float
    std: float
    ks: float
    draws: int
    degenerate: bool
    bin_edges: np.ndarray
    counts: np.ndarray


def freedman_diaconis_edges(samples):
    """Histogram bin edges with the robust spread-based width rule."""
    samples = np.asarray(samples, dtype=np.float64)
    q75, q25 = np.percentile(samples, [75.0, 25.0])
    width = 2.0 * (q75 - q25) / (samples.size ** (1.0 / 3.0))
    lo, hi = float(samples.min()), float(samples.max())
    if width <= 0.0 or hi <= lo:
        return np.array([lo, hi if hi > lo else lo + 1.0])
    bins = max(1, int(np.ceil((hi - lo) / width)))
    return np.linspace(lo, hi, bins + 1)


def clt_fidelity(dist, h, unit, rng, draws=10000):
    """Compare true discrete pre-activations of one unit to their normal fit.

    h is the unit's input vector (for convolutions: one im2col patch), so
    the fan-in is len(h). Draws weight rows from the discrete distribution,
    forms z = w . h, and reports the KS distance to Normal(m, v).
    """
    h = np.asarray(h, dtype=np.float64).ravel()
    row = _row_dist(dist, unit, draws)
    if row.shape[1] != h.size:
        raise DimensionError(f"input size {h.size} does not match fan-in {row.shape[1]}")
    mu, var = row.moments()
    m = float(mu[0] @ h)
    v2 = float(var[0] @ (h * h))
    w = row.sample(rng).astype(np.float64)
    z = w @ h
    degenerate = v2 < 1e-20
    if degenerate:
        ks = 1.0
    else:
        ks = ks_distance(z, lambda x: normal_cdf(x, m, np.sqrt(v2)))
    edges = freedman_diaconis_edges(z)
    counts, edges = np.histogram(z, bins=edges)
    return CltReport(
        mean=m, std=float(np.sqrt(v2)), ks=ks, draws=draws,
        degenerate=degenerate, bin_edges=edges, counts=counts,
    )


def upstream_activation(net, x, layer_name):
    """Mean-propagated input reaching the named layer, dropout off."""
    h = x
    for name, layer in zip(net.names, net.layers):
        if name == layer_name:
            return h
        if isinstance(layer, STOCHASTIC_TYPES):
            h = layer.forward_mean(h)
        elif hasattr(layer, "rate"):  # dropout is inert at inference
            h = layer.forward(h, train=False)
        else:
            h = layer.forward(h, train=False)
    raise ConfigError(f"no layer named {layer_name!r}")


def clt_for_network(net, x, layer_name, unit, rng, draws=10000):
    """CLT check for one unit of a live network layer on one example.

    For a convolutional slot, unit is (channel, row, col); the patch that
    unit sees becomes the input vector. For the dense slot, unit is the
    output index.
    """
    h = upstream_activation(net, x[:1], layer_name)
    layer = dict(zip(net.names, net.layers))[layer_name]
    if isinstance(layer, LrConv):
        channel, row, col = unit
        kh, kw = layer.dist.shape[2:]
        cols = im2col(h, (kh, kw), layer.stride, layer.pad)
        ow = (h.shape[3] + 2 * layer.pad - kw) // layer.stride + 1
        patch = cols[:, row * ow + col]
        return clt_fidelity(layer.dist, patch, channel, rng, draws)
    if isinstance(layer, LrDense):
        return clt_fidelity(layer.dist, h[0], unit, rng, draws)
    raise ConfigError(f"layer {layer_name!r} has no weight distribution")


def compare_estimators(cfg, train_ds, out_dir=None):
    """Train twin networks with the Gaussian and relaxed estimators.

    Both runs share the seed, so they start from identical distributions
    and see identical batch orders; only the gradient estimator differs.
    Returns per-epoch mean training losses keyed "gaussian" / "relaxed"
    and optionally writes them as gumbel_compare.csv.
    """
    import dataclasses
    import os

    from .network import build_network
    from .tensor import STREAM_INIT
    from .training import fit, make_streams, write_csv

    losses = {}
    for label, mode in (("gaussian", "ternary"), ("relaxed", "gumbel")):
        train_cfg = dataclasses.replace(cfg.train, mode=mode)
        net = build_network(
            cfg.network, mode, Rng(train_cfg.seed, stream=STREAM_INIT),
            tau=train_cfg.gumbel_tau, var_floor=train_cfg.var_floor,
            p_min=train_cfg.init_p_min, p_max=train_cfg.init_p_max,
        )
        history = fit(net, train_ds, train_cfg, make_streams(train_cfg.seed))
        losses[label] = history.epoch_mean_loss
    if out_dir:
        rows = [
            [epoch, g, r]
            for epoch, (g, r) in enumerate(zip(losses["gaussian"], losses["relaxed"]))
        ]
        write_csv(
            os.path.join(out_dir, "gumbel_compare.csv"),
            ["epoch", "gaussian_mean_loss", "relaxed_mean_loss"],
            rows,
        )
    return losses


class EntropyTrace:
    """Per-epoch mean entropy of every discrete slot, written as CSV."""

    def __init__(self, net):
        self.columns = ["epoch"] + [f"entropy_{name}" for name, _ in net.slots()]
        self.rows = []

    def hook(self, epoch, net):
        self.rows.append([epoch] + net.entropies())

    def write(self, path):
        from .training import write_csv

        write_csv(path, self.columns, self.rows)


def kernel_images(net, max_kernels=25):
    """First conv slot as grayscale arrays in [0, 255] (uint8).

    Discrete slots show the most probable weight value (-1 -> 0, 0 -> 128,
    +1 -> 255); full-precision kernels are min-max scaled. Multi-channel
    kernels show their first input channel.
    """
    name, layer = net.slots()[0]
    if net.mode == "fp":
        w = layer.weight
    else:
        dist = layer.dist
        if isinstance(dist, TernaryDist):
            p = np.stack(dist.probs())  # [3, ...] for support (-1, 0, +1)
            w = np.argmax(p, axis=0).astype(np.float64) - 1.0
        else:
            pp = dist.probs()[1]
            w = np.where(pp >= 0.5, 1.0, -1.0)
    images = []
    for i in range(min(max_kernels, w.shape[0])):
        k = w[i, 0]
        if net.mode == "fp":
            lo, hi = k.min(), k.max()
            scaled = np.zeros_like(k) if hi <= lo else (k - lo) / (hi - lo) * 255.0
        else:
            scaled = (k + 1.0) * 127.5
        images.append(np.round(scaled).astype(np.uint8))
    return images


def write_pgm(path, image):
    """Binary 8-bit PGM (P5)."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DimensionError("pgm export needs a 2D uint8 image")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def export_kernels(net, out_dir, max_kernels=25):
    import os

    paths = []
    for i, image in enumerate(kernel_images(net, max_kernels)):
        path = os.path.join(out_dir, f"kernel_{i:02d}.pgm")
        write_pgm(path, image)
        paths.append(path)
    return paths
