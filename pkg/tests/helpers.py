"""Independent oracles used to freeze expected values in the tests.

Everything here is deliberately naive (loops, exhaustive enumeration,
central differences) and stays independent of the library code paths it
checks.
"""

import numpy as np


def matmul_loops(a, b):
    """Triple-loop matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv2d_loops(x, w, stride=1, pad=0):
    """Direct sliding-window convolution (cross-correlation), zero padding."""
    b, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    assert c == ci
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, co, oh, ow))
    for n in range(b):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = x[n, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o])
    return out


def discrete_moments(probs, support):
    """Exhaustive mean/variance over a finite support."""
    mu = sum(p * v for p, v in zip(probs, support))
    second = sum(p * v * v for p, v in zip(probs, support))
    return mu, second - mu * mu


def central_diff(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(analytic, numeric):
    """Max relative error with an absolute floor for near-zero entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def ks_distance_quadratic(samples, cdf):
    """Quadratic-time one-sample KS statistic against an analytic CDF."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    best = 0.0
    for x in samples:
        below = sum(1 for s in samples if s <= x)
        strictly_below = sum(1 for s in samples if s < x)
        fx = cdf(x)
        best = max(best, abs(below / n - fx), abs(fx - strictly_below / n))
    return best
