"""Per-weight discrete distributions over {-1, 0, +1} and {-1, +1}.

A ternary weight is parameterized by two logit tensors shaped like the
weight tensor: `a` with p(w=0) = sigmoid(a), and `b` with
p(w=+1 | w != 0) = sigmoid(b). The binary case pins p(w=0) to zero and
keeps only `b`, so p(w=+1) = sigmoid(b). Everything downstream (moments,
sampling, entropy, regularizers, initialization from pretrained weights)
lives here.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateLayerError


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    """Inverse sigmoid, log(p / (1 - p))."""
    p = np.asarray(p)
    return np.log(p) - np.log1p(-p)


class TernaryDist:
    """Multinomial distribution over {-1, 0, +1} for each weight."""

    support = (-1.0, 0.0, 1.0)

    def __init__(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ConfigError(f"logit shapes differ: {a.shape} vs {b.shape}")
        self.a = a
        self.b = b

    @property
    def shape(self):
        return self.a.shape

    def params(self):
        return {"a": self.a, "b": self.b}

    def probs(self):
        """Class probabilities (p_minus, p_zero, p_plus); sums to 1 exactly."""
        p0 = sigmoid(self.a)
        q = sigmoid(self.b)
        nz = 1.0 - p0
        return nz * (1.0 - q), p0, nz * q

    def moments(self):
        """Per-weight mean and variance.

        mu = (1 - p0) * (2 q - 1) and, since w^2 is 1 unless w = 0,
        var = (1 - p0) - mu^2. The variance is non-negative by construction.
        """
        p0 = sigmoid(self.a)
        q = sigmoid(self.b)
        mu = (1.0 - p0) * (2.0 * q - 1.0)
        var = (1.0 - p0) - mu * mu
        return mu, np.maximum(var, 0.0)

    def moment_grads(self):
        """Derivatives of (mu, var) w.r.t. the logits a and b."""
        p0 = sigmoid(self.a)
        q = sigmoid(self.b)
        sa = p0 * (1.0 - p0)  # sigmoid'(a)
        sb = q * (1.0 - q)
        mu = (1.0 - p0) * (2.0 * q - 1.0)
        dmu_da = -sa * (2.0 * q - 1.0)
        dmu_db = 2.0 * (1.0 - p0) * sb
        dvar_da = -sa - 2.0 * mu * dmu_da
        dvar_db = -2.0 * mu * dmu_db
        return {"a": (dmu_da, dvar_da), "b": (dmu_db, dvar_db)}

    def sample(self, rng):
        """Draw one discrete weight tensor; values are exactly in {-1, 0, +1}."""
        p_minus, p0, _ = self.probs()
        u = rng.uniform(self.shape)
        w = np.ones(self.shape)
        w[u < p_minus + p0] = 0.0
        w[u < p_minus] = -1.0
        return w

    def entropy_bits(self):
        """Per-weight Shannon entropy of the 3-point distribution, in bits."""
        return _entropy_bits(self.probs())

    def copy(self):
        return TernaryDist(self.a.copy(), self.b.copy())


class BinaryDist:
    """Two-point distribution over {-1, +1}: the ternary case with p(w=0)=0."""

    support = (-1.0, 1.0)

    def __init__(self, b):
        self.b = np.asarray(b, dtype=np.float64)

    @property
    def shape(self):
        return self.b.shape

    def params(self):
        return {"b": self.b}

    def probs(self):
        q = sigmoid(self.b)
        return 1.0 - q, q

    def moments(self):
        q = sigmoid(self.b)
        mu = 2.0 * q - 1.0
        return mu, np.maximum(1.0 - mu * mu, 0.0)

    def moment_grads(self):
        q = sigmoid(self.b)
        sb = q * (1.0 - q)
        mu = 2.0 * q - 1.0
        dmu_db = 2.0 * sb
        dvar_db = -2.0 * mu * dmu_db
        return {"b": (dmu_db, dvar_db)}

    def sample(self, rng):
        _, p_plus = self.probs()
        u = rng.uniform(self.shape)
        return np.where(u < p_plus, 1.0, -1.0)

    def entropy_bits(self):
        return _entropy_bits(self.probs())

    def copy(self):
        return BinaryDist(self.b.copy())


def _entropy_bits(probs):
    h = np.zeros_like(probs[0])
    for p in probs:
        nz = p > 0.0
        h[nz] -= p[nz] * np.log2(p[nz])
    return h


@dataclass
class InitConfig:
    """Probability clamp range used when seeding distributions."""

    p_min: float = 0.05
    p_max: float = 0.95
    mode: str = "ternary"

    def __post_init__(self):
        if not (0.0 < self.p_min < self.p_max < 1.0):
            raise ConfigError(
                f"init range requires 0 < p_min < p_max < 1, got "
                f"({self.p_min}, {self.p_max})"
            )
        if self.mode not in ("binary", "ternary"):
            raise ConfigError(f"unknown mode {self.mode!r}")


def normalize_pretrained(w):
    """Scale a pretrained weight tensor by its population standard deviation."""
    w = np.asarray(w, dtype=np.float64)
    if w.size < 2:
        raise DegenerateLayerError("cannot normalize a layer with < 2 weights")
    std = w.std()
    if std == 0.0:
        raise DegenerateLayerError("layer weights have zero standard deviation")
    return w / std


def init_from_pretrained(w_tilde, cfg):
    """Seed a distribution so its mean matches the (normalized) weights.

    Ternary: p(w=0) decays linearly from p_max at w=0 to p_min at |w|=1,
    and p(w=+1 | w!=0) is chosen so E[w] equals w_tilde wherever no clipping
    is active. Binary: p(w=+1) = 0.5 * (1 + w_tilde). Both probabilities are
    clipped into [p_min, p_max] and converted back to logits.
    """
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    if cfg.mode == "binary":
        p_plus = np.clip(0.5 * (1.0 + w_tilde), cfg.p_min, cfg.p_max)
        return BinaryDist(logit(p_plus))
    p0 = np.clip(
        cfg.p_max - (cfg.p_max - cfg.p_min) * np.abs(w_tilde), cfg.p_min, cfg.p_max
    )
    q = np.clip(0.5 * (1.0 + w_tilde / (1.0 - p0)), cfg.p_min, cfg.p_max)
    return TernaryDist(logit(p0), logit(q))


def probability_decay_penalty(dist):
    """L2 on the logits: value = sum(a^2 + b^2), grads (2a, 2b).

    The caller scales both by the probability-decay hyperparameter. Keeping
    the logits near zero keeps the distributions away from determinism.
    """
    value = 0.0
    grads = {}
    for name, p in dist.params().items():
        value += float(np.sum(p * p))
        grads[name] = 2.0 * p
    return value, grads


def beta_penalty(dist, alpha=2.0, beta=2.0):
    """Beta-density penalty sum(p^(alpha-1) (1-p)^(beta-1)) with p = sigmoid(b).

    Added to the loss, so minimizing pushes binary probabilities away from
    0.5 and toward the corners. Requires alpha, beta >= 1.
    """
    if alpha < 1.0 or beta < 1.0:
        raise ConfigError(f"beta penalty requires alpha, beta >= 1, got ({alpha}, {beta})")
    if not isinstance(dist, BinaryDist):
        raise ConfigError("beta penalty applies to binary distributions")
    p = sigmoid(dist.b)
    one_m = 1.0 - p
    value = float(np.sum(p ** (alpha - 1.0) * one_m ** (beta - 1.0)))
    # dR/dp, with zero-coefficient terms dropped to avoid 0 * p^(-1) at the edges
    dr_dp = np.zeros_like(p)
    if alpha > 1.0:
        dr_dp += (alpha - 1.0) * p ** (alpha - 2.0) * one_m ** (beta - 1.0)
    if beta > 1.0:
        dr_dp -= (beta - 1.0) * p ** (alpha - 1.0) * one_m ** (beta - 2.0)
    grad_b = dr_dp * p * one_m
    return value, {"b": grad_b}
