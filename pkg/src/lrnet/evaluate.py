"""Evaluation by sampling discrete weights.

A trained stochastic network is scored by drawing k full sets of discrete
weights from the learned distributions, measuring each sample's accuracy
on a selection set, and keeping the best sample. When a separate test set
is supplied, every sample is also scored there so the spread across draws
is visible, and the reported test accuracy belongs to the sample that won
on the selection set (never picked on the test set itself).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

EVAL_BATCH = 1000


def sample_network_weights(net, rng):
    """One discrete weight tensor per slot; values verified to be in
    the support {-1, 0, +1}."""
    if net.mode == "fp":
        raise ConfigError("a full-precision network has no weight distributions")
    weights = []
    for _, layer in net.slots():
        w = layer.dist.sample(rng).astype(np.float64)
        bad = ~np.isin(w, (-1.0, 0.0, 1.0))
        if bad.any():
            raise AssertionError(f"sampled weight outside support: {w[bad][:5]}")
        weights.append(w)
    return weights


def predictions(net, images, weight_mode="mean", fixed_weights=None,
                batch_size=EVAL_BATCH):
    """Class predictions with dropout off and running batch-norm stats."""
    out = []
    for start in range(0, len(images), batch_size):
        logits = net.forward(
            images[start : start + batch_size],
            train=False,
            weight_mode=weight_mode,
            fixed_weights=fixed_weights,
        )
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(net, dataset, weight_mode="mean", fixed_weights=None,
             batch_size=EVAL_BATCH):
    pred = predictions(net, dataset.images, weight_mode, fixed_weights, batch_size)
    return float(np.mean(pred == dataset.labels))


@dataclass
class SampledEval:
    accuracies: list  # selection-set accuracy per draw
    test_accuracies: list  # parallel test-set accuracy (empty without a test set)
    best_index: int
    best_weights: list = field(repr=False)

    @property
    def best_accuracy(self):
        return self.accuracies[self.best_index]

    @property
    def best_test_accuracy(self):
        return self.test_accuracies[self.best_index]

    def rows(self):
        """CSV rows: one per sample, the chosen sample flagged."""
        out = []
        for i, acc in enumerate(self.accuracies):
            row = [i, acc]
            if self.test_accuracies:
                row.append(self.test_accuracies[i])
            row.append(1 if i == self.best_index else 0)
            out.append(row)
        return out

    def columns(self):
        cols = ["sample", "select_accuracy"]
        if self.test_accuracies:
            cols.append("test_accuracy")
        cols.append("chosen")
        return cols


def evaluate_sampled(net, select_ds, rng, k=10, test_ds=None,
                     batch_size=EVAL_BATCH):
    """Draw k weight samples and score them; ties keep the earliest draw."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(select_ds.images) == 0:
        raise DimensionError("evaluation needs at least one example")
    accs, test_accs, kept = [], [], []
    for _ in range(k):
        weights = sample_network_weights(net, rng)
        accs.append(accuracy(net, select_ds, "fixed", weights, batch_size))
        if test_ds is not None:
            test_accs.append(accuracy(net, test_ds, "fixed", weights, batch_size))
        kept.append(weights)
    best = int(np.argmax(accs))
    return SampledEval(
        accuracies=accs,
        test_accuracies=test_accs,
        best_index=best,
        best_weights=kept[best],
    )
