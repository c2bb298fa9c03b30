"""Sampled-weight evaluation: support checks, best-of-k selection, and
the noise-free inference contract."""

import numpy as np
import pytest

from lrnet.config import NetworkConfig
from lrnet.data import Dataset
from lrnet.errors import ConfigError, DimensionError
from lrnet.evaluate import (
    accuracy,
    evaluate_sampled,
    predictions,
    sample_network_weights,
)
from lrnet.network import build_network
from lrnet.tensor import Rng, STREAM_INIT, STREAM_SAMPLE

TINY = NetworkConfig(
    input_shape=(1, 10, 10), conv_channels=(2, 3), conv_kernel=3,
    fc_units=4, num_classes=3, dropout_rate=0.5,
)


def tiny_net(mode="ternary", seed=3):
    return build_network(TINY, mode, Rng(seed, stream=STREAM_INIT))


def tiny_data(n=40, seed=11):
    rng = np.random.default_rng(seed)
    images = rng.normal(size=(n, 1, 10, 10))
    labels = rng.integers(0, 3, size=n).astype(np.int64)
    return Dataset(images, labels)


def saturate(net, sign_seed=9):
    """Push every slot to a deterministic sign pattern (zero entropy)."""
    rng = np.random.default_rng(sign_seed)
    for _, layer in net.slots():
        signs = np.where(rng.random(layer.dist.shape) < 0.5, -1.0, 1.0)
        layer.dist.a[...] = -500.0
        layer.dist.b[...] = 500.0 * signs
    return net


class TestSampling:
    def test_samples_stay_in_support(self):
        net = tiny_net()
        weights = sample_network_weights(net, Rng(0, stream=STREAM_SAMPLE))
        assert len(weights) == len(net.slots())
        for w in weights:
            assert np.isin(w, (-1.0, 0.0, 1.0)).all()

    def test_full_precision_network_rejected(self):
        with pytest.raises(ConfigError, match="full-precision"):
            sample_network_weights(tiny_net("fp"), Rng(0, stream=STREAM_SAMPLE))

    def test_distinct_draws_differ(self):
        net = tiny_net()
        rng = Rng(0, stream=STREAM_SAMPLE)
        first = sample_network_weights(net, rng)
        second = sample_network_weights(net, rng)
        assert any(not np.array_equal(a, b) for a, b in zip(first, second))


class TestInference:
    def test_fixed_weights_are_noise_free(self):
        net, ds = tiny_net(), tiny_data()
        weights = sample_network_weights(net, Rng(2, stream=STREAM_SAMPLE))
        p1 = predictions(net, ds.images, "fixed", weights)
        p2 = predictions(net, ds.images, "fixed", weights)
        np.testing.assert_array_equal(p1, p2)

    def test_batching_does_not_change_predictions(self):
        net, ds = tiny_net(), tiny_data()
        weights = sample_network_weights(net, Rng(2, stream=STREAM_SAMPLE))
        whole = predictions(net, ds.images, "fixed", weights, batch_size=1000)
        pieces = predictions(net, ds.images, "fixed", weights, batch_size=7)
        np.testing.assert_array_equal(whole, pieces)

    def test_accuracy_counts_matches(self):
        net, ds = tiny_net(), tiny_data()
        pred = predictions(net, ds.images, "mean")
        assert accuracy(net, ds, "mean") == np.mean(pred == ds.labels)


class TestEvaluateSampled:
    def test_k_rows_and_best_is_max(self):
        net, ds = tiny_net(), tiny_data()
        res = evaluate_sampled(net, ds, Rng(0, stream=STREAM_SAMPLE), k=5)
        assert len(res.accuracies) == 5
        assert res.best_accuracy == max(res.accuracies)
        assert res.best_index == int(np.argmax(res.accuracies))

    def test_k_of_one(self):
        net, ds = tiny_net(), tiny_data()
        res = evaluate_sampled(net, ds, Rng(0, stream=STREAM_SAMPLE), k=1)
        assert res.best_accuracy == res.accuracies[0]
        assert res.best_index == 0

    def test_k_below_one_rejected(self):
        with pytest.raises(ConfigError, match="k must be"):
            evaluate_sampled(tiny_net(), tiny_data(), Rng(0, stream=STREAM_SAMPLE), k=0)

    def test_empty_dataset_rejected(self):
        empty = Dataset(np.zeros((0, 1, 10, 10)), np.zeros(0, dtype=np.int64))
        with pytest.raises(DimensionError, match="at least one example"):
            evaluate_sampled(tiny_net(), empty, Rng(0, stream=STREAM_SAMPLE))

    def test_zero_entropy_gives_identical_accuracies(self):
        net, ds = saturate(tiny_net()), tiny_data()
        res = evaluate_sampled(net, ds, Rng(4, stream=STREAM_SAMPLE), k=6)
        assert len(set(res.accuracies)) == 1
        # deterministic sampling also ties; earliest draw must win
        assert res.best_index == 0

    def test_zero_entropy_matches_mean_network(self):
        # saturated logits make the mean weights equal the certain sample,
        # so sampled and mean-weight evaluation agree for any seed
        net, ds = saturate(tiny_net()), tiny_data()
        res = evaluate_sampled(net, ds, Rng(7, stream=STREAM_SAMPLE), k=2)
        assert res.best_accuracy == accuracy(net, ds, "mean")

    def test_best_weights_reproduce_best_accuracy(self):
        net, ds = tiny_net(), tiny_data()
        res = evaluate_sampled(net, ds, Rng(1, stream=STREAM_SAMPLE), k=4)
        again = accuracy(net, ds, "fixed", res.best_weights)
        assert again == res.best_accuracy

    def test_test_set_scored_in_parallel(self):
        net = tiny_net()
        select_ds, test_ds = tiny_data(seed=11), tiny_data(seed=12)
        res = evaluate_sampled(net, select_ds, Rng(0, stream=STREAM_SAMPLE),
                               k=3, test_ds=test_ds)
        assert len(res.test_accuracies) == 3
        assert res.best_test_accuracy == res.test_accuracies[res.best_index]
        # winner is chosen on the selection set, never on the test column
        assert res.best_index == int(np.argmax(res.accuracies))


class TestReportRows:
    def test_rows_without_test_set(self):
        net, ds = tiny_net(), tiny_data()
        res = evaluate_sampled(net, ds, Rng(0, stream=STREAM_SAMPLE), k=3)
        assert res.columns() == ["sample", "select_accuracy", "chosen"]
        rows = res.rows()
        assert [r[0] for r in rows] == [0, 1, 2]
        assert [r[-1] for r in rows].count(1) == 1
        assert rows[res.best_index][-1] == 1

    def test_rows_with_test_set(self):
        net = tiny_net()
        res = evaluate_sampled(net, tiny_data(11), Rng(0, stream=STREAM_SAMPLE),
                               k=2, test_ds=tiny_data(12))
        assert res.columns() == ["sample", "select_accuracy", "test_accuracy", "chosen"]
        assert all(len(r) == 4 for r in res.rows())
