"""Analysis instruments: KS statistic against its quadratic oracle, the
Gaussian pre-activation check at high and near-zero entropy, entropy
traces, estimator comparison, and kernel export."""

import os

import numpy as np
import pytest

from lrnet.config import NetworkConfig, RunConfig, TrainConfig
from lrnet.data import Dataset
from lrnet.diagnostics import (
    CltReport,
    EntropyTrace,
    clt_fidelity,
    clt_for_network,
    compare_estimators,
    export_kernels,
    freedman_diaconis_edges,
    kernel_images,
    ks_distance,
    normal_cdf,
    upstream_activation,
    write_pgm,
)
from lrnet.dist import TernaryDist
from lrnet.errors import ConfigError, DimensionError
from lrnet.network import build_network
from lrnet.tensor import Rng, STREAM_DIAG, STREAM_INIT

from helpers import ks_distance_quadratic

TINY = NetworkConfig(
    input_shape=(1, 10, 10), conv_channels=(2, 3), conv_kernel=3,
    fc_units=4, num_classes=3, dropout_rate=0.5,
)


def tiny_net(mode="ternary", seed=3):
    return build_network(TINY, mode, Rng(seed, stream=STREAM_INIT))


class TestNormalCdf:
    def test_known_values(self):
        # standard normal table constants
        assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
        assert normal_cdf(1.96) == pytest.approx(0.9750021048517795, abs=1e-12)
        assert normal_cdf(-1.0) == pytest.approx(0.15865525393145707, abs=1e-12)

    def test_location_and_scale(self):
        x = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_allclose(
            normal_cdf(x, mean=2.0, std=3.0), normal_cdf((x - 2.0) / 3.0), atol=1e-15
        )

    def test_bad_std_rejected(self):
        with pytest.raises(DimensionError, match="std > 0"):
            normal_cdf(0.0, std=0.0)


class TestKsDistance:
    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=200)
        cdf = lambda x: normal_cdf(x, 0.1, 1.2)
        fast = ks_distance(samples, lambda s: cdf(s))
        slow = ks_distance_quadratic(samples, lambda s: float(cdf(s)))
        assert fast == pytest.approx(slow, abs=1e-12)

    def test_point_mass_against_continuous_cdf(self):
        # all samples equal: the empirical CDF jumps 0 -> 1 at that point
        d = ks_distance(np.zeros(50), lambda x: normal_cdf(x))
        assert d == pytest.approx(0.5, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DimensionError, match="at least one sample"):
            ks_distance(np.zeros(0), lambda x: x)


class TestCltFidelity:
    def fan_in_27_dist(self, rows=4, seed=1):
        rng = np.random.default_rng(seed)
        return TernaryDist(rng.normal(scale=0.7, size=(rows, 27)),
                           rng.normal(scale=0.7, size=(rows, 27)))

    def test_moderate_entropy_fan_in_27_is_nearly_gaussian(self):
        dist = self.fan_in_27_dist()
        h = np.abs(np.random.default_rng(2).normal(size=27)) + 0.1
        report = clt_fidelity(dist, h, unit=1, rng=Rng(0, stream=STREAM_DIAG),
                              draws=10000)
        assert not report.degenerate
        assert report.ks < 0.03

    def test_near_deterministic_breaks_the_gaussian_picture(self):
        rng = np.random.default_rng(3)
        signs = np.where(rng.random((2, 27)) < 0.5, -1.0, 1.0)
        dist = TernaryDist(np.full((2, 27), -8.0), 8.0 * signs)
        h = np.abs(rng.normal(size=27)) + 0.1
        report = clt_fidelity(dist, h, unit=0, rng=Rng(1, stream=STREAM_DIAG),
                              draws=10000)
        assert not report.degenerate
        assert report.ks > 0.1

    def test_zero_variance_is_flagged_degenerate(self):
        signs = np.where(np.random.default_rng(4).random((2, 9)) < 0.5, -1.0, 1.0)
        dist = TernaryDist(np.full((2, 9), -500.0), 500.0 * signs)
        h = np.random.default_rng(5).normal(size=9)
        report = clt_fidelity(dist, h, unit=0, rng=Rng(2, stream=STREAM_DIAG),
                              draws=2000)
        assert report.degenerate
        assert report.ks == 1.0
        # every explicit draw lands exactly on the propagated mean
        assert report.bin_edges[0] == pytest.approx(report.mean, abs=1e-12)

    def test_histogram_counts_sum_to_draws(self):
        dist = self.fan_in_27_dist()
        h = np.random.default_rng(6).normal(size=27)
        report = clt_fidelity(dist, h, unit=0, rng=Rng(3, stream=STREAM_DIAG),
                              draws=3000)
        assert report.counts.sum() == report.draws == 3000

    def test_fan_in_mismatch_rejected(self):
        dist = self.fan_in_27_dist()
        with pytest.raises(DimensionError, match="fan-in"):
            clt_fidelity(dist, np.zeros(5), unit=0, rng=Rng(0, stream=STREAM_DIAG))


class TestCltForNetwork:
    def test_conv_unit_uses_its_receptive_field(self):
        net = tiny_net()
        x = np.random.default_rng(7).normal(size=(1, 1, 10, 10))
        channel, row, col = 1, 2, 3
        got = clt_for_network(net, x, "conv0", (channel, row, col),
                              Rng(4, stream=STREAM_DIAG), draws=500)
        # first slot: upstream activation is the raw input, stride 1 no pad,
        # so the receptive field is a direct 3x3 slice
        patch = x[0, :, row : row + 3, col : col + 3].ravel()
        layer = dict(zip(net.names, net.layers))["conv0"]
        want = clt_fidelity(layer.dist, patch, channel,
                            Rng(4, stream=STREAM_DIAG), draws=500)
        assert got.mean == want.mean and got.std == want.std and got.ks == want.ks

    def test_dense_unit(self):
        net = tiny_net()
        x = np.random.default_rng(8).normal(size=(1, 1, 10, 10))
        report = clt_for_network(net, x, "fc", 2, Rng(5, stream=STREAM_DIAG),
                                 draws=500)
        assert isinstance(report, CltReport)
        assert report.draws == 500

    def test_layer_without_distribution_rejected(self):
        net = tiny_net()
        x = np.zeros((1, 1, 10, 10))
        with pytest.raises(ConfigError, match="no weight distribution"):
            clt_for_network(net, x, "out", 0, Rng(0, stream=STREAM_DIAG))

    def test_unknown_layer_rejected(self):
        net = tiny_net()
        with pytest.raises(ConfigError, match="no layer named"):
            upstream_activation(net, np.zeros((1, 1, 10, 10)), "nope")


class TestEntropyTrace:
    def test_columns_follow_slots(self):
        trace = EntropyTrace(tiny_net())
        assert trace.columns == ["epoch", "entropy_conv0", "entropy_conv1",
                                 "entropy_fc"]

    def test_hook_records_current_entropies(self, tmp_path):
        net = tiny_net()
        trace = EntropyTrace(net)
        trace.hook(0, net)
        for _, layer in net.slots():
            layer.dist.a[...] = -500.0  # collapse toward certainty
            layer.dist.b[...] = 500.0
        trace.hook(1, net)
        assert trace.rows[0][0] == 0 and trace.rows[1][0] == 1
        assert all(e > 0.5 for e in trace.rows[0][1:])
        assert all(e < 1e-6 for e in trace.rows[1][1:])
        path = tmp_path / "entropy.csv"
        trace.write(str(path))
        lines = path.read_bytes().decode("ascii").splitlines()
        assert lines[0] == "epoch,entropy_conv0,entropy_conv1,entropy_fc"
        assert len(lines) == 3


class TestCompareEstimators:
    def test_twin_runs_share_seed_and_report_losses(self, tmp_path):
        rng = np.random.default_rng(9)
        ds = Dataset(rng.normal(size=(64, 1, 10, 10)),
                     rng.integers(0, 3, size=64).astype(np.int64))
        cfg = RunConfig(
            network=TINY,
            train=TrainConfig(mode="ternary", seed=0, epochs=2, batch_size=32,
                              lr=0.01, lr_drops=(), gumbel_tau=0.1),
        )
        losses = compare_estimators(cfg, ds, out_dir=str(tmp_path))
        assert set(losses) == {"gaussian", "relaxed"}
        assert len(losses["gaussian"]) == len(losses["relaxed"]) == 2
        assert all(np.isfinite(v) for vs in losses.values() for v in vs)
        lines = (tmp_path / "gumbel_compare.csv").read_text().splitlines()
        assert lines[0] == "epoch,gaussian_mean_loss,relaxed_mean_loss"
        assert len(lines) == 3


class TestKernelExport:
    def test_ternary_pixels_follow_most_probable_value(self):
        net = tiny_net()
        layer = net.slots()[0][1]
        layer.dist.a[...] = 500.0  # p(w=0) ~ 1 everywhere
        layer.dist.a[0, 0, 0, 0] = -500.0
        layer.dist.b[0, 0, 0, 0] = 500.0  # w=+1 certain
        layer.dist.a[0, 0, 0, 1] = -500.0
        layer.dist.b[0, 0, 0, 1] = -500.0  # w=-1 certain
        images = kernel_images(net)
        assert len(images) == 2  # TINY first conv has 2 kernels
        assert images[0].dtype == np.uint8
        assert images[0][0, 0] == 255
        assert images[0][0, 1] == 0
        assert images[0][1, 1] == 128
        assert np.all(images[1] == 128)

    def test_full_precision_kernels_min_max_scaled(self):
        net = tiny_net("fp")
        layer = net.slots()[0][1]
        layer.weight[0] = 0.0
        layer.weight[0, 0, 0, 0] = 2.0
        layer.weight[0, 0, 2, 2] = -2.0
        images = kernel_images(net)
        assert images[0][0, 0] == 255
        assert images[0][2, 2] == 0
        assert images[0][1, 1] == 128
        # a constant kernel has no spread to scale; rendered black
        layer.weight[1] = 5.0
        assert np.all(kernel_images(net)[1] == 0)

    def test_max_kernels_cap(self):
        assert len(kernel_images(tiny_net(), max_kernels=1)) == 1

    def test_pgm_bytes(self, tmp_path):
        image = np.arange(6, dtype=np.uint8).reshape(2, 3)
        path = tmp_path / "k.pgm"
        write_pgm(str(path), image)
        assert path.read_bytes() == b"P5\n3 2\n255\n" + image.tobytes()

    def test_pgm_rejects_non_image_input(self, tmp_path):
        with pytest.raises(DimensionError, match="2D uint8"):
            write_pgm(str(tmp_path / "bad.pgm"), np.zeros((2, 2)))
        with pytest.raises(DimensionError, match="2D uint8"):
            write_pgm(str(tmp_path / "bad.pgm"), np.zeros((2, 2, 3), dtype=np.uint8))

    def test_export_writes_numbered_files(self, tmp_path):
        paths = export_kernels(tiny_net(), str(tmp_path))
        assert [os.path.basename(p) for p in paths] == ["kernel_00.pgm", "kernel_01.pgm"]
        assert all(os.path.exists(p) for p in paths)


class TestHistogramEdges:
    def test_edges_cover_samples(self):
        samples = np.random.default_rng(10).normal(size=500)
        edges = freedman_diaconis_edges(samples)
        assert edges[0] == samples.min() and edges[-1] == samples.max()
        assert len(edges) >= 2

    def test_constant_samples_degenerate_edges(self):
        edges = freedman_diaconis_edges(np.full(10, 3.0))
        assert edges[0] == 3.0 and len(edges) == 2
