import numpy as np
import pytest

from hybrid_snn.conversion import balance_thresholds, convert, copy_weights
from hybrid_snn.encoding import poisson_encode
from hybrid_snn.errors import ConfigError, DegenerateThresholdError
from hybrid_snn.network import (ArchitectureSpec, AvgPool, Conv, Dropout, Linear, NetworkParams, ResidualBlock,
                                init_neuron_state, init_params, snn_forward)


def two_layer(W):
    arch = ArchitectureSpec((Linear(W.shape[0]), Linear(2)), 2, (W.shape[1],))
    return arch, NetworkParams({"fc0": W.astype(np.float32), "fc_out": np.ones((2, W.shape[0]), np.float32)})


def conv_arch():
    return ArchitectureSpec((Conv(3), AvgPool(2), Conv(4), Linear(8), Linear(3)), 3, (1, 6, 6))


class TestCopyWeights:
    def test_deep_copy(self, rng):
        arch = conv_arch()
        ann = init_params(arch, rng)
        snn = NetworkParams()
        copy_weights(ann, snn, arch)
        before = {k: v.copy() for k, v in snn.weights.items()}
        for w in ann.weights.values():
            w += 1.0
        for k in before:
            np.testing.assert_array_equal(snn.weights[k], before[k])

    def test_infinite_threshold_is_silent(self, rng):
        arch = conv_arch()
        ann = init_params(arch, rng)
        snn = NetworkParams()
        copy_weights(ann, snn, arch)
        snn.thresholds = {p: np.inf for p in arch.populations}
        train = (rng.random((5, 2, 1, 6, 6)) < 0.7).astype(np.float32)
        u, rec = snn_forward(snn, arch, train, init_neuron_state(2, arch))
        assert not u.any()
        assert all(not rec.spikes(p).any() for p in arch.populations)
        for k in ann.weights:
            assert snn.weights[k].tobytes() == ann.weights[k].tobytes()

    def test_mismatch(self, rng):
        arch = conv_arch()
        snn = NetworkParams({"other": np.zeros(2, np.float32)})
        with pytest.raises(ConfigError):
            copy_weights(init_params(arch, rng), snn, arch)


class TestBalance:
    def test_single_layer_sum(self):
        arch, p = two_layer(np.array([[1.0, 1.0]]))
        v = balance_thresholds(p, arch, np.ones((3, 2)), 8, 0)
        assert v == {"fc0": 2.0}

    def test_enumerated_maximum(self, rng):
        W = rng.normal(size=(5, 6)).astype(np.float32)
        arch, p = two_layer(W)
        images = rng.random((7, 6))
        v = balance_thresholds(p, arch, images, 12, (3, 1))
        train = poisson_encode(images, 12, (3, 1), np.arange(7))
        expected = max(float(train[t, i].astype(np.float32) @ W[j])
                       for t in range(12) for i in range(7) for j in range(5))
        assert v["fc0"] == pytest.approx(expected, rel=1e-6)

    def test_dead_layer(self):
        arch, p = two_layer(np.zeros((2, 2)))
        with pytest.raises(DegenerateThresholdError):
            balance_thresholds(p, arch, np.ones((2, 2)), 5, 0)
        assert balance_thresholds(p, arch, np.ones((2, 2)), 5, 0, floor=0.25) == {"fc0": 0.25}

    def test_scaling_weights_scales_first_threshold(self, rng):
        arch = conv_arch()
        p = init_params(arch, rng)
        images = rng.random((4, 1, 6, 6))
        v1 = balance_thresholds(p, arch, images, 10, 0)
        p.weights["conv0"] = p.weights["conv0"] * np.float32(4.0)
        v4 = balance_thresholds(p, arch, images, 10, 0)
        assert v4["conv0"] == pytest.approx(4 * v1["conv0"], rel=1e-6)

    def test_sequential_layers_see_balanced_predecessors(self, rng):
        arch = conv_arch()
        p = init_params(arch, rng)
        images = rng.random((4, 1, 6, 6))
        v = balance_thresholds(p, arch, images, 10, 0)
        # recompute the second threshold by replaying with the first fixed
        probe = NetworkParams(p.weights, {"conv0": v["conv0"]})
        train = poisson_encode(images, 10, 0, np.arange(4))
        cur, _ = snn_forward(probe, arch, train, init_neuron_state(4, arch, dropout=False),
                             record=False, stop_at="conv1")
        assert v["conv1"] == float(cur.max())

    def test_batching_and_segments_do_not_matter(self, rng):
        arch = conv_arch()
        p = init_params(arch, rng)
        images = rng.random((9, 1, 6, 6))
        a = balance_thresholds(p, arch, images, 12, 5, batch_size=9, segment=None)
        b = balance_thresholds(p, arch, images, 12, 5, batch_size=4, segment=5)
        assert a == b

    def test_residual_blocks_pinned(self, rng):
        arch = ArchitectureSpec((Conv(2), Dropout(0.2), Conv(2), Dropout(0.2), Conv(2), ResidualBlock(2),
                                 Linear(3)), 3, (1, 4, 4))
        p = init_params(arch, rng)
        v = balance_thresholds(p, arch, rng.random((3, 1, 4, 4)), 6, 0)
        assert v["res0a"] == v["res0b"] == 1.0
        assert v["conv0"] > 0

    def test_empty_calibration(self, rng):
        arch, p = two_layer(np.ones((1, 2)))
        with pytest.raises(ConfigError):
            balance_thresholds(p, arch, np.zeros((0, 2)), 5, 0)


class TestConvert:
    def test_deterministic(self, rng):
        arch = conv_arch()
        ann = init_params(arch, rng)
        images = rng.random((6, 1, 6, 6))
        a = convert(ann, arch, images, 15, 11)
        b = convert(ann, arch, images, 15, 11)
        assert a.thresholds == b.thresholds
        assert list(a.thresholds) == arch.populations

    def test_seed_changes_thresholds(self, rng):
        arch = conv_arch()
        ann = init_params(arch, rng)
        images = rng.random((6, 1, 6, 6))
        assert convert(ann, arch, images, 15, 1).thresholds != convert(ann, arch, images, 15, 2).thresholds

    def test_ann_untouched(self, rng):
        arch = conv_arch()
        ann = init_params(arch, rng)
        snapshot = {k: v.copy() for k, v in ann.weights.items()}
        snn = convert(ann, arch, rng.random((2, 1, 6, 6)), 5, 0)
        assert ann.thresholds == {}
        for k, v in snapshot.items():
            np.testing.assert_array_equal(ann.weights[k], v)
            assert snn.weights[k] is not ann.weights[k]
