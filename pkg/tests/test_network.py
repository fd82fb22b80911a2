import numpy as np
import pytest

from hybrid_snn.errors import ConfigError, NumericError, ShapeError
from hybrid_snn.network import (ArchitectureSpec, AvgPool, Conv, Dropout, Linear, NetworkParams,
                                ResidualBlock, ann_forward, check_params, init_neuron_state,
                                init_params, preset, resnet8_lite, simulate, snn_forward, vgg5)
from hybrid_snn.neuron import NEVER_SPIKED, LifState, NeuronConfig, lif_step
from hybrid_snn.oracles import check_conservation, naive_avgpool, naive_conv2d, naive_matmul
from hybrid_snn.tensor import precision


def small_arch():
    return ArchitectureSpec((Conv(3), AvgPool(2), Dropout(0.3), Conv(4, stride=2), Linear(6),
                             Linear(3)), 3, (1, 10, 10), "small")


def params_for(arch, rng, thresholds=0.6, scale=1.0):
    p = init_params(arch, rng)
    p.weights = {k: v * scale for k, v in p.weights.items()}
    p.thresholds = {pop: thresholds for pop in arch.populations}
    return p


def random_train(rng, steps, batch, shape, p=0.5):
    return (rng.random((steps, batch) + shape) < p).astype(np.float32)


class TestArchitecture:
    def test_vgg5_shapes(self):
        arch = vgg5()
        assert arch.weight_names == ["conv0", "conv1", "conv2", "fc0", "fc_out"]
        assert arch.populations == ["conv0", "conv1", "conv2", "fc0"]
        assert arch.nodes[-1].in_shape == (64,)

    def test_pooling_tracks_extent(self):
        arch = ArchitectureSpec((Conv(2), AvgPool(2), Conv(2), AvgPool(2), Linear(10)), 10, (3, 32, 32))
        assert arch.nodes[3].out_shape == (2, 8, 8)

    def test_last_layer_must_be_classifier(self):
        with pytest.raises(ConfigError):
            ArchitectureSpec((Conv(2), Linear(5)), 10, (1, 4, 4))
        with pytest.raises(ConfigError):
            ArchitectureSpec((Linear(4), Conv(2)), 2, (1, 4, 4))

    def test_residual_needs_preprocessing_block(self):
        with pytest.raises(ConfigError):
            ArchitectureSpec((Conv(4), ResidualBlock(4), Linear(2)), 2, (1, 4, 4))

    def test_residual_preset(self):
        arch = resnet8_lite()
        assert len(arch.weight_names) == 8
        assert arch.fixed_unity == {"res0a", "res0b", "res1a", "res1b"}

    def test_pool_must_divide(self):
        with pytest.raises(ConfigError):
            ArchitectureSpec((AvgPool(3), Linear(2)), 2, (1, 4, 4))

    def test_dict_roundtrip(self):
        arch = resnet8_lite()
        assert ArchitectureSpec.from_dict(arch.to_dict()) == arch

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("vgg16")

    def test_check_params(self, rng):
        arch = small_arch()
        p = init_params(arch, rng)
        check_params(p, arch)
        with pytest.raises(ConfigError):
            check_params(p, arch, need_thresholds=True)
        p.weights["fc0"] = p.weights["fc0"][:, :3]
        with pytest.raises(ShapeError):
            check_params(p, arch)


class TestState:
    def test_initial_values(self):
        state = init_neuron_state(3, vgg5())
        for lif in state.lif.values():
            assert not lif.u.any() and (lif.s == NEVER_SPIKED).all()
        assert not state.out.u.any() and state.t == 1

    def test_dropout_mask_statistics(self):
        arch = ArchitectureSpec((Linear(1000), Dropout(0.5), Linear(2)), 2, (4,))
        state = init_neuron_state(1, arch, np.random.default_rng(0))
        mask = state.masks[1]
        assert abs((mask > 0).mean() - 0.5) < 0.05
        np.testing.assert_array_equal(np.unique(mask), [0.0, 2.0])

    def test_no_masks_in_inference_mode(self):
        assert init_neuron_state(2, vgg5(), np.random.default_rng(0), dropout=False).masks == {}


def step_major(params, arch, train, leak, masks):
    """Reference: advance every layer one step at a time with naive ops."""
    steps, batch = train.shape[:2]
    lif = {p: LifState.zeros((batch,) + arch.population_shape(p), np.float64)
           for p in arch.populations}
    u_out = np.zeros((batch, arch.num_classes))
    spikes = {p: [] for p in arch.populations}
    for k in range(steps):
        x = train[k].astype(np.float64)
        for node in arch.nodes:
            layer = node.layer
            if isinstance(layer, (Conv, Linear)):
                W = params.weights[node.weights[0]]
                if node.convs:
                    cur = naive_conv2d(x, W, node.convs[0].stride, node.convs[0].padding)
                else:
                    cur = naive_matmul(x.reshape(batch, -1), W)
                if node.is_output:
                    u_out += cur
                    continue
                pop = node.weights[0]
                x = lif_step(lif[pop], cur, NeuronConfig(leak, params.thresholds[pop]), k + 1)
                spikes[pop].append(x)
            elif isinstance(layer, ResidualBlock):
                pa, pb = node.weights
                oa = lif_step(lif[pa], naive_conv2d(x, params.weights[pa], 1, 1),
                              NeuronConfig(leak, params.thresholds[pa]), k + 1)
                cb = naive_conv2d(oa, params.weights[pb], 1, 1) + x
                x = lif_step(lif[pb], cb, NeuronConfig(leak, params.thresholds[pb]), k + 1)
                spikes[pa].append(oa)
                spikes[pb].append(x)
            elif isinstance(layer, AvgPool):
                x = naive_avgpool(x, layer.k)
            elif isinstance(layer, Dropout) and node.index in masks:
                x = x * masks[node.index]
    return u_out, {p: np.stack(v) for p, v in spikes.items()}


class TestSnnForward:
    def test_zero_input(self, rng):
        arch = small_arch()
        state = init_neuron_state(2, arch)
        u, rec = snn_forward(params_for(arch, rng), arch, np.zeros((5, 2, 1, 10, 10), np.float32), state)
        assert not u.any()
        assert all(not rec.spikes(p).any() for p in arch.populations)

    def test_zero_weights_no_spikes(self, rng):
        arch = ArchitectureSpec((Linear(4), Linear(2)), 2, (3,))
        p = NetworkParams({"fc0": np.zeros((4, 3), np.float32), "fc_out": np.ones((2, 4), np.float32)},
                          {"fc0": 0.5})
        _, rec = snn_forward(p, arch, np.ones((6, 1, 3), np.float32), init_neuron_state(1, arch))
        assert not rec.spikes("fc0").any()

    def test_hand_unrolled_two_layer_net(self):
        arch = ArchitectureSpec((Linear(2), Linear(2)), 2, (2,))
        p = NetworkParams({"fc0": np.array([[0.75, 0.0], [0.5, 0.5]], np.float32),
                           "fc_out": np.array([[1.0, 0.0], [0.0, 2.0]], np.float32)},
                          {"fc0": 1.0})
        train = np.array([[1, 1], [1, 0], [1, 1], [0, 1], [1, 1]], np.float32)[:, None, :]
        u, rec = snn_forward(p, arch, train, init_neuron_state(1, arch), leak=1.0)
        # neuron 0: I = .75 each step with input 0 on -> u: .75, 1.5*, .75+.75-1=1.25*, 1.25-1=.25, 1.0
        # neuron 1: I = 1, .5, 1, .5, 1 -> u: 1, 1.5*, 1.5*, 1.0, 2.0*
        expected_u = [[0.75, 1.0], [1.5, 1.5], [1.25, 1.5], [0.25, 1.0], [1.0, 2.0]]
        expected_o = [[0, 0], [1, 1], [1, 1], [0, 0], [0, 1]]
        spikes, u_rec, s_rec = rec.lif["fc0"]
        np.testing.assert_array_equal(u_rec[:, 0], expected_u)
        np.testing.assert_array_equal(spikes[:, 0], expected_o)
        np.testing.assert_array_equal(s_rec[-1, 0], [3, 5])
        np.testing.assert_array_equal(u, [[2.0, 6.0]])

    @pytest.mark.parametrize("arch_fn", [small_arch, lambda: ArchitectureSpec(
        (Conv(2), Dropout(0.2), Conv(2), Dropout(0.2), Conv(3), ResidualBlock(3), AvgPool(2), Linear(3)),
        3, (1, 4, 4), "res")])
    def test_layer_wise_equals_step_major(self, rng, arch_fn):
        arch = arch_fn()
        with precision(64):
            params = params_for(arch, rng, 0.5, 1.3)
            train = random_train(rng, 9, 3, arch.input_shape).astype(np.float64)
            state = init_neuron_state(3, arch, rng, dropout=True)
            masks = dict(state.masks)
            u, rec = snn_forward(params, arch, train, state, 0.9)
        u_ref, spikes_ref = step_major(params, arch, train, 0.9, masks)
        np.testing.assert_allclose(u, u_ref, atol=1e-10)
        for pop in arch.populations:
            np.testing.assert_array_equal(rec.spikes(pop), spikes_ref[pop])

    def test_segments_equal_single_pass(self, rng):
        arch = small_arch()
        params = params_for(arch, rng, 0.4)
        train = random_train(rng, 12, 2, arch.input_shape)
        a, b = init_neuron_state(2, arch), init_neuron_state(2, arch)
        u_full, _ = snn_forward(params, arch, train, a)
        for k in range(0, 12, 4):
            u_seg, rec = snn_forward(params, arch, train[k:k + 4], b)
            assert rec.t0 == k + 1
        np.testing.assert_array_equal(u_full, u_seg)
        assert a.spike_counts == b.spike_counts

    def test_dropout_support(self, rng):
        arch = small_arch()
        state = init_neuron_state(2, arch, rng)
        _, rec = snn_forward(params_for(arch, rng, 0.2), arch, random_train(rng, 6, 2, arch.input_shape),
                             state)
        mask = state.masks[2]
        assert ((rec.outputs[2] != 0) <= (mask != 0)).all()

    def test_identical_runs(self, rng):
        arch = small_arch()
        params = params_for(arch, rng)
        train = random_train(rng, 5, 2, arch.input_shape)
        r1 = snn_forward(params, arch, train, init_neuron_state(2, arch))[1]
        r2 = snn_forward(params, arch, train, init_neuron_state(2, arch))[1]
        for pop in arch.populations:
            for a, b in zip(r1.lif[pop], r2.lif[pop]):
                np.testing.assert_array_equal(a, b)

    def test_stop_at_returns_currents(self, rng):
        arch = small_arch()
        params = params_for(arch, rng)
        train = random_train(rng, 4, 2, arch.input_shape)
        cur, _ = snn_forward(params, arch, train, init_neuron_state(2, arch), stop_at="conv1")
        assert cur.shape == (4, 2, 4, 3, 3)
        with pytest.raises(ConfigError):
            snn_forward(params, arch, train, init_neuron_state(2, arch), stop_at="nope")

    def test_shape_mismatch(self, rng):
        arch = small_arch()
        with pytest.raises(ShapeError):
            snn_forward(params_for(arch, rng), arch, np.zeros((3, 2, 1, 4, 4)), init_neuron_state(2, arch))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_error_names_layer_and_steps(self, rng):
        arch = small_arch()
        params = params_for(arch, rng)
        params.weights["conv1"][0, 0, 0, 0] = np.inf
        with pytest.raises(NumericError, match=r"layer 3 \(conv\), steps 1\.\.4"):
            snn_forward(params, arch, np.ones((4, 2, 1, 10, 10), np.float32), init_neuron_state(2, arch))

    def test_unit_leak_conservation_across_layers(self):
        assert check_conservation(n_trials=10, seed=7) < 1e-4

    def test_simulate_is_batch_independent(self, rng):
        arch = small_arch()
        params = params_for(arch, rng, 0.4)
        x = rng.random((6,) + arch.input_shape)
        u1, c1 = simulate(params, arch, x, 8, 3, batch_size=6)
        u2, c2 = simulate(params, arch, x, 8, 3, batch_size=4, segment=4)
        np.testing.assert_array_equal(u1, u2)
        assert c1 == c2


class TestAnnForward:
    def test_zero_weights(self, rng):
        arch = small_arch()
        p = init_params(arch, rng)
        p.weights = {k: np.zeros_like(v) for k, v in p.weights.items()}
        logits, _ = ann_forward(p, arch, rng.random((2, 1, 10, 10)))
        assert not logits.any()

    def test_no_mask_equals_zero_rate(self, rng):
        arch = small_arch()
        p = init_params(arch, rng)
        x = rng.random((2, 1, 10, 10))
        ones = {2: np.ones((2, 3, 5, 5), np.float32)}
        np.testing.assert_array_equal(ann_forward(p, arch, x)[0], ann_forward(p, arch, x, ones)[0])

    def test_matches_layer_oracle(self, rng):
        arch = ArchitectureSpec((Conv(2), Dropout(0.1), Conv(2), Dropout(0.1), Conv(2), ResidualBlock(2),
                                 AvgPool(2), Linear(4), Linear(3)), 3, (1, 4, 4))
        with precision(64):
            p = init_params(arch, rng)
            x = rng.random((2, 1, 4, 4))
            logits, _ = ann_forward(p, arch, x)
        relu = lambda a: np.maximum(a, 0)
        h = relu(naive_conv2d(x, p.weights["conv0"], 1, 1))
        h = relu(naive_conv2d(h, p.weights["conv1"], 1, 1))
        h = relu(naive_conv2d(h, p.weights["conv2"], 1, 1))
        r = relu(naive_conv2d(h, p.weights["res0a"], 1, 1))
        h = relu(naive_conv2d(r, p.weights["res0b"], 1, 1) + h)
        h = naive_avgpool(h, 2).reshape(2, -1)
        h = relu(naive_matmul(h, p.weights["fc0"]))
        np.testing.assert_allclose(logits, naive_matmul(h, p.weights["fc_out"]), atol=1e-12)
