"""Forward/backward correctness of the autodiff engine against independent oracles."""

import math

import numpy as np
import pytest

from ferbench import tensor as T
from ferbench.network import Network, make_small_cnn, load_checkpoint, save_checkpoint
from ferbench.optim import AdamState, adam_step
from ferbench.tensor import Tensor

from oracles import draw_gradcheck_case, finite_difference_grads, forward_loops, relative_error


def tiny_net(seed=0, in_channels=2, num_classes=3, dtype=np.float64):
    return make_small_cnn(in_channels=in_channels, num_classes=num_classes,
                          conv_channels=(3, 4), kernel=3, seed=seed, dtype=dtype)


class TestForward:
    def test_identity_linear(self):
        layers = [{"kind": "global_avg_pool"},
                  {"kind": "linear", "name": "head", "in_features": 4, "out_features": 4}]
        params = {"head.weight": Tensor(np.eye(4), requires_grad=True),
                  "head.bias": Tensor(np.zeros(4), requires_grad=True)}
        net = Network(layers, params, 4)
        x = np.arange(8.0).reshape(2, 4, 1, 1)
        out = net.forward(x)
        np.testing.assert_allclose(out.data, x.reshape(2, 4))

    def test_gap_constant(self):
        x = Tensor(np.full((1, 3, 5, 5), 0.0) + np.array([1.0, 2.0, -0.5])[None, :, None, None])
        out = T.global_avg_pool(x)
        np.testing.assert_allclose(out.data, [[1.0, 2.0, -0.5]])

    def test_net_vs_per_element_reimplementation(self):
        net = tiny_net(seed=11)
        rng = np.random.default_rng(7)
        batch = rng.normal(size=(2, 2, 8, 8))
        got = net.forward(batch).data
        want = forward_loops(net, batch)
        assert np.max(np.abs(got - want)) <= 1e-6

    def test_shape_mismatch_names_layer(self):
        net = tiny_net()
        with pytest.raises(ValueError, match="channels"):
            net.forward(np.zeros((1, 5, 8, 8)))
        with pytest.raises(ValueError, match="avg_pool"):
            net.forward(np.zeros((1, 2, 9, 9)))

    def test_gap_output_is_exact_mean(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4, 6, 6))
        out = T.global_avg_pool(Tensor(x))
        np.testing.assert_allclose(out.data, x.mean(axis=(2, 3)), rtol=0, atol=1e-15)


class TestBackward:
    def test_linear_gradient_is_input(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5,))
        w = Tensor(rng.normal(size=(5,)), requires_grad=True)
        loss = T.tensor_sum(T.mul(w, Tensor(x)))
        loss.backward()
        np.testing.assert_allclose(w.grad, x)

    def test_softmax_ce_gradient_zero_at_optimum(self):
        # a huge-margin one-hot logit row sits at the loss floor
        logits = Tensor(np.array([[40.0, 0.0, 0.0]]), requires_grad=True)
        loss = T.softmax_cross_entropy(logits, [0])
        loss.backward()
        assert np.max(np.abs(logits.grad)) < 1e-15

    def test_backward_before_forward_rejected(self):
        net = tiny_net()
        with pytest.raises(RuntimeError, match="before forward"):
            net.backward(Tensor(np.asarray(0.0)))

    def test_finite_difference_oracle_small_net(self):
        net, batch, labels = draw_gradcheck_case(seed=5)

        def loss_value():
            logits = net.forward(batch, record=False)
            return T.softmax_cross_entropy(logits, labels).data

        arrays = {n: net.parameters[n].data for n in net.param_names()}
        fd = finite_difference_grads(loss_value, arrays, h=1e-4)

        net.zero_grad()
        loss = T.softmax_cross_entropy(net.forward(batch), labels)
        loss.backward()
        for name in net.param_names():
            err = relative_error(net.parameters[name].grad, fd[name])
            assert err.max() <= 1e-3, f"{name}: max rel err {err.max():.2e}"

    def test_input_gradient_populated(self):
        net = tiny_net(seed=2)
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 8, 8)), requires_grad=True)
        loss = T.softmax_cross_entropy(net.forward(x), [1])
        loss.backward()
        assert x.grad is not None and x.grad.shape == x.shape
        feats = net.features_before_gap()
        assert feats.grad is not None and feats.grad.shape == feats.shape


class TestSoftmaxCrossEntropy:
    def test_uniform_two_class(self):
        logits = Tensor(np.zeros((4, 2)))
        loss = T.softmax_cross_entropy(logits, [0, 1, 0, 1])
        assert abs(float(loss.data) - math.log(2)) < 1e-12

    def test_saturated_margin(self):
        logits = Tensor(np.array([[200.0, 0.0], [0.0, 200.0]]))
        loss = T.softmax_cross_entropy(logits, [0, 1])
        assert float(loss.data) < 1e-12

    def test_weighted_fixture_matches_hand_computation(self):
        logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [2.0, 1.0, 0.0]])
        labels = [0, 1, 2]
        weights = [1.0, 2.0, 0.5]
        total = 0.0
        for i, y in enumerate(labels):
            lse = math.log(sum(math.exp(v) for v in logits[i]))
            total += -weights[y] * (logits[i][y] - lse)
        want = total / 3.0
        got = float(T.softmax_cross_entropy(Tensor(logits), labels, weights).data)
        assert abs(got - want) <= 1e-9

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            T.softmax_cross_entropy(Tensor(np.array([[np.inf, 0.0]])), [0])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        logits = Tensor(rng.normal(size=(8, 5)) * 10, requires_grad=True)
        loss = T.softmax_cross_entropy(logits, rng.integers(0, 5, size=8))
        loss.backward()
        # row sums of the CE gradient vanish, which forces softmax rows to sum to 1
        np.testing.assert_allclose(logits.grad.sum(axis=1), 0.0, atol=1e-6)


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        net = tiny_net(seed=1, dtype=np.float32)
        before = {n: net.parameters[n].data.copy() for n in net.param_names()}
        for n in net.param_names():
            net.parameters[n].grad = np.zeros_like(net.parameters[n].data)
        adam_step(net, AdamState.for_network(net))
        for n in net.param_names():
            np.testing.assert_array_equal(net.parameters[n].data, before[n])

    def test_missing_gradients_rejected(self):
        net = tiny_net(seed=1)
        with pytest.raises(RuntimeError, match="missing gradients"):
            adam_step(net, AdamState.for_network(net))

    def test_single_scalar_hand_computed_step(self):
        layers = [{"kind": "global_avg_pool"},
                  {"kind": "linear", "name": "head", "in_features": 1, "out_features": 1}]
        params = {"head.weight": Tensor(np.array([[1.0]]), requires_grad=True),
                  "head.bias": Tensor(np.array([0.0]), requires_grad=True)}
        net = Network(layers, params, 1)
        params["head.weight"].grad = np.array([[1.0]])
        params["head.bias"].grad = np.array([0.0])
        state = AdamState.for_network(net, lr=1e-4)
        adam_step(net, state)
        # mhat = vhat = 1 after one step, so the update is lr / (1 + eps)
        want = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8))
        assert abs(float(params["head.weight"].data[0, 0]) - want) < 1e-15
        assert state.step_count == 1

    def test_quadratic_descends(self):
        rng = np.random.default_rng(9)
        target = rng.normal(size=(4,))
        w = Tensor(np.zeros(4), requires_grad=True)
        state = AdamState(lr=0.05)
        state.m["w"] = np.zeros(4)
        state.v["w"] = np.zeros(4)

        class OneParam:
            parameters = {"w": w}

            @staticmethod
            def param_names():
                return ["w"]

        def loss_val():
            d = w.data - target
            return float((d * d).sum())

        start = loss_val()
        for _ in range(100):
            w.grad = 2.0 * (w.data - target)
            adam_step(OneParam, state)
        assert loss_val() < start

    def test_determinism_bit_identical(self):
        def run():
            net = make_small_cnn(in_channels=1, num_classes=2, conv_channels=(2, 3),
                                 seed=42, dtype=np.float32)
            state = AdamState.for_network(net)
            rng = np.random.default_rng(7)
            batch = rng.normal(size=(4, 1, 8, 8)).astype(np.float32)
            labels = rng.integers(0, 2, size=4)
            for _ in range(5):
                net.zero_grad()
                loss = T.softmax_cross_entropy(net.forward(batch), labels)
                loss.backward()
                adam_step(net, state)
            return {n: net.parameters[n].data.tobytes() for n in net.param_names()}

        a, b = run(), run()
        assert a == b


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = make_small_cnn(in_channels=3, num_classes=2, seed=3, dtype=np.float32)
        path = tmp_path / "clf.ckpt"
        save_checkpoint(net, path)
        raw = path.read_bytes()
        assert raw[:4] == b"ATCW"
        loaded = load_checkpoint(path)
        assert loaded.layer_manifest() == net.layer_manifest()
        for n in net.param_names():
            np.testing.assert_array_equal(loaded.parameters[n].data, net.parameters[n].data)
        batch = np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32)
        np.testing.assert_allclose(loaded.predict_logits(batch), net.predict_logits(batch))

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)
