import numpy as np
import pytest

from tslatent.neuralnet import (
    Adam,
    CheckpointError,
    DenseNet,
    GradCheckReport,
    Sgd,
    ShapeError,
    TrainConfig,
    gradient_check,
    load_model,
    mse_loss,
    save_model,
)


def make_mse_loss_fn(x, target):
    def loss_fn(net):
        out, caches = net.forward_cached(x)
        loss, grad = mse_loss(out, target)
        grads, _ = net.backward(caches, grad)
        return loss, grads

    return loss_fn


class TestForward:
    def test_identity_layer(self):
        net = DenseNet([3, 3], final_linear=True)
        net.weights[0] = np.eye(3)
        net.biases[0] = np.zeros(3)
        x = np.array([0.3, -2.0, 5.5])
        np.testing.assert_array_equal(net.forward(x), x)

    def test_zero_weights_give_zero_output(self):
        net = DenseNet([4, 2], final_linear=True)
        net.weights[0][:] = 0.0
        np.testing.assert_array_equal(net.forward(np.ones(4)), np.zeros(2))

    def test_hand_computed_two_by_two(self):
        net = DenseNet([2, 2], final_linear=False)
        net.weights[0] = np.array([[1.0, 2.0], [3.0, -4.0]])
        net.biases[0] = np.array([0.5, -1.0])
        # z = [1*2 + 2*1 + 0.5, 3*2 - 4*1 - 1] = [4.5, 1.0], relu keeps both
        np.testing.assert_allclose(net.forward(np.array([2.0, 1.0])), [4.5, 1.0])
        # z = [1*1 + 2*(-1) + 0.5, 3*1 - 4*(-1) - 1] = [-0.5, 6.0], relu clips
        np.testing.assert_allclose(net.forward(np.array([1.0, -1.0])), [0.0, 6.0])

    def test_final_linear_skips_relu(self):
        net = DenseNet([2, 2], final_linear=True)
        net.weights[0] = np.array([[1.0, 0.0], [0.0, 1.0]])
        net.biases[0] = np.array([0.0, 0.0])
        np.testing.assert_allclose(net.forward(np.array([-3.0, 2.0])), [-3.0, 2.0])

    def test_dimension_mismatch(self):
        net = DenseNet([3, 2])
        with pytest.raises(ShapeError):
            net.forward(np.ones(4))

    def test_deterministic(self):
        net = DenseNet([5, 7, 2], seed=3)
        x = np.linspace(0, 1, 5)
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_batched_matches_single(self):
        net = DenseNet([4, 6, 3], seed=1)
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(5, 4))
        out = net.forward(batch)
        for i in range(5):
            np.testing.assert_allclose(out[i], net.forward(batch[i]), atol=1e-15)


class TestBackward:
    def test_zero_output_gradient(self):
        net = DenseNet([3, 4, 2], seed=0)
        _, caches = net.forward_cached(np.ones((2, 3)))
        grads, grad_in = net.backward(caches, np.zeros((2, 2)))
        for dw, db in grads:
            assert not np.any(dw)
            assert not np.any(db)
        assert not np.any(grad_in)

    def test_single_linear_layer_closed_form(self):
        net = DenseNet([3, 2], final_linear=True, seed=4)
        x = np.array([[0.5, -1.0, 2.0]])
        target = np.array([[1.0, 1.0]])
        out, caches = net.forward_cached(x)
        loss, dloss = mse_loss(out, target)
        grads, _ = net.backward(caches, dloss)
        residual = (out - target)[0]
        expected_dw = np.outer(2.0 * residual / target.size, x[0])
        np.testing.assert_allclose(grads[0][0], expected_dw, atol=1e-12)
        np.testing.assert_allclose(grads[0][1], 2.0 * residual / target.size, atol=1e-12)

    def test_three_layer_net_matches_finite_differences(self):
        net = DenseNet([4, 6, 5, 3], final_linear=True, seed=7)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4))
        target = rng.normal(size=(3, 3))
        report = gradient_check(
            net, make_mse_loss_fn(x, target), n_probes=40, step=1e-5, tolerance=1e-4
        )
        assert report.passed, report.max_relative_error

    def test_mismatched_caches_rejected(self):
        net = DenseNet([3, 2])
        _, caches = net.forward_cached(np.ones((1, 3)))
        with pytest.raises(ShapeError):
            net.backward(caches[:-1], np.ones((1, 2)))
        with pytest.raises(ShapeError):
            net.backward(caches, np.ones((1, 5)))


class TestMseLoss:
    def test_identical_vectors(self):
        loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    def test_unit_example(self):
        loss, _ = mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert loss == 1.0

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(5)
        pred, target = rng.normal(size=12), rng.normal(size=12)
        loss, grad = mse_loss(pred, target)
        naive = sum((p - t) ** 2 for p, t in zip(pred, target)) / 12
        assert loss == pytest.approx(naive, abs=1e-12)
        for i in range(12):
            assert grad[i] == pytest.approx(2 * (pred[i] - target[i]) / 12, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.ones(3), np.ones(4))


class TestOptimizers:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        for opt in (Sgd(0.1), Adam(0.1)):
            net = DenseNet([2, 2], seed=1)
            before = [p.copy() for p in net.parameters()]
            zero = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
            opt.step(net, zero)
            for p, q in zip(net.parameters(), before):
                np.testing.assert_array_equal(p, q)

    def test_sgd_halves_distance_on_scalar_quadratic(self):
        # f(w) = (w - a)^2 / 2 has gradient (w - a); lr=0.5 halves the gap
        net = DenseNet([1, 1], final_linear=True)
        net.weights[0][0, 0] = 3.0
        a = 1.0
        grad = net.weights[0][0, 0] - a
        Sgd(0.5).step(net, [(np.array([[grad]]), np.zeros(1))])
        assert net.weights[0][0, 0] == pytest.approx(2.0)

    @pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
    def test_adam_first_step_magnitude_is_learning_rate(self, scale):
        net = DenseNet([1, 1], final_linear=True)
        net.weights[0][0, 0] = 0.0
        net.biases[0][0] = 0.0
        opt = Adam(learning_rate=1e-3)
        opt.step(net, [(np.array([[scale]]), np.array([scale]))])
        assert abs(net.weights[0][0, 0]) == pytest.approx(1e-3, rel=1e-2)

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")
        with pytest.raises(ValueError):
            TrainConfig(validation_fraction=1.0)


class TestGradientCheck:
    def test_constant_loss_passes_with_zero_error(self):
        net = DenseNet([2, 2], seed=0)

        def loss_fn(n):
            zeros = [
                (np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(n.weights, n.biases)
            ]
            return 1.0, zeros

        report = gradient_check(net, loss_fn, n_probes=10)
        assert isinstance(report, GradCheckReport)
        assert report.passed
        assert report.max_relative_error == 0.0

    def test_single_parameter_quadratic_exact(self):
        net = DenseNet([1, 1], final_linear=True, seed=0)
        net.biases[0][0] = 0.0
        x = np.array([[1.0]])
        target = np.array([[0.0]])
        report = gradient_check(net, make_mse_loss_fn(x, target), n_probes=5)
        assert report.passed
        assert report.max_relative_error < 1e-8


class TestCheckpoints:
    def make_net(self):
        net = DenseNet([3, 5, 2], final_linear=True, seed=9)
        return net

    def test_round_trip_is_bitwise(self, tmp_path):
        net = self.make_net()
        path = tmp_path / "model.bin"
        save_model(net, path, sidecar={"purpose": "test"})
        loaded, sidecar = load_model(path)
        assert loaded.layer_sizes == net.layer_sizes
        assert loaded.final_linear == net.final_linear
        assert sidecar["purpose"] == "test"
        for a, b in zip(net.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_corrupted_file_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(self.make_net(), path)
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(self.make_net(), path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CheckpointError):
            load_model(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_model(self.make_net(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        body = bytes(raw[:-8])
        import struct
        import zlib

        path.write_bytes(body + struct.pack("<Q", zlib.crc32(body)))
        with pytest.raises(CheckpointError, match="magic"):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "none.bin")
