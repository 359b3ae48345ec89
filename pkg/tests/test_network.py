"""Network build contracts: parameter counts, shape checks, forward pass."""

import numpy as np
import pytest

from pagefuse.nn import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2DSpec,
    NetworkSpec,
    ReLUSpec,
    ShapeError,
    SoftmaxSpec,
    build_network,
    infer_shapes,
    parameter_count,
)


def softmax_net(*layers, input_shape, seed=0):
    return NetworkSpec(input_shape=input_shape, layers=(*layers, SoftmaxSpec()), seed=seed)


class TestBuild:
    def test_dense_parameter_count(self):
        spec = softmax_net(DenseSpec(4, 3), input_shape=(4,))
        assert parameter_count(spec) == 4 * 3 + 3
        net = build_network(spec)
        assert net.param_vector().size == 15

    def test_conv_output_shape(self):
        spec = NetworkSpec(
            input_shape=(1, 5, 5),
            layers=(Conv2DSpec(1, 2, kernel=3, stride=1), SoftmaxSpec()),
        )
        # softmax over a conv output is not flat, so check shapes directly
        shapes = infer_shapes(
            NetworkSpec(input_shape=(1, 5, 5), layers=(Conv2DSpec(1, 2, kernel=3, stride=1),))
        )
        assert shapes[-1] == (2, 3, 3)
        with pytest.raises(ShapeError):
            infer_shapes(spec)

    def test_incompatible_dense_pair(self):
        spec = softmax_net(DenseSpec(4, 3), DenseSpec(5, 2), input_shape=(4,))
        with pytest.raises(ShapeError, match="layer 1"):
            build_network(spec)

    def test_pool_exhausts_extent(self):
        spec = NetworkSpec(
            input_shape=(1, 2, 2),
            layers=(MaxPool2DSpec(window=3, stride=2),),
        )
        with pytest.raises(ShapeError, match="exhausts"):
            infer_shapes(spec)

    def test_batchnorm_feature_mismatch(self):
        spec = NetworkSpec(
            input_shape=(2, 4, 4),
            layers=(BatchNormSpec(num_features=3),),
        )
        with pytest.raises(ShapeError, match="num_features"):
            infer_shapes(spec)

    def test_deterministic_init(self):
        spec = softmax_net(DenseSpec(6, 4), ReLUSpec(), DenseSpec(4, 2), input_shape=(6,), seed=9)
        a = build_network(spec).param_vector()
        b = build_network(spec).param_vector()
        assert np.array_equal(a, b)

    def test_softmax_termination_required(self):
        spec = NetworkSpec(input_shape=(4,), layers=(DenseSpec(4, 2),))
        with pytest.raises(ValueError, match="softmax"):
            build_network(spec)


class TestForward:
    def test_softmax_only_uniform(self):
        net = build_network(softmax_net(input_shape=(3,)))
        out = net.forward(np.zeros((1, 3)))
        assert np.allclose(out, [[1 / 3, 1 / 3, 1 / 3]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        net = build_network(
            softmax_net(DenseSpec(5, 4), ReLUSpec(), DenseSpec(4, 3), input_shape=(5,), seed=3)
        )
        out = net.forward(rng.normal(size=(17, 5)))
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(out > 0)

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(1)
        spec = softmax_net(
            Conv2DSpec(1, 2, 3, 1, 1),
            ReLUSpec(),
            FlattenSpec(),
            DenseSpec(2 * 4 * 4, 3),
            input_shape=(1, 4, 4),
            seed=11,
        )
        x = rng.normal(size=(5, 1, 4, 4))
        a = build_network(spec).forward(x)
        b = build_network(spec).forward(x)
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        net = build_network(softmax_net(DenseSpec(4, 2), input_shape=(4,)))
        with pytest.raises(ValueError, match="input shape"):
            net.forward(np.zeros((1, 5)))

    def test_outputs_finite(self):
        rng = np.random.default_rng(2)
        net = build_network(
            softmax_net(DenseSpec(8, 6), ReLUSpec(), DenseSpec(6, 4), input_shape=(8,), seed=5)
        )
        out = net.forward(rng.normal(size=(9, 8)) * 50.0)
        assert np.all(np.isfinite(out))


class TestLoss:
    def test_perfect_prediction_zero_loss(self):
        net = build_network(softmax_net(input_shape=(3,)))
        logits = np.array([[500.0, 0.0, 0.0]])
        loss, _ = net.loss_and_gradient(logits, np.array([0]))
        assert loss == 0.0

    def test_uniform_sixteen_way(self):
        net = build_network(softmax_net(input_shape=(16,)))
        loss, _ = net.loss_and_gradient(np.zeros((4, 16)), np.array([0, 5, 9, 15]))
        assert loss == pytest.approx(np.log(16.0), rel=1e-12)

    def test_invalid_label_rejected(self):
        net = build_network(softmax_net(DenseSpec(4, 2), input_shape=(4,)))
        with pytest.raises(ValueError, match="label"):
            net.loss_and_gradient(np.zeros((1, 4)), np.array([2]))


class TestBatchNormStatistics:
    def test_training_batch_is_normalized(self):
        from pagefuse.nn.layers import build_layer

        rng = np.random.default_rng(3)
        layer = build_layer(BatchNormSpec(num_features=5))
        layer.init_params(rng)
        x = rng.normal(loc=3.0, scale=4.0, size=(64, 5))
        layer.forward(x, training=True)
        x_hat = layer._x_hat
        assert np.all(np.abs(x_hat.mean(axis=0)) < 1e-5)
        assert np.all(np.abs(x_hat.var(axis=0) - 1.0) < 1e-3)

    def test_inference_uses_running_stats(self):
        from pagefuse.nn.layers import build_layer

        rng = np.random.default_rng(4)
        layer = build_layer(BatchNormSpec(num_features=3, momentum=0.0))
        layer.init_params(rng)
        x = rng.normal(loc=2.0, scale=3.0, size=(128, 3))
        layer.forward(x, training=True)  # momentum 0 adopts batch stats outright
        y = layer.forward(x, training=False)
        assert np.all(np.abs(y.mean(axis=0)) < 1e-6)
