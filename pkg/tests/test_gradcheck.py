"""Analytic gradients vs the central finite-difference oracle, per layer kind."""

import numpy as np
import pytest
from helpers import (
    FD_STEP,
    GRAD_TOLERANCE,
    central_difference,
    check_layer_gradients,
    rel_error,
    sample_layer_case,
    softmax_cross_entropy_check,
)

from pagefuse.nn import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2DSpec,
    NetworkSpec,
    ReLUSpec,
    SoftmaxSpec,
    build_network,
)

SEEDS = range(20)
LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "batchnorm", "relu")


@pytest.mark.parametrize("kind", LAYER_KINDS)
@pytest.mark.parametrize("seed", SEEDS)
def test_layer_matches_oracle(kind, seed):
    layer, x, rng = sample_layer_case(kind, seed)
    errors = check_layer_gradients(layer, x, rng)
    assert max(errors.values()) < GRAD_TOLERANCE, (kind, errors)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_matches_oracle(seed):
    assert softmax_cross_entropy_check(seed) < GRAD_TOLERANCE


class TestWholeNetwork:
    """End-to-end parameter gradient through a conv + batchnorm + dense stack."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_gradient_matches_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        spec = NetworkSpec(
            input_shape=(1, 6, 6),
            layers=(
                Conv2DSpec(1, 2, kernel=3, stride=1, padding=1),
                BatchNormSpec(2),
                ReLUSpec(),
                MaxPool2DSpec(window=2, stride=2),
                FlattenSpec(),
                DenseSpec(2 * 3 * 3, 3),
                SoftmaxSpec(),
            ),
            seed=seed,
        )
        net = build_network(spec)
        x = rng.normal(size=(4, 1, 6, 6)) * 3.0
        labels = rng.integers(0, 3, size=4)

        _, analytic = net.loss_and_gradient(x, labels)

        params = net.param_vector()

        def loss() -> float:
            net.set_param_vector(params)
            value, _ = net.loss_and_gradient(x, labels)
            return value

        fd = central_difference(loss, params, h=FD_STEP)
        assert rel_error(analytic, fd) < GRAD_TOLERANCE


class TestSoftmaxLayerBackward:
    """The standalone softmax backward (not fused with the loss)."""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_jacobian_vector_product(self, seed):
        from pagefuse.nn.layers import build_layer

        rng = np.random.default_rng(seed)
        layer = build_layer(SoftmaxSpec())
        x = rng.normal(size=(3, 4))
        errors = check_layer_gradients(layer, x, rng)
        assert max(errors.values()) < GRAD_TOLERANCE
