"""Tests for the reverse-mode differentiation engine."""

import numpy as np
import pytest

from eeg_sbp_validator.autodiff import (
    Mlp,
    NonScalarOutputError,
    ShapeMismatchError,
    Tensor,
    add,
    backward,
    concat_cols,
    forward,
    gather_rows,
    grad,
    grad_penalty_backward,
    gradient_penalty,
    input_gradient,
    matmul,
    mean,
    no_grad,
    row_norm,
    slice_cols,
    square,
    sum_all,
    tanh,
)
from eeg_sbp_validator.models import Activation, DenseLayerSpec, MlpSpec
from tests.utils import central_difference


def smooth_critic(seed: int = 0) -> Mlp:
    """Small tanh critic with one residual block and a scalar head."""
    hidden = DenseLayerSpec(width=4, activation=Activation.SMOOTH_TANH)
    spec = MlpSpec(
        input_width=3,
        layers=(hidden, hidden, hidden, DenseLayerSpec(width=1)),
        residual_blocks=((1, 3),),
    )
    model = Mlp(spec, np.random.default_rng(seed), name="critic")
    rng = np.random.default_rng(seed + 100)
    for bias in model.biases:
        bias.value[...] = rng.normal(0.0, 0.3, size=bias.shape)
    return model


class TestTensor:
    """Test cases for Tensor construction and basic operations."""

    def test_promotion_to_2d(self):
        """Test that scalars and vectors become matrices."""
        assert Tensor(3.0).shape == (1, 1)
        assert Tensor([1.0, 2.0]).shape == (1, 2)

    def test_three_dimensions_rejected(self):
        """Test that higher-rank arrays are refused."""
        with pytest.raises(ShapeMismatchError):
            Tensor(np.zeros((2, 2, 2)))

    def test_item_requires_scalar(self):
        """Test item() on a non-scalar tensor."""
        with pytest.raises(NonScalarOutputError):
            Tensor(np.zeros((2, 1))).item()

    def test_shape_mismatch(self):
        """Test that elementwise operations do not broadcast."""
        with pytest.raises(ShapeMismatchError):
            add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((1, 2))))
        with pytest.raises(ShapeMismatchError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_no_grad_stops_recording(self):
        """Test that operations inside no_grad have no history."""
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with no_grad():
            y = square(x)
        assert not y.requires_grad
        assert square(x).requires_grad


class TestGrad:
    """Test cases for first-order gradients."""

    def test_square_gradient(self):
        """Test d/dx sum(x^2) = 2x."""
        x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
        (gradient,) = grad(sum_all(square(x)), [x])
        np.testing.assert_allclose(gradient.value, 2.0 * x.value)

    def test_unused_input_gets_zeros(self):
        """Test that an unrelated input receives a zero gradient."""
        x = Tensor(np.ones((1, 2)), requires_grad=True)
        unused = Tensor(np.ones((3, 1)), requires_grad=True)
        _, other = grad(sum_all(x), [x, unused])
        np.testing.assert_array_equal(other.value, np.zeros((3, 1)))

    def test_composite_matches_finite_differences(self):
        """Test a chain of matmul, tanh, slicing and concatenation."""
        rng = np.random.default_rng(1)
        x_value = rng.normal(size=(4, 3))
        w_value = rng.normal(size=(3, 5))

        def build(x: Tensor, w: Tensor) -> Tensor:
            h = tanh(matmul(x, w))
            joined = concat_cols([slice_cols(h, 0, 2), square(slice_cols(h, 2, 5))])
            return mean(square(row_norm(joined)))

        x = Tensor(x_value, requires_grad=True)
        w = Tensor(w_value, requires_grad=True)
        grad_x, grad_w = grad(build(x, w), [x, w])

        def value() -> float:
            return build(Tensor(x_value), Tensor(w_value)).item()

        numeric_w = central_difference(value, w_value)
        numeric_x = central_difference(value, x_value)
        np.testing.assert_allclose(grad_w.value, numeric_w, atol=1e-7)
        np.testing.assert_allclose(grad_x.value, numeric_x, atol=1e-7)

    def test_row_norm_zero_row(self):
        """Test that the derivative of a zero-norm row is zero."""
        x = Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]), requires_grad=True)
        (gradient,) = grad(sum_all(row_norm(x)), [x])
        np.testing.assert_allclose(gradient.value, [[0.0, 0.0], [0.6, 0.8]])

    def test_gather_accumulates(self):
        """Test that repeated embedding lookups add their gradients."""
        table = Tensor(np.arange(6, dtype=float).reshape(3, 2), requires_grad=True)
        rows = gather_rows(table, np.array([0, 2, 0]))
        (gradient,) = grad(sum_all(rows), [table])
        np.testing.assert_array_equal(
            gradient.value, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]
        )


class TestMlp:
    """Test cases for the dense network."""

    def test_residual_identity(self):
        """Test that a zeroed residual block passes its input through."""
        spec = MlpSpec(
            input_width=2,
            layers=(DenseLayerSpec(width=2), DenseLayerSpec(width=2)),
            residual_blocks=((0, 2),),
        )
        model = Mlp(spec)
        for weight in model.weights:
            weight.value[...] = 0.0
        x = np.array([[1.0, 2.0], [-3.0, 0.5]])
        np.testing.assert_array_equal(model(Tensor(x)).value, x)

    def test_input_width_checked(self):
        """Test that the input width must match the spec."""
        with pytest.raises(ShapeMismatchError):
            smooth_critic()(Tensor(np.zeros((2, 4))))

    def test_leaky_relu_init_variance(self):
        """Test the rectifier initialization scale."""
        spec = MlpSpec(
            input_width=200,
            layers=(DenseLayerSpec(width=200, activation=Activation.LEAKY_RELU),),
        )
        weights = Mlp(spec, np.random.default_rng(2)).weights[0].value
        assert weights.var() == pytest.approx(2.0 / 200, rel=0.05)

    def test_backward_names_parameters(self):
        """Test that backward reports gradients by parameter name."""
        model = smooth_critic()
        _, tape = forward(model, np.ones((2, 3)))
        grads = backward(tape)
        assert list(grads.parameters)[:2] == ["critic.0.w", "critic.0.b"]
        assert grads.inputs[0].shape == (2, 3)


class TestInputGradient:
    """Test cases for per-sample input gradients."""

    def test_linear_model(self):
        """Test that a linear score has its weight vector as gradient."""
        weights = Tensor(np.array([[1.0], [-2.0], [0.5]]))
        x = np.random.default_rng(3).normal(size=(5, 3))
        gradient = input_gradient(lambda t: matmul(t, weights), x)
        np.testing.assert_allclose(gradient.value, np.tile([1.0, -2.0, 0.5], (5, 1)))

    def test_wide_output_rejected(self):
        """Test that the model must emit one value per sample."""
        with pytest.raises(NonScalarOutputError):
            input_gradient(lambda t: t, np.zeros((2, 3)))


class TestGradientPenalty:
    """Test cases for the double-backward gradient penalty."""

    def test_unit_gradient_norm(self):
        """Test that a unit-norm linear score has zero penalty."""
        weights = Tensor(np.array([[0.6], [0.8]]))
        penalty = gradient_penalty(lambda t: matmul(t, weights), np.ones((4, 2)))
        assert penalty.item() == pytest.approx(0.0)

    def test_linear_penalty_value(self):
        """Test ((||w|| - 1)^2) for a linear score with ||w|| = 5."""
        weights = Tensor(np.array([[3.0], [4.0]]))
        penalty = gradient_penalty(lambda t: matmul(t, weights), np.zeros((3, 2)))
        assert penalty.item() == pytest.approx(16.0)

    def test_parameter_gradients_match_finite_differences(self):
        """Test double backprop against central differences of the penalty."""
        model = smooth_critic(seed=4)
        x_hat = np.random.default_rng(5).normal(size=(6, 3))
        value, grads = grad_penalty_backward(model, x_hat)
        assert value > 0.0

        for parameter in (model.weights[0], model.biases[1], model.weights[3]):
            numeric = central_difference(
                lambda: gradient_penalty(model, x_hat).item(), parameter.value
            )
            np.testing.assert_allclose(grads[parameter.name], numeric, atol=1e-6)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(100))
    def test_random_smooth_critics(self, seed: int):
        """Test every parameter gradient of a random critic to 1e-4 relative."""
        model = smooth_critic(seed=1000 + seed)
        x_hat = np.random.default_rng(seed).normal(size=(4, 3))
        _, grads = grad_penalty_backward(model, x_hat)

        for parameter in model.parameters():
            numeric = central_difference(
                lambda: gradient_penalty(model, x_hat).item(), parameter.value
            )
            np.testing.assert_allclose(
                grads[parameter.name], numeric, rtol=1e-4, atol=1e-7
            )

    def test_scalar_critic_hand_gradient(self):
        """Test D(x) = a x at a = 2: penalty 1 and d/da = 2."""
        model = Mlp(MlpSpec(input_width=1, layers=(DenseLayerSpec(width=1),)))
        model.weights[0].value = np.array([[2.0]])
        value, grads = grad_penalty_backward(model, np.array([[0.3], [-1.0]]))
        assert value == pytest.approx(1.0)
        np.testing.assert_allclose(grads["mlp.0.w"], [[2.0]])
        np.testing.assert_allclose(grads["mlp.0.b"], [[0.0]])

    def test_unit_linear_critic_has_zero_gradients(self):
        """Test that a unit-norm linear critic has a flat penalty."""
        model = Mlp(MlpSpec(input_width=2, layers=(DenseLayerSpec(width=1),)))
        model.weights[0].value = np.array([[0.6], [0.8]])
        value, grads = grad_penalty_backward(model, np.ones((3, 2)))
        assert value == pytest.approx(0.0, abs=1e-15)
        for gradient in grads.values():
            np.testing.assert_allclose(gradient, 0.0, atol=1e-12)


class TestForwardBackward:
    """Test cases for the tape-based forward and backward entry points."""

    def test_matches_straight_line_arithmetic(self):
        """Test a two-layer network against plain numpy."""
        spec = MlpSpec(
            input_width=3,
            layers=(
                DenseLayerSpec(width=5, activation=Activation.SMOOTH_TANH),
                DenseLayerSpec(width=2),
            ),
        )
        model = Mlp(spec, np.random.default_rng(8))
        x = np.random.default_rng(9).normal(size=(4, 3))
        output, _ = forward(model, x)
        w0, b0, w1, b1 = (p.value for p in model.parameters())
        expected = np.tanh(x @ w0 + b0) @ w1 + b1
        np.testing.assert_allclose(output.value, expected, rtol=0, atol=1e-12)

    def test_square_at_three(self):
        """Test f(x) = x^2 at x = 3."""
        x = Tensor(3.0, requires_grad=True)
        (gradient,) = grad(square(x), [x])
        assert gradient.item() == 6.0

    def test_constant_function(self):
        """Test that a function ignoring its input has zero gradients."""
        model = Mlp(MlpSpec(input_width=2, layers=(DenseLayerSpec(width=1),)))
        model.weights[0].value = np.zeros((2, 1))
        _, tape = forward(model, np.ones((3, 2)))
        grads = backward(tape)
        np.testing.assert_array_equal(grads.inputs[0], np.zeros((3, 2)))

    def test_linear_in_seed(self):
        """Test that doubling the seed doubles every gradient."""
        model = smooth_critic(seed=10)
        x = np.random.default_rng(11).normal(size=(3, 3))
        seed = np.random.default_rng(12).normal(size=(3, 1))
        _, tape = forward(model, x)
        once = backward(tape, seed)
        twice = backward(tape, 2.0 * seed)
        for name, gradient in once.parameters.items():
            np.testing.assert_allclose(
                twice.parameters[name], 2.0 * gradient, rtol=1e-12
            )

    def test_seed_shape_checked(self):
        """Test that the seed must match the output."""
        _, tape = forward(smooth_critic(), np.ones((2, 3)))
        with pytest.raises(ShapeMismatchError):
            backward(tape, np.ones((3, 1)))
