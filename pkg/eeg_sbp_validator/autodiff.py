"""Reverse-mode automatic differentiation over dense 2-D tensors.

Every operation records its parents and a vector-Jacobian closure written in
terms of other tensor operations. Running :func:`grad` with
``create_graph=True`` therefore records the backward pass itself, which is
what the critic's gradient penalty needs: the penalty is a function of an
input gradient and is differentiated again with respect to the parameters.

Only what fully connected residual networks need is implemented. Shapes are
always ``(rows, cols)``; there is no implicit broadcasting.
"""

import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .exceptions import DimensionMismatchError
from .models import Activation, FloatArray, MlpSpec

BackwardFn = Callable[["Tensor"], tuple["Tensor | None", ...]]
IndexArray = NDArray[np.intp]


class ShapeMismatchError(DimensionMismatchError):
    """Operand shapes are incompatible for an operation."""


class NonScalarOutputError(ShapeMismatchError):
    """A per-sample scalar output was required."""


_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether new operations are recorded on the current thread."""
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    previous = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on the current thread inside the block."""
    with _grad_mode(False):
        yield


class Tensor:
    """A 2-D float64 array with an optional recording of how it was computed.

    Attributes:
        value: The numeric value
        requires_grad: Whether gradients flow to this tensor
        parents: Tensors this one was computed from
        backward_fn: Maps the upstream gradient to one gradient per parent
    """

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        value: FloatArray | float | Sequence[Sequence[float]],
        requires_grad: bool = False,
        name: str = "",
    ):
        """Wrap a value; scalars and vectors are promoted to 2-D."""
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeMismatchError(f"Tensors are 2-D, got shape {array.shape}")
        self.value: FloatArray = array
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        """``(rows, cols)``."""
        rows, cols = self.value.shape
        return int(rows), int(cols)

    def item(self) -> float:
        """Value of a ``1 x 1`` tensor."""
        if self.shape != (1, 1):
            raise NonScalarOutputError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def detach(self) -> "Tensor":
        """Same value, no history."""
        return Tensor(self.value)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _node(
    value: FloatArray, parents: tuple[Tensor, ...], backward_fn: BackwardFn
) -> Tensor:
    out = Tensor(value)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of equal-shape tensors."""
    _same_shape(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference of equal-shape tensors."""
    _same_shape(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g: (g, scale(g, -1.0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    _same_shape(a, b, "mul")
    return _node(a.value * b.value, (a, b), lambda g: (mul(g, b), mul(g, a)))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    return _node(a.value * factor, (a,), lambda g: (scale(g, factor),))


def add_const(a: Tensor, constant: FloatArray | float) -> Tensor:
    """Add a constant of the same shape (or a scalar)."""
    return _node(a.value + constant, (a,), lambda g: (g,))


def mul_const(a: Tensor, constant: FloatArray) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    if np.shape(constant) != a.shape:
        raise ShapeMismatchError(f"mul_const: {np.shape(constant)} vs {a.shape}")
    return _node(a.value * constant, (a,), lambda g: (mul_const(g, constant),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``."""
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    return _node(
        a.value @ b.value,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a: Tensor) -> Tensor:
    """Matrix transpose."""
    return _node(np.ascontiguousarray(a.value.T), (a,), lambda g: (transpose(g),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows, giving ``1 x cols``."""
    rows = a.shape[0]
    return _node(
        a.value.sum(axis=0, keepdims=True), (a,), lambda g: (broadcast_rows(g, rows),)
    )


def broadcast_rows(a: Tensor, rows: int) -> Tensor:
    """Repeat a ``1 x cols`` tensor ``rows`` times."""
    if a.shape[0] != 1:
        raise ShapeMismatchError(f"broadcast_rows needs one row, got {a.shape}")
    return _node(np.repeat(a.value, rows, axis=0), (a,), lambda g: (sum_rows(g),))


def sum_cols(a: Tensor) -> Tensor:
    """Sum over columns, giving ``rows x 1``."""
    cols = a.shape[1]
    return _node(
        a.value.sum(axis=1, keepdims=True), (a,), lambda g: (broadcast_cols(g, cols),)
    )


def broadcast_cols(a: Tensor, cols: int) -> Tensor:
    """Repeat a ``rows x 1`` tensor ``cols`` times."""
    if a.shape[1] != 1:
        raise ShapeMismatchError(f"broadcast_cols needs one column, got {a.shape}")
    return _node(np.repeat(a.value, cols, axis=1), (a,), lambda g: (sum_cols(g),))


def sum_all(a: Tensor) -> Tensor:
    """Sum of every entry as a ``1 x 1`` tensor."""
    return sum_cols(sum_rows(a))


def mean(a: Tensor) -> Tensor:
    """Mean of every entry as a ``1 x 1`` tensor."""
    rows, cols = a.shape
    return scale(sum_all(a), 1.0 / (rows * cols))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a ``1 x cols`` bias to every row."""
    if bias.shape != (1, x.shape[1]):
        raise ShapeMismatchError(f"add_bias: bias {bias.shape} for input {x.shape}")
    return add(x, broadcast_rows(bias, x.shape[0]))


def square(a: Tensor) -> Tensor:
    """Elementwise square."""
    return _node(a.value * a.value, (a,), lambda g: (mul(g, scale(a, 2.0)),))


def tanh(a: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""

    def backward(g: Tensor) -> tuple[Tensor]:
        return (mul(g, add_const(scale(square(out), -1.0), 1.0)),)

    out = _node(np.tanh(a.value), (a,), backward)
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    """Leaky rectifier; its second derivative is zero almost everywhere."""
    mask = np.where(a.value > 0, 1.0, slope)
    return _node(a.value * mask, (a,), lambda g: (mul_const(g, mask),))


def safe_reciprocal(a: Tensor) -> Tensor:
    """Elementwise ``1/a`` with zero wherever ``a`` is zero."""
    nonzero = a.value != 0
    value = np.divide(1.0, a.value, out=np.zeros_like(a.value), where=nonzero)

    def backward(g: Tensor) -> tuple[Tensor]:
        return (mul(g, scale(square(out), -1.0)),)

    out = _node(value, (a,), backward)
    return out


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row as ``rows x 1``.

    The derivative at a zero row is taken as zero.
    """
    cols = a.shape[1]

    def backward(g: Tensor) -> tuple[Tensor]:
        return (mul(broadcast_cols(mul(g, safe_reciprocal(out)), cols), a),)

    out = _node(np.sqrt((a.value * a.value).sum(axis=1, keepdims=True)), (a,), backward)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start..stop-1``."""
    total = a.shape[1]
    if not 0 <= start <= stop <= total:
        raise ShapeMismatchError(f"slice_cols [{start}, {stop}) of width {total}")
    return _node(
        np.ascontiguousarray(a.value[:, start:stop]),
        (a,),
        lambda g: (pad_cols(g, start, total),),
    )


def pad_cols(a: Tensor, start: int, total: int) -> Tensor:
    """Place ``a`` at column ``start`` of a zero tensor ``total`` wide."""
    width = a.shape[1]
    if start + width > total:
        raise ShapeMismatchError(f"pad_cols: {width} columns at {start} exceed {total}")
    value = np.zeros((a.shape[0], total))
    value[:, start : start + width] = a.value
    return _node(value, (a,), lambda g: (slice_cols(g, start, start + width),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors with equal row counts side by side."""
    parts = [p for p in parts if p.shape[1] > 0] or list(parts[:1])
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeMismatchError("concat_cols: row counts differ")
    bounds = np.cumsum([0, *(p.shape[1] for p in parts)])

    def backward(g: Tensor) -> tuple[Tensor, ...]:
        return tuple(
            slice_cols(g, int(bounds[k]), int(bounds[k + 1])) for k in range(len(parts))
        )

    return _node(np.hstack([p.value for p in parts]), tuple(parts), backward)


def gather_rows(table: Tensor, indices: IndexArray) -> Tensor:
    """Rows of ``table`` at ``indices`` (embedding lookup)."""
    vocabulary = table.shape[0]
    return _node(
        table.value[indices],
        (table,),
        lambda g: (scatter_add_rows(g, indices, vocabulary),),
    )


def scatter_add_rows(a: Tensor, indices: IndexArray, rows: int) -> Tensor:
    """Sum the rows of ``a`` into a ``rows``-row zero tensor at ``indices``."""
    value = np.zeros((rows, a.shape[1]))
    np.add.at(value, indices, a.value)
    return _node(value, (a,), lambda g: (gather_rows(g, indices),))


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    """Row-major reshape."""
    original = a.shape
    return _node(
        a.value.reshape(rows, cols), (a,), lambda g: (reshape(g, *original),)
    )


def _topological_order(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    seed: Tensor | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` (weighted by ``seed``) with respect to ``inputs``.

    Args:
        output: Tensor to differentiate
        inputs: Leaves or intermediate tensors of the recorded graph
        seed: Upstream gradient with the shape of ``output`` (ones by default)
        create_graph: Record the backward pass so the returned gradients can
            be differentiated again

    Returns:
        One gradient per input; zeros for inputs the output does not depend on

    Raises:
        ShapeMismatchError: If the seed shape differs from the output's
    """
    seed = seed if seed is not None else Tensor(np.ones(output.shape))
    _same_shape(output, seed, "grad seed")

    with _grad_mode(create_graph):
        grads: dict[int, Tensor] = {id(output): seed}
        for node in reversed(_topological_order(output)):
            upstream = grads.get(id(node))
            if upstream is None or node.backward_fn is None:
                continue
            for parent, contribution in zip(
                node.parents, node.backward_fn(upstream), strict=True
            ):
                if contribution is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    contribution = add(grads[key], contribution)
                grads[key] = contribution
        return [grads.get(id(t), Tensor(np.zeros(t.shape))) for t in inputs]


def _activate(h: Tensor, activation: Activation, slope: float) -> Tensor:
    if activation == Activation.LEAKY_RELU:
        return leaky_relu(h, slope)
    if activation == Activation.SMOOTH_TANH:
        return tanh(h)
    return h


class Mlp:
    """Fully connected network with optional residual blocks.

    Weights are stored ``in x out`` and applied as ``h @ W + b``.

    Attributes:
        spec: Layer layout
        weights: One weight tensor per layer
        biases: One ``1 x width`` bias tensor per layer
    """

    def __init__(
        self, spec: MlpSpec, rng: np.random.Generator | None = None, name: str = "mlp"
    ):
        """Initialize parameters.

        Weights are Gaussian with variance ``2 / fan_in`` for rectifier layers
        and ``1 / fan_in`` otherwise; biases start at zero.
        """
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        fan_in = spec.input_width
        for index, layer in enumerate(spec.layers):
            gain = 2.0 if layer.activation == Activation.LEAKY_RELU else 1.0
            weight = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, layer.width))
            prefix = f"{name}.{index}"
            self.weights.append(Tensor(weight, requires_grad=True, name=f"{prefix}.w"))
            bias = np.zeros((1, layer.width))
            self.biases.append(Tensor(bias, requires_grad=True, name=f"{prefix}.b"))
            fan_in = layer.width
        self._block_starts = {start: stop for start, stop in spec.residual_blocks}

    def __call__(self, x: Tensor) -> Tensor:
        """Forward pass.

        Raises:
            ShapeMismatchError: If the input width differs from the spec
        """
        if x.shape[1] != self.spec.input_width:
            raise ShapeMismatchError(
                f"{self.name}: input width {x.shape[1]}, "
                f"expected {self.spec.input_width}"
            )
        h = x
        open_blocks: list[tuple[int, Tensor]] = []
        for index, layer in enumerate(self.spec.layers):
            if index in self._block_starts:
                open_blocks.append((self._block_starts[index], h))
            h = add_bias(matmul(h, self.weights[index]), self.biases[index])
            h = _activate(h, layer.activation, layer.slope)
            if open_blocks and open_blocks[-1][0] == index + 1:
                _, shortcut = open_blocks.pop()
                h = add(shortcut, h)
        return h

    def parameters(self) -> list[Tensor]:
        """Parameters in layer order, weight before bias."""
        return [p for pair in zip(self.weights, self.biases, strict=True) for p in pair]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """``(name, tensor)`` pairs in :meth:`parameters` order."""
        return [(p.name, p) for p in self.parameters()]


@dataclass
class Tape:
    """Recorded forward pass of a model.

    Attributes:
        output: Model output
        inputs: Input tensors the pass started from
        parameters: Parameters the output depends on
    """

    output: Tensor
    inputs: list[Tensor]
    parameters: list[Tensor] = field(default_factory=list)


@dataclass
class Gradients:
    """Result of :func:`backward`."""

    parameters: dict[str, FloatArray]
    inputs: list[FloatArray]


def forward(model: Mlp, x: FloatArray | Tensor) -> tuple[Tensor, Tape]:
    """Run ``model`` on ``x`` and keep the recording.

    Raises:
        ShapeMismatchError: If the input width differs from the spec
    """
    x_tensor = x if isinstance(x, Tensor) else Tensor(x)
    x_tensor.requires_grad = True
    output = model(x_tensor)
    return output, Tape(output=output, inputs=[x_tensor], parameters=model.parameters())


def backward(tape: Tape, seed: FloatArray | Tensor | None = None) -> Gradients:
    """Gradients of a recorded output for every parameter and input.

    Raises:
        ShapeMismatchError: If the seed shape differs from the output's
    """
    seed_tensor = seed if seed is None or isinstance(seed, Tensor) else Tensor(seed)
    grads = grad(tape.output, [*tape.parameters, *tape.inputs], seed_tensor)
    n_params = len(tape.parameters)
    pairs = zip(tape.parameters, grads[:n_params], strict=True)
    return Gradients(
        parameters={p.name or str(k): g.value for k, (p, g) in enumerate(pairs)},
        inputs=[g.value for g in grads[n_params:]],
    )


def _require_scalar_per_row(output: Tensor) -> None:
    if output.shape[1] != 1:
        raise NonScalarOutputError(
            f"Expected one output per sample, got width {output.shape[1]}"
        )


def input_gradient(model: Callable[[Tensor], Tensor], x: FloatArray | Tensor) -> Tensor:
    """Gradient of a per-sample scalar model output with respect to its input.

    Rows are independent samples, so row ``i`` of the result is the gradient
    of output ``i`` with respect to input row ``i``.

    Raises:
        NonScalarOutputError: If the model output is wider than one column
    """
    x_tensor = Tensor(x.value if isinstance(x, Tensor) else x, requires_grad=True)
    output = model(x_tensor)
    _require_scalar_per_row(output)
    (gradient,) = grad(sum_all(output), [x_tensor])
    return gradient


def gradient_penalty(score: Callable[[Tensor], Tensor], x_hat: FloatArray) -> Tensor:
    """Mean over rows of ``(||grad_x score(x_hat)||_2 - 1)^2`` as a ``1 x 1`` tensor.

    The input gradient is computed with a recorded backward pass, so the
    returned tensor can be differentiated with respect to the parameters that
    ``score`` uses.

    Raises:
        NonScalarOutputError: If ``score`` returns more than one column
    """
    x_tensor = Tensor(x_hat, requires_grad=True)
    output = score(x_tensor)
    _require_scalar_per_row(output)
    (gradient,) = grad(sum_all(output), [x_tensor], create_graph=True)
    return mean(square(add_const(row_norm(gradient), -1.0)))


def grad_penalty_backward(
    model: Mlp, x_hat: FloatArray
) -> tuple[float, dict[str, FloatArray]]:
    """Gradient penalty of an MLP critic and its parameter gradients.

    Returns:
        The penalty value and one gradient per named parameter
    """
    penalty = gradient_penalty(model, x_hat)
    parameters = model.parameters()
    grads = grad(penalty, parameters)
    return penalty.item(), {
        p.name: g.value for p, g in zip(parameters, grads, strict=True)
    }


__all__ = [
    "ShapeMismatchError",
    "NonScalarOutputError",
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "scale",
    "add_const",
    "mul_const",
    "matmul",
    "transpose",
    "sum_rows",
    "broadcast_rows",
    "sum_cols",
    "broadcast_cols",
    "sum_all",
    "mean",
    "add_bias",
    "square",
    "tanh",
    "leaky_relu",
    "safe_reciprocal",
    "row_norm",
    "slice_cols",
    "pad_cols",
    "concat_cols",
    "gather_rows",
    "scatter_add_rows",
    "reshape",
    "grad",
    "Mlp",
    "Tape",
    "Gradients",
    "forward",
    "backward",
    "input_gradient",
    "gradient_penalty",
    "grad_penalty_backward",
]
