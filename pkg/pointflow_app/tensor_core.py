"""
Dense tensors with a reverse-mode tape.

Every primitive the point network and the residual auditors need lives here: affine maps,
activations, batch normalization, max pooling over points, a few explicit shape operations
and the derivatives of network outputs with respect to the input coordinates.

Operations record onto the innermost active ``Tape`` (a context manager). Outside a tape
nothing is recorded, which is how inference runs.
"""
import contextvars
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from utils.exceptions import ContractViolation, DegenerateBatchError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

TRAIN = "train"
INFER = "infer"
MODES = (TRAIN, INFER)

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5

_active_tape = contextvars.ContextVar("pointflow_active_tape", default=None)
_frozen_statistics = contextvars.ContextVar("pointflow_frozen_statistics", default=False)
_debug_checks = False


def enable_debug_checks(flag=True):
    """Check affine outputs for NaN/Inf after every call."""
    global _debug_checks
    _debug_checks = bool(flag)


def dtype_for(precision):
    if precision in ("f64", "float64", np.float64):
        return np.float64
    if precision in ("f32", "float32", np.float32):
        return np.float32
    raise ValueError(f"Unknown precision '{precision}', expected f32 or f64.")


class Tensor:
    def __init__(self, data, requires_grad=False, dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    vjp: object


class Tape:
    """
    Ordered record of primitive applications.

    Nodes are appended as operations execute, so every node's operands precede it. ``backward``
    walks the nodes once in reverse order and accumulates gradients in that fixed order.
    """

    def __init__(self):
        self.nodes = []
        self._produced = set()
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, vjp):
        self.nodes.append(Node(op, tuple(inputs), output, vjp))
        self._produced.add(id(output))

    def backward(self, loss):
        """
        Reverse-mode sweep from a scalar root.

        Args:
            loss (Tensor): scalar produced by an operation on this tape.

        Returns:
            dict: leaf tensor -> gradient array, for every requires_grad leaf reached.
            The same arrays are stored on ``leaf.grad``.

        Raises:
            ShapeError: if the root is not a scalar.
            ContractViolation: if the root was not recorded on this tape.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractViolation("backward root was not recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.vjp(upstream)
            for operand, grad in zip(node.inputs, input_grads):
                if grad is None or not operand.requires_grad:
                    continue
                key = id(operand)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if key not in self._produced:
                    leaves[key] = operand

        result = {}
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
            result[leaf] = grads[key]
        return result


def _record(op, inputs, output, vjp):
    tape = _active_tape.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.record(op, inputs, output, vjp)
    return output


def _as_tensor(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


# Elementwise

def add(a, b):
    b = _as_tensor(b, a)
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record("add", (a, b), out, lambda g: (g, g))


def sub(a, b):
    b = _as_tensor(b, a)
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return _record("sub", (a, b), out, lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    return _record("mul", (a, b), out, lambda g: (g * b.data, g * a.data))


def scale(x, factor):
    factor = x.data.dtype.type(factor)
    out = Tensor(x.data * factor)
    return _record("scale", (x,), out, lambda g: (g * factor,))


def square(x):
    out = Tensor(x.data * x.data)
    return _record("square", (x,), out, lambda g: (2 * g * x.data,))


def relu(x):
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, x.data.dtype.type(0)))
    return _record("relu", (x,), out, lambda g: (g * mask,))


def sigmoid(x):
    """Elementwise logistic function, evaluated without overflow for large |x|."""
    e = np.exp(-np.abs(x.data))
    value = np.where(x.data >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    out = Tensor(value)
    return _record("sigmoid", (x,), out, lambda g: (g * value * (1 - value),))


# Reductions

def sum_all(x):
    out = Tensor(np.sum(x.data).reshape(()))
    return _record("sum", (x,), out, lambda g: (np.full_like(x.data, g),))


def mean_all(x):
    count = x.size
    out = Tensor((np.sum(x.data) / count).reshape(()))
    return _record("mean", (x,), out, lambda g: (np.full_like(x.data, g / count),))


# Linear algebra

def affine(x, W, b):
    """
    Rowwise affine map ``out[r, o] = sum_i W[o, i] * x[r, i] + b[o]``.

    Args:
        x (Tensor): rows x inputs.
        W (Tensor): outputs x inputs.
        b (Tensor): outputs.

    Raises:
        ShapeError: if the inner dimensions disagree.
    """
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[1] or b.shape[0] != W.shape[0]:
        raise ShapeError(f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not agree")
    value = x.data @ W.data.T + b.data
    if _debug_checks and not np.all(np.isfinite(value)):
        raise NumericalError(f"affine produced non-finite values (x {x.shape}, W {W.shape})")
    out = Tensor(value)

    def vjp(g):
        return g @ W.data, g.T @ x.data, g.sum(axis=0)

    return _record("affine", (x, W, b), out, vjp)


def bmm(a, b):
    """Batched matrix product (B x N x K) . (B x K x M)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} do not agree")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        return np.matmul(g, np.swapaxes(b.data, 1, 2)), np.matmul(np.swapaxes(a.data, 1, 2), g)

    return _record("bmm", (a, b), out, vjp)


# Shape operations

def reshape(x, shape):
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    out = Tensor(x.data.reshape(shape))
    return _record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def tile_points(g, n_points):
    """Repeat a per-sample vector (B x F) across points (B x N x F)."""
    if g.ndim != 2:
        raise ShapeError(f"tile_points expects B x F, got {g.shape}")
    out = Tensor(np.repeat(g.data[:, None, :], n_points, axis=1))
    return _record("tile_points", (g,), out, lambda grad: (grad.sum(axis=1),))


def concat_last(a, b):
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last: leading shapes {a.shape} and {b.shape} differ")
    split = a.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))
    return _record("concat", (a, b), out, lambda g: (g[..., :split], g[..., split:]))


def take_columns(x, columns):
    columns = np.asarray(columns, dtype=np.int64)
    out = Tensor(x.data[..., columns])

    def vjp(g):
        full = np.zeros_like(x.data)
        for slot, column in enumerate(columns):
            full[..., column] += g[..., slot]
        return (full,)

    return _record("take_columns", (x,), out, vjp)


# Point-set operations

def max_pool_points(x):
    """
    Maximum over the point axis plus the argmax row per feature.

    Accepts N x F or B x N x F. Ties resolve to the lowest row index. The backward pass routes
    each feature's gradient to its argmax row only.

    Returns:
        tuple: (pooled Tensor with the point axis removed, int64 argmax indices of the same shape)
    """
    if x.ndim not in (2, 3):
        raise ShapeError(f"max_pool_points expects N x F or B x N x F, got {x.shape}")
    axis = x.ndim - 2
    if x.shape[axis] == 0:
        raise ShapeError("max_pool_points: empty point dimension")
    indices = np.argmax(x.data, axis=axis)
    pooled = np.take_along_axis(x.data, np.expand_dims(indices, axis), axis=axis)
    out = Tensor(np.squeeze(pooled, axis=axis))

    def vjp(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(indices, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record("max_pool_points", (x,), out, vjp), indices


@dataclass
class BNState:
    """Learnable scale/shift plus running statistics for one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def create(cls, channels, dtype=np.float64):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def batch_norm(x, state, mode):
    """
    Per-channel normalization of an R x C tensor.

    In train mode the statistics come from all R rows (batch and points flattened together) and
    the running statistics move by an exponential average with ``state.momentum``. In infer mode
    only the running statistics are used.

    Raises:
        DegenerateBatchError: R < 2 in train mode.
        ContractViolation: train mode while input derivatives require frozen statistics.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown batch-norm mode '{mode}'")
    if x.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} does not match {state.gamma.shape[0]} channels")
    gamma, beta = state.gamma.data, state.beta.data

    if mode == INFER:
        inv_std = 1 / np.sqrt(state.running_var + state.eps)
        x_hat = (x.data - state.running_mean) * inv_std
        out = Tensor(x_hat * gamma + beta)

        def vjp(g):
            return g * (gamma * inv_std), np.sum(g * x_hat, axis=0), np.sum(g, axis=0)

        return _record("batch_norm", (x, state.gamma, state.beta), out, vjp)

    if _frozen_statistics.get():
        raise ContractViolation("input derivatives are ill-defined with train-mode batch statistics")
    rows = x.shape[0]
    if rows < 2:
        raise DegenerateBatchError(f"train-mode batch norm needs at least 2 rows, got {rows}")
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_std = 1 / np.sqrt(var + state.eps)
    x_hat = (x.data - mean) * inv_std
    out = Tensor(x_hat * gamma + beta)

    state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean
    state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var

    def vjp(g):
        g_hat = g * gamma
        grad_x = (inv_std / rows) * (
            rows * g_hat - g_hat.sum(axis=0) - x_hat * np.sum(g_hat * x_hat, axis=0)
        )
        return grad_x, np.sum(g * x_hat, axis=0), np.sum(g, axis=0)

    return _record("batch_norm", (x, state.gamma, state.beta), out, vjp)


# Derivatives with respect to input coordinates

@dataclass
class InputDerivatives:
    """
    Output values and their coordinate derivatives for one cloud.

    ``first[c, i, a]`` is the derivative of output channel ``c`` summed over points, taken with
    respect to coordinate ``a`` of point ``i``; ``second[c, i, a]`` is the matching diagonal second
    derivative. For pointwise maps this is exactly d(out_c at i)/d(x_i[a]).
    """

    values: np.ndarray
    first: np.ndarray
    second: np.ndarray = None
    steps: np.ndarray = field(default=None, repr=False)


def point_spacing(coords):
    """Distance from each point to its nearest neighbour."""
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) < 2:
        return np.ones(len(coords))
    distances, _ = cKDTree(coords).query(coords, k=2)
    spacing = distances[:, 1]
    positive = spacing[spacing > 0]
    fallback = positive.min() if positive.size else 1.0
    return np.where(spacing > 0, spacing, fallback)


def _coordinate_gradients(model_eval, batch, channels=None):
    X = Tensor(batch, requires_grad=True)
    with Tape() as tape:
        Y = model_eval(X)
        if Y.ndim != 3:
            raise ShapeError(f"model evaluation must return B x N x C, got {Y.shape}")
        if channels is None:
            channels = list(range(Y.shape[-1]))
        grads = np.empty((len(channels),) + batch.shape, dtype=batch.dtype)
        for slot, channel in enumerate(channels):
            root = sum_all(take_columns(Y, [channel]))
            grads[slot] = tape.backward(root).get(X, 0)
    return Y.data, grads


def input_derivatives(model_eval, cloud, order=1, relative_step=1e-4, spacing=None, chunk_size=32):
    """
    Derivatives of model outputs with respect to the input coordinates.

    First derivatives are exact reverse-mode gradients. Second (diagonal) derivatives are
    central differences of those exact gradients: coordinate ``a`` of point ``i`` is moved by
    ``+/- h_i`` with ``h_i = relative_step * spacing_i`` and the gradient at the same slot is
    differenced. Perturbed clouds are evaluated ``chunk_size`` at a time as one batch.

    Args:
        model_eval (callable): maps a B x N x d Tensor to a B x N x C Tensor. It must not use
            train-mode batch statistics; an object with ``mode != "infer"`` is rejected.
        cloud: PointCloud (uses ``.coords``) or an N x d array.
        order (int): 1 or 2.

    Returns:
        InputDerivatives

    Raises:
        ContractViolation: if the evaluation uses train-mode batch normalization.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if getattr(model_eval, "mode", INFER) != INFER:
        raise ContractViolation("input derivatives need an infer-mode model (frozen batch-norm statistics)")
    coords = np.asarray(getattr(cloud, "coords", cloud))
    if not np.issubdtype(coords.dtype, np.floating):
        coords = coords.astype(np.float64)
    n_points, dim = coords.shape

    token = _frozen_statistics.set(True)
    try:
        values, first = _coordinate_gradients(model_eval, coords[None])
        channels = list(range(values.shape[-1]))
        result = InputDerivatives(values=values[0], first=first[:, 0])
        if order == 1:
            return result

        steps = relative_step * (point_spacing(coords) if spacing is None else np.asarray(spacing, dtype=np.float64))
        second = np.empty((len(channels), n_points, dim), dtype=coords.dtype)
        jobs = [(i, a) for a in range(dim) for i in range(n_points)]
        for start in range(0, len(jobs), chunk_size):
            block = jobs[start:start + chunk_size]
            batch = np.repeat(coords[None], 2 * len(block), axis=0)
            for slot, (i, a) in enumerate(block):
                batch[2 * slot, i, a] += steps[i]
                batch[2 * slot + 1, i, a] -= steps[i]
            _, grads = _coordinate_gradients(model_eval, batch, channels)
            for slot, (i, a) in enumerate(block):
                plus = grads[:, 2 * slot, i, a]
                minus = grads[:, 2 * slot + 1, i, a]
                second[:, i, a] = (plus - minus) / (2 * steps[i])
        result.second = second
        result.steps = steps
        logger.debug(f"Second input derivatives for {n_points} points in {len(jobs)} perturbations.")
        return result
    finally:
        _frozen_statistics.reset(token)


# Finite-difference oracles

def finite_difference_gradient(func, array, relative_step=1e-5, indices=None, accuracy=2):
    """
    Central differences of a scalar function with respect to entries of ``array`` (in place).

    The step is ``relative_step * max(1, |x|)``. Only the flat ``indices`` are differenced when
    given. ``accuracy=4`` uses the five-point stencil, whose truncation error is O(h^4).
    """
    if accuracy not in (2, 4):
        raise ValueError(f"accuracy must be 2 or 4, got {accuracy}")
    flat = array.reshape(-1)
    selected = range(flat.size) if indices is None else indices
    estimate = {}
    for index in selected:
        original = flat[index]
        h = relative_step * max(1.0, abs(float(original)))

        def shifted(k):
            flat[index] = original + k * h
            return float(func())

        if accuracy == 2:
            estimate[int(index)] = (shifted(1) - shifted(-1)) / (2 * h)
        else:
            near = shifted(1) - shifted(-1)
            far = shifted(2) - shifted(-2)
            estimate[int(index)] = (8 * near - far) / (12 * h)
        flat[index] = original
    return estimate


def max_relative_error(analytic, numeric, floor=1e-8):
    """Componentwise |a - b| / max(|a|, |b|, floor), maximised."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denominator)) if a.size else 0.0
