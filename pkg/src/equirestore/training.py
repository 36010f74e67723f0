"""Gradient-trained translation estimators.

The trained architecture is the canonical equivariant stack: a few
single-channel layers of sparse circular filters (3x3 offset patches on
2-D grids) with no bias, ReLU activations on hidden layers and an
identity output layer.  Training pushes the first output component to be
the largest via softmax cross-entropy toward flat index 0, minimized by
plain fixed-rate gradient descent.  The reverse-mode gradients are
validated against central finite differences in the test suite.

A clamped (ReLU) output layer freezes the gradient of every negative
logit, which at desk scale reliably stalls or kills training runs; the
identity output keeps the loss smooth in all N logits while leaving
equivariance untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .circular import Shape, as_shape, correlation_table, delta, negate_offset
from .constructive import check_aperiodic
from .errors import ConfigError, NumericError, ShapeError
from .network import CircularFilter, EquivariantLayer, EquivariantNetwork, as_stack


@dataclass(frozen=True)
class TrainConfig:
    """Architecture and optimization settings for the trained estimator.

    ``kernel_size`` is the filter support size and must be an odd side
    length raised to the grid dimension (9 -> 3x3 patch on 2-D grids,
    centered at the origin).  ``batch_size`` is capped at the dataset
    size; the default covers whole desk-scale datasets, which keeps the
    fixed-rate descent smooth.  Defaults were calibrated by pilot runs on
    20 random binary 8x8 images (committed as fixtures/pilot_train.csv):
    minibatching or rates above ~5e-3 intermittently collapse the
    single-channel ReLU stack mid-descent, full batches at 3e-3 converge
    on every draw tried.
    """

    depth: int = 6
    channels: int = 1
    kernel_size: int = 9
    learning_rate: float = 3e-3
    epochs: int = 40000
    batch_size: int = 1024
    seed: int = 0
    loss: str = "softmax-ce"
    bias_free: bool = True

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss != "softmax-ce":
            raise ConfigError(f"unknown loss tag {self.loss!r}")


def support_offsets(shape, kernel_size: int) -> tuple[int, ...]:
    """Flat offsets of the centered contiguous patch with ``kernel_size`` cells.

    The side length is the d-th root of ``kernel_size`` and must be an odd
    integer no larger than the smallest grid dimension.
    """
    shape = as_shape(shape)
    d = shape.ndim
    side = round(kernel_size ** (1.0 / d))
    if side**d != kernel_size or side % 2 == 0:
        raise ConfigError(
            f"kernel_size {kernel_size} is not an odd side length to the power {d} "
            f"(use e.g. {3 ** d} for a side-3 patch)"
        )
    if side > min(shape.dims):
        raise ConfigError(
            f"kernel side {side} exceeds smallest grid dimension {min(shape.dims)}"
        )
    half = side // 2
    return tuple(
        delta(idx, shape) for idx in product(range(-half, half + 1), repeat=d)
    )


def softmax_cross_entropy(output) -> float:
    """Loss toward flat index 0: ``-output[0] + log(sum_i exp(output[i]))``.

    Strictly decreasing in ``output[0]`` with the rest fixed; equals
    ``log N`` on a constant output.
    """
    out = np.asarray(output, dtype=np.float64).reshape(-1)
    if out.size < 2:
        raise ShapeError("loss needs at least 2 output components")
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite estimator output")
    m = float(np.max(out))
    return float(m + np.log(np.sum(np.exp(out - m))) - out[0])


def _batch_losses_and_gradient(outputs: np.ndarray):
    """Per-sample losses and dloss/doutput for a (B, N) output batch."""
    m = outputs.max(axis=1, keepdims=True)
    e = np.exp(outputs - m)
    z = e.sum(axis=1, keepdims=True)
    losses = (m + np.log(z))[:, 0] - outputs[:, 0]
    g = e / z
    g[:, 0] -= 1.0
    return losses, g


@dataclass
class GradientTape:
    """Forward records for the reverse pass: per-layer input stacks and
    pre-activations in flat (batch, channels, N) form."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pres: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


def _layer_params(layer: EquivariantLayer, shape: Shape):
    """(offsets, weights, negated offsets) per filter, cached on the layer.

    Dense filters expose all N cells as parameters.
    """
    cached = getattr(layer, "_param_arrays", None)
    if cached is not None:
        return cached
    params = []
    for row in layer.filters:
        prow = []
        for f in row:
            if f.support is not None:
                offs = np.array([o for o, _ in f.support], dtype=np.intp)
                ws = np.array([w for _, w in f.support], dtype=np.float64)
            else:
                offs = np.arange(f.shape.size, dtype=np.intp)
                ws = f.base.reshape(-1).copy()
            neg = np.array([negate_offset(int(o), shape) for o in offs], dtype=np.intp)
            prow.append((offs, ws, neg))
        params.append(prow)
    object.__setattr__(layer, "_param_arrays", params)
    return params


def _batch_forward_tape(net: EquivariantNetwork, batch: np.ndarray) -> GradientTape:
    """Forward a (B, C, N)-flattened batch, recording layer inputs and pres."""
    shape = net.shape
    table = correlation_table(shape)
    tape = GradientTape()
    stack = batch
    for layer in net.layers:
        tape.inputs.append(stack)
        pre = np.zeros((stack.shape[0], layer.out_channels, shape.size))
        for k, row in enumerate(_layer_params(layer, shape)):
            for r, (offs, ws, _) in enumerate(row):
                if offs.size:
                    pre[:, k, :] += np.einsum("u,bun->bn", ws, stack[:, r][:, table[offs]])
            pre[:, k, :] += layer.biases[k]
        tape.pres.append(pre)
        stack = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    tape.output = stack
    return tape


def _batch_loss_and_gradients(net: EquivariantNetwork, batch: np.ndarray):
    """Mean loss over the batch and mean weight gradients, reverse mode."""
    shape = net.shape
    table = correlation_table(shape)
    tape = _batch_forward_tape(net, batch)
    outputs = tape.output.reshape(batch.shape[0], -1)
    if not np.all(np.isfinite(outputs)):
        raise NumericError("non-finite estimator output")
    losses, g_out = _batch_losses_and_gradient(outputs)
    scale = 1.0 / batch.shape[0]
    g = (g_out * scale).reshape(tape.output.shape)

    grads: list[list[list[np.ndarray]]] = []
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        if layer.activation == "relu":
            g = g * (tape.pres[l] > 0.0)
        inp = tape.inputs[l]
        layer_grads = []
        g_in = np.zeros_like(inp)
        for k, row in enumerate(_layer_params(layer, shape)):
            k_grads = []
            for r, (offs, ws, neg) in enumerate(row):
                if offs.size:
                    gathered = inp[:, r][:, table[offs]]          # (B, |supp|, N)
                    gw = np.einsum("bun,bn->u", gathered, g[:, k, :])
                    if not np.all(np.isfinite(gw)):
                        raise NumericError(
                            f"non-finite gradient in layer {l}, filter ({k}, {r})"
                        )
                    k_grads.append(gw)
                    g_in[:, r, :] += np.einsum("u,bun->bn", ws, g[:, k, :][:, table[neg]])
                else:
                    k_grads.append(np.zeros(0))
            layer_grads.append(k_grads)
        grads.append(layer_grads)
        g = g_in
    grads.reverse()
    return float(np.mean(losses)), grads


def loss_and_gradients(net: EquivariantNetwork, x):
    """Loss and its gradient w.r.t. every filter weight for one input.

    Returns ``(loss, grads)`` where ``grads[l][k][r]`` aligns with the
    ``(offset, weight)`` parameterization of filter ``(k, r)`` of layer
    ``l`` (all N cells for dense filters).
    """
    stack = as_stack(x, net.shape, net.in_channels)
    batch = stack.reshape((1,) + stack.shape[:1] + (net.shape.size,))
    return _batch_loss_and_gradients(net, batch)


def _init_network(shape, in_channels: int, config: TrainConfig, rng) -> EquivariantNetwork:
    """Nonnegative fan-in-scaled init: uniform in [0, 1/sqrt(support * n_in)).

    Keeps the whole ReLU stack active on nonnegative inputs at step 0 so
    gradients flow; a zero-centered interval of the same width starves
    deep single-channel stacks (roughly half the signal dies per layer).
    The final layer uses the identity activation (see module docstring).
    """
    offsets = support_offsets(shape, config.kernel_size)
    chain = [in_channels] + [config.channels] * (config.depth - 1) + [1]
    layers = []
    for l in range(config.depth):
        n_in, n_out = chain[l], chain[l + 1]
        bound = 1.0 / np.sqrt(len(offsets) * n_in)
        activation = "identity" if l == config.depth - 1 else "relu"
        filters = tuple(
            tuple(
                CircularFilter.sparse(
                    shape, zip(offsets, rng.uniform(0.0, bound, size=len(offsets)))
                )
                for _ in range(n_in)
            )
            for _ in range(n_out)
        )
        layers.append(EquivariantLayer(filters, (0.0,) * n_out, activation=activation))
    return EquivariantNetwork(tuple(layers), shape)


def _update_network(net: EquivariantNetwork, grads, lr: float) -> EquivariantNetwork:
    new_layers = []
    for layer, layer_grads in zip(net.layers, grads):
        rows = []
        for row, row_grads in zip(layer.filters, layer_grads):
            new_row = []
            for f, gk in zip(row, row_grads):
                if f.support is not None:
                    pairs = [(o, w - lr * d) for (o, w), d in zip(f.support, gk)]
                    new_row.append(CircularFilter.sparse(f.shape, pairs))
                else:
                    new_row.append(
                        CircularFilter.dense(f.base - lr * gk.reshape(f.shape.dims), f.shape)
                    )
            rows.append(tuple(new_row))
        new_layers.append(
            EquivariantLayer(tuple(rows), layer.biases, activation=layer.activation)
        )
    return EquivariantNetwork(tuple(new_layers), net.shape)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    argmax0_accuracy: float
    min_margin: float


@dataclass(frozen=True)
class EstimatorReport:
    accuracy: float
    margins: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def mean_margin(self) -> float:
        return float(np.mean(self.margins))


def _dataset_stack(dataset) -> np.ndarray:
    if hasattr(dataset, "elements"):
        dataset = dataset.elements
    stack = np.asarray(dataset, dtype=np.float64)
    if stack.ndim < 3 or stack.shape[0] == 0:
        raise ShapeError("need a nonempty (S, C, *dims) dataset")
    return stack


def evaluate_estimator(net: EquivariantNetwork, dataset) -> EstimatorReport:
    """Fraction of elements whose output argmax is 0, plus margin stats.

    The margin of one element is ``output[0] - max_{i>0} output[i]``.
    """
    stack = _dataset_stack(dataset)
    flat = stack.reshape(stack.shape[0], stack.shape[1], -1)
    outputs = _batch_forward_tape(net, flat).output.reshape(stack.shape[0], -1)
    hits = int(np.sum(np.argmax(outputs, axis=1) == 0))
    margins = outputs[:, 0] - np.max(outputs[:, 1:], axis=1)
    return EstimatorReport(accuracy=hits / stack.shape[0], margins=margins)


def train(dataset, config: TrainConfig | None = None):
    """Fixed-rate gradient descent on canonical-pose data.

    Deterministic given the seed.  Returns ``(network, log)`` where the
    log holds one :class:`EpochRecord` per epoch, evaluated on the full
    dataset after the epoch's updates.  Diverging (non-finite) loss aborts
    with a :class:`NumericError` carrying the partial log in ``err.log``.
    """
    config = config or TrainConfig()
    config.validate()
    stack = _dataset_stack(dataset)
    count, in_channels = stack.shape[0], stack.shape[1]
    shape = Shape(stack.shape[2:])
    if shape.size < 2:
        raise ConfigError("estimator output needs at least 2 grid cells")

    cert = check_aperiodic(stack)
    if not cert.aperiodic:
        warnings.warn(
            "training dataset is periodic (an element coincides with a shifted "
            f"element: {cert.describe()}); shift targets are ambiguous",
            stacklevel=2,
        )

    rng = np.random.default_rng(config.seed)
    net = _init_network(shape, in_channels, config, rng)
    flat = stack.reshape(count, in_channels, shape.size)
    batch_size = min(config.batch_size, count)
    log: list[EpochRecord] = []

    for epoch in range(config.epochs):
        order = rng.permutation(count) if batch_size < count else np.arange(count)
        for start in range(0, count, batch_size):
            batch = flat[order[start:start + batch_size]]
            try:
                loss, grads = _batch_loss_and_gradients(net, batch)
            except NumericError as err:
                err.log = log
                raise
            if not np.isfinite(loss):
                err = NumericError(f"training diverged at epoch {epoch}")
                err.log = log
                raise err
            net = _update_network(net, grads, config.learning_rate)

        outputs = _batch_forward_tape(net, flat).output.reshape(count, -1)
        losses, _ = _batch_losses_and_gradient(outputs)
        margins = outputs[:, 0] - np.max(outputs[:, 1:], axis=1)
        log.append(
            EpochRecord(
                epoch=epoch,
                loss=float(np.mean(losses)),
                argmax0_accuracy=float(np.mean(np.argmax(outputs, axis=1) == 0)),
                min_margin=float(np.min(margins)),
            )
        )
    return net, log
