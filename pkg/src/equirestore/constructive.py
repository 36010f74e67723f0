"""Training-free restorer construction.

Two stages, both strictly equivariant by construction:

1. a bit-extraction network that maps integer-valued inputs to their
   binary channel decomposition using only single-offset filters and
   constant biases, and
2. a two-layer correlation head whose first-layer filters are the
   (geometrically scaled, norm-ordered) dataset elements themselves.

Stacked, they estimate the translation of any shifted dataset element
exactly: the output argmax sits at the flat index of the shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circular import Shape, as_shape, index_grid
from .errors import CapacityError, PeriodicDatasetError, ShapeError
from .network import CircularFilter, EquivariantLayer, EquivariantNetwork


@dataclass(frozen=True)
class BinaryDecompositionSpec:
    """Bit width and channel count for integer inputs.

    Admissible values are integers in ``[0, 2**(bits+1))``; each of the
    ``channels`` input planes expands into ``bits + 1`` binary planes.
    """

    bits: int
    channels: int = 1

    def __post_init__(self):
        if self.bits < 0:
            raise ShapeError("bits must be >= 0")
        if self.channels < 1:
            raise ShapeError("channels must be >= 1")

    @property
    def max_value(self) -> int:
        return 2 ** (self.bits + 1) - 1

    @property
    def binary_channels(self) -> int:
        return self.channels * (self.bits + 1)


@dataclass(frozen=True)
class AperiodicityCertificate:
    """Result of the exhaustive self/cross shift search over a dataset.

    A dataset is aperiodic when no element is the zero tensor and no
    element equals a (spatially and/or channel-) shifted copy of any
    element except trivially itself.  ``witness`` is ``(s, t, offsets)``
    with the channel shift as the last offset component.
    """

    aperiodic: bool
    size: int
    witness: tuple[int, int, tuple[int, ...]] | None = None
    zero_index: int | None = None

    def describe(self) -> str:
        if self.aperiodic:
            return f"aperiodic ({self.size} elements)"
        if self.zero_index is not None:
            return f"periodic: element {self.zero_index} is the zero tensor"
        s, t, m = self.witness
        spatial, channel = m[:-1], m[-1]
        return (
            f"periodic: element {s} shifted by {spatial} "
            f"(channel shift {channel}) equals element {t}"
        )


def _as_dataset_stack(dataset) -> np.ndarray:
    """Normalize to a float64 (S, C, *dims) stack."""
    if hasattr(dataset, "elements"):
        dataset = dataset.elements
    arr = np.asarray(dataset, dtype=np.float64)
    if arr.ndim < 3:
        raise ShapeError(
            f"dataset must be (S, channels, *dims) with at least 1 spatial axis, got shape {arr.shape}"
        )
    return arr


def check_aperiodic(dataset) -> AperiodicityCertificate:
    """Exhaustively search all ordered pairs and all shifts for coincidences.

    The channel axis participates in the shift search (it is treated as
    circular here and only here).  Datasets containing the zero tensor are
    periodic by definition.
    """
    stack = _as_dataset_stack(dataset)
    count = stack.shape[0]
    if count == 0:
        raise ShapeError("empty dataset")
    channels = stack.shape[1]
    spatial = Shape(stack.shape[2:])
    axes = tuple(range(1, stack.ndim - 1 + 1))  # channel + spatial axes of one element

    for s in range(count):
        if not np.any(stack[s]):
            return AperiodicityCertificate(False, count, zero_index=s)

    # shift-invariant prefilter: shifted copies have identical value multisets
    keys = [tuple(np.sort(stack[s], axis=None)) for s in range(count)]

    shifts = index_grid(spatial)
    for s in range(count):
        for t in range(count):
            if keys[s] != keys[t]:
                continue
            for c in range(channels):
                rolled_c = np.roll(stack[s], c, axis=0) if c else stack[s]
                for m in shifts:
                    if s == t and c == 0 and not np.any(m):
                        continue
                    shifted = np.roll(rolled_c, tuple(m), axis=tuple(range(1, rolled_c.ndim)))
                    if np.array_equal(shifted, stack[t]):
                        witness = tuple(int(v) for v in m) + (c,)
                        return AperiodicityCertificate(False, count, witness=(s, t, witness))
    return AperiodicityCertificate(True, count)


def binary_decomposition(values, bits: int) -> np.ndarray:
    """Bitwise decomposition of an integer-valued (C, *dims) array.

    Output channel ``p * (bits + 1) + q`` holds bit ``q`` (LSB first) of
    input channel ``p``.  This is the reference bit extraction the network
    builder is tested against, and the construction path for the head.
    """
    arr = np.asarray(values, dtype=np.float64)
    ints = np.rint(arr).astype(np.int64)
    if not np.array_equal(ints, arr):
        raise ShapeError("binary decomposition requires integer-valued data")
    limit = 2 ** (bits + 1)
    if ints.min() < 0 or ints.max() >= limit:
        raise ShapeError(
            f"values must lie in [0, {limit}) for {bits + 1}-bit decomposition, "
            f"got range [{ints.min()}, {ints.max()}]"
        )
    planes = [(ints >> q) & 1 for q in range(bits + 1)]
    out = np.stack(planes, axis=1).astype(np.float64)  # (C, bits+1, *dims)
    return out.reshape((arr.shape[0] * (bits + 1),) + arr.shape[1:])


def _scalar_bit_layers(bits: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Scalar ReLU layers computing the bit expansion of x in [0, 2**(bits+1)).

    Carries ``(x, x_Q, ..., x_{Q-q+1})`` through paired layers that peel one
    bit per pair from the most significant end, then recovers the lowest bit
    by double negation.  Final output order is ``(x_0, x_Q, ..., x_1)``.
    """
    q_top = bits
    layers = []
    for q in range(q_top):
        k_in = q + 1
        w = np.zeros((k_in + 1, k_in))
        w[:k_in, :k_in] = np.eye(k_in)
        w[-1, 0] = -1.0
        for j in range(1, k_in):
            w[-1, j] = 2.0 ** (q_top - (j - 1))
        b = np.zeros(k_in + 1)
        b[-1] = 2.0 ** (q_top - q)
        layers.append((w, b))

        w2 = np.zeros((k_in + 1, k_in + 1))
        w2[:k_in, :k_in] = np.eye(k_in)
        w2[-1, -1] = -1.0
        b2 = np.zeros(k_in + 1)
        b2[-1] = 1.0
        layers.append((w2, b2))

    k = q_top + 1
    w = np.zeros((k, k))
    w[0, 0] = -1.0
    for j in range(1, k):
        w[0, j] = 2.0 ** (q_top - (j - 1))
    if k > 1:
        w[1:, 1:] = np.eye(q_top)
    b = np.zeros(k)
    b[0] = 1.0
    layers.append((w, b))

    w2 = np.eye(k)
    w2[0, 0] = -1.0
    b2 = np.zeros(k)
    b2[0] = 1.0
    layers.append((w2, b2))

    # reorder the final layer's output channels to LSB-first (x_0, x_1, ..., x_Q)
    perm = [0] + [q_top - t + 1 for t in range(1, k)]
    layers[-1] = (w2[perm], b2[perm])
    return layers


def build_binary_network(spec: BinaryDecompositionSpec, shape) -> EquivariantNetwork:
    """Lift the scalar bit extractor to an equivariant network.

    Every filter is a single-offset (pointwise) circular filter and every
    bias is constant, so equivariance holds by construction.  On integer
    inputs in range, the forward pass reproduces
    :func:`binary_decomposition` exactly; depth is ``2 * bits + 2``.
    """
    shape = as_shape(shape)
    p = spec.channels
    layers = []
    for w, b in _scalar_bit_layers(spec.bits):
        k_out, k_in = w.shape
        filters = []
        for kp in range(p * k_out):
            p_out, k_o = divmod(kp, k_out)
            row = []
            for rp in range(p * k_in):
                p_in, k_i = divmod(rp, k_in)
                if p_out == p_in and w[k_o, k_i] != 0.0:
                    row.append(CircularFilter.sparse(shape, [(0, w[k_o, k_i])]))
                else:
                    row.append(CircularFilter.zero(shape))
            filters.append(tuple(row))
        biases = tuple(float(b[divmod(kp, k_out)[1]]) for kp in range(p * k_out))
        layers.append(EquivariantLayer(tuple(filters), biases, activation="relu"))
    return EquivariantNetwork(tuple(layers), shape)


def minimum_alpha(binary_channels: int, grid_size: int) -> float:
    """Smallest admissible geometric scale for the correlation head."""
    gn = binary_channels * grid_size
    return 1.0 + gn + 2.0 * gn * gn


def _head_capacity_check(count: int, binary_channels: int, grid_size: int, alpha: float) -> None:
    gn = binary_channels * grid_size
    log2_peak = math.log2(count) + math.log2(2 * gn + 1) + (count - 1) * math.log2(alpha)
    if log2_peak >= 1024:
        raise CapacityError(
            f"head weights overflow float64: S*(2GN+1)*alpha^(S-1) needs "
            f"2**{log2_peak:.1f} with alpha^{count - 1} = {alpha} ** {count - 1}"
        )


def build_estimator_head(binary_dataset, certificate: AperiodicityCertificate | None = None
                         ) -> EquivariantNetwork:
    """Two-layer correlation head with a strict argmax at flat index 0.

    Layer 1 has one output channel per dataset element, ordered by
    ascending norm; its filters are the element's channels scaled by
    ``alpha**(s-1) / ||Z_s||`` and its bias offsets the previous element's
    norm.  Layer 2 averages the channels.  Requires a binary aperiodic
    dataset; the guarantee is exact-input only.
    """
    stack = _as_dataset_stack(binary_dataset)
    if not np.isin(stack, (0.0, 1.0)).all():
        raise ShapeError("estimator head requires binary (0/1) data")
    if certificate is None:
        certificate = check_aperiodic(stack)
    if not certificate.aperiodic:
        raise PeriodicDatasetError(
            f"estimator head needs an aperiodic dataset; {certificate.describe()}",
            certificate,
        )

    count, channels = stack.shape[0], stack.shape[1]
    shape = Shape(stack.shape[2:])
    n = shape.size
    gn = channels * n
    alpha = minimum_alpha(channels, n)
    _head_capacity_check(count, channels, n, alpha)

    flat = stack.reshape(count, -1)
    norms = np.sqrt(np.einsum("sx,sx->s", flat, flat))
    order = np.argsort(norms, kind="stable")

    filters = []
    biases = []
    prev_norm = 1.0 / (2 * gn + 1)
    for s_pos, idx in enumerate(order):
        scale = alpha**s_pos
        element = stack[idx]
        row = tuple(
            CircularFilter.dense(element[r] * (scale / norms[idx]), shape)
            for r in range(channels)
        )
        filters.append(row)
        biases.append(scale / (2 * gn + 1) - scale * prev_norm)
        prev_norm = norms[idx]
    layer1 = EquivariantLayer(tuple(filters), tuple(biases), activation="relu")

    averaging_row = tuple(CircularFilter.identity(shape, 1.0 / count) for _ in range(count))
    layer2 = EquivariantLayer((averaging_row,), (0.0,), activation="relu")
    return EquivariantNetwork((layer1, layer2), shape)


@dataclass(frozen=True)
class ConstructiveEstimator:
    """Stacked bit-extraction network and correlation head, plus metadata.

    ``order`` maps head channel position to the original dataset index
    (ascending binary norm).  Depth is at most ``2 * bits + 4``.
    """

    network: EquivariantNetwork
    order: tuple[int, ...]
    alpha: float
    bits: int
    channels: int
    certificate: AperiodicityCertificate

    @property
    def depth(self) -> int:
        return self.network.depth

    @property
    def shape(self) -> Shape:
        return self.network.shape


def build_restorer(dataset, bits: int, certificate: AperiodicityCertificate | None = None
                   ) -> ConstructiveEstimator:
    """Build the full translation restorer for an integer-valued dataset.

    Validates the value range, decomposes the data into binary channels,
    certifies aperiodicity of the decomposition, and stacks the extractor
    with the correlation head.
    """
    stack = _as_dataset_stack(dataset)
    count, channels = stack.shape[0], stack.shape[1]
    shape = Shape(stack.shape[2:])
    spec = BinaryDecompositionSpec(bits, channels)

    binary = np.stack([binary_decomposition(stack[s], bits) for s in range(count)])
    if certificate is None:
        certificate = check_aperiodic(binary)
    if not certificate.aperiodic:
        raise PeriodicDatasetError(
            f"restorer needs an aperiodic dataset; binary decomposition is not: "
            f"{certificate.describe()}",
            certificate,
        )

    decomposer = build_binary_network(spec, shape)
    head = build_estimator_head(binary, certificate)
    network = EquivariantNetwork(decomposer.layers + head.layers, shape)

    if network.depth > 2 * bits + 4:
        raise CapacityError(f"restorer depth {network.depth} exceeds bound {2 * bits + 4}")

    flat = binary.reshape(count, -1)
    norms = np.sqrt(np.einsum("sx,sx->s", flat, flat))
    order = tuple(int(i) for i in np.argsort(norms, kind="stable"))
    return ConstructiveEstimator(
        network=network,
        order=order,
        alpha=minimum_alpha(spec.binary_channels, shape.size),
        bits=bits,
        channels=channels,
        certificate=certificate,
    )
