"""Circular filters, strictly shift-equivariant layers, and their composition.

A circular filter is an ``N x N`` matrix fully determined by its base row:
row ``delta(M)`` is the ``M``-translate of the base row.  Applying one is
direct circular cross-correlation with the base row, so every layer built
from circular filters and constant biases commutes exactly with spatial
translations.  The full matrix is only ever materialized as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circular import (
    CircularTensor,
    Shape,
    all_translations,
    as_shape,
    correlation_table,
    delta_inverse,
    translate_array,
)
from .errors import CapacityError, ShapeError

ACTIVATIONS = ("relu", "identity")

_MATRIX_GUARD = 4096
_STACK_GATHER_LIMIT = 2**24  # elements; beyond this fall back to per-offset rolls


@dataclass(frozen=True)
class CircularFilter:
    """A full circular-filter matrix represented by its base row.

    Exactly one of ``base`` (dense base row over the grid) or ``support``
    (sparse list of ``(flat offset, weight)`` pairs) is set.  Both
    representations apply identically; sparse application costs
    ``O(N * |support|)`` and dense ``O(N^2)``.
    """

    shape: Shape
    base: np.ndarray | None = None
    support: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", as_shape(self.shape))
        if (self.base is None) == (self.support is None):
            raise ShapeError("exactly one of base/support must be given")
        if self.base is not None:
            arr = np.array(self.base, dtype=np.float64, order="C")
            if arr.shape != self.shape.dims:
                raise ShapeError(
                    f"base row shape {arr.shape} does not match grid {self.shape.dims}"
                )
            arr.flags.writeable = False
            object.__setattr__(self, "base", arr)
        else:
            pairs = []
            for off, w in self.support:
                off = int(off)
                if not 0 <= off < self.shape.size:
                    raise ShapeError(f"support offset {off} out of range [0, {self.shape.size})")
                pairs.append((off, float(w)))
            object.__setattr__(self, "support", tuple(pairs))

    @classmethod
    def dense(cls, base, shape=None) -> "CircularFilter":
        arr = np.asarray(base, dtype=np.float64)
        return cls(shape=Shape(arr.shape) if shape is None else as_shape(shape), base=arr)

    @classmethod
    def sparse(cls, shape, pairs: Iterable[tuple[int, float]]) -> "CircularFilter":
        return cls(shape=as_shape(shape), support=tuple(pairs))

    @classmethod
    def identity(cls, shape, weight: float = 1.0) -> "CircularFilter":
        return cls.sparse(shape, [(0, weight)])

    @classmethod
    def zero(cls, shape) -> "CircularFilter":
        return cls.sparse(shape, [])

    @property
    def is_sparse(self) -> bool:
        return self.support is not None

    def base_row(self) -> np.ndarray:
        """Dense base row over the grid, whichever representation is stored."""
        if self.base is not None:
            return self.base
        row = np.zeros(self.shape.size)
        for off, w in self.support:
            row[off] += w
        return row.reshape(self.shape.dims)

    def scaled(self, factor: float) -> "CircularFilter":
        if self.base is not None:
            return CircularFilter.dense(self.base * factor, self.shape)
        return CircularFilter.sparse(self.shape, [(o, w * factor) for o, w in self.support])


def _correlate_flat(base_flat: np.ndarray, offsets: np.ndarray, weights: np.ndarray,
                    x_flat: np.ndarray, shape: Shape) -> np.ndarray:
    """out[m] = sum_u w_u * x[I_u + I_m] via one gather, or rolls beyond the guard."""
    n = shape.size
    if n <= _MATRIX_GUARD:
        table = correlation_table(shape)
        if base_flat is not None:
            return base_flat @ x_flat[table]
        if len(offsets) == 0:
            return np.zeros(n)
        return weights @ x_flat[table[offsets]]
    # roll fallback: translate x by -I_u for each support offset
    if base_flat is not None:
        nz = np.flatnonzero(base_flat)
        offsets, weights = nz, base_flat[nz]
    out = np.zeros(n)
    grid = x_flat.reshape(shape.dims)
    for off, w in zip(offsets, weights):
        idx = delta_inverse(int(off), shape)
        out += w * np.roll(grid, tuple(-i for i in idx), axis=tuple(range(shape.ndim))).reshape(n)
    return out


def apply_filter(filt: CircularFilter, x):
    """Circular cross-correlation of ``x`` with the filter's base row.

    The output at flat position ``delta(M)`` equals the inner product of
    the ``M``-translated base row with ``x``.  Accepts a CircularTensor or
    a raw array of the filter's grid shape and returns the same kind.
    """
    if isinstance(x, CircularTensor):
        if x.shape != filt.shape:
            raise ShapeError(f"shape mismatch: filter {filt.shape} vs input {x.shape}")
        out = apply_filter(filt, x.values)
        return CircularTensor(out, filt.shape)
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != filt.shape.dims:
        raise ShapeError(f"shape mismatch: filter {filt.shape.dims} vs input {arr.shape}")
    flat = arr.reshape(filt.shape.size)
    if filt.base is not None:
        out = _correlate_flat(filt.base.reshape(-1), None, None, flat, filt.shape)
    else:
        offs = np.array([o for o, _ in filt.support], dtype=np.intp)
        ws = np.array([w for _, w in filt.support])
        out = _correlate_flat(None, offs, ws, flat, filt.shape)
    return out.reshape(filt.shape.dims)


@dataclass(frozen=True)
class EquivariantLayer:
    """One affine layer of circular filters plus constant per-channel biases.

    ``filters[k][r]`` maps input channel ``r`` into output channel ``k``;
    the bias of each output channel is a single scalar (a constant tensor),
    which together with the circular filters is exactly what strict
    translation equivariance requires.
    """

    filters: tuple[tuple[CircularFilter, ...], ...]
    biases: tuple[float, ...]
    activation: str = "relu"

    def __post_init__(self):
        if not self.filters or not self.filters[0]:
            raise ShapeError("layer needs at least one filter")
        rows = tuple(tuple(row) for row in self.filters)
        n_in = len(rows[0])
        shape = rows[0][0].shape
        for row in rows:
            if len(row) != n_in:
                raise ShapeError("ragged filter grid")
            for f in row:
                if f.shape != shape:
                    raise ShapeError("all filters in a layer must share the spatial shape")
        object.__setattr__(self, "filters", rows)
        object.__setattr__(self, "biases", tuple(float(b) for b in self.biases))
        if len(self.biases) != len(rows):
            raise ShapeError(f"{len(rows)} output channels need {len(rows)} biases")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"activation must be one of {ACTIVATIONS}")

    @property
    def out_channels(self) -> int:
        return len(self.filters)

    @property
    def in_channels(self) -> int:
        return len(self.filters[0])

    @property
    def shape(self) -> Shape:
        return self.filters[0][0].shape


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def as_stack(x, shape, channels: int | None = None) -> np.ndarray:
    """Normalize input to a float64 channel stack of shape (C, *dims)."""
    shape = as_shape(shape)
    if isinstance(x, CircularTensor):
        if x.shape != shape:
            raise ShapeError(f"shape mismatch: {x.shape} vs {shape}")
        arr = x.values[np.newaxis, ...]
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape == shape.dims:
            arr = arr[np.newaxis, ...]
        elif arr.ndim == shape.ndim + 1 and arr.shape[1:] == shape.dims:
            pass
        else:
            raise ShapeError(
                f"expected array of shape {shape.dims} or (C, *{shape.dims}), got {arr.shape}"
            )
    if channels is not None and arr.shape[0] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[0]}")
    return np.ascontiguousarray(arr, dtype=np.float64)


def layer_preactivation(layer: EquivariantLayer, x) -> np.ndarray:
    """Affine part of the layer: filters applied and biases added, no activation."""
    shape = layer.shape
    stack = as_stack(x, shape, layer.in_channels)
    n = shape.size
    flat = stack.reshape(layer.in_channels, n)
    pre = np.empty((layer.out_channels, n))

    all_dense = n <= _MATRIX_GUARD and all(
        f.base is not None for row in layer.filters for f in row
    )
    if all_dense and layer.in_channels * n * n <= _STACK_GATHER_LIMIT:
        table = correlation_table(shape)
        gathered = flat[:, table]  # (C_in, N, N): gathered[r, u, m] = X_r[I_u + I_m]
        bases = np.array([[f.base.reshape(-1) for f in row] for row in layer.filters])
        pre = np.einsum("krn,rnm->km", bases, gathered)
    else:
        for k, row in enumerate(layer.filters):
            acc = np.zeros(n)
            for r, f in enumerate(row):
                if f.base is not None:
                    acc += _correlate_flat(f.base.reshape(-1), None, None, flat[r], shape)
                elif f.support:
                    offs = np.array([o for o, _ in f.support], dtype=np.intp)
                    ws = np.array([w for _, w in f.support])
                    acc += _correlate_flat(None, offs, ws, flat[r], shape)
            pre[k] = acc
    pre += np.asarray(layer.biases)[:, None]
    return pre.reshape((layer.out_channels,) + shape.dims)


def apply_layer(layer: EquivariantLayer, x) -> np.ndarray:
    """Full layer map: correlations, constant biases, then the activation."""
    return _activate(layer_preactivation(layer, x), layer.activation)


@dataclass(frozen=True)
class EquivariantNetwork:
    """Composition of equivariant layers over one spatial grid.

    An empty layer list is the identity map.  Layers and the network are
    immutable; forward passes are pure functions.
    """

    layers: tuple[EquivariantLayer, ...]
    shape: Shape

    def __post_init__(self):
        object.__setattr__(self, "shape", as_shape(self.shape))
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        prev = None
        for i, layer in enumerate(layers):
            if layer.shape != self.shape:
                raise ShapeError(
                    f"layer {i} grid {layer.shape.dims} does not match network grid {self.shape.dims}"
                )
            if prev is not None and layer.in_channels != prev:
                raise ShapeError(
                    f"layer {i} expects {layer.in_channels} channels but receives {prev}"
                )
            prev = layer.out_channels

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_channels(self) -> int | None:
        return self.layers[0].in_channels if self.layers else None

    @property
    def out_channels(self) -> int | None:
        return self.layers[-1].out_channels if self.layers else None

    @property
    def max_channels(self) -> int:
        return max((l.out_channels for l in self.layers), default=0)

    @property
    def width(self) -> int:
        """Widest layer measured in scalar neurons (channels x grid size)."""
        return self.max_channels * self.shape.size


def forward(net: EquivariantNetwork, x) -> np.ndarray:
    """Run the composed network; returns the (C_L, *dims) output stack."""
    stack = as_stack(x, net.shape, net.in_channels)
    for layer in net.layers:
        stack = apply_layer(layer, stack)
    return stack


def check_equivariance(net: EquivariantNetwork, x, offsets, tol: float = 1e-9):
    """Compare forward-of-translate against translate-of-forward for one shift.

    Returns ``(ok, deviation)`` where deviation is the max absolute gap.
    """
    stack = as_stack(x, net.shape, net.in_channels)
    shifted_in = translate_array(stack, offsets, net.shape.ndim)
    lhs = forward(net, shifted_in)
    rhs = translate_array(forward(net, stack), offsets, net.shape.ndim)
    deviation = float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
    return deviation <= tol, deviation


def max_equivariance_deviation(net: EquivariantNetwork, x, offsets=None):
    """Max deviation of :func:`check_equivariance` over a set of shifts.

    Defaults to the exhaustive grid of all distinct translations.  Returns
    ``(deviation, worst_offsets)``.
    """
    stack = as_stack(x, net.shape, net.in_channels)
    base_out = forward(net, stack)
    worst, worst_m = -1.0, None
    for m in (offsets if offsets is not None else all_translations(net.shape)):
        lhs = forward(net, translate_array(stack, m, net.shape.ndim))
        rhs = translate_array(base_out, m, net.shape.ndim)
        dev = float(np.max(np.abs(lhs - rhs)))
        if dev > worst:
            worst, worst_m = dev, tuple(m)
    return worst, worst_m


def materialize_matrix(filt: CircularFilter) -> np.ndarray:
    """Dense N x N matrix of the filter: row ``delta(M)`` is the M-translate
    of the base row.  Test oracle only; guarded to N <= 4096."""
    n = filt.shape.size
    if n > _MATRIX_GUARD:
        raise CapacityError(f"refusing to materialize {n}x{n} matrix (cap {_MATRIX_GUARD})")
    base = filt.base_row()
    axes = tuple(range(filt.shape.ndim))
    rows = np.empty((n, n))
    for m_idx, m in enumerate(all_translations(filt.shape)):
        rows[m_idx] = np.roll(base, m, axis=axes).reshape(n)
    return rows


def affine_apply(matrix: np.ndarray, bias: np.ndarray, x_flat: np.ndarray,
                 activation: str = "identity") -> np.ndarray:
    """Generic dense affine map on flat vectors; the oracle counterpart of a layer."""
    return _activate(matrix @ x_flat + bias, activation)


def equivariance_witness(matrix: np.ndarray, bias: np.ndarray, shape, x=None,
                         activation: str = "identity", rng=None):
    """Exhaustively search shifts for an equivariance violation of a dense
    affine map.

    Returns ``(deviation, offsets)`` for the worst shift.  For a map built
    from a circular filter and a constant bias the deviation is zero up to
    float reassociation; any other affine map admits a witness shift on a
    generic input, and this search finds it.
    """
    shape = as_shape(shape)
    matrix = np.asarray(matrix, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n = shape.size
    if matrix.shape != (n, n) or bias.shape != (n,):
        raise ShapeError(f"need ({n},{n}) matrix and ({n},) bias for shape {shape.dims}")
    if x is None:
        rng = rng or np.random.default_rng(0)
        x = rng.standard_normal(shape.dims)
    grid = as_stack(x, shape)[0]
    base_out = affine_apply(matrix, bias, grid.reshape(n), activation).reshape(shape.dims)
    worst, worst_m = -1.0, None
    for m in all_translations(shape):
        shifted = translate_array(grid, m, shape.ndim)
        lhs = affine_apply(matrix, bias, shifted.reshape(n), activation).reshape(shape.dims)
        rhs = translate_array(base_out, m, shape.ndim)
        dev = float(np.max(np.abs(lhs - rhs)))
        if dev > worst:
            worst, worst_m = dev, tuple(m)
    return worst, worst_m
