"""Circular (toroidal) tensor arithmetic.

Every index into a circular tensor is reduced componentwise modulo the
shape, so tensors live on a discrete torus and integer translations act
as exact permutations.  Storage is row-major so that flattening a tensor
is a reinterpretation of the same buffer, and the flat position of grid
index ``I`` is the mixed-radix value ``delta(I)``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ShapeError

Offsets = Sequence[int]


class Shape:
    """Immutable grid shape ``(n_1, ..., n_d)`` with element count ``N``.

    Accepts either ``Shape(3, 4)`` or ``Shape((3, 4))``.
    """

    __slots__ = ("dims",)

    def __init__(self, *dims: int):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list, Shape)):
            dims = tuple(dims[0])
        if not dims:
            raise ShapeError("shape needs at least one dimension")
        for n in dims:
            if int(n) != n or n < 1:
                raise ShapeError(f"dimension sizes must be positive integers, got {dims}")
        object.__setattr__(self, "dims", tuple(int(n) for n in dims))

    def __setattr__(self, name, value):
        raise AttributeError("Shape is immutable")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __eq__(self, other):
        if isinstance(other, Shape):
            return self.dims == other.dims
        if isinstance(other, (tuple, list)):
            return self.dims == tuple(other)
        return NotImplemented

    def __hash__(self):
        return hash(self.dims)

    def __repr__(self):
        return f"Shape{self.dims}"


def as_shape(shape) -> Shape:
    return shape if isinstance(shape, Shape) else Shape(shape)


def _check_arity(offsets: Offsets, shape: Shape) -> None:
    if len(offsets) != shape.ndim:
        raise ShapeError(
            f"index/offset arity {len(offsets)} does not match shape arity {shape.ndim}"
        )


def delta(index: Offsets, shape) -> int:
    """Flatten a grid index to its mixed-radix position in ``[0, N)``.

    Components are reduced modulo the shape first, so any integer vector
    is a valid index.
    """
    shape = as_shape(shape)
    _check_arity(index, shape)
    k = 0
    for i, n in zip(index, shape.dims):
        k = k * n + (int(i) % n)
    return k


def delta_inverse(k: int, shape) -> tuple[int, ...]:
    """Invert :func:`delta`; each returned component lies in ``[0, n_i)``."""
    shape = as_shape(shape)
    k = int(k)
    if not 0 <= k < shape.size:
        raise ShapeError(f"flat index {k} out of range [0, {shape.size})")
    out = []
    for n in reversed(shape.dims):
        out.append(k % n)
        k //= n
    return tuple(reversed(out))


class CircularTensor:
    """Dense d-dimensional float64 tensor with modulo index semantics.

    Values are immutable after construction; all operations return new
    tensors, so instances are safe to share across threads.
    """

    __slots__ = ("shape", "values")

    def __init__(self, values, shape=None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            shape = as_shape(shape)
            if arr.size != shape.size:
                raise ShapeError(
                    f"value count {arr.size} does not match shape {shape.dims}"
                )
            arr = arr.reshape(shape.dims)
        else:
            if arr.ndim == 0:
                arr = arr.reshape(1)
            shape = Shape(arr.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CircularTensor is immutable")

    def __getitem__(self, index) -> float:
        if np.isscalar(index) or isinstance(index, (int, np.integer)):
            index = (index,)
        _check_arity(index, self.shape)
        wrapped = tuple(int(i) % n for i, n in zip(index, self.shape.dims))
        return float(self.values[wrapped])

    def __eq__(self, other):
        if not isinstance(other, CircularTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"CircularTensor({self.values!r})"

    def translate(self, offsets: Offsets) -> "CircularTensor":
        return translate(self, offsets)

    def vectorize(self) -> np.ndarray:
        return vectorize(self)

    def inner(self, other: "CircularTensor") -> float:
        return inner(self, other)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.values, self.values)))


def translate(x: CircularTensor, offsets: Offsets) -> CircularTensor:
    """Shift ``x`` by integer ``offsets`` with wraparound.

    The result ``y`` satisfies ``y[I] == x[I - offsets]`` for every index
    vector ``I``; the operation is a pure permutation of the stored values.
    """
    _check_arity(offsets, x.shape)
    shifted = np.roll(x.values, tuple(int(m) for m in offsets), axis=tuple(range(x.shape.ndim)))
    return CircularTensor(shifted, x.shape)


def translate_array(values: np.ndarray, offsets: Offsets, spatial_ndim: int | None = None) -> np.ndarray:
    """Spatially shift a raw array; leading axes (channels) are untouched.

    ``spatial_ndim`` defaults to ``len(offsets)``: the last that many axes
    are rolled.
    """
    d = len(offsets) if spatial_ndim is None else spatial_ndim
    if d > values.ndim:
        raise ShapeError(f"cannot shift {values.ndim}-d array along {d} spatial axes")
    axes = tuple(range(values.ndim - d, values.ndim))
    return np.roll(values, tuple(int(m) for m in offsets), axis=axes)


def inner(x: CircularTensor, z: CircularTensor) -> float:
    """Sum of elementwise products over the grid."""
    if x.shape != z.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {z.shape}")
    return float(np.vdot(x.values, z.values))


def vectorize(x: CircularTensor) -> np.ndarray:
    """Flatten to length-N row-major vector; position of ``I`` is ``delta(I)``."""
    return x.values.reshape(x.shape.size)


def devectorize(flat, shape) -> CircularTensor:
    """Rebuild a tensor from its flat vector."""
    shape = as_shape(shape)
    arr = np.asarray(flat, dtype=np.float64)
    if arr.size != shape.size:
        raise ShapeError(f"flat length {arr.size} does not match shape {shape.dims}")
    return CircularTensor(arr.reshape(shape.dims), shape)


def index_grid(shape) -> np.ndarray:
    """All grid indices in flat (delta) order, as an (N, d) int array."""
    shape = as_shape(shape)
    grids = np.indices(shape.dims).reshape(shape.ndim, shape.size)
    return grids.T.copy()


def all_translations(shape) -> list[tuple[int, ...]]:
    """Every distinct translation offset of the grid, in flat order."""
    return [tuple(int(v) for v in row) for row in index_grid(shape)]


_TABLE_GUARD = 4096


def correlation_table(shape) -> np.ndarray:
    """Index table ``T[u, m] = delta(I_u + I_m)`` for direct circular correlation.

    Gathering ``x.flat[T[u]]`` yields the translate of ``x`` by ``-I_u`` in
    flat order, which turns a correlation into one gather and one matvec.
    Guarded to ``N <= 4096``; larger shapes use the roll-based fallback in
    :mod:`equirestore.network`.
    """
    shape = as_shape(shape)
    if shape.size > _TABLE_GUARD:
        raise CapacityError(f"correlation table capped at N={_TABLE_GUARD}, got {shape.size}")
    return _correlation_table_cached(shape.dims)


_table_cache: dict[tuple[int, ...], np.ndarray] = {}


def _correlation_table_cached(dims: tuple[int, ...]) -> np.ndarray:
    table = _table_cache.get(dims)
    if table is None:
        coords = index_grid(Shape(dims))
        sums = coords[:, None, :] + coords[None, :, :]
        table = np.ravel_multi_index(
            tuple(sums[..., ax] for ax in range(len(dims))), dims, mode="wrap"
        ).astype(np.intp)
        table.flags.writeable = False
        if len(_table_cache) > 16:
            _table_cache.clear()
        _table_cache[dims] = table
    return table


def negate_offset(flat_offset: int, shape) -> int:
    """Flat index of ``-I`` where ``I = delta_inverse(flat_offset)``."""
    shape = as_shape(shape)
    return delta(tuple(-i for i in delta_inverse(flat_offset, shape)), shape)
