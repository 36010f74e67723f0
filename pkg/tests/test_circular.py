"""Circular tensor substrate: indexing, translation, vectorization."""

import numpy as np
import pytest

from equirestore.circular import (
    CircularTensor,
    Shape,
    all_translations,
    delta,
    delta_inverse,
    devectorize,
    index_grid,
    inner,
    translate,
    translate_array,
    vectorize,
)
from equirestore.errors import ShapeError


class TestShape:
    def test_basic(self):
        s = Shape(3, 4)
        assert s.dims == (3, 4)
        assert s.size == 12
        assert s.ndim == 2

    def test_from_tuple(self):
        assert Shape((5,)) == Shape(5)

    @pytest.mark.parametrize("dims", [(), (0,), (-1, 2), (2.5,)])
    def test_rejects_bad_dims(self, dims):
        with pytest.raises(ShapeError):
            Shape(*dims) if dims else Shape()

    def test_immutable(self):
        s = Shape(2, 2)
        with pytest.raises(AttributeError):
            s.dims = (3, 3)


class TestDelta:
    def test_direct_evaluation(self):
        assert delta((1, 2), Shape(3, 4)) == 6

    def test_zero_index(self):
        for shape in (Shape(3,), Shape(3, 4), Shape(2, 3, 4)):
            assert delta((0,) * shape.ndim, shape) == 0

    def test_modulo_extension(self):
        assert delta((-1, -1), Shape(3, 4)) == delta((2, 3), Shape(3, 4)) == 11

    def test_arity_mismatch(self):
        with pytest.raises(ShapeError):
            delta((1, 2, 3), Shape(3, 4))

    def test_inverse_examples(self):
        assert delta_inverse(6, Shape(3, 4)) == (1, 2)
        assert delta_inverse(0, Shape(2, 2, 2)) == (0, 0, 0)
        assert delta_inverse(11, Shape(3, 4)) == (2, 3)

    def test_inverse_range_error(self):
        with pytest.raises(ShapeError):
            delta_inverse(12, Shape(3, 4))
        with pytest.raises(ShapeError):
            delta_inverse(-1, Shape(3, 4))

    @pytest.mark.parametrize("dims", [(4,), (3, 4), (2, 3, 2), (16, 16, 16)])
    def test_bijectivity_exhaustive(self, dims):
        shape = Shape(dims)
        seen = set()
        for idx in index_grid(shape):
            k = delta(tuple(idx), shape)
            assert 0 <= k < shape.size
            seen.add(k)
            assert delta_inverse(k, shape) == tuple(idx)
        assert len(seen) == shape.size

    def test_round_trip_negative_indices(self):
        shape = Shape(3, 5)
        for idx in [(-1, 7), (4, -2), (100, -100)]:
            k = delta(idx, shape)
            assert delta(delta_inverse(k, shape), shape) == k


class TestTranslate:
    def test_row_shift_wraps(self):
        x = CircularTensor([[1, 2], [3, 4]])
        assert translate(x, (1, 0)).values.tolist() == [[3, 4], [1, 2]]

    def test_identity_shift(self):
        x = CircularTensor(np.arange(6.0).reshape(2, 3))
        assert translate(x, (0, 0)) == x

    def test_full_period_shift(self):
        x = CircularTensor([[1, 2], [3, 4]])
        assert translate(x, (2, 2)) == x

    def test_definition_pointwise(self):
        rng = np.random.default_rng(0)
        x = CircularTensor(rng.standard_normal((3, 4)))
        for m in all_translations(x.shape):
            y = translate(x, m)
            for idx in index_grid(x.shape):
                i = tuple(int(v) for v in idx)
                shifted = tuple(a - b for a, b in zip(i, m))
                assert y[i] == x[shifted]

    def test_content_is_permutation(self):
        rng = np.random.default_rng(1)
        x = CircularTensor(rng.standard_normal((4, 3)))
        y = translate(x, (2, 1))
        assert sorted(y.values.ravel()) == sorted(x.values.ravel())

    def test_group_action(self):
        rng = np.random.default_rng(2)
        x = CircularTensor(rng.standard_normal((3, 4)))
        for m1 in all_translations(x.shape):
            for m2 in all_translations(x.shape):
                combined = tuple(a + b for a, b in zip(m1, m2))
                assert translate(translate(x, m1), m2) == translate(x, combined)

    def test_invertibility_exact(self):
        rng = np.random.default_rng(3)
        x = CircularTensor(rng.standard_normal((5, 3)))
        for m in all_translations(x.shape):
            neg = tuple(-v for v in m)
            assert translate(translate(x, m), neg) == x

    def test_arity_mismatch(self):
        with pytest.raises(ShapeError):
            translate(CircularTensor([[1.0, 2.0]]), (1,))

    def test_translate_array_spatial_only(self):
        stack = np.arange(8.0).reshape(2, 2, 2)
        out = translate_array(stack, (1, 0), 2)
        assert np.array_equal(out[0], np.roll(stack[0], (1, 0), axis=(0, 1)))
        assert np.array_equal(out[1], np.roll(stack[1], (1, 0), axis=(0, 1)))


class TestInner:
    def test_two_hot_norm(self):
        x = CircularTensor([[1, 0], [0, 1]])
        assert inner(x, x) == 2.0

    def test_orthogonal_one_hots(self):
        x = CircularTensor([[1, 0], [0, 0]])
        z = CircularTensor([[0, 0], [1, 0]])
        assert inner(x, z) == 0.0

    def test_hand_dot_product(self):
        # brute force: 1*4 + 2*5 + 3*6 = 32
        assert inner(CircularTensor([1, 2, 3]), CircularTensor([4, 5, 6])) == 32.0

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        x = CircularTensor(rng.standard_normal((2, 3)))
        z = CircularTensor(rng.standard_normal((2, 3)))
        assert inner(x, z) == inner(z, x)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            inner(CircularTensor([1.0, 2.0]), CircularTensor([1.0, 2.0, 3.0]))

    def test_shift_identity_exact_on_integers(self):
        # inner(v, T^M x) == inner(T^-M v, x); integer values keep f64 sums exact
        rng = np.random.default_rng(5)
        v = CircularTensor(rng.integers(-9, 10, size=(3, 4)).astype(float))
        x = CircularTensor(rng.integers(-9, 10, size=(3, 4)).astype(float))
        for m in all_translations(v.shape):
            neg = tuple(-a for a in m)
            assert inner(v, translate(x, m)) == inner(translate(v, neg), x)

    def test_shift_identity_floats(self):
        rng = np.random.default_rng(6)
        v = CircularTensor(rng.standard_normal((4, 4)))
        x = CircularTensor(rng.standard_normal((4, 4)))
        for m in all_translations(v.shape):
            neg = tuple(-a for a in m)
            assert inner(v, translate(x, m)) == pytest.approx(
                inner(translate(v, neg), x), abs=1e-12
            )


class TestVectorize:
    def test_row_major(self):
        x = CircularTensor([[1, 2], [3, 4]])
        assert vectorize(x).tolist() == [1, 2, 3, 4]

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        x = CircularTensor(rng.standard_normal((2, 3, 2)))
        assert devectorize(vectorize(x), x.shape) == x

    def test_commutes_with_translation(self):
        # vectorize(T^M x)[delta(I)] == vectorize(x)[delta(I - M)], all I and M on 2x3
        rng = np.random.default_rng(8)
        x = CircularTensor(rng.standard_normal((2, 3)))
        vx = vectorize(x)
        for m in all_translations(x.shape):
            vy = vectorize(translate(x, m))
            for idx in index_grid(x.shape):
                i = tuple(int(v) for v in idx)
                src = tuple(a - b for a, b in zip(i, m))
                assert vy[delta(i, x.shape)] == vx[delta(src, x.shape)]

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            devectorize([1.0, 2.0, 3.0], Shape(2, 2))

    def test_modulo_element_access(self):
        x = CircularTensor([[1, 2], [3, 4]])
        assert x[(5, -3)] == x[(1, 1)] == 4.0

    def test_values_immutable(self):
        x = CircularTensor([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(ValueError):
            x.values[0, 0] = 9.0
