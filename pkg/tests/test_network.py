"""Circular filters, equivariant layers, and both directions of the
equivariance characterization."""

import numpy as np
import pytest

from equirestore.circular import (
    CircularTensor,
    Shape,
    all_translations,
    delta,
    translate,
    translate_array,
    vectorize,
)
from equirestore.errors import CapacityError, ShapeError
from equirestore.network import (
    CircularFilter,
    EquivariantLayer,
    EquivariantNetwork,
    apply_filter,
    apply_layer,
    check_equivariance,
    equivariance_witness,
    forward,
    materialize_matrix,
    max_equivariance_deviation,
)


def random_dense_layer(rng, shape, n_in, n_out, activation="relu"):
    filters = tuple(
        tuple(CircularFilter.dense(rng.standard_normal(shape.dims), shape) for _ in range(n_in))
        for _ in range(n_out)
    )
    biases = tuple(rng.standard_normal(n_out))
    return EquivariantLayer(filters, biases, activation=activation)


def random_net(rng, shape, depth, max_channels=3, activation="relu"):
    chain = [1] + [int(rng.integers(1, max_channels + 1)) for _ in range(depth - 1)] + [1]
    layers = tuple(
        random_dense_layer(rng, shape, chain[l], chain[l + 1], activation)
        for l in range(depth)
    )
    return EquivariantNetwork(layers, shape)


class TestCircularFilter:
    def test_identity_filter(self):
        x = CircularTensor(np.arange(9.0).reshape(3, 3))
        f = CircularFilter.identity(x.shape)
        assert apply_filter(f, x) == x

    def test_hand_example_against_matrix(self):
        # W rows are translates of [1,2,0]: W @ [1,0,0] = first column = [1,0,2]
        f = CircularFilter.dense([1.0, 2.0, 0.0])
        out = apply_filter(f, np.array([1.0, 0.0, 0.0]))
        assert out.tolist() == [1.0, 0.0, 2.0]

    def test_one_hot_input_reads_base(self):
        # with x one-hot at I, output[delta(M)] = base[I - M]
        rng = np.random.default_rng(0)
        shape = Shape(3, 4)
        base = CircularTensor(rng.standard_normal(shape.dims))
        f = CircularFilter.dense(base.values, shape)
        for hot in [(0, 0), (1, 2), (2, 3)]:
            x = np.zeros(shape.dims)
            x[hot] = 1.0
            out = apply_filter(f, x)
            for m in all_translations(shape):
                src = tuple(h - mm for h, mm in zip(hot, m))
                assert out[m] == pytest.approx(base[src], abs=1e-12)

    def test_correlation_definition(self):
        # output[delta(M)] = inner(translate(base, M), x)
        rng = np.random.default_rng(1)
        shape = Shape(4, 3)
        base = CircularTensor(rng.standard_normal(shape.dims))
        x = CircularTensor(rng.standard_normal(shape.dims))
        out = vectorize(apply_filter(CircularFilter.dense(base.values), x))
        for m in all_translations(shape):
            expected = translate(base, m).inner(x)
            assert out[delta(m, shape)] == pytest.approx(expected, abs=1e-12)

    def test_sparse_dense_agreement(self):
        rng = np.random.default_rng(2)
        shape = Shape(5, 4)
        dense_base = np.zeros(shape.dims)
        pairs = []
        for off in rng.choice(shape.size, size=6, replace=False):
            w = float(rng.standard_normal())
            pairs.append((int(off), w))
            dense_base.reshape(-1)[off] += w
        x = rng.standard_normal(shape.dims)
        sparse_out = apply_filter(CircularFilter.sparse(shape, pairs), x)
        dense_out = apply_filter(CircularFilter.dense(dense_base, shape), x)
        assert np.max(np.abs(sparse_out - dense_out)) <= 1e-12

    def test_shape_mismatch(self):
        f = CircularFilter.dense(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            apply_filter(f, np.ones((3, 3)))

    def test_base_row_reconstruction(self):
        shape = Shape(2, 3)
        f = CircularFilter.sparse(shape, [(0, 1.5), (4, -2.0)])
        row = f.base_row()
        assert row.reshape(-1)[0] == 1.5 and row.reshape(-1)[4] == -2.0


class TestMaterializeMatrix:
    def test_identity_base(self):
        f = CircularFilter.identity(Shape(2, 2))
        assert np.array_equal(materialize_matrix(f), np.eye(4))

    def test_two_cell_circulant(self):
        f = CircularFilter.dense([2.0, 5.0])
        assert materialize_matrix(f).tolist() == [[2.0, 5.0], [5.0, 2.0]]

    def test_block_circulant_2d(self):
        rng = np.random.default_rng(3)
        shape = Shape(2, 2)
        base = CircularTensor(rng.standard_normal(shape.dims))
        w = materialize_matrix(CircularFilter.dense(base.values))
        for m in all_translations(shape):
            assert np.array_equal(w[delta(m, shape)], vectorize(translate(base, m)))

    def test_capacity_guard(self):
        f = CircularFilter.identity(Shape(65, 65))
        with pytest.raises(CapacityError):
            materialize_matrix(f)

    def test_apply_matches_matrix_oracle(self):
        rng = np.random.default_rng(4)
        for dims in [(6,), (3, 4), (2, 3, 2)]:
            shape = Shape(dims)
            f = CircularFilter.dense(rng.standard_normal(dims), shape)
            x = rng.standard_normal(dims)
            got = apply_filter(f, x).reshape(-1)
            want = materialize_matrix(f) @ x.reshape(-1)
            assert np.max(np.abs(got - want)) <= 1e-12


class TestApplyLayer:
    def test_identity_layer(self):
        shape = Shape(3, 3)
        layer = EquivariantLayer(
            ((CircularFilter.identity(shape),),), (0.0,), activation="identity"
        )
        x = np.random.default_rng(5).standard_normal((1, 3, 3))
        assert np.array_equal(apply_layer(layer, x), x)

    def test_relu_kills_large_negative_bias(self):
        shape = Shape(2, 2)
        layer = EquivariantLayer(
            ((CircularFilter.identity(shape),),), (-1e9,), activation="relu"
        )
        x = np.abs(np.random.default_rng(6).standard_normal((1, 2, 2)))
        assert np.array_equal(apply_layer(layer, x), np.zeros((1, 2, 2)))

    def test_two_channel_against_dense_oracle(self):
        rng = np.random.default_rng(7)
        shape = Shape(4, 4)
        layer = random_dense_layer(rng, shape, 2, 2, activation="relu")
        x = rng.standard_normal((2, 4, 4))
        got = apply_layer(layer, x)
        for k in range(2):
            acc = np.full(shape.size, layer.biases[k])
            for r in range(2):
                acc += materialize_matrix(layer.filters[k][r]) @ x[r].reshape(-1)
            want = np.maximum(acc, 0.0).reshape(shape.dims)
            assert np.max(np.abs(got[k] - want)) <= 1e-12

    def test_channel_mismatch(self):
        shape = Shape(2, 2)
        layer = EquivariantLayer(
            ((CircularFilter.identity(shape),),), (0.0,), activation="relu"
        )
        with pytest.raises(ShapeError):
            apply_layer(layer, np.ones((2, 2, 2)))


class TestForward:
    def test_empty_network_is_identity(self):
        net = EquivariantNetwork((), Shape(3, 3))
        x = np.random.default_rng(8).standard_normal((2, 3, 3))
        assert np.array_equal(forward(net, x), x)

    def test_single_layer_equals_apply_layer(self):
        rng = np.random.default_rng(9)
        shape = Shape(3, 4)
        layer = random_dense_layer(rng, shape, 1, 2)
        net = EquivariantNetwork((layer,), shape)
        x = rng.standard_normal((1, 3, 4))
        assert np.array_equal(forward(net, x), apply_layer(layer, x))

    def test_three_layer_against_composed_dense_oracle(self):
        rng = np.random.default_rng(10)
        shape = Shape(3, 3)
        net = random_net(rng, shape, depth=3, activation="identity")
        x = rng.standard_normal((1,) + shape.dims)
        got = forward(net, x)

        stack = x.reshape(1, -1)
        for layer in net.layers:
            nxt = np.empty((layer.out_channels, shape.size))
            for k in range(layer.out_channels):
                acc = np.full(shape.size, layer.biases[k])
                for r in range(layer.in_channels):
                    acc += materialize_matrix(layer.filters[k][r]) @ stack[r]
                nxt[k] = acc
            stack = nxt
        assert np.max(np.abs(got.reshape(-1) - stack.reshape(-1))) <= 1e-10

    def test_channel_chain_validation(self):
        rng = np.random.default_rng(11)
        shape = Shape(2, 2)
        l1 = random_dense_layer(rng, shape, 1, 2)
        l2 = random_dense_layer(rng, shape, 3, 1)
        with pytest.raises(ShapeError):
            EquivariantNetwork((l1, l2), shape)


class TestEquivarianceSufficiency:
    def test_random_nets_exhaustive(self):
        # any net of circular filters + constant biases commutes with all shifts
        rng = np.random.default_rng(12)
        for _ in range(20):
            dims = tuple(rng.integers(2, 7, size=int(rng.integers(1, 3))))
            net = random_net(rng, Shape(dims), depth=int(rng.integers(1, 4)))
            x = rng.standard_normal((1,) + dims)
            deviation, _ = max_equivariance_deviation(net, x)
            assert deviation <= 1e-9

    def test_check_single_shift(self):
        rng = np.random.default_rng(13)
        net = random_net(rng, Shape(4, 4), depth=2)
        x = rng.standard_normal((1, 4, 4))
        ok, dev = check_equivariance(net, x, (1, 3), tol=1e-9)
        assert ok and dev <= 1e-9

    def test_translated_forward_identity_activation_exact(self):
        # identity activation: forward of a translate is a permuted forward, often exact
        rng = np.random.default_rng(14)
        net = random_net(rng, Shape(3, 3), depth=2, activation="identity")
        x = rng.standard_normal((1, 3, 3))
        out = forward(net, x)
        for m in all_translations(net.shape):
            lhs = forward(net, translate_array(x, m, 2))
            rhs = translate_array(out, m, 2)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9


class TestEquivarianceNecessity:
    def test_nonconstant_bias_has_witness(self):
        rng = np.random.default_rng(15)
        shape = Shape(4, 4)
        base = rng.standard_normal(shape.dims)
        matrix = materialize_matrix(CircularFilter.dense(base, shape))
        bias = np.full(shape.size, 0.7)
        bias[5] += 1.0
        x = rng.standard_normal(shape.dims)
        deviation, witness = equivariance_witness(matrix, bias, shape, x)
        assert deviation > 1e-6
        assert witness is not None and any(witness)

    def test_noncircular_matrix_has_witness(self):
        rng = np.random.default_rng(16)
        shape = Shape(3, 4)
        matrix = materialize_matrix(CircularFilter.dense(rng.standard_normal(shape.dims), shape))
        matrix[7, 2] += 1.0
        bias = np.zeros(shape.size)
        deviation, _ = equivariance_witness(matrix, bias, shape, rng.standard_normal(shape.dims))
        assert deviation > 1e-6

    def test_valid_affine_map_has_no_witness(self):
        rng = np.random.default_rng(17)
        shape = Shape(3, 4)
        matrix = materialize_matrix(CircularFilter.dense(rng.standard_normal(shape.dims), shape))
        bias = np.full(shape.size, -0.3)
        deviation, _ = equivariance_witness(matrix, bias, shape, rng.standard_normal(shape.dims))
        assert deviation <= 1e-9
